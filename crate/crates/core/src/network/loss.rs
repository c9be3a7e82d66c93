use super::config::{LossWeights, RotationTarget};
use super::lifter::LifterOutputs;
use crate::error::{Error, Result};
use crate::kinematics::{extract_rotations, Dual, Quat, Skeleton, NUM_JOINTS};
use crate::tensor::{CustomOp, Element, Tape, Tensor, Var};

/// Ground truth for one lifter batch. Pose and rotation rows of records
/// without 3D labels are ignored.
#[derive(Clone, Debug)]
pub struct AeTargets<T: Element> {
    /// `B×16×3`
    pub pose: Tensor<T>,
    /// `B×16×4`
    pub rot: Tensor<T>,
    /// `B×15×s×s`, required when the heatmap branch is on.
    pub hm: Option<Tensor<T>>,
    pub has_3d: Vec<bool>,
}

/// Values of the individual loss terms (batch sums, unweighted).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub pose_sq: f64,
    pub cosine: f64,
    pub limb: f64,
    pub rot: f64,
    pub hm: f64,
}

/// Local rotations of a batch of poses, differentiable through dual numbers.
pub struct RotationExtract {
    skel: Skeleton,
}

impl RotationExtract {
    pub fn new(skel: &Skeleton) -> Self {
        RotationExtract { skel: skel.clone() }
    }
}

fn pose_rows<T: Element>(t: &Tensor<T>) -> Result<usize> {
    match *t.shape() {
        [n, j, 3] if j == NUM_JOINTS => Ok(n),
        _ => Err(Error::dim(format!("expected n×{NUM_JOINTS}×3 poses, got {:?}", t.shape()))),
    }
}

impl<T: Element> CustomOp<T> for RotationExtract {
    fn name(&self) -> &str {
        "rotation_extract"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let n = pose_rows(x)?;
        let v = x.to_f64_vec();
        let mut out = Vec::with_capacity(n * NUM_JOINTS * 4);
        for s in v.chunks(NUM_JOINTS * 3) {
            let pose: Vec<[f64; 3]> = s.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            for q in extract_rotations(&pose, &self.skel)? {
                out.extend(q.to_array().map(T::c));
            }
        }
        Tensor::new(&[n, NUM_JOINTS, 4], out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let v = inputs[0].to_f64_vec();
        let per_in = NUM_JOINTS * 3;
        let per_out = NUM_JOINTS * 4;
        let mut grad = vec![T::zero(); v.len()];
        for (si, s) in v.chunks(per_in).enumerate() {
            let g_out = &grad_out[si * per_out..(si + 1) * per_out];
            // one forward-mode sweep per input coordinate
            for k in 0..per_in {
                let pose: Vec<[Dual; 3]> = (0..NUM_JOINTS)
                    .map(|j| [0, 1, 2].map(|c| Dual::new(s[j * 3 + c], if j * 3 + c == k { 1.0 } else { 0.0 })))
                    .collect();
                let rots = extract_rotations(&pose, &self.skel)?;
                let d: f64 = rots
                    .iter()
                    .flat_map(|q: &Quat<Dual>| q.to_array())
                    .zip(g_out)
                    .map(|(q, &g)| q.d * g.to_f64().expect("finite"))
                    .sum();
                grad[si * per_in + k] = T::c(d);
            }
        }
        Ok(vec![Some(grad)])
    }
}

/// `Σ_j min(‖a_j − b_j‖², ‖a_j + b_j‖²)` over `n×16×4` quaternion rows;
/// ties take the `+` branch.
pub struct QuatSignDistance;

fn sign_choices<T: Element>(a: &[T], b: &[T]) -> Vec<(T, T)> {
    a.chunks(4)
        .zip(b.chunks(4))
        .map(|(qa, qb)| {
            let minus: T = qa.iter().zip(qb).map(|(&x, &y)| (x - y) * (x - y)).sum();
            let plus: T = qa.iter().zip(qb).map(|(&x, &y)| (x + y) * (x + y)).sum();
            if minus <= plus {
                (minus, T::one())
            } else {
                (plus, -T::one())
            }
        })
        .collect()
}

impl<T: Element> CustomOp<T> for QuatSignDistance {
    fn name(&self) -> &str {
        "quat_sign_distance"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() || a.shape().last() != Some(&4) {
            return Err(Error::dim(format!("quaternion distance: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let s: T = sign_choices(a.data(), b.data()).into_iter().map(|(d, _)| d).sum();
        Ok(Tensor::scalar(s))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let g = grad_out[0];
        let two = T::c(2.0);
        let mut ga = vec![T::zero(); a.len()];
        let mut gb = vec![T::zero(); b.len()];
        for (q, (_, sign)) in sign_choices(a, b).into_iter().enumerate() {
            for k in q * 4..q * 4 + 4 {
                // d/da ‖a − s·b‖² = 2(a − s·b), d/db = −2s(a − s·b)
                let r = a[k] - sign * b[k];
                ga[k] = g * two * r;
                gb[k] = -g * two * sign * r;
            }
        }
        Ok(vec![Some(ga), Some(gb)])
    }
}

fn weighted<T: Element>(tape: &mut Tape<T>, acc: Option<Var>, term: Var, w: f64) -> Result<Option<Var>> {
    let t = tape.scale(term, T::c(w))?;
    Ok(Some(match acc {
        Some(a) => tape.add(a, t)?,
        None => t,
    }))
}

/// The autoencoder loss. Pose and rotation terms are averaged over the
/// records with 3D labels, the heatmap term over the whole batch; records
/// with `has_3d = false` contribute only the heatmap term.
pub fn loss_ae<T: Element>(
    tape: &mut Tape<T>,
    out: &LifterOutputs,
    targets: &AeTargets<T>,
    w: &LossWeights,
    skel: &Skeleton,
    rot_target: RotationTarget,
) -> Result<(Var, LossTerms)> {
    let batch = tape.value(out.pose).shape()[0];
    if targets.has_3d.len() != batch || targets.pose.shape() != tape.value(out.pose).shape() {
        return Err(Error::dim("loss targets do not match the batch"));
    }
    let mut terms = LossTerms::default();
    let mut total: Option<Var> = None;
    let scalar = |tape: &Tape<T>, v: Var| tape.value(v).data()[0].to_f64().unwrap_or(f64::NAN);

    let rows: Vec<usize> = (0..batch).filter(|&b| targets.has_3d[b]).collect();
    if !rows.is_empty() {
        let limbs = skel.limbs();
        let child: Vec<usize> = limbs.iter().map(|l| l.0).collect();
        let parent: Vec<usize> = limbs.iter().map(|l| l.1).collect();

        let p_hat = tape.select_rows(out.pose, &rows)?;
        let unit = 1.0 / w.pose_unit_m;
        // positions in the loss's length unit; p_hat itself feeds r(P̂) below
        let p_hat_u = tape.scale(p_hat, T::c(unit))?;
        let p = tape.constant(targets.pose.select_rows(&rows)?.map(|v| v * T::c(unit)));
        let diff = tape.sub(p_hat_u, p)?;
        let sq = tape.square(diff)?;
        let sq = tape.sum(sq)?;

        let limb_of = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let c = tape.gather(x, &child)?;
            let pa = tape.gather(x, &parent)?;
            tape.sub(c, pa)
        };
        let l_hat = limb_of(tape, p_hat_u)?;
        let l = limb_of(tape, p)?;
        let prod = tape.mul(l_hat, l)?;
        let dots = tape.sum_last(prod)?;
        let n_hat = tape.row_norm(l_hat)?;
        let n = tape.row_norm(l)?;
        let nn = tape.mul(n_hat, n)?;
        let cos = tape.div(dots, nn)?;
        let cos = tape.sum(cos)?;
        let ld = tape.sub(l_hat, l)?;
        let ld = tape.row_norm(ld)?;
        let ld = tape.sum(ld)?;

        terms.pose_sq = scalar(tape, sq);
        terms.cosine = scalar(tape, cos);
        terms.limb = scalar(tape, ld);
        let mut pose_term = Some(sq);
        pose_term = weighted(tape, pose_term, cos, w.lambda_theta)?;
        pose_term = weighted(tape, pose_term, ld, w.lambda_l)?;
        total = weighted(tape, total, pose_term.expect("set"), w.lambda_p)?;

        if let Some(rot) = out.rot {
            let r_hat = tape.select_rows(rot, &rows)?;
            let target = match rot_target {
                RotationTarget::PredictedPose => tape.custom(Box::new(RotationExtract::new(skel)), &[p_hat])?,
                RotationTarget::DetachedPredictedPose => {
                    let r = tape.custom(Box::new(RotationExtract::new(skel)), &[p_hat])?;
                    let v = tape.value(r).clone();
                    tape.constant(v)
                }
                RotationTarget::GroundTruth => tape.constant(targets.rot.select_rows(&rows)?),
            };
            let d = tape.custom(Box::new(QuatSignDistance), &[r_hat, target])?;
            terms.rot = scalar(tape, d);
            total = weighted(tape, total, d, w.lambda_r)?;
        }
        // 3D terms are averaged over the labelled rows only, so 2D-only
        // records in a mixed batch do not dilute the pose gradient
        total = Some(tape.scale(total.expect("set"), T::c(1.0 / rows.len() as f64))?);
    }

    if let Some(hm) = out.hm {
        let t = targets.hm.as_ref().ok_or_else(|| Error::arg("heatmap branch needs heatmap targets"))?;
        if t.shape() != tape.value(hm).shape() {
            return Err(Error::dim(format!(
                "heatmap target {:?} vs reconstruction {:?}",
                t.shape(),
                tape.value(hm).shape()
            )));
        }
        let t = tape.constant(t.clone());
        let d = tape.sub(hm, t)?;
        let d = tape.square(d)?;
        let d = tape.sum(d)?;
        terms.hm = scalar(tape, d);
        total = weighted(tape, total, d, w.lambda_hm / batch as f64)?;
    }

    let total = match total {
        Some(t) => t,
        // nothing supervises this batch: a zero that still touches the graph
        None => {
            let z = tape.scale(out.pose, T::zero())?;
            tape.sum(z)?
        }
    };
    terms.total = scalar(tape, total);
    if !terms.total.is_finite() {
        return Err(Error::Numeric(format!("autoencoder loss is not finite: {terms:?}")));
    }
    Ok((total, terms))
}

/// Mean squared heatmap error of the detector.
pub fn loss_2d<T: Element>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse(pred, t)
}
