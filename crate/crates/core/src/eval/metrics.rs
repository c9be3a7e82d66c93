use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::Vec3;

const MM: f64 = 1000.0;

fn check_counts(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<usize> {
    if gt.len() != pred.len() {
        return Err(Error::dim(format!("{} ground-truth frames vs {} predicted", gt.len(), pred.len())));
    }
    if gt.is_empty() {
        return Err(Error::arg("no frames to evaluate"));
    }
    let nj = gt[0].len();
    if nj == 0 || gt.iter().chain(pred).any(|p| p.len() != nj) {
        return Err(Error::dim("every frame needs the same non-zero joint count"));
    }
    Ok(nj)
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-frame, per-joint Euclidean errors in millimetres.
pub fn joint_errors(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<Vec<Vec<f64>>> {
    check_counts(gt, pred)?;
    Ok(gt.iter().zip(pred).map(|(g, p)| g.iter().zip(p).map(|(&a, &b)| dist(a, b) * MM).collect()).collect())
}

fn mean_of(errors: &[Vec<f64>]) -> f64 {
    let n: usize = errors.iter().map(Vec::len).sum();
    errors.iter().flatten().sum::<f64>() / n as f64
}

/// Mean per-joint position error in millimetres (inputs in metres).
pub fn mpjpe(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<f64> {
    Ok(mean_of(&joint_errors(gt, pred)?))
}

/// Poses with the root joint moved to the origin.
pub fn root_relative(poses: &[Vec<Vec3>]) -> Vec<Vec<Vec3>> {
    poses
        .iter()
        .map(|p| {
            let r = p[0];
            p.iter().map(|q| [q[0] - r[0], q[1] - r[1], q[2] - r[2]]).collect()
        })
        .collect()
}

/// Mean error of each joint over frames, millimetres.
pub fn per_joint(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<Vec<f64>> {
    let errors = joint_errors(gt, pred)?;
    let nj = errors[0].len();
    let mut out = vec![0.0; nj];
    for frame in &errors {
        for (o, e) in out.iter_mut().zip(frame) {
            *o += e;
        }
    }
    Ok(out.into_iter().map(|s| s / errors.len() as f64).collect())
}

/// `pred` mapped onto `gt` by the least-squares similarity transform
/// (rotation without reflection, uniform scale, translation).
pub fn procrustes_align(gt: &[Vec3], pred: &[Vec3]) -> Result<Vec<Vec3>> {
    if gt.len() != pred.len() || gt.len() < 3 {
        return Err(Error::dim("procrustes needs at least three matching joints"));
    }
    let to_v = |p: &Vec3| Vector3::new(p[0], p[1], p[2]);
    let centroid = |ps: &[Vec3]| ps.iter().map(to_v).sum::<Vector3<f64>>() / ps.len() as f64;
    let (mx, my) = (centroid(gt), centroid(pred));
    let xs: Vec<Vector3<f64>> = gt.iter().map(|p| to_v(p) - mx).collect();
    let ys: Vec<Vector3<f64>> = pred.iter().map(|p| to_v(p) - my).collect();

    let spread = |vs: &[Vector3<f64>]| -> Result<f64> {
        let cov: Matrix3<f64> = vs.iter().map(|v| v * v.transpose()).sum();
        let sv = cov.symmetric_eigenvalues();
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        if !(s[0] > 1e-18) || s[1] <= 1e-12 * s[0] {
            return Err(Error::Degenerate("joints are coincident or collinear".into()));
        }
        Ok(vs.iter().map(|v| v.norm_squared()).sum())
    };
    spread(&xs)?;
    let ny = spread(&ys)?;

    // H = Σ y xᵀ; R = V diag(1, 1, d) Uᵀ
    let h: Matrix3<f64> = ys.iter().zip(&xs).map(|(y, x)| y * x.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let dmat = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * dmat * u.transpose();
    let s = (svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2]) / ny;
    Ok(ys.iter().map(|y| {
        let a = r * y * s + mx;
        [a[0], a[1], a[2]]
    }).collect())
}

/// MPJPE after per-frame similarity alignment, millimetres.
pub fn pa_mpjpe(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<f64> {
    check_counts(gt, pred)?;
    let aligned: Vec<Vec<Vec3>> = gt.iter().zip(pred).map(|(g, p)| procrustes_align(g, p)).collect::<Result<_>>()?;
    mpjpe(gt, &aligned)
}

/// The constant predictor: the per-joint mean of the given poses.
pub fn mean_pose(poses: &[Vec<Vec3>]) -> Result<Vec<Vec3>> {
    let nj = poses.first().ok_or_else(|| Error::arg("mean pose of an empty set"))?.len();
    let mut out = vec![[0.0; 3]; nj];
    for p in poses {
        if p.len() != nj {
            return Err(Error::dim("poses differ in joint count"));
        }
        for (o, q) in out.iter_mut().zip(p) {
            for k in 0..3 {
                o[k] += q[k];
            }
        }
    }
    let n = poses.len() as f64;
    Ok(out.into_iter().map(|o| o.map(|v| v / n)).collect())
}
