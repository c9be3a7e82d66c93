use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{joint_errors, pa_mpjpe};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, Vec3};
use crate::synth::Action;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: Action,
    pub frames: usize,
    /// `None` when no frame carries this label.
    pub mpjpe: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub rows: Vec<ActionRow>,
    /// Over all frames, not the mean of the rows.
    pub overall: f64,
}

/// MPJPE restricted to each action label, in `Action::ALL` order.
pub fn per_action(actions: &[Action], gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> Result<ActionReport> {
    if actions.len() != gt.len() {
        return Err(Error::dim("one action label per frame required"));
    }
    let errors = joint_errors(gt, pred)?;
    let nj = errors[0].len() as f64;
    let mut sums = [0.0f64; 9];
    let mut counts = [0usize; 9];
    let mut total = 0.0;
    for (a, frame) in actions.iter().zip(&errors) {
        let s: f64 = frame.iter().sum();
        sums[a.index() as usize] += s;
        counts[a.index() as usize] += 1;
        total += s;
    }
    let rows = Action::ALL
        .iter()
        .map(|&action| {
            let i = action.index() as usize;
            ActionRow {
                action,
                frames: counts[i],
                mpjpe: (counts[i] > 0).then(|| sums[i] / (counts[i] as f64 * nj)),
            }
        })
        .collect();
    Ok(ActionReport { rows, overall: total / (errors.len() as f64 * nj) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_mpjpe: f64,
    pub pa_mpjpe: f64,
    /// `(joint name, mm)` in skeleton order.
    pub per_joint: Vec<(String, f64)>,
    pub per_action: Vec<ActionRow>,
    pub n_frames: usize,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn build(
        skel: &Skeleton,
        actions: &[Action],
        gt: &[Vec<Vec3>],
        pred: &[Vec<Vec3>],
        config: BTreeMap<String, String>,
    ) -> Result<EvalReport> {
        let errors = joint_errors(gt, pred)?;
        if errors[0].len() != skel.len() {
            return Err(Error::dim("poses do not match the skeleton"));
        }
        let per_joint = super::metrics::per_joint(gt, pred)?;
        let acts = per_action(actions, gt, pred)?;
        Ok(EvalReport {
            overall_mpjpe: acts.overall,
            pa_mpjpe: pa_mpjpe(gt, pred)?,
            per_joint: skel.joint_names.iter().cloned().zip(per_joint).collect(),
            per_action: acts.rows,
            n_frames: gt.len(),
            config,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Tab-separated `section, key, frames, mm` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("section\tkey\tframes\tmm\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "overall\tmpjpe\t{}\t{:.6}", self.n_frames, self.overall_mpjpe);
        let _ = writeln!(out, "overall\tpa_mpjpe\t{}\t{:.6}", self.n_frames, self.pa_mpjpe);
        for r in &self.per_action {
            let _ = writeln!(out, "action\t{}\t{}\t{}", r.action.name(), r.frames, fmt(r.mpjpe));
        }
        for (name, v) in &self.per_joint {
            let _ = writeln!(out, "joint\t{name}\t{}\t{v:.6}", self.n_frames);
        }
        out
    }
}

/// One row of a noise sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    /// `(seed, mm)`; a single entry at σ = 0, where the noise vanishes.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub rows: Vec<NoiseRow>,
    pub seeds: Vec<u64>,
    /// Whether the mean error never decreases with σ (reported only).
    pub monotone: bool,
}

/// Evaluates `eval(sigma, seed)` over every configured σ and seed.
/// `sigmas` must ascend and start at 0.
pub fn noise_sweep(sigmas: &[f64], seeds: &[u64], mut eval: impl FnMut(f64, u64) -> Result<f64>) -> Result<NoiseTable> {
    if sigmas.first() != Some(&0.0) || sigmas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("noise sigmas must ascend strictly from 0".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("noise sweep needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let per_seed: Vec<(u64, f64)> = if sigma == 0.0 {
            vec![(seeds[0], eval(0.0, seeds[0])?)]
        } else {
            seeds.iter().map(|&s| eval(sigma, s).map(|v| (s, v))).collect::<Result<_>>()?
        };
        let n = per_seed.len() as f64;
        let mean = if per_seed.len() == 1 { per_seed[0].1 } else { per_seed.iter().map(|p| p.1).sum::<f64>() / n };
        let var = if per_seed.len() > 1 {
            per_seed.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push(NoiseRow { sigma, per_seed, mean, std: var.sqrt() });
    }
    let monotone = rows.windows(2).all(|w| w[1].mean >= w[0].mean);
    Ok(NoiseTable { rows, seeds: seeds.to_vec(), monotone })
}

impl NoiseTable {
    /// `sigma, mean_mpjpe_mm, std_mm, var_mm2, n_seeds, values` (the last
    /// column lists `seed:mm` pairs separated by `;`).
    pub fn to_table(&self) -> String {
        let mut out = String::from("sigma\tmean_mpjpe_mm\tstd_mm\tvar_mm2\tn_seeds\tper_seed\n");
        for r in &self.rows {
            let vals: Vec<String> = r.per_seed.iter().map(|(s, v)| format!("{s}:{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                r.sigma,
                r.mean,
                r.std,
                r.std * r.std,
                r.per_seed.len(),
                vals.join(";")
            );
        }
        out
    }
}
