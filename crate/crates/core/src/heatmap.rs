//! Gaussian joint heatmaps: rendering, sub-cell decoding and resampling.
//!
//! Cell `(row v, col u)` has its centre at heatmap coordinate `(u, v)`.

use serde::{Deserialize, Serialize};

use crate::camera::Joints2D;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.05;
/// Rendered values below this are stored as exact zeros.
pub const TAIL_CUTOFF: f64 = 1e-12;
pub const RECONSTRUCTION_SIZES: [usize; 5] = [48, 36, 24, 16, 8];

/// `channels × height × width`, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// How `decode` refines the hard argmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Gaussian fit to the log of the 5×5 window's row/column marginals,
    /// falling back to the soft-argmax when the fit is ill-posed.
    #[default]
    GaussianFit,
    /// Plain soft-argmax over the 5×5 window.
    SoftArgmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub refinement: Refinement,
    pub threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { refinement: Refinement::default(), threshold: DEFAULT_VISIBILITY_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub joints: Joints2D,
    pub confidence: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        HeatmapStack { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.channels, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Ok(HeatmapStack { channels: c, height: h, width: w, data: t.data().to_vec() }),
            _ => Err(Error::dim(format!("heatmap tensor must be C×H×W, got {:?}", t.shape()))),
        }
    }
}

/// One channel per joint: an isotropic Gaussian sampled at cell centres and
/// scaled so the largest sample is 1. Invisible joints give zero channels.
pub fn render(joints: &Joints2D, size: usize, sigma: f64) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::arg("heatmap sigma must be positive"));
    }
    let mut hm = HeatmapStack::zeros(joints.len(), size, size);
    let k = -0.5 / (sigma * sigma);
    for (c, (&[u, v], &vis)) in joints.uv.iter().zip(&joints.visible).enumerate() {
        if !vis {
            continue;
        }
        let gx: Vec<f64> = (0..size).map(|x| (k * (x as f64 - u).powi(2)).exp()).collect();
        let gy: Vec<f64> = (0..size).map(|y| (k * (y as f64 - v).powi(2)).exp()).collect();
        let peak = gx.iter().cloned().fold(0.0, f64::max) * gy.iter().cloned().fold(0.0, f64::max);
        if peak < 1e-30 {
            continue;
        }
        let ch = hm.channel_mut(c);
        for y in 0..size {
            for x in 0..size {
                let v = ((gx[x] * gy[y]) / peak).min(1.0);
                // denormal tails would only slow every consumer down
                ch[y * size + x] = if v < TAIL_CUTOFF { 0.0 } else { v as f32 };
            }
        }
    }
    Ok(hm)
}

/// Hard argmax with ties going to the lowest linear index.
fn argmax(ch: &[f32]) -> (usize, f32) {
    let mut best = (0, ch[0]);
    for (i, &v) in ch.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Offset of the vertex of a quadratic least-squares fit to `ln m` over the
/// offsets `ks`, weighted by `m²`.
fn log_quadratic_vertex(ks: &[f64], m: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> =
        ks.iter().zip(m).filter(|(_, &m)| m > 1e-12).map(|(&k, &m)| (k, m.ln(), m * m)).collect();
    if pts.len() < 3 {
        return None;
    }
    // normal equations for y = a k² + b k + c
    let mut s = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for &(k, y, w) in &pts {
        let basis = [k * k, k, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += w * basis[i] * basis[j];
            }
            r[i] += w * basis[i] * y;
        }
    }
    let [a, b, _] = solve3(s, r)?;
    if !(a < -1e-12) {
        return None;
    }
    let off = -b / (2.0 * a);
    off.is_finite().then_some(off)
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut mi = m;
        for row in 0..3 {
            mi[row][i] = r[row];
        }
        *o = det(mi) / d;
    }
    Some(out)
}

/// Location of every channel's peak (heatmap coordinates) and its height.
pub fn decode(hm: &HeatmapStack, cfg: &DecodeConfig) -> Decoded {
    let (h, w) = (hm.height, hm.width);
    let mut uv = Vec::with_capacity(hm.channels);
    let mut visible = Vec::with_capacity(hm.channels);
    let mut confidence = Vec::with_capacity(hm.channels);
    for c in 0..hm.channels {
        let ch = hm.channel(c);
        let (idx, peak) = argmax(ch);
        let (py, px) = ((idx / w) as isize, (idx % w) as isize);
        let (y0, y1) = ((py - 2).max(0) as usize, (py + 2).min(h as isize - 1) as usize);
        let (x0, x1) = ((px - 2).max(0) as usize, (px + 2).min(w as isize - 1) as usize);

        let soft = || {
            let (mut s, mut su, mut sv) = (0.0f64, 0.0f64, 0.0f64);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let v = ch[y * w + x].max(0.0) as f64;
                    s += v;
                    su += v * x as f64;
                    sv += v * y as f64;
                }
            }
            if s > 0.0 {
                [su / s, sv / s]
            } else {
                [px as f64, py as f64]
            }
        };
        let loc = match cfg.refinement {
            Refinement::SoftArgmax => soft(),
            Refinement::GaussianFit => {
                let col_ks: Vec<f64> = (x0..=x1).map(|x| x as f64 - px as f64).collect();
                let cols: Vec<f64> =
                    (x0..=x1).map(|x| (y0..=y1).map(|y| ch[y * w + x] as f64).sum()).collect();
                let row_ks: Vec<f64> = (y0..=y1).map(|y| y as f64 - py as f64).collect();
                let rows: Vec<f64> =
                    (y0..=y1).map(|y| (x0..=x1).map(|x| ch[y * w + x] as f64).sum()).collect();
                match (log_quadratic_vertex(&col_ks, &cols), log_quadratic_vertex(&row_ks, &rows)) {
                    (Some(du), Some(dv)) => {
                        [px as f64 + du.clamp(-1.0, 1.0), py as f64 + dv.clamp(-1.0, 1.0)]
                    }
                    _ => soft(),
                }
            }
        };
        let peak = peak.max(0.0) as f64;
        uv.push(loc);
        visible.push(peak >= cfg.threshold);
        confidence.push(peak);
    }
    Decoded { joints: Joints2D { uv, visible }, confidence }
}

/// Maps a coordinate between grids of `from` and `to` cells, aligning the
/// outer cell edges.
pub fn rescale_coord(c: f64, from: usize, to: usize) -> f64 {
    (c + 0.5) * to as f64 / from as f64 - 0.5
}

/// Bilinear resampling of every channel to `size × size`.
pub fn resample(hm: &HeatmapStack, size: usize) -> Result<HeatmapStack> {
    if size != hm.height && !RECONSTRUCTION_SIZES.contains(&size) {
        return Err(Error::arg(format!(
            "unsupported heatmap size {size}; expected one of {RECONSTRUCTION_SIZES:?}"
        )));
    }
    if size == hm.height && size == hm.width {
        return Ok(hm.clone());
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|d| {
                let s = rescale_coord(d as f64, dst, src).clamp(0.0, (src - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ty = taps(size, hm.height);
    let tx = taps(size, hm.width);
    let mut out = HeatmapStack::zeros(hm.channels, size, size);
    for c in 0..hm.channels {
        let src = hm.channel(c);
        let dst = out.channel_mut(c);
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let at = |yy: usize, xx: usize| src[yy * hm.width + xx] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                dst[y * size + x] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    Ok(out)
}
