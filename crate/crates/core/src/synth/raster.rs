use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeCamera, Joints2D};
use crate::error::Result;
use crate::kinematics::{Skeleton, Vec3};
use crate::rng;

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Image { width, height, data: rgb.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM, handy for eyeballing samples.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    Flat { color: [u8; 3] },
    /// Per-pixel uniform noise of ± `amplitude` around `base`.
    Noise { base: [u8; 3], amplitude: u8, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StickStyle {
    /// Line width in pixels.
    pub thickness: f64,
    pub background: Background,
    /// One colour per limb, indexed like [`Skeleton::limbs`].
    pub limb_colors: Vec<[u8; 3]>,
}

impl Default for StickStyle {
    fn default() -> Self {
        // Left side warm, right side cool, so the detector can tell them apart.
        let limb_colors = vec![
            [255, 255, 255], // Head
            [255, 64, 64],   // LeftArm
            [255, 160, 0],   // LeftElbow
            [255, 255, 0],   // LeftHand
            [0, 128, 255],   // RightArm
            [0, 255, 255],   // RightElbow
            [128, 0, 255],   // RightHand
            [255, 0, 160],   // LeftLeg
            [200, 80, 0],    // LeftKnee
            [255, 200, 150], // LeftFoot
            [160, 255, 0],   // LeftToe
            [0, 200, 100],   // RightLeg
            [0, 80, 200],    // RightKnee
            [150, 200, 255], // RightFoot
            [200, 150, 255], // RightToe
        ];
        StickStyle { thickness: 5.0, background: Background::Flat { color: [32, 32, 32] }, limb_colors }
    }
}

fn background(width: usize, height: usize, bg: &Background) -> Image {
    match *bg {
        Background::Flat { color } => Image::filled(width, height, color),
        Background::Noise { base, amplitude, seed } => {
            use rand::Rng;
            let mut r = rng::stream(seed, "background", 0);
            let a = amplitude as i16;
            let data = (0..width * height * 3)
                .map(|i| (base[i % 3] as i16 + r.gen_range(-a..=a)).clamp(0, 255) as u8)
                .collect();
            Image { width, height, data }
        }
    }
}

/// Anti-aliased segment: coverage falls off linearly over one pixel at the
/// stroke edge.
fn draw_segment(img: &mut Image, a: [f64; 2], b: [f64; 2], thickness: f64, rgb: [u8; 3]) {
    let half = thickness / 2.0;
    let pad = half + 1.0;
    let x0 = (a[0].min(b[0]) - pad).floor().max(0.0) as usize;
    let y0 = (a[1].min(b[1]) - pad).floor().max(0.0) as usize;
    let x1 = ((a[0].max(b[0]) + pad).ceil().min(img.width as f64 - 1.0)).max(-1.0);
    let y1 = ((a[1].max(b[1]) + pad).ceil().min(img.height as f64 - 1.0)).max(-1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = [x as f64 - a[0], y as f64 - a[1]];
            let t = if len2 > 0.0 { ((p[0] * d[0] + p[1] * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let dist = (p[0] - t * d[0]).hypot(p[1] - t * d[1]);
            let cover = (half + 0.5 - dist).clamp(0.0, 1.0);
            if cover > 0.0 {
                let i = (y * img.width + x) * 3;
                for k in 0..3 {
                    let v = img.data[i + k] as f64 * (1.0 - cover) + rgb[k] as f64 * cover;
                    img.data[i + k] = v.round() as u8;
                }
            }
        }
    }
}

/// Draws the stick figure from projected heatmap joints (image pixels).
/// Limbs are straight chords between joints; a limb is drawn only when both
/// of its joints are visible. The Head has no 2D joint and is never drawn.
pub fn rasterize_joints(joints: &Joints2D, skel: &Skeleton, cam: &FisheyeCamera, style: &StickStyle) -> Image {
    let [w, h] = cam.image_size;
    let mut img = background(w, h, &style.background);
    let channel = |j: usize| skel.heatmap_joints.iter().position(|&k| k == j);
    for (l, (c, p)) in skel.limbs().into_iter().enumerate() {
        let (Some(ci), Some(pi)) = (channel(c), channel(p)) else { continue };
        if !(joints.visible[ci] && joints.visible[pi]) {
            continue;
        }
        let color = style.limb_colors.get(l).copied().unwrap_or([255, 255, 255]);
        draw_segment(&mut img, joints.uv[pi], joints.uv[ci], style.thickness, color);
    }
    img
}

/// Projects a camera-frame pose and draws it.
pub fn rasterize(pose: &[Vec3], skel: &Skeleton, cam: &FisheyeCamera, style: &StickStyle) -> Result<Image> {
    let joints = cam.project_joints(pose, skel)?;
    Ok(rasterize_joints(&joints, skel, cam, style))
}
