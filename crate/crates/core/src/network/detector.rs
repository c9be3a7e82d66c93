use super::config::DetectorConfig;
use super::layers::{init_bn, init_conv, Pass};
use crate::error::{Error, Result};
use crate::kinematics::NUM_HEATMAPS;
use crate::synth::Image;
use crate::tensor::{Element, ParamStore, Tensor, Var};

/// Image to 15 joint heatmaps: strided conv blocks, a few full-resolution
/// blocks at the bottleneck, then two deconvolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub cfg: DetectorConfig,
}

pub const IMAGE_MEAN: &str = "det.image_mean";
pub const IMAGE_STD: &str = "det.image_std";

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Detector { cfg })
    }

    pub fn init_params<T: Element>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let c = &self.cfg;
        let mut cin = 3;
        for (i, &cout) in c.down_channels.iter().enumerate() {
            init_conv(store, &format!("det.down{i}"), [cout, cin, 4, 4], false, seed)?;
            init_bn(store, &format!("det.down{i}.bn"), cout)?;
            cin = cout;
        }
        for i in 0..c.mid_blocks {
            init_conv(store, &format!("det.mid{i}"), [cin, cin, 3, 3], false, seed)?;
            init_bn(store, &format!("det.mid{i}.bn"), cin)?;
        }
        init_conv(store, "det.up", [cin, c.head_channels, 3, 3], true, seed)?;
        init_bn(store, "det.up.bn", c.head_channels)?;
        init_conv(store, "det.out", [c.head_channels, NUM_HEATMAPS, 3, 3], true, seed)?;
        store.insert_buffer(IMAGE_MEAN, Tensor::zeros(&[3]))?;
        store.insert_buffer(IMAGE_STD, Tensor::full(&[3], T::one()))
    }

    /// `input` is `B×3×S×S`, already normalised.
    pub fn forward<T: Element>(&self, pass: &mut Pass<T>, input: Var) -> Result<Var> {
        let c = &self.cfg;
        let shape = pass.tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != c.image_size || shape[3] != c.image_size {
            return Err(Error::dim(format!(
                "detector expects B×3×{s}×{s} images, got {shape:?}",
                s = c.image_size
            )));
        }
        let slope = T::c(c.leaky_slope);
        let mut h = input;
        let block = |pass: &mut Pass<T>, name: &str, h: Var| -> Result<Var> {
            let h = pass.batchnorm(&format!("{name}.bn"), h)?;
            pass.tape.leaky_relu(h, slope)
        };
        for i in 0..c.down_channels.len() {
            let name = format!("det.down{i}");
            h = pass.conv(&name, h, 2, 1)?;
            h = block(pass, &name, h)?;
        }
        for i in 0..c.mid_blocks {
            let name = format!("det.mid{i}");
            h = pass.conv(&name, h, 1, 1)?;
            h = block(pass, &name, h)?;
        }
        h = pass.deconv("det.up", h, 2, 0)?;
        h = block(pass, "det.up", h)?;
        pass.deconv("det.out", h, 1, 1)
    }
}

/// Per-channel mean and standard deviation of a set of images, in `[0, 1]`
/// intensity units.
pub fn image_statistics<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<([f64; 3], [f64; 3])> {
    let (mut s, mut s2, mut n) = ([0.0f64; 3], [0.0f64; 3], 0usize);
    for img in images {
        for px in img.data.chunks(3) {
            for k in 0..3 {
                let v = px[k] as f64 / 255.0;
                s[k] += v;
                s2[k] += v * v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::arg("image statistics need at least one image"));
    }
    let mean = s.map(|v| v / n as f64);
    let mut std = [0.0; 3];
    for k in 0..3 {
        std[k] = (s2[k] / n as f64 - mean[k] * mean[k]).max(0.0).sqrt().max(1e-3);
    }
    Ok((mean, std))
}

/// `3×H×W` planar tensor of `(pixel/255 − mean) / std`.
pub fn normalize_image<T: Element>(img: &Image, mean: [f64; 3], std: [f64; 3]) -> Tensor<T> {
    let plane = img.width * img.height;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in img.data.chunks(3).enumerate() {
        for k in 0..3 {
            data[k * plane + i] = T::c((px[k] as f64 / 255.0 - mean[k]) / std[k]);
        }
    }
    Tensor::new(&[3, img.height, img.width], data).expect("planar layout")
}

/// The normalisation statistics stored with a detector.
pub fn stored_statistics<T: Element>(store: &ParamStore<T>) -> Result<([f64; 3], [f64; 3])> {
    let get = |name: &str| -> Result<[f64; 3]> {
        let v = store.value(name)?.to_f64_vec();
        v.try_into().map_err(|_| Error::dim(format!("{name} must hold 3 values")))
    };
    Ok((get(IMAGE_MEAN)?, get(IMAGE_STD)?))
}
