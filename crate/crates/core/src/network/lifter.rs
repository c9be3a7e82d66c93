use super::config::LifterConfig;
use super::layers::{init_bn, init_conv, init_dense, Pass};
use crate::error::{Error, Result};
use crate::kinematics::{NUM_HEATMAPS, NUM_JOINTS};
use crate::tensor::{Element, ParamStore, Tensor, Var};

/// Tape handles of one lifting pass. Absent branches are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LifterOutputs {
    /// `B×16×3`
    pub pose: Var,
    /// `B×16×4`, unit rows
    pub rot: Option<Var>,
    /// `B×15×s×s`
    pub hm: Option<Var>,
    /// `B×z`
    pub z: Var,
}

/// Which optional branches to evaluate in a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub rot: bool,
    pub hm: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { rot: true, hm: true };
    pub const POSE_ONLY: Heads = Heads { rot: false, hm: false };
}

/// Convolutional encoder to an embedding, decoded by a pose branch and
/// optional rotation and heatmap-reconstruction branches.
#[derive(Clone, Debug, PartialEq)]
pub struct Lifter {
    pub cfg: LifterConfig,
}

const QUAT_EPS: f64 = 1e-12;

impl Lifter {
    pub fn new(cfg: LifterConfig) -> Result<Self> {
        cfg.validate(false)?;
        Ok(Lifter { cfg })
    }

    fn flat_size(&self) -> usize {
        let s = self.cfg.encoder_spatial().expect("validated");
        self.cfg.encoder_channels.last().expect("validated") * s * s
    }

    /// Output channels of each heatmap-branch deconvolution with its
    /// `(kernel, stride, pad)`: doublings first, then size-preserving
    /// layers, three in total.
    fn hm_deconvs(&self) -> Vec<(usize, usize, [usize; 3])> {
        let (_, doublings) = self.cfg.hm_plan();
        let c = self.cfg.hm_channels;
        (0..3)
            .map(|i| {
                let cin = c;
                let cout = if i == 2 { NUM_HEATMAPS } else { c };
                let geo = if i < doublings { [4, 2, 1] } else { [3, 1, 1] };
                (cin, cout, geo)
            })
            .collect()
    }

    /// Xavier weights, zero biases; the pose output bias starts at
    /// `pose_mean` (48 values) when given and the rotation output bias at
    /// the identity quaternion.
    pub fn init_params<T: Element>(&self, store: &mut ParamStore<T>, seed: u64, pose_mean: Option<&[f64]>) -> Result<()> {
        let c = &self.cfg;
        let mut cin = NUM_HEATMAPS;
        for (i, &cout) in c.encoder_channels.iter().enumerate() {
            init_conv(store, &format!("lift.enc{i}"), [cout, cin, 4, 4], false, seed)?;
            if c.batchnorm {
                init_bn(store, &format!("lift.enc{i}.bn"), cout)?;
            }
            cin = cout;
        }
        init_dense(store, "lift.z", c.z_size, self.flat_size(), seed)?;

        self.init_mlp(store, "lift.pose", &c.pose_hidden, NUM_JOINTS * 3, seed)?;
        if let Some(mean) = pose_mean {
            if mean.len() != NUM_JOINTS * 3 {
                return Err(Error::dim("pose mean must hold 16×3 values"));
            }
            store.set_value("lift.pose.out.b", Tensor::from_f64(&[NUM_JOINTS * 3], mean)?)?;
        }

        if c.branches.rot {
            self.init_mlp(store, "lift.rot", &c.rot_hidden, NUM_JOINTS * 4, seed)?;
            let ident: Vec<f64> = (0..NUM_JOINTS * 4).map(|k| if k % 4 == 0 { 1.0 } else { 0.0 }).collect();
            store.set_value("lift.rot.out.b", Tensor::from_f64(&[NUM_JOINTS * 4], &ident)?)?;
        }

        if c.branches.hm {
            let (base, _) = c.hm_plan();
            init_dense(store, "lift.hm.fc0", c.hm_hidden, c.z_size, seed)?;
            init_dense(store, "lift.hm.fc1", c.hm_channels * base * base, c.hm_hidden, seed)?;
            if c.batchnorm {
                init_bn(store, "lift.hm.fc0.bn", c.hm_hidden)?;
                init_bn(store, "lift.hm.fc1.bn", c.hm_channels * base * base)?;
            }
            for (i, (ci, co, [k, _, _])) in self.hm_deconvs().into_iter().enumerate() {
                init_conv(store, &format!("lift.hm.dc{i}"), [ci, co, k, k], true, seed)?;
                if c.batchnorm && i < 2 {
                    init_bn(store, &format!("lift.hm.dc{i}.bn"), co)?;
                }
            }
        }
        for name in ["lift.pose.out.w", "lift.rot.out.w", "lift.hm.dc2.w"] {
            if let Ok(w) = store.value(name) {
                let scaled = w.map(|v| v * T::c(c.output_init_scale));
                store.set_value(name, scaled)?;
            }
        }
        Ok(())
    }

    fn init_mlp<T: Element>(&self, store: &mut ParamStore<T>, prefix: &str, hidden: &[usize], out: usize, seed: u64) -> Result<()> {
        let mut inp = self.cfg.z_size;
        for (i, &h) in hidden.iter().enumerate() {
            init_dense(store, &format!("{prefix}.fc{i}"), h, inp, seed)?;
            if self.cfg.batchnorm {
                init_bn(store, &format!("{prefix}.fc{i}.bn"), h)?;
            }
            inp = h;
        }
        init_dense(store, &format!("{prefix}.out"), out, inp, seed)
    }

    fn activate<T: Element>(&self, pass: &mut Pass<T>, name: &str, x: Var, bn: bool) -> Result<Var> {
        let x = if bn && self.cfg.batchnorm { pass.batchnorm(&format!("{name}.bn"), x)? } else { x };
        pass.tape.leaky_relu(x, T::c(self.cfg.leaky_slope))
    }

    fn mlp<T: Element>(&self, pass: &mut Pass<T>, prefix: &str, hidden: &[usize], z: Var) -> Result<Var> {
        let mut h = z;
        for i in 0..hidden.len() {
            let name = format!("{prefix}.fc{i}");
            h = pass.dense(&name, h)?;
            h = self.activate(pass, &name, h, true)?;
        }
        pass.dense(&format!("{prefix}.out"), h)
    }

    /// `input` is `B×15×S×S`. Branches disabled in the config are never
    /// evaluated, whatever `heads` asks for.
    pub fn forward<T: Element>(&self, pass: &mut Pass<T>, input: Var, heads: Heads) -> Result<LifterOutputs> {
        let c = &self.cfg;
        let shape = pass.tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != NUM_HEATMAPS || shape[2] != c.input_size || shape[3] != c.input_size {
            return Err(Error::dim(format!(
                "lifter expects B×{NUM_HEATMAPS}×{s}×{s} heatmaps, got {shape:?}",
                s = c.input_size
            )));
        }
        let batch = shape[0];
        let mut h = input;
        for i in 0..c.encoder_channels.len() {
            let name = format!("lift.enc{i}");
            h = pass.conv(&name, h, 2, 1)?;
            h = self.activate(pass, &name, h, true)?;
        }
        let z = pass.dense("lift.z", h)?;

        let pose = self.mlp(pass, "lift.pose", &c.pose_hidden, z)?;
        let pose = pass.tape.reshape(pose, &[batch, NUM_JOINTS, 3])?;

        let rot = if c.branches.rot && heads.rot {
            let r = self.mlp(pass, "lift.rot", &c.rot_hidden, z)?;
            let r = pass.tape.reshape(r, &[batch, NUM_JOINTS, 4])?;
            Some(pass.tape.normalize_rows(r, T::c(QUAT_EPS))?)
        } else {
            None
        };

        let hm = if c.branches.hm && heads.hm {
            let (base, _) = c.hm_plan();
            let mut x = pass.dense("lift.hm.fc0", z)?;
            x = self.activate(pass, "lift.hm.fc0", x, true)?;
            x = pass.dense("lift.hm.fc1", x)?;
            x = self.activate(pass, "lift.hm.fc1", x, true)?;
            x = pass.tape.reshape(x, &[batch, c.hm_channels, base, base])?;
            for (i, (_, _, [_, s, p])) in self.hm_deconvs().into_iter().enumerate() {
                let name = format!("lift.hm.dc{i}");
                x = pass.deconv(&name, x, s, p)?;
                if i < 2 {
                    x = self.activate(pass, &name, x, true)?;
                }
            }
            Some(x)
        } else {
            None
        };
        Ok(LifterOutputs { pose, rot, hm, z })
    }
}
