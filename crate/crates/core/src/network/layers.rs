use crate::error::Result;
use crate::rng;
use crate::tensor::{xavier_init, BatchStats, Element, ParamStore, Tape, Tensor, Var};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

fn init_seed(seed: u64, name: &str) -> u64 {
    rng::derive_seed(seed, name, 0)
}

pub(crate) fn init_conv<T: Element>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: [usize; 4],
    transposed: bool,
    seed: u64,
) -> Result<()> {
    store.insert(&format!("{name}.w"), xavier_init(&shape, transposed, init_seed(seed, name)))?;
    let out = if transposed { shape[1] } else { shape[0] };
    store.insert(&format!("{name}.b"), Tensor::zeros(&[out]))
}

pub(crate) fn init_dense<T: Element>(store: &mut ParamStore<T>, name: &str, out: usize, inp: usize, seed: u64) -> Result<()> {
    store.insert(&format!("{name}.w"), xavier_init(&[out, inp], false, init_seed(seed, name)))?;
    store.insert(&format!("{name}.b"), Tensor::zeros(&[out]))
}

pub(crate) fn init_bn<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<()> {
    store.insert(&format!("{name}.gamma"), Tensor::full(&[channels], T::one()))?;
    store.insert(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
    store.insert_buffer(&format!("{name}.mean"), Tensor::zeros(&[channels]))?;
    store.insert_buffer(&format!("{name}.var"), Tensor::full(&[channels], T::one()))
}

/// One forward pass: the tape, the parameters it reads, and the batchnorm
/// statistics it gathers in training mode.
pub struct Pass<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub train: bool,
    pub stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Element> Pass<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, train: bool) -> Self {
        Pass { tape, store, train, stats: Vec::new() }
    }

    fn wb(&mut self, name: &str) -> Result<(Var, Var)> {
        let w = self.tape.param(self.store, &format!("{name}.w"))?;
        let b = self.tape.param(self.store, &format!("{name}.b"))?;
        Ok((w, b))
    }

    pub fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        self.tape.conv2d(x, w, b, stride, pad)
    }

    pub fn deconv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        self.tape.deconv2d(x, w, b, stride, pad)
    }

    pub fn dense(&mut self, name: &str, x: Var) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        self.tape.dense(x, w, b)
    }

    /// Batch statistics when training on at least two samples, running
    /// statistics otherwise.
    pub fn batchnorm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.tape.param(self.store, &format!("{name}.gamma"))?;
        let beta = self.tape.param(self.store, &format!("{name}.beta"))?;
        let eps = T::c(BN_EPS);
        if self.train && self.tape.value(x).shape()[0] >= 2 {
            let (y, stats) = self.tape.batchnorm_train(x, gamma, beta, eps)?;
            self.stats.push((name.to_string(), stats));
            Ok(y)
        } else {
            let mean = self.store.value(&format!("{name}.mean"))?.data().to_vec();
            let var = self.store.value(&format!("{name}.var"))?.data().to_vec();
            self.tape.batchnorm_eval(x, gamma, beta, &mean, &var, eps)
        }
    }
}

/// Folds gathered batch statistics into the running buffers.
pub fn update_running_stats<T: Element>(store: &mut ParamStore<T>, stats: &[(String, BatchStats<T>)]) -> Result<()> {
    let m = T::c(BN_MOMENTUM);
    for (name, s) in stats {
        for (suffix, batch) in [("mean", &s.mean), ("var", &s.var)] {
            let key = format!("{name}.{suffix}");
            let mut cur = store.value(&key)?.clone();
            for (c, &b) in cur.data_mut().iter_mut().zip(batch.iter()) {
                *c = (T::one() - m) * *c + m * b;
            }
            store.set_value(&key, cur)?;
        }
    }
    Ok(())
}
