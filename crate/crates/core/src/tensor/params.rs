use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param<T: Element> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// Adam first and second moments.
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Buffers such as running statistics are stored but never optimised.
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { lr, ..Default::default() }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, lr, ..Default::default() }
    }
}

/// Named parameters with their optimiser state. Iteration order is by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    params: BTreeMap<String, Param<T>>,
    step: u64,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new(), step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert_with(name, value, true)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        self.insert_with(name, value, false)
    }

    fn insert_with(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::arg(format!("parameter {name:?} already exists")));
        }
        let shape = value.shape().to_vec();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: None,
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                trainable,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))
    }

    /// Replaces a value in place; the shape may not change.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name:?} has shape {:?}, not {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.values().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))?;
        if p.value.shape() != grad.shape() {
            return Err(Error::dim(format!("gradient shape mismatch for {name:?}")));
        }
        match &mut p.grad {
            Some(g) => g.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &b)| *a = *a + b),
            None => p.grad = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)?.grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// One optimiser update over every trainable parameter, then clears the
    /// gradients. Fails without modifying anything if a trainable parameter
    /// has no gradient.
    pub fn step(&mut self, cfg: &OptimizerConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Gradient(format!("parameter {name:?} has no gradient")));
        }
        self.step += 1;
        let lr = T::c(cfg.lr);
        let (b1, b2, eps) = (T::c(cfg.beta1), T::c(cfg.beta2), T::c(cfg.eps));
        let bias1 = T::one() - T::c(cfg.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::c(cfg.beta2.powi(self.step as i32));
        for p in self.params.values_mut().filter(|p| p.trainable) {
            let g = p.grad.take().expect("checked above");
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *w = *w - lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (p.m.data_mut(), p.v.data_mut());
                    for (((w, &gi), mi), vi) in
                        p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v)
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let mhat = *mi / bias1;
                        let vhat = *vi / bias2;
                        *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        self.params.values_mut().for_each(|p| p.grad = None);
        Ok(())
    }

    pub(crate) fn moments_mut(&mut self, name: &str) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        self.params.get_mut(name).map(|p| (&mut p.m, &mut p.v))
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.as_ref().map(Tensor::cast),
                            m: p.m.cast(),
                            v: p.v.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

/// Fan-in and fan-out for dense (`out×in`), conv (`out×in×k×k`) and deconv
/// (`in×out×k×k`, pass `transposed`) weights.
fn fans(shape: &[usize], transposed: bool) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [a, b, rest @ ..] => {
            let field: usize = rest.iter().product();
            let (out, inp) = if transposed { (*b, *a) } else { (*a, *b) };
            (inp * field, out * field)
        }
        [] => (1, 1),
    }
}

/// Glorot-uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Element>(shape: &[usize], transposed: bool, seed: u64) -> Tensor<T> {
    let (fan_in, fan_out) = fans(shape, transposed);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| T::c(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(value)).unwrap();
        s.accumulate_grad("w", &Tensor::scalar(grad)).unwrap();
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = single(1.0, 1.0);
        s.step(&OptimizerConfig::adam(1e-3)).unwrap();
        let w = s.value("w").unwrap().data()[0];
        assert!((w - 0.999).abs() < 1e-9, "{w}");
        assert!(s.grad("w").is_none());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(0.5, 0.0);
        s.step(&OptimizerConfig::adam(1e-3)).unwrap();
        assert_eq!(s.value("w").unwrap().data()[0], 0.5);
        let mut s = single(0.5, 0.0);
        s.step(&OptimizerConfig::sgd(1e-3)).unwrap();
        assert_eq!(s.value("w").unwrap().data()[0], 0.5);
    }

    #[test]
    fn repeated_positive_gradient_decreases() {
        let mut s = single(1.0, 0.3);
        s.step(&OptimizerConfig::adam(1e-2)).unwrap();
        let w1 = s.value("w").unwrap().data()[0];
        s.accumulate_grad("w", &Tensor::scalar(0.3)).unwrap();
        s.step(&OptimizerConfig::adam(1e-2)).unwrap();
        let w2 = s.value("w").unwrap().data()[0];
        assert!(w1 < 1.0 && w2 < w1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(s.step(&OptimizerConfig::default()).is_err());
        s.insert_buffer("running", Tensor::scalar(0.0)).unwrap();
        s.accumulate_grad("w", &Tensor::scalar(1.0)).unwrap();
        s.step(&OptimizerConfig::default()).unwrap();
    }

    #[test]
    fn duplicate_names_and_shape_changes_rejected() {
        let mut s: ParamStore<f32> = ParamStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
        assert!(s.set_value("a", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn xavier_bounds_variance_and_determinism() {
        let shape = [100, 100];
        let a: Tensor<f64> = xavier_init(&shape, false, 7);
        let b: Tensor<f64> = xavier_init(&shape, false, 7);
        assert_eq!(a, b);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        let n = a.len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // uniform on ±b has variance b²/3 = 2/(fan_in + fan_out)
        let want = 2.0 / 200.0;
        assert!((var - want).abs() / want < 0.1, "{var} vs {want}");
    }

    #[test]
    fn conv_and_deconv_fans() {
        assert_eq!(fans(&[64, 15, 4, 4], false), (240, 1024));
        assert_eq!(fans(&[64, 15, 4, 4], true), (1024, 240));
    }
}
