//! Central finite-difference checks of tape gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|)` over a whole gradient, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn scalar(tape: &Tape<f64>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(Error::Gradient("gradient check needs a scalar output".into()));
    }
    Ok(t.data()[0])
}

/// Largest relative error over all `inputs` between the tape gradient and a
/// central difference with the given `step`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward_only(out)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar(&tape, out)
    };

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        let mut probe = inputs.to_vec();
        for k in 0..x.len() {
            let orig = x.data()[k];
            probe[i].data_mut()[k] = orig + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = orig - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            numeric[k] = (plus - minus) / (2.0 * step);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Relative error of parameter gradients. With `sample = Some((n, seed))`
/// only `n` randomly chosen scalars are probed; the analytic side is
/// restricted to the same coordinates.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    step: f64,
    sample: Option<(usize, u64)>,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut grads = store.clone();
    grads.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out, &mut grads)?;

    let mut coords: Vec<(String, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(name, p)| (0..p.value.len()).map(move |k| (name.to_string(), k)))
        .collect();
    if let Some((n, seed)) = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(n.min(coords.len()));
        while !coords.is_empty() && picked.len() < n {
            let i = rng.gen_range(0..coords.len());
            picked.push(coords.swap_remove(i));
        }
        coords = picked;
    }

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut probe = store.clone();
    for (name, k) in &coords {
        analytic.push(grads.grad(name).map(|g| g.data()[*k]).unwrap_or(0.0));
        let orig = store.value(name)?.clone();
        let mut shifted = orig.clone();
        shifted.data_mut()[*k] += step;
        probe.set_value(name, shifted.clone())?;
        let plus = {
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            scalar(&t, o)?
        };
        shifted.data_mut()[*k] -= 2.0 * step;
        probe.set_value(name, shifted)?;
        let minus = {
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            scalar(&t, o)?
        };
        probe.set_value(name, orig)?;
        numeric.push((plus - minus) / (2.0 * step));
    }
    Ok(relative_error(&analytic, &numeric))
}
