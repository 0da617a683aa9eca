//! Central finite-difference gradient checking in 64-bit.

use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences, for every element of every input.
///
/// `f` receives a fresh tape and one gradient-tracking leaf per input, and
/// must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v, &inputs[i]);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[j], numeric);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Like [`check_gradients`], for parameters held in a store. At most
/// `limit` evenly spaced elements of each parameter are perturbed.
pub fn check_param_gradients<F>(store: &ParamStore<f64>, ids: &[ParamId], limit: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let analytic = tape.param_grads(&grads);

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for (i, &id) in ids.iter().enumerate() {
        let zeros = Tensor::zeros(store.get(id).shape().to_vec());
        let a = analytic.iter().find(|(p, _)| *p == id).map_or(&zeros, |(_, g)| g);
        let n = store.get(id).len();
        let stride = n.div_ceil(limit.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let x0 = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = x0 + FD_STEP;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0 - FD_STEP;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0;
            let e = rel_err(a.data()[j], (up - down) / (2.0 * FD_STEP));
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Reduces a tensor-valued output to a scalar with fixed pseudo-random
/// weights, so every output element contributes to the checked gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let n = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?)?;
    let p = tape.hadamard(out, w)?;
    tape.sum_all(p)
}
