//! Central-difference gradient checking in 64-bit precision.
//!
//! The numerical side only ever calls forward passes; it shares nothing with
//! the reverse sweep it audits.
//!
//! A probe whose `±h` forwards land on a different side of some ReLU or
//! max-pool branch than the unperturbed forward is not a differentiable
//! comparison point. Such probes are skipped and counted in
//! [`GradCheckReport::skipped`]; a check with more than a tenth of its probes
//! skipped does not pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NormMode, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::{ParamKind, ParamStore, Session};

pub const DEFAULT_STEP: f64 = 1e-3;

/// Gradients whose magnitude stays below this are compared absolutely: a
/// tensor with a true gradient of zero would otherwise turn finite-difference
/// roundoff into a relative error of 1.
pub const ABS_FLOOR: f64 = 1e-7;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    /// `max |analytic − numeric| / max(|numeric|, |analytic|, ABS_FLOOR)` per
    /// tensor, maximised over tensors.
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Probes compared.
    pub elements: usize,
    /// Probes skipped because the stencil crossed a branch point.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite()
            && self.max_rel_error < self.tolerance
            && self.elements > 0
            && self.skipped * 10 <= self.elements + self.skipped
    }
}

/// Reduces a non-scalar output to `Σ y ⊙ r` with fixed pseudo-random `r`, so
/// every output element contributes a distinct weight.
fn reduce(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    if tape.value(y).numel() == 1 {
        return Ok(y);
    }
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = tape.constant(Tensor::new(&shape, weights)?);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

type Probe = (f64, Vec<usize>);

#[derive(Default)]
struct Tally {
    worst: f64,
    elements: usize,
    skipped: usize,
}

impl Tally {
    /// Probes the listed elements of one tensor. `eval(j, δ)` runs the forward
    /// with element `j` shifted by `δ`.
    fn probe(
        &mut self,
        analytic: &[f64],
        indices: &[usize],
        h: f64,
        signature: &[usize],
        mut eval: impl FnMut(usize, f64) -> Result<Probe>,
    ) -> Result<()> {
        let mut a = Vec::with_capacity(indices.len());
        let mut n = Vec::with_capacity(indices.len());
        for &j in indices {
            let (plus, sp) = eval(j, h)?;
            let (minus, sm) = eval(j, -h)?;
            if sp != signature || sm != signature {
                self.skipped += 1;
                continue;
            }
            a.push(analytic[j]);
            n.push((plus - minus) / (2.0 * h));
        }
        let scale = n.iter().chain(&a).fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = n.iter().zip(&a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        self.worst = self.worst.max(diff / scale.max(ABS_FLOOR));
        self.elements += a.len();
        Ok(())
    }

    fn report(self, name: &str, tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            name: name.to_string(),
            max_rel_error: self.worst,
            tolerance,
            elements: self.elements,
            skipped: self.skipped,
        }
    }
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares reverse-mode gradients of `f` with respect to every input against
/// central differences with step `h`.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor<f64>], h: f64, tolerance: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |inputs: &[Tensor<f64>]| -> Result<Probe> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars)?;
        let loss = reduce(&mut tape, y)?;
        Ok((tape.data(loss)[0], tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let y = f(&mut tape, &vars)?;
    let loss = reduce(&mut tape, y)?;
    let signature = tape.branch_signature();
    let grads = tape.backward(loss)?;

    let mut tally = Tally::default();
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let indices = sample_indices(analytic.len(), None);
        tally.probe(&analytic, &indices, h, &signature, |j, d| {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + d;
            let out = evaluate(&probe);
            probe[i].data_mut()[j] = orig;
            out
        })?;
    }
    Ok(tally.report(name, tolerance))
}

/// Gradient check of a model forward `f` with respect to its trainable
/// parameters and to `inputs`.
///
/// With `max_per_tensor = Some(k)`, at most `k` evenly spaced elements of each
/// tensor are probed.
#[allow(clippy::too_many_arguments)]
pub fn check_model_gradients<F>(
    name: &str,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: NormMode,
    h: f64,
    tolerance: f64,
    max_per_tensor: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<Probe> {
        let mut s = Session::new(store, mode);
        let vars: Vec<Var> = inputs.iter().map(|t| s.tape.constant(t.clone())).collect();
        let y = f(&mut s, &vars)?;
        let loss = reduce(&mut s.tape, y)?;
        Ok((s.tape.data(loss)[0], s.tape.branch_signature()))
    };

    let mut s = Session::new(store, mode);
    let vars: Vec<Var> = inputs.iter().map(|t| s.tape.leaf(t.clone().with_grad())).collect();
    let y = f(&mut s, &vars)?;
    let loss = reduce(&mut s.tape, y)?;
    let signature = s.tape.branch_signature();
    let param_grads = s.backward(loss)?;
    let mut grads = s.tape.backward(loss)?;
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut tally = Tally::default();
    let mut probe_store = store.clone();
    for id in store.ids() {
        if store.kind(id) != ParamKind::Trainable {
            continue;
        }
        let analytic = param_grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        let indices = sample_indices(analytic.len(), max_per_tensor);
        tally.probe(&analytic, &indices, h, &signature, |j, d| {
            let orig = store.get(id).data()[j];
            probe_store.get_mut(id).data_mut()[j] = orig + d;
            let out = evaluate(&probe_store, inputs);
            probe_store.get_mut(id).data_mut()[j] = orig;
            out
        })?;
    }

    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, analytic) in input_grads.iter().enumerate() {
        let indices = sample_indices(analytic.len(), max_per_tensor);
        tally.probe(analytic, &indices, h, &signature, |j, d| {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + d;
            let out = evaluate(store, &probe);
            probe[i].data_mut()[j] = orig;
            out
        })?;
    }
    Ok(tally.report(name, tolerance))
}

/// Standard-normal test tensor.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::new(shape, data).expect("positive extents")
}

/// Test tensor whose entries keep at least `margin` away from zero, so that
/// ReLU kinks stay outside the finite-difference stencil.
pub fn random_tensor_away_from_zero(shape: &[usize], margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(margin..1.0 + margin);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive extents")
}
