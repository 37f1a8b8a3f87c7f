//! Central finite-difference checks for tape gradients.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward rules it is checking.

use super::{Graph, ParamStore, Tape, Tensor, TensorError, Var};

/// Norm below which a gradient is treated as zero. Central differences of a
/// loss of size L carry rounding noise near `L·ε/h`, about 1e-10 for the toy
/// models, so a truly zero gradient (e.g. an attention key bias) must not be
/// judged relative to itself.
pub const NEGLIGIBLE_NORM: f64 = 1e-5;

/// Relative error `‖a − n‖ / max(‖a‖ + ‖n‖, NEGLIGIBLE_NORM)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(NEGLIGIBLE_NORM)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, TensorError> {
    tape.value(v).item()
}

/// Checks `∂f/∂inputs[i]` for every input tensor; returns one relative error per input.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = values.iter().map(|v| tape.leaf(v.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|v| tape.leaf(v.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let mut numeric = vec![0.0; input.len()];
        let mut work = inputs.to_vec();
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[k];
            work[i].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        errors.push(relative_error(analytic.data(), &numeric));
    }
    Ok(errors)
}

/// Checks parameter gradients of `f`. At most `max_entries` evenly spaced
/// entries of each parameter are perturbed. Returns `(name, rel_err)` pairs.
pub fn check_params<F>(store: &ParamStore, h: f64, max_entries: usize, f: F) -> Result<Vec<(String, f64)>, TensorError>
where
    F: Fn(&mut Graph) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new(s);
        let out = f(&mut g)?;
        scalar_of(&g.tape, out)
    };

    let analytic = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        let grads = g.tape.backward(out)?;
        g.param_grads(&grads)
    };

    let mut work = store.clone();
    let mut report = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        let step = n.div_ceil(max_entries.max(1)).max(1);
        let picks: Vec<usize> = (0..n).step_by(step).collect();
        let mut a = Vec::with_capacity(picks.len());
        let mut num = Vec::with_capacity(picks.len());
        for &k in &picks {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            a.push(analytic[id.index()].data()[k]);
            num.push((plus - minus) / (2.0 * h));
        }
        report.push((store.name(id).to_string(), relative_error(&a, &num)));
    }
    Ok(report)
}
