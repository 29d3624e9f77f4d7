//! Central finite-difference checks of analytic gradients (64-bit).
//!
//! The numerical side only ever evaluates forward passes, so it is
//! independent of every adjoint it verifies.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::{Graph, ParamStore, Shape, Tensor, Var};

/// Acceptance thresholds of a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// perturbation used for the central difference
    pub step: f64,
    /// maximum relative error `|a − n| / max(|a|, |n|)`
    pub rel: f64,
    /// absolute differences at or below this always pass
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { step: 1e-6, rel: 1e-4, abs_floor: 1e-8 }
    }
}

impl Tolerance {
    /// Relative error counted against the tolerance; zero when the absolute
    /// difference is within the floor.
    pub fn error(&self, analytic: f64, numeric: f64) -> f64 {
        let diff = (analytic - numeric).abs();
        if diff <= self.abs_floor {
            0.0
        } else {
            diff / analytic.abs().max(numeric.abs())
        }
    }
}

/// Worst entry of a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// entries whose stencil straddled a kink (contracted checks only)
    pub skipped: usize,
    pub worst: Option<(String, usize, f64, f64)>,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), checked: 0, max_rel_error: 0.0, skipped: 0, worst: None, passed: true }
    }

    fn observe(&mut self, tol: &Tolerance, what: &str, idx: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = tol.error(analytic, numeric);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > tol.rel {
            self.passed = false;
        }
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((what.to_string(), idx, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.passed &= other.passed;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} entries, max rel err {:.3e} [{}]",
            self.label,
            self.checked,
            self.max_rel_error,
            if self.passed { "ok" } else { "FAIL" }
        )?;
        if self.skipped > 0 {
            write!(f, " ({} entries at kinks skipped)", self.skipped)?;
        }
        if let (false, Some((what, idx, a, n))) = (self.passed, &self.worst) {
            write!(f, " worst {what}[{idx}] analytic {a:.6e} numeric {n:.6e}")?;
        }
        Ok(())
    }
}

fn pick_indices<R: Rng>(len: usize, max: Option<usize>, rng: &mut R) -> Vec<usize> {
    match max {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Checks the gradient of `f(inputs…)` with respect to every input tensor.
///
/// `f` receives a fresh graph plus one differentiable leaf per input and
/// must return a scalar. At most `max_per_input` entries of each input are
/// perturbed (all of them when `None`).
pub fn check_inputs<R, F>(
    label: &str,
    inputs: &[Tensor<f64>],
    f: F,
    tol: Tolerance,
    max_per_input: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng,
    F: Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let store = ParamStore::<f64>::new();
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new(&store);
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(g.scalar(out))
    };
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter().zip(inputs).map(|(v, t)| grads.get_or_zeros(*v, t.shape())).collect()
    };
    let mut report = GradCheckReport::new(label);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for idx in pick_indices(input.len(), max_per_input, rng) {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + tol.step;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - tol.step;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            report.observe(&tol, &format!("input{k}"), idx, analytic[k].data()[idx], numeric);
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar built from `store`'s parameters.
///
/// Every parameter tensor is visited; at most `max_per_param` entries of
/// each are perturbed.
pub fn check_params<R, F>(
    label: &str,
    store: &mut ParamStore<f64>,
    f: F,
    tol: Tolerance,
    max_per_param: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng,
    F: Fn(&Graph<'_, f64>) -> Result<Var>,
{
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new(&*store);
        let out = f(&g)?;
        let grads = g.backward(out)?;
        let mut per = vec![None; store.len()];
        for (id, t) in grads.param_grads() {
            per[id.index()] = Some(t.clone());
        }
        store
            .iter()
            .map(|(id, p)| per[id.index()].clone().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::new(store);
        let out = f(&g)?;
        Ok(g.scalar(out))
    };
    let mut report = GradCheckReport::new(label);
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        for idx in pick_indices(len, max_per_param, rng) {
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + tol.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - tol.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            report.observe(&tol, &name, idx, analytic[id.index()].data()[idx], numeric);
        }
    }
    Ok(report)
}

/// Fixed, non-uniform weights for contracting a tensor to a scalar, so that
/// every entry contributes a distinct amount.
pub fn contraction_weights(shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |[n, c, i, j]| ((n * 7 + c * 5 + i * 3 + j) as f64 * 0.37).sin() + 0.1)
}

/// Checks parameter gradients of `Σ_k Σ w_k ⊙ y_k` for the maps `y_k`
/// returned by `f`, with `w_k` from [`contraction_weights`].
///
/// The numerical side differences the maps entry by entry before
/// contracting them, so entries a perturbation does not reach cancel
/// exactly. Differencing two large scalar sums instead would add rounding
/// error proportional to the size of the whole sum, which swamps small
/// derivatives of deep modules.
pub fn check_params_contracted<R, F>(
    label: &str,
    store: &mut ParamStore<f64>,
    f: F,
    tol: Tolerance,
    max_per_param: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    R: Rng,
    F: Fn(&Graph<'_, f64>) -> Result<Vec<Var>>,
{
    let contracted = |g: &Graph<'_, f64>| -> Result<Var> {
        let mut total: Option<Var> = None;
        for y in f(g)? {
            let w = g.input(contraction_weights(g.shape(y)));
            let term = g.sum_all(g.mul(y, w)?);
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| crate::error::invalid("gradcheck", "no outputs to contract"))
    };
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new(&*store);
        let out = contracted(&g)?;
        let grads = g.backward(out)?;
        let mut per = vec![None; store.len()];
        for (id, t) in grads.param_grads() {
            per[id.index()] = Some(t.clone());
        }
        store
            .iter()
            .map(|(id, p)| per[id.index()].clone().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<Vec<Tensor<f64>>> {
        let g = Graph::new(store);
        Ok(f(&g)?.into_iter().map(|y| (*g.value(y)).clone()).collect())
    };
    let weights: Vec<Tensor<f64>> = eval(store)?.iter().map(|y| contraction_weights(y.shape())).collect();
    let contract_diff = |a: &[Tensor<f64>], b: &[Tensor<f64>]| -> f64 {
        let mut diff = 0.0;
        for ((p, m), w) in a.iter().zip(b).zip(&weights) {
            for ((x, y), w) in p.data().iter().zip(m.data()).zip(w.data()) {
                diff += w * (x - y);
            }
        }
        diff
    };
    let base = eval(store)?;
    let mut report = GradCheckReport::new(label);
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        let wanted = max_per_param.unwrap_or(len).min(len);
        let mut accepted = 0;
        for idx in pick_indices(len, None, rng).into_iter().cycle().skip(rng.gen_range(0..len)).take(len) {
            if accepted == wanted {
                break;
            }
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + tol.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - tol.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            // one-sided slopes agree to O(step) where the map is smooth; a
            // disagreement at tolerance level means a kink inside the stencil
            let right = contract_diff(&plus, &base) / tol.step;
            let left = contract_diff(&base, &minus) / tol.step;
            if tol.error(right, left) > tol.rel {
                report.skipped += 1;
                continue;
            }
            let numeric = contract_diff(&plus, &minus) / (2.0 * tol.step);
            report.observe(&tol, &name, idx, analytic[id.index()].data()[idx], numeric);
            accepted += 1;
        }
    }
    Ok(report)
}
