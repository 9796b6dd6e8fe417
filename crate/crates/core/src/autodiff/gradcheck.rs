use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max over coordinates of `|a - d| / max(|a| + |d|, noise)`, where
    /// `noise` is the round-off level of a central difference of `f`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the two one-sided slopes disagree, i.e.
    /// the perturbation straddles a kink (ReLU, abs, clamp). Smooth slopes
    /// differ by O(eps), so the tolerance shrinks with `eps`; its 1e-3 floor
    /// bounds the bias an undetected kink can add at 5e-4 relative.
    pub skipped: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self { max_rel_error: 0.0, checked: 0, skipped: 0 }
    }

    fn compare(&mut self, analytic: f64, plus: f64, zero: f64, minus: f64, eps: f64) {
        let right = (plus - zero) / eps;
        let left = (zero - minus) / eps;
        let kink_tol = (100.0 * eps).clamp(1e-3, 1e-2);
        if (right - left).abs() > kink_tol * (right.abs() + left.abs()).max(1e-4) {
            self.skipped += 1;
            return;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let noise = (1e4 * f64::EPSILON * zero.abs().max(1.0) / eps).max(1e-8);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(noise);
        self.max_rel_error = self.max_rel_error.max(rel);
        self.checked += 1;
    }
}

fn eval_inputs<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    finite(g.item(out)?)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numerics("function is not finite at the probe point"))
    }
}

/// Checks the gradient of scalar `f` w.r.t. every coordinate of `inputs`.
pub fn finite_diff_check<F>(inputs: &[Tensor<f64>], f: F, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let zero = finite(g.item(out)?)?;
    let mut report = GradCheck::new();
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval_inputs(&probe, &f)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval_inputs(&probe, &f)?;
            probe[i].data_mut()[j] = orig;
            report.compare(a, plus, zero, minus, eps);
        }
    }
    Ok(report)
}

/// Like [`finite_diff_check`] but perturbs parameters of `store`. At most
/// `max_per_param` evenly spaced coordinates of each parameter are probed.
pub fn finite_diff_check_params<F>(
    store: &ParamStore<f64>,
    f: F,
    eps: f64,
    max_per_param: usize,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if max_per_param == 0 {
        return Err(Error::config("max_per_param must be positive"));
    }
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let zero = finite(g.item(out)?)?;
    let grads: Vec<(ParamId, Vec<f64>)> = g.param_grads().map(|(id, gr)| (id, gr.to_vec())).collect();
    let lookup = |id: ParamId| grads.iter().find(|(p, _)| *p == id).map(|(_, gr)| gr);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let out = f(&mut g, s)?;
        finite(g.item(out)?)
    };
    let mut report = GradCheck::new();
    let mut probe = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.numel();
        let step = n.div_ceil(max_per_param).max(1);
        for j in (0..n).step_by(step) {
            let a = lookup(id).map_or(0.0, |gr| gr[j]);
            let orig = store.get(id).value.data()[j];
            probe.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[j] = orig;
            report.compare(a, plus, zero, minus, eps);
        }
    }
    Ok(report)
}
