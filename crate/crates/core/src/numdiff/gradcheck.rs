use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
}

/// Relative disagreement between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares backward-pass gradients of the scalar built by `f` against
/// central differences `(f(θ+eps) − f(θ−eps)) / 2eps`, coordinate by
/// coordinate, over every non-frozen parameter of `store`.
///
/// `f` must build an inference graph (no dropout) so repeated evaluations
/// are deterministic. Parameter values are restored before returning; the
/// analytic gradients are left in `store`.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    grad_check_params(store, &ids, eps, f)
}

/// Like [`grad_check`] but restricted to `ids`.
pub fn grad_check_params<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check(store, ids, eps, None, f)
}

/// Central differences at two step sizes per coordinate.
///
/// The `coarse` estimate has far less round-off than the `fine` one but
/// may straddle a kink (relu, max). It is used when the two estimates
/// agree to within the fine step's round-off plus a `1e-6` relative
/// margin; otherwise the fine estimate is used. The choice never looks at
/// the analytic gradient.
pub fn grad_check_two_scale<F>(store: &mut ParamStore, coarse: f64, fine: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    assert!(coarse > fine, "coarse step must exceed the fine step");
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    check(store, &ids, fine, Some(coarse), f)
}

fn check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, coarse: Option<f64>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    let f0 = g.value(loss).item();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = f(&mut g, store)?;
        Ok(g.value(v).item())
    };
    let central = |store: &mut ParamStore, id: ParamId, i: usize, h: f64| -> Result<f64> {
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + h;
        let plus = eval(store);
        store.get_mut(id).value.data_mut()[i] = orig - h;
        let minus = eval(store);
        store.get_mut(id).value.data_mut()[i] = orig;
        Ok((plus? - minus?) / (2.0 * h))
    };
    let roundoff = 4.0 * f64::EPSILON * (f0.abs() + 1.0) / eps;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        coordinates: 0,
    };
    for &id in ids {
        let n = store.get(id).value.len();
        for i in 0..n {
            let mut numeric = central(store, id, i, eps)?;
            if let Some(h) = coarse {
                let wide = central(store, id, i, h)?;
                if (wide - numeric).abs() <= roundoff + 1e-6 * wide.abs().max(numeric.abs()) {
                    numeric = wide;
                }
            }
            let analytic = store.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.worst_pair = (analytic, numeric);
            }
        }
    }
    Ok(report)
}
