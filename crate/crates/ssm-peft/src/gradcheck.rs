//! Finite-difference validation of reverse-mode gradients.

use crate::autodiff::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Result;

/// Floor for the relative-error denominator, so that zero analytic and
/// numeric gradients compare as exactly equal instead of 0/0.
pub const DENOM_FLOOR: f64 = 1e-8;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients of `build_loss` against central finite
/// differences `(f(p+eps) - f(p-eps)) / (2 eps)`, coordinate by coordinate.
///
/// `build_loss` must deterministically construct a scalar loss node from the
/// given parameter values. The relative error of each coordinate uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`; the largest one is
/// returned.
pub fn grad_check<F>(
    build_loss: F,
    params: &ParamStore,
    trainable: &[String],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut graph = Graph::new();
    let loss = build_loss(params, &mut graph)?;
    let analytic = graph.backward(loss, trainable)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates_checked: 0,
    };

    let mut probe = params.clone();
    for name in trainable {
        let n = params.get(name)?.numel();
        for i in 0..n {
            let base = params.get(name)?.data()[i];

            probe.get_mut(name)?.data_mut()[i] = base + eps;
            let plus = eval_loss(&build_loss, &probe)?;
            probe.get_mut(name)?.data_mut()[i] = base - eps;
            let minus = eval_loss(&build_loss, &probe)?;
            probe.get_mut(name)?.data_mut()[i] = base;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[name].data()[i];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.coordinates_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn eval_loss<F>(build_loss: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = build_loss(params, &mut graph)?;
    graph.value(loss).scalar_value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn quadratic_store() -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::column(vec![0.5, -1.5, 2.0]));
        store
    }

    #[test]
    fn quadratic_loss_checks_tightly() {
        let report = grad_check(
            |params, g| {
                let p = g.param("p", params.get("p")?.clone())?;
                let sq = g.mul(p, p)?;
                Ok(g.sum(sq))
            },
            &quadratic_store(),
            &["p".into()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{}", report.max_rel_error);
        assert_eq!(report.coordinates_checked, 3);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let report = grad_check(
            |params, g| {
                let _p = g.param("p", params.get("p")?.clone())?;
                let c = g.constant(Tensor::scalar(4.0));
                Ok(g.sum(c))
            },
            &quadratic_store(),
            &["p".into()],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn mixed_graph_passes_at_1e4() {
        // exp, softplus, relu, matmul, slice and mean stressed together.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4]).unwrap());
        store.insert("x", Tensor::from_vec(vec![3, 2], vec![0.8, -0.1, 0.2, 0.9, -0.6, 0.3]).unwrap());
        let report = grad_check(
            |params, g| {
                let w = g.param("w", params.get("w")?.clone())?;
                let x = g.param("x", params.get("x")?.clone())?;
                let y = g.matmul(w, x)?;
                let e = g.exp(y);
                let s = g.softplus(e);
                let r = g.relu(s);
                let sl = g.slice(r, 0, 0, 1)?;
                Ok(g.mean(sl))
            },
            &store,
            &["w".into(), "x".into()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{}", report.max_rel_error);
    }
}
