//! Central finite-difference checks of analytic gradients.

use alloc::vec::Vec;

use super::{grad, Array, Graph, Tensor};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a perturbation changed the routing pattern
    /// (a relu, max or hinge kink lies within `eps`).
    pub kinks: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Array, eps: f64) -> GradCheck
where
    F: Fn(&Tensor) -> Tensor,
{
    finite_diff_check_many(|xs| f(&xs[0]), core::slice::from_ref(x), eps)
}

/// Checks the gradient of a scalar function of several tensors with respect
/// to every coordinate of every input. `f` must be deterministic.
pub fn finite_diff_check_many<F>(f: F, xs: &[Array], eps: f64) -> GradCheck
where
    F: Fn(&[Tensor]) -> Tensor,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |values: &[Array]| -> (f64, u64) {
        let graph = Graph::new();
        let leaves: Vec<Tensor> = values.iter().map(|v| graph.leaf(v.clone())).collect();
        let y = f(&leaves);
        (y.item(), graph.routing_signature())
    };

    let graph = Graph::new();
    let leaves: Vec<Tensor> = xs.iter().map(|v| graph.leaf(v.clone())).collect();
    let y = f(&leaves);
    let base_signature = graph.routing_signature();
    let targets: Vec<&Tensor> = leaves.iter().collect();
    let analytic = grad(&y, &targets, false);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    let mut work: Vec<Array> = xs.to_vec();
    for (t, ga) in analytic.iter().enumerate() {
        for i in 0..xs[t].len() {
            let orig = xs[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let (plus, sig_plus) = eval(&work);
            work[t].data_mut()[i] = orig - eps;
            let (minus, sig_minus) = eval(&work);
            work[t].data_mut()[i] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = libm::fabs(ga.data()[i] - numeric) / libm::fabs(numeric).max(1.0);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    report
}
