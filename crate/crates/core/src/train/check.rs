use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::nn::ModelParams;

/// Denominator floor of the relative error, so exactly-zero gradients compare absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Flat index of the worst parameter.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the analytic gradient of `f` with central differences on `count` random parameters.
///
/// `f` returns the loss and its gradient in the layout of [`ModelParams::zeros_like`].
pub fn grad_check<F>(params: &ModelParams, mut f: F, count: usize, eps: f64, seed: u64) -> Result<GradCheck>
where
    F: FnMut(&ModelParams) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, grads) = f(params)?;
    let analytic: Vec<f64> = grads.into_iter().flatten().collect();
    let n = params.count();
    if analytic.len() != n {
        return dim_err("gradient size does not match the parameters");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    let mut report = GradCheck { max_rel_err: 0.0, worst: 0, analytic: 0.0, numeric: 0.0, checked: 0 };
    let flat = params.flatten();
    let mut probe = params.clone();
    for i in idx {
        let orig = flat[i];
        *probe.flat_mut(i).expect("index in range") = orig + eps;
        let (lp, _) = f(&probe)?;
        *probe.flat_mut(i).expect("index in range") = orig - eps;
        let (lm, _) = f(&probe)?;
        *probe.flat_mut(i).expect("index in range") = orig;
        let num = (lp - lm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(GRAD_CHECK_FLOOR);
        report.checked += 1;
        if rel >= report.max_rel_err {
            report = GradCheck { max_rel_err: rel, worst: i, analytic: a, numeric: num, ..report };
        }
    }
    Ok(report)
}
