use super::params::{Gradients, NetworkParams};
use crate::scalar::Real;

/// Worst analytic-vs-numeric disagreement found by [`gradient_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    /// Worst error per block, in block order.
    pub per_block: Vec<(String, f64)>,
    pub checked: usize,
}

/// Relative error with a small absolute floor so that two tiny values do not
/// register as a large relative disagreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` over every
/// parameter. Parameters are restored afterwards.
pub fn gradient_check<T: Real>(
    params: &mut NetworkParams<T>,
    analytic: &Gradients<T>,
    eps: T,
    mut loss: impl FnMut(&NetworkParams<T>) -> T,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        per_block: Vec::new(),
        checked: 0,
    };
    for b in 0..params.blocks().len() {
        let mut block_worst = 0.0f64;
        for i in 0..params.blocks()[b].len() {
            let original = params.blocks()[b].data[i];
            params.blocks_mut()[b].data[i] = original + eps;
            let plus = loss(params);
            params.blocks_mut()[b].data[i] = original - eps;
            let minus = loss(params);
            params.blocks_mut()[b].data[i] = original;
            let numeric = ((plus - minus) / (eps + eps)).to_f64_lossy();
            let err = relative_error(analytic.blocks()[b][i].to_f64_lossy(), numeric);
            report.checked += 1;
            block_worst = block_worst.max(err);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_block = params.blocks()[b].name.clone();
                report.worst_index = i;
            }
        }
        report.per_block.push((params.blocks()[b].name.clone(), block_worst));
    }
    report
}
