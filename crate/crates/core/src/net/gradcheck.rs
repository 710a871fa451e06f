//! Central-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{batch_loss_with_signature, loss_and_grads, Example};
use super::{ModelParams, NetError};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates dropped because the perturbation crossed a ReLU, pooling
    /// or order-statistic switch.
    pub skipped_kinks: usize,
    /// Name, index, analytic and numeric derivative at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `f` at the listed
/// coordinates of `point` and returns the largest relative error. `point` is
/// restored before returning.
pub fn finite_difference_check<F>(point: &mut [f64], analytic: &[f64], coords: &[usize], h: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(point);
        point[i] = orig - h;
        let down = f(point);
        point[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Checks the full model gradient on `batch` at `min_coords` or more randomly
/// drawn parameter coordinates. Tensors are drawn uniformly, then an entry
/// within the tensor, so small tensors (biases, convolutions) are covered.
/// Coordinates whose ±h perturbation changes any ReLU sign, pooling winner or
/// order statistic are skipped.
pub fn grad_check(
    params: &ModelParams,
    batch: &[Example],
    h: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NetError> {
    let (_, grads) = loss_and_grads(batch, params)?;
    let (_, base_sig) = batch_loss_with_signature(batch, params)?;
    let grad_tensors: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, t)| t.data.clone()).collect();
    let names: Vec<&'static str> = params.weights.named().into_iter().map(|(n, _)| n).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0, worst: None };
    let max_attempts = min_coords * 50;
    let mut attempts = 0;
    while report.checked < min_coords && attempts < max_attempts {
        attempts += 1;
        let t = rng.random_range(0..names.len());
        let i = rng.random_range(0..grad_tensors[t].len());
        let orig = probe.weights.tensors_mut()[t].data[i];

        probe.weights.tensors_mut()[t].data[i] = orig + h;
        let (up, sig_up) = batch_loss_with_signature(batch, &probe)?;
        probe.weights.tensors_mut()[t].data[i] = orig - h;
        let (down, sig_down) = batch_loss_with_signature(batch, &probe)?;
        probe.weights.tensors_mut()[t].data[i] = orig;

        if sig_up != base_sig || sig_down != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let analytic = grad_tensors[t][i];
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((names[t].to_string(), i, analytic, numeric));
        }
    }
    Ok(report)
}
