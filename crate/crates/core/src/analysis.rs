//! Bias-variance bounds for the clipped, noised primal and dual quantities,
//! a clip-radius search and Monte Carlo harnesses that check the bounds
//! against the actual private mechanisms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{scatter_abs, signed_gaps, ConstraintSet};
use crate::lagrangian::penalty_gradient;
use crate::model::PerSample;
use crate::privacy::{noisy_violation_vector, private_penalty_gradient, PrivacyConfig};
use crate::scalar::{norm, Scalar};

/// Inputs of the error bounds. Norm and value lists are indexed by constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Number of gradient entries.
    pub dimension: usize,
    pub sigma_p: f64,
    pub sigma_d: f64,
    pub grad_clip: f64,
    pub value_clip: f64,
    pub lambda_max: f64,
    pub lambda: Vec<f64>,
    pub min_batch_group: usize,
    pub min_dataset_group: usize,
    /// Per-sample `||grad h(z)||` over each constraint's group.
    pub grad_norms: Vec<Vec<f64>>,
    /// Per-sample `|h(z)|` over each constraint's group.
    pub values: Vec<Vec<f64>>,
}

impl BoundInputs {
    /// Collects norms and values from per-sample statistics of a constraint set.
    /// `lambda` is indexed like the set's constraints.
    pub fn from_stats<T: Scalar>(stats: &PerSample<T>, set: &ConstraintSet, lambda: &[f64], config: &PrivacyConfig, lambda_max: f64) -> Self {
        let min = set.min_group_size().unwrap_or(0);
        Self {
            dimension: stats.size,
            sigma_p: config.sigma_p,
            sigma_d: config.sigma_d,
            grad_clip: config.grad_clip,
            value_clip: config.value_clip,
            lambda_max,
            lambda: lambda.to_vec(),
            min_batch_group: min,
            min_dataset_group: min,
            grad_norms: set
                .constraints
                .iter()
                .map(|c| c.members.iter().map(|&k| norm(stats.grad(k)).to_f64_lossy()).collect())
                .collect(),
            values: set
                .constraints
                .iter()
                .map(|c| c.members.iter().map(|&k| stats.values[k].to_f64_lossy().abs()).collect())
                .collect(),
        }
    }

    fn primal_noise_scale(&self) -> f64 {
        2.0 * (self.dimension as f64).sqrt() * self.sigma_p * self.lambda_max / (self.min_batch_group as f64 - 1.0)
    }
}

fn mean(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64
}

/// `2 sqrt(S) sigma_p lambda_max C_p / (min - 1) + sum_i lambda_i E[max(0, ||grad h|| - C_p)]`.
pub fn primal_error_bound(inputs: &BoundInputs) -> f64 {
    primal_error_bound_at(inputs, inputs.grad_clip)
}

fn primal_error_bound_at(inputs: &BoundInputs, cp: f64) -> f64 {
    let excess: f64 = inputs
        .lambda
        .iter()
        .zip(&inputs.grad_norms)
        .map(|(&l, norms)| l * mean(norms, |n| (n - cp).max(0.0)))
        .sum();
    inputs.primal_noise_scale() * cp + excess
}

/// Derivative of the primal bound in `C_p`: the noise slope minus the
/// multiplier-weighted share of gradients at or above `C_p`.
pub fn optimal_cp_residual(inputs: &BoundInputs, cp: f64) -> f64 {
    let fired: f64 = inputs
        .lambda
        .iter()
        .zip(&inputs.grad_norms)
        .map(|(&l, norms)| l * mean(norms, |n| if n >= cp { 1.0 } else { 0.0 }))
        .sum();
    inputs.primal_noise_scale() - fired
}

/// Bisection for the bound-minimizing clip radius over `[min norm, max norm]`.
/// The residual is a step function, so the search runs over the sorted norms
/// and returns the left endpoint of the interval where the residual turns
/// non-negative.
pub fn optimal_cp(inputs: &BoundInputs) -> Result<f64> {
    let mut norms: Vec<f64> = inputs.grad_norms.iter().flatten().copied().collect();
    if norms.is_empty() {
        return Err(Error::EmptySet);
    }
    norms.sort_by(f64::total_cmp);
    norms.dedup();
    if optimal_cp_residual(inputs, norms[0]) >= 0.0 {
        return Ok(norms[0]);
    }
    // invariant: residual(norms[lo]) < 0, residual(norms[hi]) >= 0 or hi == len
    let (mut lo, mut hi) = (0usize, norms.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if optimal_cp_residual(inputs, norms[mid]) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(norms[lo])
}

/// `sqrt(2) C_d sigma_d / (min - 1) + E[max(0, |h| - C_d)]` for constraint `i`.
pub fn dual_error_bound(inputs: &BoundInputs, constraint: usize) -> Result<f64> {
    let values = inputs.values.get(constraint).ok_or(Error::Dimension {
        expected: inputs.values.len(),
        got: constraint,
    })?;
    let variance = std::f64::consts::SQRT_2 * inputs.value_clip * inputs.sigma_d / (inputs.min_dataset_group as f64 - 1.0);
    Ok(variance + mean(values, |h| (h - inputs.value_clip).max(0.0)))
}

/// Monte Carlo mean and standard error of a sampled quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean: m,
            std_error: (var / n).sqrt(),
            draws: xs.len(),
        }
    }
}

/// Samples `||G - G~||` where `G` is the exact penalty gradient and `G~` the
/// clipped, noised one produced by the private mechanism.
pub fn primal_error_monte_carlo<T: Scalar, R: Rng + ?Sized>(
    stats: &PerSample<T>,
    set: &ConstraintSet,
    lambda: &[T],
    lambda_max: f64,
    config: &PrivacyConfig,
    draws: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if draws == 0 {
        return Err(Error::EmptySet);
    }
    let exact = penalty_gradient(stats, set, lambda, None);
    let mut errors = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (noisy, _) = private_penalty_gradient(stats, set, lambda, lambda_max, config, rng)?;
        let diff: Vec<T> = exact.iter().zip(&noisy).map(|(&a, &b)| a - b).collect();
        errors.push(norm(&diff).to_f64_lossy());
    }
    Ok(Estimate::from_samples(&errors))
}

/// Samples `|V_i - V~_i|` for the constraint with multiplier index `index`.
pub fn dual_error_monte_carlo<T: Scalar, R: Rng + ?Sized>(
    values: &[T],
    set: &ConstraintSet,
    index: usize,
    config: &PrivacyConfig,
    draws: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if draws == 0 {
        return Err(Error::EmptySet);
    }
    let exact = scatter_abs(&signed_gaps(values, set, |v| v), set);
    let target = *exact.get(index).ok_or(Error::Dimension {
        expected: exact.len(),
        got: index,
    })?;
    let mut errors = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (noisy, _) = noisy_violation_vector(values, set, config, rng)?;
        errors.push((target - noisy[index]).abs().to_f64_lossy());
    }
    Ok(Estimate::from_samples(&errors))
}
