//! Private fair training: per-sample clipping of the sensitive group terms,
//! sensitivity bounds for the penalty gradient and the constraint violations,
//! and Gaussian noise on both the primal and the dual update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accountant::{MechanismKind, PrivacyLedger};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::fairness::{build_constraints_partial, scatter_abs, signed_gaps, ConstraintSet, FairnessNotion};
use crate::lagrangian::{self, penalty_gradient, ModelState, Multipliers, TrainerConfig};
use crate::model::{ModelParams, PerSample};
use crate::report::TrainReport;
use crate::scalar::{norm, Scalar};

/// How the primal sensitivity denominator is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMode {
    /// Smallest group count of the realized batch.
    #[default]
    Realized,
    /// `floor(q * min_i |D_Gi|)`, fixed for the whole run.
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    /// Per-sample clip radius for group-statistic gradients.
    pub grad_clip: f64,
    /// Clip bound for group-statistic values.
    pub value_clip: f64,
    /// Primal noise multiplier.
    pub sigma_p: f64,
    /// Dual noise multiplier.
    pub sigma_d: f64,
    /// Share of rows that report the protected attribute.
    pub reported_fraction: f64,
    pub delta: f64,
    pub mode: SensitivityMode,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            grad_clip: 10.0,
            value_clip: 5.0,
            sigma_p: 1.0,
            sigma_d: 1.0,
            reported_fraction: 1.0,
            delta: 1e-5,
            mode: SensitivityMode::Realized,
        }
    }
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.grad_clip > 0.0) || !(self.value_clip > 0.0) {
            return bad("clip bounds must be positive".into());
        }
        if !(self.sigma_p >= 0.0 && self.sigma_d >= 0.0) || !self.sigma_p.is_finite() || !self.sigma_d.is_finite() {
            return bad("noise multipliers must be finite and non-negative".into());
        }
        if !(self.reported_fraction > 0.0 && self.reported_fraction <= 1.0) {
            return bad(format!("reported fraction {} not in (0, 1]", self.reported_fraction));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} not in (0, 1)", self.delta));
        }
        Ok(())
    }
}

/// Sensitivities used for one noisy step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub delta_p: Option<f64>,
    pub delta_d: Option<f64>,
    pub min_group_size: usize,
}

/// Scales `g` into the ball of radius `radius`.
pub fn clip_gradient<T: Scalar>(g: &[T], radius: T) -> Vec<T> {
    let factor = T::one() / T::one().max(norm(g) / radius);
    g.iter().map(|&x| x * factor).collect()
}

/// Scales `h` into `[-bound, bound]`, preserving its sign.
pub fn clip_value<T: Scalar>(h: T, bound: T) -> T {
    h / T::one().max(h.abs() / bound)
}

fn denominator(min_group: usize) -> Result<f64> {
    if min_group < 2 {
        return Err(Error::GroupTooSmall {
            group: 0,
            size: min_group,
            required: 2,
        });
    }
    Ok((min_group - 1) as f64)
}

/// `2 C_p lambda_max / (min_i |B_Gi| - 1)`, divided by the reported fraction.
pub fn sensitivity_primal(min_batch_group: usize, grad_clip: f64, lambda_max: f64, reported_fraction: f64) -> Result<f64> {
    Ok(2.0 * grad_clip * lambda_max / denominator(min_batch_group)? / reported_fraction)
}

/// `sqrt(2) C_d / (min_i |D_Gi| - 1)`, divided by the reported fraction.
pub fn sensitivity_dual(min_group: usize, value_clip: f64, reported_fraction: f64) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * value_clip / denominator(min_group)? / reported_fraction)
}

fn add_noise<T: Scalar, R: Rng + ?Sized>(v: &mut [T], std: f64, rng: &mut R) {
    for x in v {
        let z: f64 = rng.sample(StandardNormal);
        *x = *x + T::of(std * z);
    }
}

/// Clipped penalty gradient plus `N(0, (sigma_p * Delta_p)^2 I)`, with `Delta_p`
/// taken from the set's smallest group. Returns the gradient and `Delta_p`.
pub fn private_penalty_gradient<T: Scalar, R: Rng + ?Sized>(
    stats: &PerSample<T>,
    set: &ConstraintSet,
    lambda: &[T],
    lambda_max: f64,
    config: &PrivacyConfig,
    rng: &mut R,
) -> Result<(Vec<T>, f64)> {
    let min_group = set.min_group_size().ok_or(Error::EmptySet)?;
    let delta_p = sensitivity_primal(min_group, config.grad_clip, lambda_max, config.reported_fraction)?;
    let mut g = penalty_gradient(stats, set, lambda, Some(T::of(config.grad_clip)));
    if config.sigma_p > 0.0 {
        add_noise(&mut g, config.sigma_p * delta_p, rng);
    }
    Ok((g, delta_p))
}

/// `|mu(D_P) - clipped mu(D_G)| + N(0, (sigma_d * Delta_d)^2)` per constraint,
/// from statistic values aligned with `set.rows`. Returns the full-length
/// vector and `Delta_d`.
pub fn noisy_violation_vector<T: Scalar, R: Rng + ?Sized>(
    values: &[T],
    set: &ConstraintSet,
    config: &PrivacyConfig,
    rng: &mut R,
) -> Result<(Vec<T>, f64)> {
    let min_group = set.min_group_size().ok_or(Error::EmptySet)?;
    let delta_d = sensitivity_dual(min_group, config.value_clip, config.reported_fraction)?;
    let bound = T::of(config.value_clip);
    let gaps = signed_gaps(values, set, |h| clip_value(h, bound));
    let mut v = scatter_abs(&gaps, set);
    if config.sigma_d > 0.0 {
        let std = config.sigma_d * delta_d;
        for c in &set.constraints {
            let z: f64 = rng.sample(StandardNormal);
            v[c.index] = v[c.index] + T::of(std * z);
        }
    }
    Ok((v, delta_d))
}

/// Builds the dataset-level constraint set, requiring two known members per group.
pub fn guarded_constraints<T: Scalar>(
    data: &TabularDataset<T>,
    rows: &[usize],
    notion: FairnessNotion,
) -> Result<ConstraintSet> {
    let (set, skipped) = build_constraints_partial(data, rows, notion, 2);
    if let Some(&(group, label)) = skipped.first() {
        let size = (0..rows.len())
            .filter(|&k| data.group(rows[k]) == Some(group) && label.is_none_or(|y| data.label(rows[k]) == y))
            .count();
        return Err(Error::GroupTooSmall {
            group,
            size,
            required: 2,
        });
    }
    Ok(set)
}

/// Outcome of a private primal step.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivatePrimalStep<T> {
    pub params: ModelParams<T>,
    /// Sensitivity the noise was scaled by; `None` when no penalty was applied.
    pub delta_p: Option<f64>,
    pub skipped: Vec<(usize, Option<u8>)>,
}

/// One private SGD step: clean loss gradient, per-sample clipped group
/// gradients and Gaussian noise on the penalty. Batch groups with fewer than
/// two known members are skipped.
#[allow(clippy::too_many_arguments)]
pub fn private_primal_step<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    lambda: &[T],
    lambda_max: f64,
    data: &TabularDataset<T>,
    batch: &[usize],
    notion: FairnessNotion,
    lr: T,
    config: &PrivacyConfig,
    rng: &mut R,
) -> Result<PrivatePrimalStep<T>> {
    let clip = Some(T::of(config.grad_clip));
    let (mut direction, set, skipped) = lagrangian::primal_direction(params, lambda, data, batch, notion, 2, clip)?;
    let delta_p = perturb(&mut direction, &set, lambda, lambda_max, None, config, rng)?;
    let mut next = params.clone();
    next.descend(lr, &direction);
    Ok(PrivatePrimalStep {
        params: next,
        delta_p,
        skipped,
    })
}

fn perturb<T: Scalar, R: Rng + ?Sized>(
    direction: &mut [T],
    set: &ConstraintSet,
    lambda: &[T],
    lambda_max: f64,
    fixed_denominator: Option<usize>,
    config: &PrivacyConfig,
    rng: &mut R,
) -> Result<Option<f64>> {
    let active = set.constraints.iter().any(|c| lambda[c.index] != T::zero());
    let Some(min_group) = set.min_group_size().filter(|_| active) else {
        return Ok(None);
    };
    let delta_p = sensitivity_primal(
        fixed_denominator.unwrap_or(min_group),
        config.grad_clip,
        lambda_max,
        config.reported_fraction,
    )?;
    if config.sigma_p > 0.0 {
        add_noise(direction, config.sigma_p * delta_p, rng);
    }
    Ok(Some(delta_p))
}

/// Private dual ascent over the full dataset; the result is clamped into `[0, lambda_max]`.
#[allow(clippy::too_many_arguments)]
pub fn private_dual_step<T: Scalar, R: Rng + ?Sized>(
    multipliers: &Multipliers<T>,
    params: &ModelParams<T>,
    data: &TabularDataset<T>,
    set: &ConstraintSet,
    config: &PrivacyConfig,
    step: T,
    rng: &mut R,
) -> Result<(Multipliers<T>, f64)> {
    let values = params.stat_values(data, &set.rows, set.stat_kind())?;
    let (v, delta_d) = noisy_violation_vector(&values, set, config, rng)?;
    let mut next = multipliers.clone();
    next.ascend(&v, step)?;
    Ok((next, delta_d))
}

/// Private state threaded through the shared training loop.
pub(crate) struct PrivateRun<'a, T> {
    config: &'a PrivacyConfig,
    lambda_max: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
    ledger: PrivacyLedger,
    fixed_denominator: Option<usize>,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar> PrivateRun<'a, T> {
    fn new(config: &'a PrivacyConfig, trainer: &TrainerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed);
        rng.set_stream(1);
        Self {
            config,
            lambda_max: trainer.lambda_max,
            batch_size: trainer.batch_size,
            rng,
            ledger: PrivacyLedger::default(),
            fixed_denominator: None,
            _scalar: std::marker::PhantomData,
        }
    }

    pub(crate) fn grad_clip(&self) -> T {
        T::of(self.config.grad_clip)
    }

    pub(crate) fn dataset_constraints(
        &mut self,
        data: &TabularDataset<T>,
        rows: &[usize],
        notion: FairnessNotion,
    ) -> Result<ConstraintSet> {
        let set = guarded_constraints(data, rows, notion)?;
        if self.config.mode == SensitivityMode::Bounded {
            let q = self.batch_size as f64 / data.len() as f64;
            let min = set.min_group_size().unwrap_or(0);
            let fixed = (q * min as f64).floor() as usize;
            if fixed < 2 {
                return Err(Error::Config(format!(
                    "bounded sensitivity needs q * min group >= 2, got {fixed}"
                )));
            }
            self.fixed_denominator = Some(fixed);
        }
        Ok(set)
    }

    pub(crate) fn perturb_primal(&mut self, direction: &mut [T], set: &ConstraintSet, lambda: &[T], n: usize) -> Result<()> {
        let delta_p = perturb(direction, set, lambda, self.lambda_max, self.fixed_denominator, self.config, &mut self.rng)?;
        if self.config.sigma_p > 0.0 {
            let q = (self.batch_size as f64 / n as f64).min(1.0);
            self.ledger
                .compose_with_sensitivity(MechanismKind::Primal, q, self.config.sigma_p, 1, delta_p)?;
        }
        Ok(())
    }

    pub(crate) fn noisy_violations(&mut self, params: &ModelParams<T>, data: &TabularDataset<T>, set: &ConstraintSet) -> Result<Vec<T>> {
        let values = params.stat_values(data, &set.rows, set.stat_kind())?;
        let (v, delta_d) = noisy_violation_vector(&values, set, self.config, &mut self.rng)?;
        if self.config.sigma_d > 0.0 {
            self.ledger
                .compose_with_sensitivity(MechanismKind::Dual, 1.0, self.config.sigma_d, 1, Some(delta_d))?;
        }
        Ok(v)
    }

    /// Epsilon at the configured delta; infinite once a noise-free step ran.
    pub(crate) fn epsilon_spent(&self) -> f64 {
        if self.config.sigma_p == 0.0 || self.config.sigma_d == 0.0 {
            return f64::INFINITY;
        }
        self.ledger.to_dp(self.config.delta).map(|(e, _)| e).unwrap_or(f64::INFINITY)
    }

    pub(crate) fn into_ledger(self) -> PrivacyLedger {
        self.ledger
    }
}

/// Trains with private primal and dual updates. Noise is drawn from a stream
/// derived from the trainer seed, separate from the shuffling stream, so the
/// noise-free limit reproduces [`lagrangian::train_fld`] exactly.
pub fn train_pfld<T: Scalar>(
    data: &TabularDataset<T>,
    eval: Option<&TabularDataset<T>>,
    trainer: &TrainerConfig,
    privacy: &PrivacyConfig,
) -> Result<(ModelState<T>, TrainReport, PrivacyLedger)> {
    privacy.validate()?;
    let run = PrivateRun::new(privacy, trainer);
    let (state, report, ledger) = lagrangian::run(data, eval, trainer, Some(run))?;
    Ok((state, report, ledger.expect("private run returns a ledger")))
}
