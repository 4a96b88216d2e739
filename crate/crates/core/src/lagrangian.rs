//! Fair Lagrangian-dual training: SGD on the loss plus multiplier-weighted
//! constraint violations, with capped dual ascent on the multipliers.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyLedger;
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::fairness::{self, build_constraints_partial, signed_gaps, ConstraintSet, FairnessNotion};
use crate::model::{Architecture, ModelParams, PerSample};
use crate::privacy::PrivateRun;
use crate::report::{EpochRecord, TrainReport};
use crate::scalar::{axpy, norm, Scalar};

/// Lagrange multipliers, kept inside `[0, lambda_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers<T> {
    lambda: Vec<T>,
    lambda_max: T,
}

impl<T: Scalar> Multipliers<T> {
    pub fn zeros(count: usize, lambda_max: T) -> Self {
        Self {
            lambda: vec![T::zero(); count],
            lambda_max,
        }
    }

    /// Clamps every entry into `[0, lambda_max]`.
    pub fn new(lambda: Vec<T>, lambda_max: T) -> Self {
        let mut m = Self { lambda, lambda_max };
        m.clamp();
        m
    }

    pub fn values(&self) -> &[T] {
        &self.lambda
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    fn clamp(&mut self) {
        let cap = self.lambda_max;
        for l in &mut self.lambda {
            *l = l.max(T::zero()).min(cap);
        }
    }

    /// `lambda_i <- min(lambda_max, lambda_i + step * v_i)`, floored at zero.
    pub fn ascend(&mut self, violations: &[T], step: T) -> Result<()> {
        if violations.len() != self.lambda.len() {
            return Err(Error::Dimension {
                expected: self.lambda.len(),
                got: violations.len(),
            });
        }
        for (l, &v) in self.lambda.iter_mut().zip(violations) {
            *l = *l + step * v;
        }
        self.clamp();
        Ok(())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l.to_f64_lossy()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub params: ModelParams<T>,
    pub multipliers: Multipliers<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Primal step size.
    pub lr: f64,
    /// Constant dual step size.
    pub dual_step: f64,
    pub lambda_max: f64,
    pub notion: FairnessNotion,
    pub hidden: (usize, usize),
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 0.01,
            dual_step: 0.01,
            lambda_max: 1.0,
            notion: FairnessNotion::DemographicParity,
            hidden: (16, 16),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n {
            return bad(format!("batch size {} not in [1, {n}]", self.batch_size));
        }
        if !(self.lr > 0.0) || !(self.dual_step > 0.0) {
            return bad("step sizes must be positive".into());
        }
        if !(self.lambda_max >= 0.0) || !self.lambda_max.is_finite() {
            return bad(format!("lambda_max {} must be finite and >= 0", self.lambda_max));
        }
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self, inputs: usize) -> Architecture {
        Architecture::new(inputs, self.hidden.0, self.hidden.1)
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Gradient of `sum_i lambda_i |mu(P_i) - mu(G_i)|` from per-sample statistics
/// aligned with `set.rows`. Group-term gradients are clipped per sample to
/// `grad_clip` when given; the sign of each term comes from the unclipped gap
/// and is zero at a zero gap.
pub fn penalty_gradient<T: Scalar>(
    stats: &PerSample<T>,
    set: &ConstraintSet,
    lambda: &[T],
    grad_clip: Option<T>,
) -> Vec<T> {
    let size = stats.size;
    let mut total = vec![T::zero(); size];
    let gaps = signed_gaps(&stats.values, set, |v| v);
    let factors: Vec<T> = match grad_clip {
        Some(c) => (0..stats.len())
            .map(|k| T::one() / T::one().max(norm(stats.grad(k)) / c))
            .collect(),
        None => vec![T::one(); stats.len()],
    };
    for (c, &gap) in set.constraints.iter().zip(&gaps) {
        let weight = lambda[c.index] * sign(gap);
        if weight == T::zero() {
            continue;
        }
        let mut pop = vec![T::zero(); size];
        for &k in &c.population {
            axpy(&mut pop, T::one(), stats.grad(k));
        }
        let mut grp = vec![T::zero(); size];
        for &k in &c.members {
            axpy(&mut grp, factors[k], stats.grad(k));
        }
        let (np, ng) = (T::of_usize(c.population.len()), T::of_usize(c.members.len()));
        for ((t, &p), &g) in total.iter_mut().zip(&pop).zip(&grp) {
            *t = *t + weight * (p / np - g / ng);
        }
    }
    total
}

/// `J(theta, B) + lambda^T |mu(B_P) - mu(B_G)|` over the set's rows.
pub fn lagrangian_value<T: Scalar>(
    params: &ModelParams<T>,
    lambda: &[T],
    data: &TabularDataset<T>,
    set: &ConstraintSet,
) -> Result<T> {
    if lambda.len() != set.multiplier_count {
        return Err(Error::Dimension {
            expected: set.multiplier_count,
            got: lambda.len(),
        });
    }
    let loss = params.loss(data, &set.rows)?;
    let v = fairness::violation_vector(params, data, set)?;
    Ok(loss + lambda.iter().zip(&v).map(|(&l, &x)| l * x).sum::<T>())
}

/// Gradient of [`lagrangian_value`] (subgradient zero at a zero gap).
pub fn lagrangian_gradient<T: Scalar>(
    params: &ModelParams<T>,
    lambda: &[T],
    data: &TabularDataset<T>,
    set: &ConstraintSet,
) -> Result<Vec<T>> {
    if lambda.len() != set.multiplier_count {
        return Err(Error::Dimension {
            expected: set.multiplier_count,
            got: lambda.len(),
        });
    }
    let cache = params.forward(data, &set.rows)?;
    let mut g = params.grad_loss_cached(data, &set.rows, &cache);
    if lambda.iter().any(|&l| l != T::zero()) {
        let stats = params.per_sample_cached(data, &set.rows, &cache, set.stat_kind());
        let pen = penalty_gradient(&stats, set, lambda, None);
        axpy(&mut g, T::one(), &pen);
    }
    Ok(g)
}

/// Outcome of one primal step.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalStep<T> {
    pub params: ModelParams<T>,
    /// `(group, label)` of batch constraints left out for lack of members.
    pub skipped: Vec<(usize, Option<u8>)>,
}

/// One SGD step on the Lagrangian over `batch`. Constraints whose batch group
/// is empty are skipped for this step.
pub fn primal_step<T: Scalar>(
    params: &ModelParams<T>,
    lambda: &[T],
    data: &TabularDataset<T>,
    batch: &[usize],
    notion: FairnessNotion,
    lr: T,
) -> Result<PrimalStep<T>> {
    let (direction, _, skipped) = primal_direction(params, lambda, data, batch, notion, 1, None)?;
    let mut next = params.clone();
    next.descend(lr, &direction);
    Ok(PrimalStep { params: next, skipped })
}

/// Loss gradient plus penalty gradient. Returns the direction, the batch
/// constraint set actually used and the skipped descriptors.
pub(crate) fn primal_direction<T: Scalar>(
    params: &ModelParams<T>,
    lambda: &[T],
    data: &TabularDataset<T>,
    batch: &[usize],
    notion: FairnessNotion,
    min_members: usize,
    grad_clip: Option<T>,
) -> Result<(Vec<T>, ConstraintSet, Vec<(usize, Option<u8>)>)> {
    if batch.is_empty() {
        return Err(Error::EmptySet);
    }
    let expected = notion.constraint_count(data.group_count());
    if lambda.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: lambda.len(),
        });
    }
    let cache = params.forward(data, batch)?;
    let mut direction = params.grad_loss_cached(data, batch, &cache);
    let (set, skipped) = build_constraints_partial(data, batch, notion, min_members);
    if !skipped.is_empty() {
        debug!("batch skipped constraints {skipped:?}");
    }
    let active = set.constraints.iter().any(|c| lambda[c.index] != T::zero());
    if active {
        let stats = params.per_sample_cached(data, batch, &cache, notion.stat_kind());
        let pen = penalty_gradient(&stats, &set, lambda, grad_clip);
        axpy(&mut direction, T::one(), &pen);
    }
    Ok((direction, set, skipped))
}

/// Capped dual ascent: `lambda_i <- min(lambda_max, lambda_i + step * v_i)`.
pub fn dual_step<T: Scalar>(multipliers: &Multipliers<T>, violations: &[T], step: T) -> Result<Multipliers<T>> {
    let mut next = multipliers.clone();
    next.ascend(violations, step)?;
    Ok(next)
}

/// Trains with fairness constraints and no privacy protection.
pub fn train_fld<T: Scalar>(
    data: &TabularDataset<T>,
    eval: Option<&TabularDataset<T>>,
    config: &TrainerConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    let (state, report, _) = run(data, eval, config, None)?;
    Ok((state, report))
}

/// Unconstrained baseline: the same loop with multipliers pinned at zero.
pub fn train_unconstrained<T: Scalar>(
    data: &TabularDataset<T>,
    eval: Option<&TabularDataset<T>>,
    config: &TrainerConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    let config = TrainerConfig {
        lambda_max: 0.0,
        ..config.clone()
    };
    train_fld(data, eval, &config)
}

pub(crate) fn epoch_record<T: Scalar>(
    epoch: usize,
    params: &ModelParams<T>,
    multipliers: &Multipliers<T>,
    data: &TabularDataset<T>,
    eval: Option<&TabularDataset<T>>,
    notion: FairnessNotion,
    epsilon: Option<f64>,
) -> Result<EpochRecord> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let (test_accuracy, test_violation) = match eval {
        Some(ev) => (
            Some(fairness::accuracy(params, ev)?),
            Some(fairness::fairness_violation_metric(params, ev, notion)?),
        ),
        None => (None, None),
    };
    Ok(EpochRecord {
        epoch,
        train_loss: params.loss(data, &rows)?.to_f64_lossy(),
        train_accuracy: fairness::accuracy(params, data)?,
        train_violation: fairness::fairness_violation_metric(params, data, notion)?,
        test_accuracy,
        test_violation,
        lambda: multipliers.to_f64(),
        epsilon,
    })
}

/// Shared epoch loop. With `private` set, primal and dual updates are clipped
/// and noised and every step is charged to the ledger.
pub(crate) fn run<T: Scalar>(
    data: &TabularDataset<T>,
    eval: Option<&TabularDataset<T>>,
    config: &TrainerConfig,
    mut private: Option<PrivateRun<'_, T>>,
) -> Result<(ModelState<T>, TrainReport, Option<PrivacyLedger>)> {
    config.validate(data.len())?;
    let notion = config.notion;
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let dataset_set = match private.as_mut() {
        Some(p) => p.dataset_constraints(data, &all_rows, notion)?,
        None => fairness::build_constraints(data, &all_rows, notion)?,
    };
    let min_members = if private.is_some() { 2 } else { 1 };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.architecture(data.n_features()), &mut rng);
    let mut multipliers = Multipliers::zeros(dataset_set.multiplier_count, T::of(config.lambda_max));
    let (lr, dual) = (T::of(config.lr), T::of(config.dual_step));
    let mut report = TrainReport::default();
    let mut order = all_rows.clone();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lambda = multipliers.values();
            let clip = private.as_ref().map(|p| p.grad_clip());
            let (mut direction, set, skipped) =
                primal_direction(&params, lambda, data, batch, notion, min_members, clip)?;
            report.skipped_constraints += skipped.len();
            if let Some(p) = private.as_mut() {
                p.perturb_primal(&mut direction, &set, lambda, data.len())?;
            }
            params.descend(lr, &direction);
            report.primal_steps += 1;
        }
        let violations = match private.as_mut() {
            Some(p) => p.noisy_violations(&params, data, &dataset_set)?,
            None => fairness::violation_vector(&params, data, &dataset_set)?,
        };
        multipliers.ascend(&violations, dual)?;
        report.dual_steps += 1;
        let epsilon = private.as_ref().map(|p| p.epsilon_spent());
        report
            .epochs
            .push(epoch_record(epoch, &params, &multipliers, data, eval, notion, epsilon)?);
        if !params.is_finite() {
            return Err(Error::Validation(format!("parameters diverged at epoch {epoch}")));
        }
    }
    let ledger = private.map(PrivateRun::into_ledger);
    Ok((ModelState { params, multipliers }, report, ledger))
}
