//! Single-run training, clip calibration curves and standalone ledger queries.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use pfld::accountant::{calibrate_sigma, default_orders, LedgerReport, MechanismKind, PrivacyLedger};
use pfld::analysis::{dual_error_bound, optimal_cp, primal_error_bound, BoundInputs};
use pfld::model::ModelParams;
use pfld::{build_constraints, FairnessNotion, SplitPolicy};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelKind};
use crate::experiment::{fold_split, load_dataset, train_and_evaluate, RunResult, SCHEMA_VERSION};

/// JSON document written by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub model: ModelKind,
    pub train_rows: usize,
    pub test_rows: usize,
    pub result: RunResult,
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub summaries: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub ledgers: Vec<PathBuf>,
}

/// Trains each configured model once on fold 0 and writes its summary,
/// checkpoint and (for the private model) ledger report under `cfg.out`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutputs> {
    let data = load_dataset(cfg)?;
    let (train_rows, test_rows) = fold_split(&data, cfg.folds, 0, cfg.seed)?;
    let mut train = data.subset(&train_rows);
    if cfg.privacy.reported_fraction < 1.0 {
        train = train.mask_protected(cfg.privacy.reported_fraction, cfg.seed)?;
    }
    let test = data.subset(&test_rows);
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut outputs = TrainOutputs {
        summaries: Vec::new(),
        checkpoints: Vec::new(),
        ledgers: Vec::new(),
    };
    for &model in &cfg.models {
        let result = train_and_evaluate(model, &train, &test, &cfg.trainer, &cfg.privacy, cfg.epsilon, cfg.split)?;
        let name = model.name();
        let ckpt = cfg.out.join(format!("model-{name}.ckpt"));
        result.params.as_ref().context("missing parameters")?.write_checkpoint(&ckpt)?;
        outputs.checkpoints.push(ckpt);
        if let Some(ledger) = &result.ledger {
            let path = cfg.out.join(format!("ledger-{name}.json"));
            fs::write(&path, serde_json::to_vec_pretty(ledger)?)?;
            outputs.ledgers.push(path);
        }
        let summary = TrainSummary {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            model,
            train_rows: train.len(),
            test_rows: test.len(),
            result,
        };
        let path = cfg.out.join(format!("train-{name}.json"));
        fs::write(&path, serde_json::to_vec_pretty(&summary)?)?;
        outputs.summaries.push(path);
    }
    Ok(outputs)
}

/// Bound curves over a clip grid as CSV rows `quantity,constraint,c,bound`,
/// followed by the bound-minimizing primal clip.
///
/// Statistics come from the model in `checkpoint` (or a seeded initialization)
/// on one seeded batch; every multiplier is set to `lambda_max`.
pub fn calibrate_clip(cfg: &ExperimentConfig, checkpoint: Option<&std::path::Path>, grid: &[f64]) -> Result<String> {
    let data = load_dataset(cfg)?;
    let arch = cfg.trainer.architecture(data.n_features());
    let params: pfld::Params = match checkpoint {
        Some(p) => ModelParams::read_checkpoint(p)?,
        None => ModelParams::init_seeded(arch, cfg.seed),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let batch: Vec<usize> = order.into_iter().take(cfg.trainer.batch_size.min(data.len())).collect();
    let notion: FairnessNotion = cfg.trainer.notion;
    let batch_set = build_constraints(&data, &batch, notion)?;
    let stats = params.per_sample_stat_grads(&data, &batch, notion.stat_kind())?;
    let lambda = vec![cfg.trainer.lambda_max; batch_set.constraints.len()];
    let mut inputs = BoundInputs::from_stats(&stats, &batch_set, &lambda, &cfg.privacy, cfg.trainer.lambda_max);
    let all: Vec<usize> = (0..data.len()).collect();
    let full_set = build_constraints(&data, &all, notion)?;
    let values = params.stat_values(&data, &all, notion.stat_kind())?;
    inputs.min_dataset_group = full_set.min_group_size().unwrap_or(0);
    inputs.values = full_set
        .constraints
        .iter()
        .map(|c| c.members.iter().map(|&k| values[k].abs()).collect())
        .collect();

    let grid: Vec<f64> = if grid.is_empty() {
        let max = inputs.grad_norms.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-6);
        (1..=40).map(|i| max * 1.25 * i as f64 / 40.0).collect()
    } else {
        grid.to_vec()
    };
    let mut out = String::from("quantity,constraint,c,bound\n");
    for &c in &grid {
        let b = primal_error_bound(&BoundInputs { grad_clip: c, ..inputs.clone() });
        out.push_str(&format!("primal,,{c},{b}\n"));
    }
    for (i, con) in full_set.constraints.iter().enumerate() {
        for &c in &grid {
            let b = dual_error_bound(&BoundInputs { value_clip: c, ..inputs.clone() }, i)?;
            out.push_str(&format!("dual,{},{c},{b}\n", con.index));
        }
    }
    let best = optimal_cp(&inputs)?;
    let b = primal_error_bound(&BoundInputs { grad_clip: best, ..inputs.clone() });
    out.push_str(&format!("optimal-cp,,{best},{b}\n"));
    Ok(out)
}

/// Result of a standalone ledger query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountReport {
    pub config_hash: String,
    pub n: usize,
    pub batch: usize,
    pub epochs: usize,
    pub q: f64,
    pub primal_steps: usize,
    pub dual_steps: usize,
    pub sigma_p: f64,
    pub sigma_d: f64,
    pub calibrated: bool,
    pub ledger: LedgerReport,
}

/// Composes the ledger of a run with `n` training rows without training.
/// With a target epsilon the multipliers are calibrated first.
pub fn account(cfg: &ExperimentConfig, n: usize) -> Result<AccountReport> {
    let t = &cfg.trainer;
    t.validate(n)?;
    let per_epoch = n.div_ceil(t.batch_size);
    let q = t.batch_size as f64 / n as f64;
    let (primal_steps, dual_steps) = (t.epochs * per_epoch, t.epochs);
    let (sigma_p, sigma_d, calibrated) = match cfg.epsilon {
        Some(target) => {
            let (a, b) = calibrate_sigma(target, cfg.privacy.delta, q, primal_steps, dual_steps, cfg.split)?;
            (a, b, true)
        }
        None => {
            let s = match cfg.split {
                SplitPolicy::Shared => cfg.privacy.sigma_d,
                SplitPolicy::DualRatio(r) => r * cfg.privacy.sigma_p,
            };
            (cfg.privacy.sigma_p, s, false)
        }
    };
    let mut ledger = PrivacyLedger::new(default_orders())?;
    ledger.compose(MechanismKind::Primal, q, sigma_p, primal_steps)?;
    ledger.compose(MechanismKind::Dual, 1.0, sigma_d, dual_steps)?;
    Ok(AccountReport {
        config_hash: cfg.hash(),
        n,
        batch: t.batch_size,
        epochs: t.epochs,
        q,
        primal_steps,
        dual_steps,
        sigma_p,
        sigma_d,
        calibrated,
        ledger: ledger.report(cfg.privacy.delta)?,
    })
}
