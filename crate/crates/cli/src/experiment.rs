//! Fold x repetition x sweep-point orchestration and report writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use pfld::accountant::{calibrate_sigma, LedgerReport};
use pfld::data::{kfold, load_csv, synthesize, Schema};
use pfld::lagrangian::{train_fld, train_unconstrained};
use pfld::privacy::train_pfld;
use pfld::report::EpochRecord;
use pfld::{Dataset, PrivacyConfig, TrainerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig, ModelKind, SweepAxis};

pub const SCHEMA_VERSION: u32 = 1;

/// Loads or generates the experiment's dataset. CSV data is standardized on load.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic(s) => synthesize(s, cfg.seed).context("generating synthetic data"),
        DatasetSource::Csv { path, schema } => {
            let schema = Schema::from_file(schema).with_context(|| format!("reading schema {}", schema.display()))?;
            let mut data: Dataset = load_csv(path, &schema).with_context(|| format!("loading {}", path.display()))?;
            data.standardize();
            Ok(data)
        }
    }
}

/// Train/test row split for `fold`. A single fold holds out a fifth of the data.
pub fn fold_split(data: &Dataset, folds: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = if folds == 1 { 5 } else { folds };
    let plan = kfold(data, k, seed)?;
    Ok(plan.split(fold))
}

/// Seed of one repetition on one fold; shared across sweep points and models.
pub fn run_seed(base: u64, fold: usize, rep: usize) -> u64 {
    base.wrapping_add(1_000_003u64.wrapping_mul(rep as u64)).wrapping_add(7_919u64.wrapping_mul(fold as u64))
}

/// Outcome of one training run evaluated on held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub test_accuracy: f64,
    pub test_violation: f64,
    pub train_accuracy: f64,
    pub train_violation: f64,
    pub epsilon: Option<f64>,
    pub sigma_p: Option<f64>,
    pub sigma_d: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    #[serde(skip)]
    pub params: Option<pfld::Params>,
    pub ledger: Option<LedgerReport>,
}

/// Trains `model` on `train` and evaluates on `test`. For the private model a
/// target epsilon, when given, replaces the configured noise multipliers.
pub fn train_and_evaluate(
    model: ModelKind,
    train: &Dataset,
    test: &Dataset,
    trainer: &TrainerConfig,
    privacy: &PrivacyConfig,
    epsilon: Option<f64>,
    split: pfld::SplitPolicy,
) -> Result<RunResult> {
    let (state, report, ledger, sigmas) = match model {
        ModelKind::Clf => {
            let (s, r) = train_unconstrained(train, Some(test), trainer)?;
            (s, r, None, None)
        }
        ModelKind::Fld => {
            let (s, r) = train_fld(train, Some(test), trainer)?;
            (s, r, None, None)
        }
        ModelKind::Pfld => {
            let mut privacy = privacy.clone();
            if let Some(target) = epsilon {
                let n = train.len();
                let per_epoch = n.div_ceil(trainer.batch_size);
                let q = (trainer.batch_size as f64 / n as f64).min(1.0);
                let (sp, sd) = calibrate_sigma(target, privacy.delta, q, trainer.epochs * per_epoch, trainer.epochs, split)?;
                privacy.sigma_p = sp;
                privacy.sigma_d = sd;
            }
            let (s, r, l) = train_pfld(train, Some(test), trainer, &privacy)?;
            let report = l.report(privacy.delta).ok();
            (s, r, report, Some((privacy.sigma_p, privacy.sigma_d)))
        }
    };
    let last = report.last().context("training produced no epochs")?;
    Ok(RunResult {
        model,
        test_accuracy: last.test_accuracy.unwrap_or(f64::NAN),
        test_violation: last.test_violation.unwrap_or(f64::NAN),
        train_accuracy: last.train_accuracy,
        train_violation: last.train_violation,
        epsilon: last.epsilon,
        sigma_p: sigmas.map(|s| s.0),
        sigma_d: sigmas.map(|s| s.1),
        epochs: report.epochs.clone(),
        params: Some(state.params),
        ledger,
    })
}

/// One row of the per-run table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub point: Option<f64>,
    pub fold: usize,
    pub rep: usize,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub model: ModelKind,
    pub point: Option<f64>,
    pub fold: usize,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub model: ModelKind,
    pub axis: Option<String>,
    pub x: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    // a point with no successful runs has NaN statistics, written as null
    #[serde(deserialize_with = "null_as_nan")]
    pub acc_mean: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub acc_std: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub fv_mean: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub fv_std: f64,
    pub epsilon_mean: Option<f64>,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub points: Vec<PointSummary>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn apply_point(cfg: &ExperimentConfig, axis: SweepAxis, x: f64) -> (TrainerConfig, PrivacyConfig, Option<f64>) {
    let mut trainer = cfg.trainer.clone();
    let mut privacy = cfg.privacy.clone();
    let mut epsilon = cfg.epsilon;
    match axis {
        SweepAxis::Epsilon => epsilon = Some(x),
        SweepAxis::Cp => privacy.grad_clip = x,
        SweepAxis::Cd => privacy.value_clip = x,
        SweepAxis::R => privacy.reported_fraction = x,
        SweepAxis::LambdaMax => trainer.lambda_max = x,
        SweepAxis::Sigma => {
            privacy.sigma_p = x;
            privacy.sigma_d = x;
            epsilon = None;
        }
    }
    (trainer, privacy, epsilon)
}

/// Runs every (sweep point, model, fold, repetition) combination. Runs are
/// independent and execute in parallel; results keep a fixed order.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = load_dataset(cfg)?;
    let points: Vec<Option<f64>> = match &cfg.sweep {
        Some((_, values)) => values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let fold_count = if cfg.folds == 1 { 1 } else { cfg.folds };
    let mut tasks = Vec::new();
    for &point in &points {
        for &model in &cfg.models {
            for fold in 0..fold_count {
                for rep in 0..cfg.repetitions {
                    tasks.push((point, model, fold, rep));
                }
            }
        }
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..fold_count)
        .map(|f| fold_split(&data, cfg.folds, f, cfg.seed))
        .collect::<Result<_>>()?;
    info!("running {} trainings", tasks.len());

    let outcomes: Vec<std::result::Result<RunRecord, Failure>> = tasks
        .par_iter()
        .map(|&(point, model, fold, rep)| {
            let seed = run_seed(cfg.seed, fold, rep);
            let attempt = || -> Result<RunRecord> {
                let (mut trainer, privacy, epsilon) = match (point, &cfg.sweep) {
                    (Some(x), Some((axis, _))) => apply_point(cfg, *axis, x),
                    _ => (cfg.trainer.clone(), cfg.privacy.clone(), cfg.epsilon),
                };
                trainer.seed = seed;
                let (train_rows, test_rows) = &splits[fold];
                let mut train = data.subset(train_rows);
                if privacy.reported_fraction < 1.0 {
                    train = train.mask_protected(privacy.reported_fraction, seed)?;
                }
                let test = data.subset(test_rows);
                let result = train_and_evaluate(model, &train, &test, &trainer, &privacy, epsilon, cfg.split)?;
                Ok(RunRecord {
                    model,
                    point,
                    fold,
                    rep,
                    seed,
                    result,
                })
            };
            attempt().map_err(|e| {
                warn!("{} fold {fold} rep {rep} point {point:?} failed: {e:#}", model.name());
                Failure {
                    model,
                    point,
                    fold,
                    rep,
                    error: format!("{e:#}"),
                }
            })
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    let axis = cfg.sweep.as_ref().map(|(a, _)| a.name().to_string());
    let mut summaries = Vec::new();
    for &point in &points {
        for &model in &cfg.models {
            let here: Vec<&RunRecord> = runs.iter().filter(|r| r.model == model && r.point == point).collect();
            let accs: Vec<f64> = here.iter().map(|r| r.result.test_accuracy).collect();
            let fvs: Vec<f64> = here.iter().map(|r| r.result.test_violation).collect();
            let eps: Vec<f64> = here.iter().filter_map(|r| r.result.epsilon).collect();
            let (acc_mean, acc_std) = mean_std(&accs);
            let (fv_mean, fv_std) = mean_std(&fvs);
            summaries.push(PointSummary {
                model,
                axis: axis.clone(),
                x: point,
                runs: here.len(),
                failures: failures.iter().filter(|f| f.model == model && f.point == point).count(),
                acc_mean,
                acc_std,
                fv_mean,
                fv_std,
                epsilon_mean: (!eps.is_empty()).then(|| mean_std(&eps).0),
            });
        }
    }
    Ok(ExperimentOutcome {
        summary: Summary {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            config: cfg.settings.pairs().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            points: summaries,
            failures,
        },
        runs,
    })
}

/// Files written by [`write_reports`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub summary: PathBuf,
    pub runs: PathBuf,
    pub epochs: PathBuf,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format rows of final per-run metrics.
pub fn runs_csv(outcome: &ExperimentOutcome, axis: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_hash", "model", "axis", "x", "fold", "rep", "seed", "metric", "value"])?;
    let hash = &outcome.summary.config_hash;
    for r in &outcome.runs {
        let res = &r.result;
        let metrics = [
            ("acc", Some(res.test_accuracy)),
            ("fv", Some(res.test_violation)),
            ("train_acc", Some(res.train_accuracy)),
            ("train_fv", Some(res.train_violation)),
            ("epsilon", res.epsilon),
            ("sigma_p", res.sigma_p),
            ("sigma_d", res.sigma_d),
        ];
        for (name, value) in metrics {
            let Some(v) = value else { continue };
            w.write_record([
                hash.as_str(),
                r.model.name(),
                axis,
                &fmt_opt(r.point),
                &r.fold.to_string(),
                &r.rep.to_string(),
                &r.seed.to_string(),
                name,
                &v.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

/// Long-format per-epoch rows.
pub fn epochs_csv(outcome: &ExperimentOutcome, axis: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config_hash", "model", "axis", "x", "fold", "rep", "epoch", "metric", "value"])?;
    let hash = &outcome.summary.config_hash;
    for r in &outcome.runs {
        for e in &r.result.epochs {
            let mut metrics: Vec<(String, Option<f64>)> = vec![
                ("loss".into(), Some(e.train_loss)),
                ("train_acc".into(), Some(e.train_accuracy)),
                ("train_fv".into(), Some(e.train_violation)),
                ("acc".into(), e.test_accuracy),
                ("fv".into(), e.test_violation),
                ("epsilon".into(), e.epsilon),
            ];
            metrics.extend(e.lambda.iter().enumerate().map(|(i, &l)| (format!("lambda_{i}"), Some(l))));
            for (name, value) in metrics {
                let Some(v) = value else { continue };
                w.write_record([
                    hash.as_str(),
                    r.model.name(),
                    axis,
                    &fmt_opt(r.point),
                    &r.fold.to_string(),
                    &r.rep.to_string(),
                    &e.epoch.to_string(),
                    &name,
                    &v.to_string(),
                ])?;
            }
        }
    }
    Ok(w.into_inner()?)
}

/// Writes `summary.json`, `runs.csv` and `epochs.csv` into `dir`.
pub fn write_reports(outcome: &ExperimentOutcome, dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let axis = outcome.summary.points.first().and_then(|p| p.axis.clone()).unwrap_or_default();
    let paths = ReportPaths {
        summary: dir.join("summary.json"),
        runs: dir.join("runs.csv"),
        epochs: dir.join("epochs.csv"),
    };
    let mut json = serde_json::to_vec_pretty(&outcome.summary)?;
    json.push(b'\n');
    fs::write(&paths.summary, json).with_context(|| format!("writing {}", paths.summary.display()))?;
    fs::write(&paths.runs, runs_csv(outcome, &axis)?).with_context(|| format!("writing {}", paths.runs.display()))?;
    fs::write(&paths.epochs, epochs_csv(outcome, &axis)?).with_context(|| format!("writing {}", paths.epochs.display()))?;
    Ok(paths)
}

/// Executes the experiment and writes its reports under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentOutcome, ReportPaths)> {
    let outcome = execute(cfg)?;
    let paths = write_reports(&outcome, &cfg.out)?;
    Ok((outcome, paths))
}
