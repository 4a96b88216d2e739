use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pfld_cli::config::{ExperimentConfig, Settings};
use pfld_cli::plot::{emit_plot_data, FigureKind};
use pfld_cli::{run_experiment, tools};

#[derive(Parser)]
#[command(name = "pfld", version, about = "Fair and private Lagrangian-dual training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train each configured model once and write summary, checkpoint and ledger.
    Train(Flags),
    /// Run folds x repetitions x sweep points and write JSON/CSV reports.
    Sweep(Flags),
    /// Print primal/dual error-bound curves over a clip grid as CSV.
    CalibrateClip {
        #[command(flatten)]
        flags: Flags,
        /// Model checkpoint to take statistics from (default: seeded initialization).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated clip values.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Project run tables into (x, series, mean, std) CSV.
    PlotData {
        /// tradeoff, clip-sweep or missing-values.
        #[arg(long)]
        kind: FigureKind,
        /// runs.csv files written by `sweep`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compose the privacy ledger of a run without training.
    Account {
        #[command(flatten)]
        flags: Flags,
        /// Number of training rows (default: the configured dataset's training split).
        #[arg(long)]
        n: Option<usize>,
    },
}

/// Settings shared by the experiment subcommands; each flag overrides the config file.
#[derive(Args, Default)]
struct Flags {
    /// Plain-text key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    synthetic_n: Option<String>,
    #[arg(long)]
    synthetic_d: Option<String>,
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    #[arg(long)]
    group_shares: Option<String>,
    /// Comma-separated subset of clf, fld, pfld.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    dual_step: Option<String>,
    #[arg(long)]
    lambda_max: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    /// dp, eo or ap.
    #[arg(long)]
    fairness: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    cp: Option<String>,
    #[arg(long)]
    cd: Option<String>,
    #[arg(long)]
    sigma_p: Option<String>,
    #[arg(long)]
    sigma_d: Option<String>,
    /// Target epsilon; calibrates the noise multipliers.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    reported_fraction: Option<String>,
    /// sigma_d / sigma_p used when calibrating.
    #[arg(long)]
    dual_ratio: Option<String>,
    /// realized or bounded.
    #[arg(long)]
    sensitivity_mode: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    repetitions: Option<String>,
    /// epsilon, cp, cd, r, lambda-max or sigma.
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Flags {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let pairs = [
            ("data", &self.data),
            ("schema", &self.schema),
            ("synthetic-n", &self.synthetic_n),
            ("synthetic-d", &self.synthetic_d),
            ("groups", &self.groups),
            ("bias", &self.bias),
            ("group-shares", &self.group_shares),
            ("model", &self.model),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("dual-step", &self.dual_step),
            ("lambda-max", &self.lambda_max),
            ("hidden", &self.hidden),
            ("fairness", &self.fairness),
            ("seed", &self.seed),
            ("cp", &self.cp),
            ("cd", &self.cd),
            ("sigma-p", &self.sigma_p),
            ("sigma-d", &self.sigma_d),
            ("epsilon", &self.epsilon),
            ("delta", &self.delta),
            ("reported-fraction", &self.reported_fraction),
            ("dual-ratio", &self.dual_ratio),
            ("sensitivity-mode", &self.sensitivity_mode),
            ("folds", &self.folds),
            ("repetitions", &self.repetitions),
            ("axis", &self.axis),
            ("values", &self.values),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.set(key, v.as_str())?;
            }
        }
        Ok(s)
    }

    /// True when the seed was given by flag or config file.
    fn seed_given(&self) -> Result<bool> {
        if self.seed.is_some() {
            return Ok(true);
        }
        let Some(path) = &self.config else { return Ok(false) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .any(|(k, _)| k.trim().trim_start_matches("--") == "seed"))
    }

    fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::from_settings(&self.settings()?)?)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let text = run(Cli::parse())?;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// Executes one subcommand and returns what it prints on stdout.
fn run(cli: Cli) -> Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::Train(flags) => {
            let cfg = flags.experiment()?;
            let outputs = tools::train(&cfg)?;
            for p in outputs.summaries.iter().chain(&outputs.checkpoints).chain(&outputs.ledgers) {
                writeln!(out, "{}", p.display())?;
            }
        }
        Command::Sweep(flags) => {
            if !flags.seed_given()? {
                bail!("sweep requires --seed (or seed=... in the config file)");
            }
            let cfg = flags.experiment()?;
            let (outcome, paths) = run_experiment(&cfg)?;
            for p in &outcome.summary.points {
                writeln!(
                    out,
                    "{:<5} x={:<8} runs={:<3} acc={:.4}±{:.4} fv={:.4}±{:.4}",
                    p.model.name(),
                    p.x.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
                    p.runs,
                    p.acc_mean,
                    p.acc_std,
                    p.fv_mean,
                    p.fv_std
                )?;
            }
            if !outcome.summary.failures.is_empty() {
                eprintln!("{} run(s) failed; see {}", outcome.summary.failures.len(), paths.summary.display());
            }
            writeln!(out, "{}\n{}\n{}", paths.summary.display(), paths.runs.display(), paths.epochs.display())?;
        }
        Command::CalibrateClip { flags, checkpoint, grid } => {
            let cfg = flags.experiment()?;
            out.push_str(&tools::calibrate_clip(&cfg, checkpoint.as_deref(), &grid)?);
        }
        Command::PlotData { kind, runs, output } => {
            let refs: Vec<&std::path::Path> = runs.iter().map(PathBuf::as_path).collect();
            let csv = emit_plot_data(&refs, kind)?;
            match output {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => out.push_str(&csv),
            }
        }
        Command::Account { flags, n } => {
            let cfg = flags.experiment()?;
            let n = match n {
                Some(n) => n,
                None => {
                    let data = pfld_cli::experiment::load_dataset(&cfg)?;
                    pfld_cli::experiment::fold_split(&data, cfg.folds, 0, cfg.seed)?.0.len()
                }
            };
            let report = tools::account(&cfg, n)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(out)
}
