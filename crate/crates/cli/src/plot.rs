//! Tidy `(x, series, mean, std)` series for plotting, projected from `runs.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::experiment::mean_std;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    /// Accuracy and violation against epsilon.
    Tradeoff,
    /// Against the primal clip radius.
    ClipSweep,
    /// Against the reported fraction.
    MissingValues,
}

impl FigureKind {
    pub fn axis(self) -> &'static str {
        match self {
            FigureKind::Tradeoff => "epsilon",
            FigureKind::ClipSweep => "cp",
            FigureKind::MissingValues => "r",
        }
    }
}

impl std::str::FromStr for FigureKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tradeoff" => Ok(FigureKind::Tradeoff),
            "clip-sweep" => Ok(FigureKind::ClipSweep),
            "missing-values" => Ok(FigureKind::MissingValues),
            other => Err(format!("unknown figure kind {other:?} (tradeoff, clip-sweep, missing-values)")),
        }
    }
}

const REQUIRED: [&str; 5] = ["model", "axis", "x", "metric", "value"];

/// Aggregates `acc` and `fv` rows of one or more run tables by sweep value.
/// Series are named by metric, prefixed with the model when several are present.
pub fn emit_plot_data(runs: &[&Path], kind: FigureKind) -> Result<String> {
    // (model, metric) -> x bits -> values
    let mut groups: BTreeMap<(String, String), BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for path in runs {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let headers = rdr.headers()?.clone();
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
        if !missing.is_empty() {
            bail!("{} is missing columns: {}", path.display(), missing.join(", "));
        }
        let col = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
        let (model, axis, x, metric, value) = (col("model"), col("axis"), col("x"), col("metric"), col("value"));
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
            if &rec[axis] != kind.axis() || !matches!(&rec[metric], "acc" | "fv") {
                continue;
            }
            let xv: f64 = rec[x].parse().with_context(|| format!("{} row {}: bad x", path.display(), i + 2))?;
            let v: f64 = rec[value].parse().with_context(|| format!("{} row {}: bad value", path.display(), i + 2))?;
            groups
                .entry((rec[model].to_string(), rec[metric].to_string()))
                .or_default()
                .entry(order_key(xv))
                .or_insert_with(|| (xv, Vec::new()))
                .1
                .push(v);
        }
    }
    if groups.is_empty() {
        bail!("no acc/fv rows for axis {:?}", kind.axis());
    }
    let models: std::collections::BTreeSet<&str> = groups.keys().map(|(m, _)| m.as_str()).collect();
    let mut out = String::from("x,series,mean,std\n");
    for ((model, metric), by_x) in &groups {
        let series = if models.len() > 1 { format!("{model}:{metric}") } else { metric.clone() };
        for (x, values) in by_x.values() {
            let (m, s) = mean_std(values);
            out.push_str(&format!("{x},{series},{m},{s}\n"));
        }
    }
    Ok(out)
}

/// Maps a float to an integer key with the same ordering.
fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_orders_floats() {
        let xs = [-2.0, -0.5, 0.0, 0.01, 1.0, 3.0];
        for w in xs.windows(2) {
            assert!(order_key(w[0]) < order_key(w[1]));
        }
    }

    #[test]
    fn projects_and_names_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("runs.csv");
        std::fs::write(
            &good,
            "config_hash,model,axis,x,fold,rep,seed,metric,value\nh,pfld,epsilon,1,0,0,0,acc,0.8\nh,pfld,epsilon,1,0,1,1,acc,0.6\nh,pfld,epsilon,0.1,0,0,0,fv,0.3\n",
        )
        .unwrap();
        let out = emit_plot_data(&[&good], FigureKind::Tradeoff).unwrap();
        assert_eq!(out.lines().next(), Some("x,series,mean,std"));
        assert!(out.contains("1,acc,0.7,"));
        assert!(out.contains("0.1,fv,0.3,0"));
        assert!(emit_plot_data(&[&good], FigureKind::ClipSweep).is_err());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "model,value\npfld,1\n").unwrap();
        let err = emit_plot_data(&[&bad], FigureKind::Tradeoff).unwrap_err().to_string();
        assert!(err.contains("axis, x, metric"), "{err}");
    }
}
