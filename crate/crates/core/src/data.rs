//! Tabular datasets with a protected attribute: CSV ingestion, standardization,
//! synthetic biased fixtures, stratified k-fold plans and CSV snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SNAPSHOT_MAGIC: &str = "# pfld-dataset v1";

/// Dense features, binary labels and a (possibly missing) protected group id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset<T> {
    features: Vec<T>,
    n_features: usize,
    labels: Vec<u8>,
    protected: Vec<usize>,
    protected_known: Vec<bool>,
    group_count: usize,
    feature_names: Vec<String>,
    feature_means: Vec<T>,
    feature_stds: Vec<T>,
}

impl<T: Scalar> TabularDataset<T> {
    /// Builds a dataset from row-major features. `protected[i] == None` marks a
    /// row whose protected attribute was not reported.
    pub fn from_parts(
        features: Vec<T>,
        n_features: usize,
        labels: Vec<u8>,
        protected: Vec<Option<usize>>,
        group_count: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if n_features == 0 {
            return Err(Error::Validation("dataset has no feature columns".into()));
        }
        if features.len() != n * n_features {
            return Err(Error::Dimension {
                expected: n * n_features,
                got: features.len(),
            });
        }
        if protected.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: protected.len(),
            });
        }
        if group_count == 0 {
            return Err(Error::Validation("group count must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Schema(format!("label value {bad} is not binary")));
        }
        let mut sizes = vec![0usize; group_count];
        for a in protected.iter().flatten() {
            if *a >= group_count {
                return Err(Error::Validation(format!(
                    "protected id {a} out of range for {group_count} groups"
                )));
            }
            sizes[*a] += 1;
        }
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyGroup { group: g });
        }
        let protected_known = protected.iter().map(Option::is_some).collect();
        let protected = protected.into_iter().map(|a| a.unwrap_or(0)).collect();
        Ok(Self {
            features,
            n_features,
            labels,
            protected,
            protected_known,
            group_count,
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
            feature_means: vec![T::zero(); n_features],
            feature_stds: vec![T::one(); n_features],
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Group id of row `i`, `None` when the attribute was not reported.
    pub fn group(&self, i: usize) -> Option<usize> {
        self.protected_known[i].then_some(self.protected[i])
    }

    pub fn protected_known(&self) -> &[bool] {
        &self.protected_known
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_means(&self) -> &[T] {
        &self.feature_means
    }

    pub fn feature_stds(&self) -> &[T] {
        &self.feature_stds
    }

    /// Fraction of rows whose protected attribute is known.
    pub fn reported_fraction(&self) -> f64 {
        let known = self.protected_known.iter().filter(|&&k| k).count();
        known as f64 / self.len() as f64
    }

    /// Number of rows with a known protected attribute, per group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count];
        for i in 0..self.len() {
            if let Some(g) = self.group(i) {
                sizes[g] += 1;
            }
        }
        sizes
    }

    /// Positive-label rate per group, over rows with a known attribute.
    pub fn label_rates(&self) -> Vec<f64> {
        let mut pos = vec![0usize; self.group_count];
        let sizes = self.group_sizes();
        for i in 0..self.len() {
            if let Some(g) = self.group(i) {
                pos[g] += self.labels[i] as usize;
            }
        }
        pos.iter()
            .zip(&sizes)
            .map(|(&p, &s)| p as f64 / s.max(1) as f64)
            .collect()
    }

    /// Rescales every column to zero mean and unit (population) variance.
    /// Constant columns keep a scale of one. The recorded means/stds compose
    /// with any earlier standardization, so they always map back to the raw units.
    pub fn standardize(&mut self) {
        let n = self.len();
        let d = self.n_features;
        let nf = T::of_usize(n);
        for j in 0..d {
            let mean = (0..n).map(|i| self.features[i * d + j]).sum::<T>() / nf;
            let var = (0..n)
                .map(|i| {
                    let c = self.features[i * d + j] - mean;
                    c * c
                })
                .sum::<T>()
                / nf;
            let mut std = var.sqrt();
            if !(std > T::epsilon().sqrt() * (T::one() + mean.abs())) {
                std = T::one();
            }
            for i in 0..n {
                let x = &mut self.features[i * d + j];
                *x = (*x - mean) / std;
            }
            self.feature_means[j] = self.feature_means[j] + self.feature_stds[j] * mean;
            self.feature_stds[j] = self.feature_stds[j] * std;
        }
    }

    /// Copies the selected rows, keeping the standardization record and group count.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let d = self.n_features;
        let mut features = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            n_features: d,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            protected: rows.iter().map(|&i| self.protected[i]).collect(),
            protected_known: rows.iter().map(|&i| self.protected_known[i]).collect(),
            group_count: self.group_count,
            feature_names: self.feature_names.clone(),
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
        }
    }

    /// Hides the protected attribute on a random `1 - r` share of each group's
    /// known rows (at least two rows per group stay known).
    pub fn mask_protected(&self, r: f64, seed: u64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("reported fraction {r} not in (0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for g in 0..self.group_count {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.group(i) == Some(g)).collect();
            members.shuffle(&mut rng);
            let keep = ((members.len() as f64 * r).round() as usize).max(2).min(members.len());
            for &i in &members[keep..] {
                out.protected_known[i] = false;
                out.protected[i] = 0;
            }
        }
        Ok(out)
    }

    /// Writes a reproducibility snapshot: a versioned CSV with the standardization
    /// record in comment lines and `?` for unreported protected values.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(SNAPSHOT_MAGIC);
        out.push('\n');
        out.push_str(&format!("# groups={}\n", self.group_count));
        out.push_str(&format!("# means={}\n", join_f64(&self.feature_means)));
        out.push_str(&format!("# stds={}\n", join_f64(&self.feature_stds)));
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("label".into());
        header.push("protected".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| x.to_f64_lossy().to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(match self.group(i) {
                Some(g) => g.to_string(),
                None => "?".into(),
            });
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        let body = wtr.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv writer emits utf-8"));
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(SNAPSHOT_MAGIC) {
            return Err(Error::Schema("not a pfld dataset snapshot (v1)".into()));
        }
        let mut meta = BTreeMap::new();
        let mut body = String::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let groups: usize = meta
            .get("groups")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Schema("snapshot lacks group count".into()))?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header.len() < 3 {
            return Err(Error::Schema("snapshot header too short".into()));
        }
        let d = header.len() - 2;
        let (mut features, mut labels, mut protected) = (Vec::new(), Vec::new(), Vec::new());
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: r + 1,
                message: e.to_string(),
            })?;
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    row: r + 1,
                    message: format!("{s:?}: {e}"),
                })
            };
            for j in 0..d {
                features.push(T::of(num(&rec[j])?));
            }
            labels.push(num(&rec[d])? as u8);
            protected.push(match &rec[d + 1] {
                "?" => None,
                s => Some(num(s)? as usize),
            });
        }
        let mut ds = Self::from_parts(features, d, labels, protected, groups)?
            .with_feature_names(header[..d].to_vec())?;
        if let (Some(m), Some(s)) = (meta.get("means"), meta.get("stds")) {
            ds.feature_means = split_f64(m)?;
            ds.feature_stds = split_f64(s)?;
        }
        Ok(ds)
    }
}

fn join_f64<T: Scalar>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_f64_lossy().to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn split_f64<T: Scalar>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map(T::of)
                .map_err(|e| Error::Schema(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record() as usize).unwrap_or(0);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Role of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Label,
    Protected,
    Drop,
}

/// Column roles for [`load_csv`], parsed from `column=role` lines.
///
/// Two reserved keys are recognized: `@missing` sets the token that marks an
/// unreported protected value (default `?`), and `@positive` names the label
/// token mapped to 1 when labels are not already `0/1`, `true/false` or `yes/no`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub roles: BTreeMap<String, ColumnRole>,
    pub missing_token: String,
    pub positive_label: Option<String>,
}

impl Schema {
    pub fn new(roles: impl IntoIterator<Item = (String, ColumnRole)>) -> Self {
        Self {
            roles: roles.into_iter().collect(),
            missing_token: "?".into(),
            positive_label: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = Schema::new([]);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected key=value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "@missing" => schema.missing_token = v.to_string(),
                "@positive" => schema.positive_label = Some(v.to_string()),
                _ => {
                    let role = match v {
                        "feature" => ColumnRole::Feature,
                        "label" => ColumnRole::Label,
                        "protected" => ColumnRole::Protected,
                        "drop" => ColumnRole::Drop,
                        other => {
                            return Err(Error::Schema(format!(
                                "line {}: unknown role {other:?}",
                                lineno + 1
                            )))
                        }
                    };
                    schema.roles.insert(k.to_string(), role);
                }
            }
        }
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn single(&self, role: ColumnRole) -> Result<&str> {
        let cols: Vec<&str> = self
            .roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c.as_str())
            .collect();
        match cols.as_slice() {
            [c] => Ok(c),
            _ => Err(Error::Schema(format!(
                "expected exactly one {role:?} column, found {}",
                cols.len()
            ))),
        }
    }
}

/// Reads a headed CSV file, one-hot encodes categorical features, standardizes
/// every feature column and maps protected tokens (sorted) to group ids.
pub fn load_csv<T: Scalar>(path: &Path, schema: &Schema) -> Result<TabularDataset<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    from_csv_reader(file, schema)
}

pub fn from_csv_reader<T: Scalar, R: std::io::Read>(reader: R, schema: &Schema) -> Result<TabularDataset<T>> {
    let label_col = schema.single(ColumnRole::Label)?;
    let protected_col = schema.single(ColumnRole::Protected)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    for col in schema.roles.keys() {
        if !header.contains(col) {
            return Err(Error::Schema(format!("column {col:?} not in header")));
        }
    }
    if let Some(c) = header.iter().find(|c| !schema.roles.contains_key(*c)) {
        return Err(Error::Schema(format!("column {c:?} has no role")));
    }
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: r + 1,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: r + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            columns[j].push(field.to_string());
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::Validation("csv has no data rows".into()));
    }
    let col = |name: &str| &columns[header.iter().position(|h| h == name).expect("checked above")];

    let labels = encode_labels(col(label_col), schema.positive_label.as_deref())?;

    let tokens = col(protected_col);
    let groups: BTreeSet<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| *t != schema.missing_token)
        .collect();
    let group_ids: BTreeMap<&str, usize> = groups.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let protected: Vec<Option<usize>> = tokens.iter().map(|t| group_ids.get(t.as_str()).copied()).collect();

    let mut names = Vec::new();
    let mut feature_cols: Vec<Vec<f64>> = Vec::new();
    for (j, h) in header.iter().enumerate() {
        if schema.roles[h] != ColumnRole::Feature {
            continue;
        }
        let values = &columns[j];
        let parsed: std::result::Result<Vec<f64>, _> = values.iter().map(|v| v.parse::<f64>()).collect();
        match parsed {
            Ok(nums) => {
                names.push(h.clone());
                feature_cols.push(nums);
            }
            Err(_) => {
                let cats: BTreeSet<&str> = values.iter().map(String::as_str).collect();
                for cat in cats {
                    names.push(format!("{h}={cat}"));
                    feature_cols.push(values.iter().map(|v| f64::from(u8::from(v == cat))).collect());
                }
            }
        }
    }
    let d = feature_cols.len();
    let mut features = Vec::with_capacity(n * d);
    for i in 0..n {
        for c in &feature_cols {
            features.push(T::of(c[i]));
        }
    }
    let mut ds = TabularDataset::from_parts(features, d, labels, protected, group_ids.len().max(1))?
        .with_feature_names(names)?;
    ds.standardize();
    Ok(ds)
}

fn encode_labels(tokens: &[String], positive: Option<&str>) -> Result<Vec<u8>> {
    let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        return Err(Error::Schema(format!(
            "label not binary: {} distinct values",
            distinct.len()
        )));
    }
    let positive = match positive {
        Some(p) => p.to_string(),
        None => {
            let known = [("0", "1"), ("false", "true"), ("no", "yes"), ("-1", "1")];
            let lower: BTreeSet<String> = distinct.iter().map(|s| s.to_ascii_lowercase()).collect();
            let pair = known
                .iter()
                .find(|(neg, pos)| lower.iter().all(|t| t == neg || t == pos))
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "label values {distinct:?} need an explicit @positive token"
                    ))
                })?;
            pair.1.to_string()
        }
    };
    Ok(tokens
        .iter()
        .map(|t| u8::from(t.eq_ignore_ascii_case(&positive)))
        .collect())
}

/// Parameters of the synthetic biased generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub groups: usize,
    /// Gap between the lowest and highest group positive rate.
    pub bias: f64,
    /// Relative group sizes. When absent the first group holds nine parts
    /// and every other group one part, mimicking a small protected minority.
    pub group_shares: Option<Vec<f64>>,
    /// Distance between the label-conditional cluster centres on the first feature.
    pub label_separation: f64,
    /// Distance between the extreme group cluster centres on the second feature.
    pub group_separation: f64,
}

impl SynthConfig {
    pub fn new(n: usize, d: usize, groups: usize, bias: f64) -> Self {
        Self {
            n,
            d,
            groups,
            bias,
            group_shares: None,
            label_separation: 2.0,
            group_separation: 2.0,
        }
    }
}

/// Draws a dataset whose positive-label rate differs across groups by about `bias`.
pub fn synthesize_biased<T: Scalar>(n: usize, d: usize, m: usize, bias: f64, seed: u64) -> Result<TabularDataset<T>> {
    synthesize(&SynthConfig::new(n, d, m, bias), seed)
}

pub fn synthesize<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<TabularDataset<T>> {
    let (n, d, m) = (cfg.n, cfg.d, cfg.groups);
    if m == 0 || n < 4 * m {
        return Err(Error::Config(format!("need n >= 4m, got n={n}, m={m}")));
    }
    if d < 2 {
        return Err(Error::Config(format!("need d >= 2, got {d}")));
    }
    if !(0.0..=1.0).contains(&cfg.bias) {
        return Err(Error::Config(format!("bias {} not in [0, 1]", cfg.bias)));
    }
    let shares = match &cfg.group_shares {
        Some(s) if s.len() != m || s.iter().any(|&w| !(w > 0.0)) => {
            return Err(Error::Config("group shares must be m positive weights".into()))
        }
        Some(s) => s.clone(),
        None => default_shares(m),
    };
    let mut counts = apportion(n, &shares);
    // n >= 4m leaves room to lift every group to two rows
    while let Some(small) = counts.iter().position(|&c| c < 2) {
        let largest = (0..m).max_by_key(|&g| (counts[g], std::cmp::Reverse(g))).unwrap_or(0);
        if counts[largest] <= 2 {
            break;
        }
        counts[largest] -= 1;
        counts[small] += 1;
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Config(format!("group sizes {counts:?} leave a group below 2 rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<usize> = counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c)).collect();
    groups.shuffle(&mut rng);

    let position = |g: usize| if m > 1 { g as f64 / (m - 1) as f64 - 0.5 } else { 0.0 };
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &g in &groups {
        let rate = 0.5 + cfg.bias * position(g);
        let y = u8::from(rng.random::<f64>() < rate);
        let noise = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        features.push(T::of(cfg.label_separation * (f64::from(y) - 0.5) + noise(&mut rng)));
        features.push(T::of(cfg.group_separation * position(g) + noise(&mut rng)));
        for _ in 2..d {
            features.push(T::of(noise(&mut rng)));
        }
        labels.push(y);
    }
    let protected = groups.into_iter().map(Some).collect();
    let mut ds = TabularDataset::from_parts(features, d, labels, protected, m)?;
    ds.standardize();
    Ok(ds)
}

fn default_shares(m: usize) -> Vec<f64> {
    (0..m).map(|g| if g == 0 && m > 1 { 9.0 } else { 1.0 }).collect()
}

/// Largest-remainder split of `n` into parts proportional to `weights`.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// Row indices `(train, test)` with fold `fold` held out.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.assignments.len()).partition(|&i| self.assignments[i] == fold);
        (train, test)
    }
}

/// Stratified k-fold plan. Strata are (label, group) pairs, ordered so that
/// each label's rows are contiguous; falls back to label-only strata when some
/// group has fewer than `k` known members.
pub fn kfold<T: Scalar>(dataset: &TabularDataset<T>, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = dataset.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!("fold count {k} must be in [2, {n}]")));
    }
    let by_group = dataset.group_sizes().iter().all(|&s| s >= k);
    if !by_group {
        warn!("a protected group has fewer than {k} members; stratifying folds by label only");
    }
    let unknown = dataset.group_count();
    let mut strata: BTreeMap<(u8, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let g = if by_group { dataset.group(i).unwrap_or(unknown) } else { 0 };
        strata.entry((dataset.label(i), g)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; n];
    let mut next = 0usize;
    for rows in strata.values_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}
