//! Group-fairness notions expressed as equality constraints between a
//! population mean and a group mean of a per-sample statistic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, StatKind};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FairnessNotion {
    /// Prediction rate independent of the protected attribute.
    DemographicParity,
    /// Prediction rate independent of the protected attribute given the label.
    EqualizedOdds,
    /// Misclassification independent of the protected attribute.
    AccuracyParity,
}

impl FairnessNotion {
    pub fn stat_kind(self) -> StatKind {
        match self {
            FairnessNotion::DemographicParity | FairnessNotion::EqualizedOdds => StatKind::OutputProbability,
            FairnessNotion::AccuracyParity => StatKind::Loss,
        }
    }

    /// Number of constraints (multipliers) for `groups` protected groups.
    pub fn constraint_count(self, groups: usize) -> usize {
        match self {
            FairnessNotion::EqualizedOdds => 2 * groups,
            _ => groups,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FairnessNotion::DemographicParity => "dp",
            FairnessNotion::EqualizedOdds => "eo",
            FairnessNotion::AccuracyParity => "ap",
        }
    }
}

impl fmt::Display for FairnessNotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FairnessNotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" | "demographic-parity" => Ok(FairnessNotion::DemographicParity),
            "eo" | "equalized-odds" => Ok(FairnessNotion::EqualizedOdds),
            "ap" | "accuracy-parity" => Ok(FairnessNotion::AccuracyParity),
            other => Err(Error::Config(format!("unknown fairness notion {other:?}"))),
        }
    }
}

/// One equality constraint. Index lists are positions into [`ConstraintSet::rows`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    /// Position of this constraint's multiplier.
    pub index: usize,
    pub group: usize,
    /// Conditioning label for equalized odds.
    pub label: Option<u8>,
    pub population: Vec<usize>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    pub notion: FairnessNotion,
    /// Dataset rows the positions refer to.
    pub rows: Vec<usize>,
    pub constraints: Vec<Constraint>,
    /// Size of the full multiplier vector, including constraints absent here.
    pub multiplier_count: usize,
}

impl ConstraintSet {
    pub fn stat_kind(&self) -> StatKind {
        self.notion.stat_kind()
    }

    pub fn min_group_size(&self) -> Option<usize> {
        self.constraints.iter().map(|c| c.members.len()).min()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// Builds every constraint of `notion` over `rows`. Rows with an unreported
/// attribute join populations but no group.
pub fn build_constraints<T: Scalar>(
    data: &TabularDataset<T>,
    rows: &[usize],
    notion: FairnessNotion,
) -> Result<ConstraintSet> {
    let (set, skipped) = build_constraints_partial(data, rows, notion, 1);
    match skipped.first() {
        Some(&(group, _)) => Err(Error::EmptyGroup { group }),
        None => Ok(set),
    }
}

/// Like [`build_constraints`] but drops constraints whose group holds fewer
/// than `min_members` rows. Returns the dropped `(group, label)` descriptors.
pub fn build_constraints_partial<T: Scalar>(
    data: &TabularDataset<T>,
    rows: &[usize],
    notion: FairnessNotion,
    min_members: usize,
) -> (ConstraintSet, Vec<(usize, Option<u8>)>) {
    let m = data.group_count();
    let mut constraints = Vec::new();
    let mut skipped = Vec::new();
    let labels: Vec<Option<u8>> = match notion {
        FairnessNotion::EqualizedOdds => vec![Some(0), Some(1)],
        _ => vec![None],
    };
    for (li, &label) in labels.iter().enumerate() {
        let population: Vec<usize> = (0..rows.len())
            .filter(|&k| label.is_none_or(|y| data.label(rows[k]) == y))
            .collect();
        for g in 0..m {
            let members: Vec<usize> = population
                .iter()
                .copied()
                .filter(|&k| data.group(rows[k]) == Some(g))
                .collect();
            if members.len() < min_members.max(1) {
                skipped.push((g, label));
                continue;
            }
            constraints.push(Constraint {
                index: li * m + g,
                group: g,
                label,
                population: population.clone(),
                members,
            });
        }
    }
    let set = ConstraintSet {
        notion,
        rows: rows.to_vec(),
        constraints,
        multiplier_count: notion.constraint_count(m),
    };
    (set, skipped)
}

fn mean_of<T: Scalar>(values: &[T], idx: &[usize], map: impl Fn(T) -> T) -> T {
    idx.iter().map(|&k| map(values[k])).sum::<T>() / T::of_usize(idx.len())
}

/// Signed gaps `mu(P_i) - mu(G_i)` per constraint, from statistic values
/// aligned with `set.rows`. `group_map` is applied to each group-term value.
pub(crate) fn signed_gaps<T: Scalar>(values: &[T], set: &ConstraintSet, group_map: impl Fn(T) -> T + Copy) -> Vec<T> {
    set.constraints
        .iter()
        .map(|c| mean_of(values, &c.population, |v| v) - mean_of(values, &c.members, group_map))
        .collect()
}

/// Scatters per-constraint magnitudes into a full-length violation vector.
pub(crate) fn scatter_abs<T: Scalar>(gaps: &[T], set: &ConstraintSet) -> Vec<T> {
    let mut out = vec![T::zero(); set.multiplier_count];
    for (c, g) in set.constraints.iter().zip(gaps) {
        out[c.index] = g.abs();
    }
    out
}

/// Empirical mean of the statistic over the given dataset rows.
pub fn mu<T: Scalar>(params: &ModelParams<T>, data: &TabularDataset<T>, rows: &[usize], stat: StatKind) -> Result<T> {
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    let values = params.stat_values(data, rows, stat)?;
    Ok(values.iter().copied().sum::<T>() / T::of_usize(values.len()))
}

/// `|mu(P_i) - mu(G_i)|` for every multiplier index (zero for constraints absent from the set).
pub fn violation_vector<T: Scalar>(params: &ModelParams<T>, data: &TabularDataset<T>, set: &ConstraintSet) -> Result<Vec<T>> {
    if set.rows.is_empty() {
        return Err(Error::EmptySet);
    }
    let values = params.stat_values(data, &set.rows, set.stat_kind())?;
    Ok(scatter_abs(&signed_gaps(&values, set, |v| v), set))
}

/// Largest absolute difference between any two available rates.
pub fn max_pairwise_gap(rates: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = rates.iter().flatten().copied().collect();
    if present.len() < 2 {
        return 0.0;
    }
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Fairness violation from hard predictions (`p >= 0.5`) on rows with a
/// known attribute: the maximum pairwise gap of the per-group statistic,
/// worst case over labels for equalized odds.
pub fn violation_from_predictions<T: Scalar>(probs: &[T], data: &TabularDataset<T>, notion: FairnessNotion) -> f64 {
    let half = T::of(0.5);
    let hard: Vec<u8> = probs.iter().map(|&p| u8::from(p >= half)).collect();
    let m = data.group_count();
    let rate = |pred: &dyn Fn(usize) -> Option<f64>, keep: &dyn Fn(usize) -> bool| -> Vec<Option<f64>> {
        let mut sum = vec![0.0; m];
        let mut count = vec![0usize; m];
        for i in 0..data.len() {
            if let (Some(g), true) = (data.group(i), keep(i)) {
                if let Some(v) = pred(i) {
                    sum[g] += v;
                    count[g] += 1;
                }
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    };
    match notion {
        FairnessNotion::DemographicParity => {
            max_pairwise_gap(&rate(&|i| Some(f64::from(hard[i])), &|_| true))
        }
        FairnessNotion::EqualizedOdds => (0..=1u8)
            .map(|y| max_pairwise_gap(&rate(&|i| Some(f64::from(hard[i])), &|i| data.label(i) == y)))
            .fold(0.0, f64::max),
        FairnessNotion::AccuracyParity => {
            max_pairwise_gap(&rate(&|i| Some(f64::from(u8::from(hard[i] != data.label(i)))), &|_| true))
        }
    }
}

/// Evaluation metric "fairness violation" on a dataset, using hard predictions.
pub fn fairness_violation_metric<T: Scalar>(params: &ModelParams<T>, data: &TabularDataset<T>, notion: FairnessNotion) -> Result<f64> {
    let probs = params.predict_all(data)?;
    Ok(violation_from_predictions(&probs, data, notion))
}

/// Soft counterpart of [`fairness_violation_metric`]: group means of the
/// training statistic itself instead of hard rates.
pub fn soft_fairness_violation<T: Scalar>(params: &ModelParams<T>, data: &TabularDataset<T>, notion: FairnessNotion) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let values = params.stat_values(data, &rows, notion.stat_kind())?;
    let (set, _) = build_constraints_partial(data, &rows, notion, 1);
    let mut worst: f64 = 0.0;
    let labels: Vec<Option<u8>> = set.constraints.iter().map(|c| c.label).collect();
    for label in [None, Some(0), Some(1)] {
        let rates: Vec<Option<f64>> = set
            .constraints
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == label)
            .map(|(c, _)| Some(mean_of(&values, &c.members, |v| v).to_f64_lossy()))
            .collect();
        worst = worst.max(max_pairwise_gap(&rates));
    }
    Ok(worst)
}

/// Share of rows whose hard prediction matches the label.
pub fn accuracy<T: Scalar>(params: &ModelParams<T>, data: &TabularDataset<T>) -> Result<f64> {
    let probs = params.predict_all(data)?;
    let half = T::of(0.5);
    let correct = probs
        .iter()
        .zip(data.labels())
        .filter(|(&p, &y)| u8::from(p >= half) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
