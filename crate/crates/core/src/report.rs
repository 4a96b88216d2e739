use serde::{Deserialize, Serialize};

/// Metrics recorded at the end of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_violation: f64,
    pub test_accuracy: Option<f64>,
    pub test_violation: Option<f64>,
    pub lambda: Vec<f64>,
    /// Cumulative (epsilon, delta) spent so far; absent for non-private runs.
    pub epsilon: Option<f64>,
}

/// Per-run training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub primal_steps: usize,
    pub dual_steps: usize,
    /// Batch constraints dropped because their group was too small.
    pub skipped_constraints: usize,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// True when the recorded epsilon never decreases.
    pub fn epsilon_nondecreasing(&self) -> bool {
        let eps: Vec<f64> = self.epochs.iter().filter_map(|e| e.epsilon).collect();
        eps.windows(2).all(|w| w[0] <= w[1])
    }
}
