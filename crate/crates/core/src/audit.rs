use serde::{Deserialize, Serialize};

/// What a pipeline stage consumed. `ground_truth` is true only for
/// validation stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: String,
    pub inputs: Vec<String>,
    pub ground_truth: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn record(&mut self, stage: &str, inputs: &[&str], ground_truth: bool) {
        self.entries.push(AuditEntry {
            stage: stage.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            ground_truth,
        });
    }

    pub fn extend(&mut self, other: &AuditLog) {
        self.entries.extend(other.entries.iter().cloned());
    }

    /// Stages that touched ground truth.
    pub fn truth_stages(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.ground_truth).map(|e| e.stage.as_str()).collect()
    }
}
