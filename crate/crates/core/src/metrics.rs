//! Per-epoch run records shared by the simulator and the threaded engine.

use serde::{Deserialize, Serialize};

/// Column order of the CSV schema. Columns a run does not produce stay empty.
pub const CSV_COLUMNS: [&str; 9] =
    ["epoch", "residual", "objective", "dist_sq", "xi", "eta", "wall_ms", "max_staleness", "agent_updates"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub residual: f64,
    pub objective: Option<f64>,
    pub dist_sq: Option<f64>,
    pub xi: Option<f64>,
    pub eta: f64,
    pub wall_ms: f64,
    pub max_staleness: Option<usize>,
    pub agent_updates: Option<Vec<usize>>,
}

impl MetricRow {
    pub fn new(epoch: usize, residual: f64, eta: f64) -> Self {
        MetricRow {
            epoch,
            residual,
            objective: None,
            dist_sq: None,
            xi: None,
            eta,
            wall_ms: 0.0,
            max_staleness: None,
            agent_updates: None,
        }
    }

    /// Cells in [`CSV_COLUMNS`] order.
    pub fn csv_record(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        vec![
            self.epoch.to_string(),
            format!("{:e}", self.residual),
            self.objective.map(|v| format!("{v:e}")).unwrap_or_default(),
            self.dist_sq.map(|v| format!("{v:e}")).unwrap_or_default(),
            self.xi.map(|v| format!("{v:e}")).unwrap_or_default(),
            self.eta.to_string(),
            format!("{:.3}", self.wall_ms),
            opt(&self.max_staleness),
            self.agent_updates
                .as_ref()
                .map(|c| c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_residual: f64,
    pub total_ms: f64,
    pub updates: usize,
    pub max_staleness: Option<usize>,
    /// `staleness_hist[d]` counts commits whose read was `d` updates old;
    /// the last bucket collects everything at or beyond it.
    pub staleness_hist: Vec<usize>,
    pub agent_updates: Vec<usize>,
    /// Largest gap between the incrementally maintained auxiliary vector and
    /// one recomputed from the final iterate.
    #[serde(default)]
    pub aux_drift: f64,
    pub warnings: Vec<String>,
}

/// One committed block update, in commit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub block: usize,
    pub delta: Vec<f64>,
    /// Number of commits visible when the read started.
    pub read_at: usize,
    /// Index of this commit.
    pub commit_at: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    pub summary: RunSummary,
    pub final_x: Vec<f64>,
    /// Present when the run was asked to log every commit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commits: Option<Vec<CommitRecord>>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// Epoch numbers strictly increase and residuals are nonnegative.
    pub fn is_well_formed(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].epoch < w[1].epoch) && self.rows.iter().all(|r| r.residual >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_columns_stay_present() {
        let r = MetricRow::new(3, 0.5, 0.9);
        let rec = r.csv_record();
        assert_eq!(rec.len(), CSV_COLUMNS.len());
        assert_eq!(rec[0], "3");
        assert!(rec[2].is_empty() && rec[4].is_empty() && rec[8].is_empty());
    }

    #[test]
    fn agent_counts_joined() {
        let mut r = MetricRow::new(1, 0.0, 1.0);
        r.agent_updates = Some(vec![4, 5]);
        r.max_staleness = Some(2);
        let rec = r.csv_record();
        assert_eq!(rec[7], "2");
        assert_eq!(rec[8], "4;5");
    }
}
