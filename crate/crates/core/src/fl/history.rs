//! Per-round training records and their CSV/JSON projections.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Weighted global objective F(w) after this round.
    pub loss: f64,
    /// Plain accuracy over the evaluation set.
    pub accuracy: f64,
    /// Energy spent this round (0 for the initial row).
    pub energy_j: f64,
    /// Realized local passes per cluster this round.
    pub passes: Vec<u32>,
}

/// Dissimilarity constants measured along a trajectory (running maxima).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissimilarityEstimate {
    /// Inter-cluster delta (>= 1).
    pub inter: f64,
    /// Intra-cluster delta_c per cluster (>= 1).
    pub intra: Vec<f64>,
    /// Rounds skipped because the reference gradient was near zero.
    pub stationary_rounds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub master_seed: u64,
    pub records: Vec<RoundRecord>,
    pub cumulative_energy_j: f64,
    pub final_model: ModelParams,
    pub dissimilarity: Option<DissimilarityEstimate>,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.accuracy)
    }

    pub fn rounds(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// CSV projection. Row 0 is the initial model; the master seed rides in
    /// a comment header so the file is self-describing.
    pub fn to_csv(&self) -> String {
        let clusters = self.records.first().map_or(0, |r| r.passes.len());
        let mut out = String::new();
        out.push_str(&format!("# master_seed={}\n", self.master_seed));
        out.push_str("round,loss,accuracy,energy_j");
        for c in 0..clusters {
            out.push_str(&format!(",n_c_{c}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.round, r.loss, r.accuracy, r.energy_j));
            for p in &r.passes {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let h = TrainingHistory {
            master_seed: 7,
            records: vec![
                RoundRecord {
                    round: 0,
                    loss: 2.5,
                    accuracy: 0.1,
                    energy_j: 0.0,
                    passes: vec![1, 4],
                },
                RoundRecord {
                    round: 1,
                    loss: 1.25,
                    accuracy: 0.5,
                    energy_j: 3.5,
                    passes: vec![1, 4],
                },
            ],
            cumulative_energy_j: 3.5,
            final_model: ModelParams::zeros(2),
            dissimilarity: None,
        };
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# master_seed=7");
        assert_eq!(lines[1], "round,loss,accuracy,energy_j,n_c_0,n_c_1");
        assert_eq!(lines[2], "0,2.5,0.1,0,1,4");
        assert_eq!(lines[3], "1,1.25,0.5,3.5,1,4");
    }
}
