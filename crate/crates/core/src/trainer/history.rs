//! Training records and their CSV / JSON forms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ObjectiveKind;
use crate::objectives::LossOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub objective: ObjectiveKind,
    pub loss: LossOutput,
    pub val_accuracy: f64,
    pub val_metric: f64,
    pub self_bleu: f64,
    pub entropy: f64,
}

impl EvalRecord {
    /// Values in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        let l = &self.loss;
        vec![
            self.step.to_string(),
            self.objective.to_string(),
            l.total.to_string(),
            l.mle_term.to_string(),
            l.td_term.to_string(),
            l.entropy_term.to_string(),
            l.policy_term.to_string(),
            l.kl_term.to_string(),
            l.value_term.to_string(),
            l.token_count.to_string(),
            self.val_accuracy.to_string(),
            self.val_metric.to_string(),
            self.self_bleu.to_string(),
            self.entropy.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    /// Training loss of every step, in order.
    pub step_losses: Vec<LossOutput>,
    pub stopped_early: bool,
    /// GAIL discriminator updates performed.
    pub discriminator_updates: usize,
}

pub const CSV_HEADER: &[&str] = &[
    "step",
    "objective",
    "loss_total",
    "loss_mle",
    "loss_td",
    "loss_entropy",
    "loss_policy",
    "loss_kl",
    "loss_value",
    "tokens",
    "val_accuracy",
    "val_metric",
    "self_bleu",
    "entropy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub steps_run: usize,
    pub stopped_early: bool,
    pub final_record: Option<EvalRecord>,
    pub best_val_accuracy: f64,
    pub peak_to_final_drop: f64,
}

impl TrainHistory {
    /// Appends a record; steps must increase strictly.
    pub fn push(&mut self, r: EvalRecord) {
        assert!(
            self.records.last().is_none_or(|last| last.step < r.step),
            "history steps must increase"
        );
        self.records.push(r);
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.records.iter().map(|r| r.val_accuracy).fold(0.0, f64::max)
    }

    /// Best validation accuracy minus the final one.
    pub fn peak_to_final_drop(&self) -> f64 {
        self.records
            .last()
            .map_or(0.0, |last| self.best_val_accuracy() - last.val_accuracy)
    }

    pub fn summary(&self) -> HistorySummary {
        HistorySummary {
            steps_run: self.step_losses.len(),
            stopped_early: self.stopped_early,
            final_record: self.records.last().copied(),
            best_val_accuracy: self.best_val_accuracy(),
            peak_to_final_drop: self.peak_to_final_drop(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.records {
            out.write_record(r.csv_fields())?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}
