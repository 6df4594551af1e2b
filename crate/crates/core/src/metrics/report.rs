use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::aggregate::{AggregateMetrics, MetricSummary};
use super::confusion::SlideMetrics;

pub const TABLE_HEADER: &str = "Model,Precision,Recall,Specificity,AUROC,MCC";

/// Per-slide and aggregate results of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub threshold: f64,
    pub slides: Vec<SlideMetrics>,
    pub aggregate: AggregateMetrics,
}

fn pct(s: &MetricSummary) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(sd)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd),
        _ => "n/a".to_string(),
    }
}

impl EvalReport {
    /// One CSV row in percent, `mean ± std`.
    pub fn table_row(&self) -> String {
        let a = &self.aggregate;
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{}",
            self.model,
            pct(&a.precision),
            pct(&a.recall),
            pct(&a.specificity),
            pct(&a.auroc),
            pct(&a.mcc)
        )
        .unwrap();
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{TABLE_HEADER}\n{}\n", self.table_row())
    }

    /// Values of one metric per slide, in slide order, skipping undefined.
    pub fn metric_values(&self, metric: &str) -> Option<Vec<f64>> {
        let get: fn(&SlideMetrics) -> Option<f64> = match metric {
            "precision" => |m| m.precision,
            "recall" => |m| m.recall,
            "specificity" => |m| m.specificity,
            "auroc" => |m| m.auroc,
            "mcc" => |m| m.mcc,
            _ => return None,
        };
        Some(self.slides.iter().filter_map(get).collect())
    }
}
