use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::confusion::SlideMetrics;

/// Mean and sample standard deviation over the units where a metric is
/// defined. `mean` is `None` when `n == 0`; `std` is 0 for a single unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl MetricSummary {
    pub fn from_values(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: None,
                std: None,
                n,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub specificity: MetricSummary,
    pub auroc: MetricSummary,
    pub mcc: MetricSummary,
    /// Slides per run.
    pub n_slides: usize,
    /// Number of runs (seeds) averaged; 1 for a single run.
    pub n_runs: usize,
}

type Getter = fn(&SlideMetrics) -> Option<f64>;

const GETTERS: [Getter; 5] = [
    |m| m.precision,
    |m| m.recall,
    |m| m.specificity,
    |m| m.auroc,
    |m| m.mcc,
];

fn build(summaries: Vec<MetricSummary>, n_slides: usize, n_runs: usize) -> AggregateMetrics {
    AggregateMetrics {
        precision: summaries[0],
        recall: summaries[1],
        specificity: summaries[2],
        auroc: summaries[3],
        mcc: summaries[4],
        n_slides,
        n_runs,
    }
}

/// Averages each metric over the slides where it is defined.
pub fn aggregate(slides: &[SlideMetrics]) -> Result<AggregateMetrics> {
    if slides.is_empty() {
        return Err(Error::InvalidArgument(
            "aggregate needs at least one slide".into(),
        ));
    }
    let summaries = GETTERS
        .iter()
        .map(|get| MetricSummary::from_values(slides.iter().map(get)))
        .collect();
    Ok(build(summaries, slides.len(), 1))
}

/// Across-seed summary: each run is first averaged over its slides, then
/// the per-run means are summarised (mean ± sample std over runs).
pub fn aggregate_seeds(runs: &[Vec<SlideMetrics>]) -> Result<AggregateMetrics> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument(
            "aggregate needs at least one run".into(),
        ));
    }
    let per_run = runs
        .iter()
        .map(|r| aggregate(r))
        .collect::<Result<Vec<_>>>()?;
    let pick: [fn(&AggregateMetrics) -> Option<f64>; 5] = [
        |a| a.precision.mean,
        |a| a.recall.mean,
        |a| a.specificity.mean,
        |a| a.auroc.mean,
        |a| a.mcc.mean,
    ];
    let summaries = pick
        .iter()
        .map(|get| MetricSummary::from_values(per_run.iter().map(get)))
        .collect();
    Ok(build(summaries, runs[0].len(), runs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ConfusionCounts;

    fn slide(mcc: Option<f64>, recall: Option<f64>) -> SlideMetrics {
        SlideMetrics {
            slide_id: "s".into(),
            precision: Some(0.5),
            recall,
            specificity: Some(1.0),
            mcc,
            auroc: Some(0.9),
            confusion: ConfusionCounts::default(),
        }
    }

    #[test]
    fn identical_slides_have_zero_std() {
        let a = aggregate(&vec![slide(Some(0.7), Some(0.6)); 4]).unwrap();
        assert_eq!(a.mcc.mean, Some(0.7));
        assert_eq!(a.mcc.std, Some(0.0));
        assert_eq!(a.mcc.n, 4);
    }

    #[test]
    fn single_slide_mean() {
        let a = aggregate(&[slide(Some(0.3), None)]).unwrap();
        assert_eq!(a.mcc.mean, Some(0.3));
        assert_eq!(
            a.recall,
            MetricSummary {
                mean: None,
                std: None,
                n: 0
            }
        );
    }

    #[test]
    fn hand_computed_three_slides() {
        let a = aggregate(&[
            slide(Some(0.2), Some(1.0)),
            slide(Some(0.4), None),
            slide(Some(0.9), Some(0.5)),
        ])
        .unwrap();
        // mean 0.5, deviations -0.3, -0.1, 0.4 -> var = 0.26 / 2
        assert!((a.mcc.mean.unwrap() - 0.5).abs() < 1e-15);
        assert!((a.mcc.std.unwrap() - 0.13f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.recall.n, 2);
        assert_eq!(a.recall.mean, Some(0.75));
    }

    #[test]
    fn seeds_average_run_means() {
        let runs = vec![
            vec![slide(Some(0.2), None), slide(Some(0.4), None)],
            vec![slide(Some(0.5), None), slide(Some(0.7), None)],
        ];
        let a = aggregate_seeds(&runs).unwrap();
        assert!((a.mcc.mean.unwrap() - 0.45).abs() < 1e-15);
        assert!((a.mcc.std.unwrap() - (0.045f64).sqrt()).abs() < 1e-15);
        assert_eq!((a.n_runs, a.n_slides), (2, 2));
        assert!(aggregate(&[]).is_err());
    }
}
