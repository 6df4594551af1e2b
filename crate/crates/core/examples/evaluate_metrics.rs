//! Evaluates noisy-oracle maps of increasing flip rate and compares the
//! two extremes with Welch's t-test over slides.

use tumormap::metrics::{aggregate, welch_t};
use tumormap::pipeline::{evaluate_scores, prepare_slide, PipelineConfig};
use tumormap::stubs::{run_stub, StubInputs, StubKind, StubSpec};
use tumormap::synth::{generate_synthetic_slide, SynthConfig};

fn main() -> tumormap::Result<()> {
    let cfg = PipelineConfig::default();
    let prepared = (0..4)
        .map(|seed| {
            let s = generate_synthetic_slide(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })?;
            prepare_slide(&s.pyramid, &s.annotations, &cfg)
        })
        .collect::<tumormap::Result<Vec<_>>>()?;

    let mut per_flip = Vec::new();
    for flip_p in [0.0, 0.05, 0.2] {
        let slides = prepared
            .iter()
            .map(|p| {
                let kind = StubKind::NoisyOracle {
                    flip_p,
                    score_noise_sd: 0.1,
                    error_support: None,
                };
                let inputs = StubInputs {
                    labels: Some(p.finest_labels()),
                    ..Default::default()
                };
                let map = run_stub(&StubSpec::new(kind, 1), p.finest_grid(), inputs)?;
                Ok(evaluate_scores(p, &map.scores, &cfg)?.metrics)
            })
            .collect::<tumormap::Result<Vec<_>>>()?;
        let agg = aggregate(&slides)?;
        println!(
            "flip {flip_p:.2}: mcc {:.3} auroc {:.3}",
            agg.mcc.mean.unwrap_or(f64::NAN),
            agg.auroc.mean.unwrap_or(f64::NAN)
        );
        per_flip.push(slides.iter().filter_map(|m| m.mcc).collect::<Vec<_>>());
    }
    let w = welch_t(&per_flip[0], &per_flip[2])?;
    println!(
        "welch flip 0 vs 0.2: t = {:.2}, df = {:.1}, p = {:.2e}",
        w.t, w.df, w.p
    );
    Ok(())
}
