//! Fuses oracle maps from all four magnifications on the 40× grid and
//! prints the fused score levels around one tumor.

use tumormap::ensemble::fuse_magnifications;
use tumormap::grid::Magnification;
use tumormap::pipeline::{prepare_slide, PipelineConfig};
use tumormap::stubs::{run_stub, StubInputs, StubKind, StubSpec};
use tumormap::synth::{generate_synthetic_slide, SynthConfig};

fn main() -> tumormap::Result<()> {
    let slide = generate_synthetic_slide(&SynthConfig {
        seed: 2,
        ..SynthConfig::default()
    })?;
    let prepared = prepare_slide(
        &slide.pyramid,
        &slide.annotations,
        &PipelineConfig::default(),
    )?;

    let members = Magnification::ALL
        .iter()
        .map(|mag| {
            let inputs = StubInputs {
                labels: Some(&prepared.clean[mag]),
                ..Default::default()
            };
            run_stub(
                &StubSpec::new(StubKind::Oracle, 0),
                &prepared.grids[mag],
                inputs,
            )
        })
        .collect::<tumormap::Result<Vec<_>>>()?;
    let fused = fuse_magnifications(&members, prepared.finest_grid().dims)?;

    let mut levels = std::collections::BTreeMap::new();
    for &s in &fused.scores {
        *levels.entry((s * 4.0) as u32).or_insert(0usize) += 1;
    }
    println!("members: {}", fused.members.join(", "));
    for (k, n) in levels {
        println!("  score {:.2}: {n} cells", k as f64 / 4.0);
    }
    Ok(())
}
