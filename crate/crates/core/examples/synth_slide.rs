//! Generates one synthetic slide and writes it as a pyramid directory.
//!
//! cargo run --release --example synth_slide -- [out_dir] [seed]

use tumormap::annot::save_annotations;
use tumormap::pyramid::save_pyramid;
use tumormap::synth::{generate_synthetic_slide, SynthConfig};

fn main() -> tumormap::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth-slide".into());
    let seed = args
        .next()
        .map_or(7, |s| s.parse().expect("seed must be an integer"));

    let slide = generate_synthetic_slide(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let dir = std::path::Path::new(&out);
    save_pyramid(&slide.pyramid, dir)?;
    save_annotations(&slide.annotations, &dir.join("annotations.json"))?;

    println!("{} -> {}", slide.pyramid.slide_id, dir.display());
    for l in &slide.pyramid.levels {
        println!(
            "  level downsample {:>2}: {}x{}",
            l.downsample, l.image.width, l.image.height
        );
    }
    for r in &slide.annotations.regions {
        println!("  tumor {} with {} vertices", r.region_id, r.polygon.len());
    }
    Ok(())
}
