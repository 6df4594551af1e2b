//! Compares colorization and saturation segmentation on a slide with dark
//! background speckle. Colorization ignores grey pixels by construction.

use tumormap::synth::{generate_synthetic_slide, PixelClass, SynthConfig};
use tumormap::tissue::{segment_tissue, SegmentOptions, SegmentationMethod};

fn main() -> tumormap::Result<()> {
    let cfg = SynthConfig {
        width: 2048,
        height: 2048,
        tumor_diameter_range_um: (40.0, 120.0),
        tumor_gap_um: 32.0,
        dark_noise_speckle_density: 0.05,
        seed: 3,
        ..SynthConfig::default()
    };
    let slide = generate_synthetic_slide(&cfg)?;
    let classes = slide.layout.class_map();
    let speckle = classes
        .iter()
        .filter(|&&c| c == PixelClass::Speckle)
        .count();

    for method in [
        SegmentationMethod::Colorization,
        SegmentationMethod::Saturation,
    ] {
        let seg = segment_tissue(
            &slide.pyramid,
            &SegmentOptions {
                method,
                level: Some(0),
                ..SegmentOptions::default()
            },
        )?;
        let hit = classes
            .iter()
            .zip(&seg.mask.bits)
            .filter(|&(&c, &m)| m && c == PixelClass::Speckle)
            .count();
        println!(
            "{method:?}: threshold {}, {} mask pixels, speckle included {:.3}",
            seg.threshold,
            seg.mask.count(),
            hit as f64 / speckle.max(1) as f64
        );
    }
    Ok(())
}
