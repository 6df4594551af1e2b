//! Turns clean labels into coarse annotations: tumor regions grow by a cell
//! margin and some regions are dropped entirely.

use tumormap::annot::{apply_noise, rasterize_labels, NoiseConfig};
use tumormap::grid::{build_grid, Magnification};
use tumormap::synth::{generate_layout, SynthConfig};

fn main() -> tumormap::Result<()> {
    let layout = generate_layout(&SynthConfig {
        tumor_region_count: 6,
        tissue_blob_count: 3,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let set = layout.annotations();
    let cfg = &layout.config;
    let grid = build_grid(&set.slide_id, cfg.width, cfg.height, Magnification::X40)?;
    let clean = rasterize_labels(&set, &grid, 0.0)?;
    println!("clean: {} positive cells", clean.positives());

    for preset in ["weak", "strong"] {
        let noise = NoiseConfig::preset(preset, 1)?;
        let noisy = apply_noise(&clean, &noise)?;
        let kept = clean
            .labels
            .iter()
            .zip(&noisy.labels)
            .filter(|&(&c, &n)| c && n)
            .count();
        println!(
            "{preset:>6}: margin {} cells, eta {:.2} -> {} positive cells, {} of the clean ones kept",
            noise.margin_cells,
            noise.eta,
            noisy.positives(),
            kept
        );
    }
    Ok(())
}
