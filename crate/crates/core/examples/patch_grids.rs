//! Builds the four aligned patch grids of a slide and shows how each 5×
//! cell covers 8×8 cells at 40×.

use tumormap::grid::{build_grid, filter_by_tissue, Magnification, DEFAULT_TAU};
use tumormap::synth::{generate_synthetic_slide, SynthConfig};
use tumormap::tissue::{segment_tissue, SegmentOptions};

fn main() -> tumormap::Result<()> {
    let slide = generate_synthetic_slide(&SynthConfig {
        seed: 11,
        ..SynthConfig::default()
    })?;
    let p = &slide.pyramid;
    let mask = segment_tissue(p, &SegmentOptions::default())?.mask;

    for mag in Magnification::ALL {
        let grid = filter_by_tissue(
            &build_grid(&p.slide_id, p.width(), p.height(), mag)?,
            &mask,
            DEFAULT_TAU,
        )?;
        println!(
            "{:>2}x: patch {:>4} px, {:>2}x{:<2} cells, {:>4} in tissue",
            mag.value(),
            mag.patch_size(),
            grid.cols(),
            grid.rows(),
            grid.tissue_count()
        );
    }

    let coarse = build_grid(&p.slide_id, p.width(), p.height(), Magnification::X5)?;
    let fine = build_grid(&p.slide_id, p.width(), p.height(), Magnification::X40)?;
    let r = coarse.cell_rect(coarse.index(1, 2));
    let first = fine.cell_rect(fine.index(8, 16));
    let last = fine.cell_rect(fine.index(15, 23));
    println!("5x cell (1,2) = {r:?}");
    println!("  spans 40x cells (8,16) {first:?} .. (15,23) {last:?}");
    Ok(())
}
