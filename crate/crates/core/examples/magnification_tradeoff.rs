//! Detection of small metastases by a fraction-threshold model at each
//! magnification. Coarse patches dilute a small tumor below the threshold.

use tumormap::annot::{rasterize_labels, tumor_fractions};
use tumormap::ensemble::{binarize, upsample_to_finest};
use tumormap::grid::{build_grid, Magnification};
use tumormap::metrics::{detection_rate, find_regions, SizeThresholds};
use tumormap::stubs::{run_stub, StubInputs, StubKind, StubSpec};
use tumormap::synth::{generate_layout, SynthConfig};

fn main() -> tumormap::Result<()> {
    let layout = generate_layout(&SynthConfig {
        tumor_region_count: 4,
        tumor_diameter_range_um: (250.0, 450.0),
        tumor_gap_um: 600.0,
        seed: 9,
        ..SynthConfig::default()
    })?;
    let set = layout.annotations();
    let cfg = &layout.config;
    let fine = build_grid(&set.slide_id, cfg.width, cfg.height, Magnification::X40)?;
    let regions = find_regions(
        &rasterize_labels(&set, &fine, 0.0)?,
        cfg.microns_per_pixel,
        &SizeThresholds::default(),
    )?;

    for mag in Magnification::ALL {
        let grid = build_grid(&set.slide_id, cfg.width, cfg.height, mag)?;
        let f = tumor_fractions(&set, &grid)?;
        let inputs = StubInputs {
            tumor_fractions: Some(&f),
            ..Default::default()
        };
        let map = run_stub(
            &StubSpec::new(StubKind::FractionThreshold { theta: 0.5 }, 0),
            &grid,
            inputs,
        )?;
        let up = upsample_to_finest(&map, fine.dims)?;
        let rates = detection_rate(&regions, &binarize(&up.scores, 0.5));
        println!(
            "{:>2}x: micro {}/{}  macro {}/{}",
            mag.value(),
            rates.micro.detected,
            rates.micro.total,
            rates.macro_.detected,
            rates.macro_.total
        );
    }
    Ok(())
}
