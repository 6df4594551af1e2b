use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tumormap::annot::{build_dataset, rasterize_labels, tumor_fractions};
use tumormap::geometry::{clipped_area, Rect};
use tumormap::grid::{build_grid, export_patches, extract_patch, filter_by_tissue, Magnification};
use tumormap::metrics::auroc;
use tumormap::pyramid::{load_pyramid, save_pyramid, PyramidImage, RgbImage};
use tumormap::stubs::{run_stub, StubInputs, StubKind, StubSpec};
use tumormap::synth::{generate_layout, generate_synthetic_slide, PixelClass, SynthConfig};
use tumormap::tissue::{segment_tissue, SegmentOptions};

fn small_slide(seed: u64) -> SynthConfig {
    SynthConfig {
        width: 2048,
        height: 1536,
        tumor_region_count: 2,
        tumor_diameter_range_um: (40.0, 100.0),
        tumor_gap_um: 32.0,
        dark_noise_speckle_density: 0.01,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_slide_survives_disk_round_trip() {
    let slide = generate_synthetic_slide(&small_slide(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_pyramid(&slide.pyramid, dir.path()).unwrap();
    let back = load_pyramid(dir.path()).unwrap();
    assert_eq!(back, slide.pyramid);
}

#[test]
fn read_region_matches_brute_force_block_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (700u32, 530u32);
    let data: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
    let img = RgbImage::from_raw(w, h, data).unwrap();
    let p = PyramidImage::from_level0("s", 40.0, 0.25, img.clone(), &[1, 2, 4]).unwrap();
    for _ in 0..6 {
        let side = 256 * rng.random_range(1..=3u32);
        let (x, y) = (
            rng.random_range(-400..700i64),
            rng.random_range(-400..530i64),
        );
        let patch = p.read_region(x, y, side).unwrap();
        let f = (side / 256) as i64;
        for _ in 0..200 {
            let (ox, oy) = (rng.random_range(0..256i64), rng.random_range(0..256i64));
            let mut sum = [0u64; 3];
            for sy in y + oy * f..y + (oy + 1) * f {
                for sx in x + ox * f..x + (ox + 1) * f {
                    let px = if (0..w as i64).contains(&sx) && (0..h as i64).contains(&sy) {
                        img.pixel(sx as u32, sy as u32)
                    } else {
                        [255; 3]
                    };
                    for c in 0..3 {
                        sum[c] += px[c] as u64;
                    }
                }
            }
            let n = (f * f) as f64;
            let want = sum.map(|s| (s as f64 / n + 0.5).floor() as u8);
            assert_eq!(
                patch.pixel(ox as u32, oy as u32),
                want,
                "region ({x},{y}) side {side} at ({ox},{oy})"
            );
        }
    }
}

#[test]
fn colorization_mask_hugs_the_blobs() {
    let cfg = SynthConfig {
        dark_noise_speckle_density: 0.0,
        ..small_slide(21)
    };
    let slide = generate_synthetic_slide(&cfg).unwrap();
    let classes = slide.layout.class_map();
    let opts = SegmentOptions {
        level: Some(0),
        ..SegmentOptions::default()
    };
    let mask = segment_tissue(&slide.pyramid, &opts).unwrap().mask;
    let (w, h) = (cfg.width as i64, cfg.height as i64);
    let is_tissue = |x: i64, y: i64| {
        (0..w).contains(&x)
            && (0..h).contains(&y)
            && matches!(
                classes[(y * w + x) as usize],
                PixelClass::Tissue | PixelClass::Tumor
            )
    };
    let (mut tissue, mut covered, mut stray) = (0usize, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let m = mask.bits[(y * w + x) as usize];
            if is_tissue(x, y) {
                tissue += 1;
                covered += m as usize;
            } else if m && !(-2..=2).any(|dy| (-2..=2).any(|dx| is_tissue(x + dx, y + dy))) {
                stray += 1;
            }
        }
    }
    assert!(covered as f64 >= 0.99 * tissue as f64, "{covered}/{tissue}");
    assert_eq!(stray, 0);
}

#[test]
fn right_triangle_clip_matches_raster() {
    const N: usize = 1024;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cell = Rect::new(0.0, 0.0, 1.0, 1.0);
    for _ in 0..5 {
        let (x0, y0) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let (a, b) = (rng.random_range(0.6..2.0), rng.random_range(0.6..2.0));
        // legs along the axes from (x0, y0)
        let tri = [[x0, y0], [x0 + a, y0], [x0, y0 + b]];
        let exact = clipped_area(&tri, &cell);
        let mut inside = 0usize;
        for i in 0..N {
            for j in 0..N {
                let (px, py) = ((j as f64 + 0.5) / N as f64, (i as f64 + 0.5) / N as f64);
                if px >= x0 && py >= y0 && (px - x0) / a + (py - y0) / b <= 1.0 {
                    inside += 1;
                }
            }
        }
        let raster = inside as f64 / (N * N) as f64;
        assert!(
            (exact - raster).abs() <= 0.01 * raster.max(1e-9),
            "{exact} vs {raster}"
        );
    }
}

#[test]
fn wide_slide_grid_has_a_clipped_edge_column() {
    let g = build_grid("s", 10300, 10240, Magnification::X40).unwrap();
    assert_eq!((g.cols(), g.rows()), (41, 40));
    let last = g.cell_rect(g.index(0, 40));
    assert_eq!((last.x0, last.x1), (10240.0, 10496.0));
}

#[test]
fn fraction_threshold_sees_small_tumors_only_when_magnified() {
    let layout = generate_layout(&SynthConfig {
        tumor_region_count: 1,
        tumor_diameter_range_um: (300.0, 300.0),
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let set = layout.annotations();
    let (w, h) = (layout.config.width, layout.config.height);
    let positives = |mag| {
        let g = build_grid(set.slide_id.clone(), w, h, mag).unwrap();
        let f = tumor_fractions(&set, &g).unwrap();
        let inputs = StubInputs {
            tumor_fractions: Some(&f),
            ..Default::default()
        };
        let m = run_stub(
            &StubSpec::new(StubKind::FractionThreshold { theta: 0.5 }, 0),
            &g,
            inputs,
        )
        .unwrap();
        m.scores.iter().filter(|&&s| s == 1.0).count()
    };
    assert!(positives(Magnification::X40) > 0);
    assert_eq!(positives(Magnification::X5), 0);
}

#[test]
fn noisy_oracle_auroc_falls_with_flip_rate() {
    let layout = generate_layout(&SynthConfig {
        seed: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let set = layout.annotations();
    let g = build_grid(
        set.slide_id.clone(),
        layout.config.width,
        layout.config.height,
        Magnification::X40,
    )
    .unwrap();
    let labels = rasterize_labels(&set, &g, 0.0).unwrap();
    let seeds = 20u64;
    let stats: Vec<(f64, f64)> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&flip_p| {
            let values: Vec<f64> = (0..seeds)
                .map(|seed| {
                    let kind = StubKind::NoisyOracle {
                        flip_p,
                        score_noise_sd: 0.05,
                        error_support: None,
                    };
                    let inputs = StubInputs {
                        labels: Some(&labels),
                        ..Default::default()
                    };
                    let m = run_stub(&StubSpec::new(kind, seed), &g, inputs).unwrap();
                    auroc(&m.scores_f64(), &labels.labels).unwrap()
                })
                .collect();
            let mean = values.iter().sum::<f64>() / seeds as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
            (mean, (var / seeds as f64).sqrt())
        })
        .collect();
    for w in stats.windows(2) {
        let band = 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 <= w[0].0 + band, "{stats:?}");
    }
    assert!(stats[0].0 - stats[5].0 > 0.4, "{stats:?}");
}

#[test]
fn exported_patches_match_extraction_and_dataset_balances() {
    let slide = generate_synthetic_slide(&small_slide(5)).unwrap();
    let mask = segment_tissue(&slide.pyramid, &SegmentOptions::default())
        .unwrap()
        .mask;
    let g = build_grid(
        slide.pyramid.slide_id.clone(),
        2048,
        1536,
        Magnification::X40,
    )
    .unwrap();
    let g = filter_by_tissue(&g, &mask, 0.25).unwrap();
    let labels = rasterize_labels(&slide.annotations, &g, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let n = export_patches(&slide.pyramid, &g, Some(&labels.labels), dir.path()).unwrap();
    assert_eq!(n, g.tissue_count());
    let i = g.in_tissue.iter().position(|&t| t).unwrap();
    let (r, c) = g.row_col(i);
    let bytes = std::fs::read(dir.path().join(format!("patch_{r}_{c}.ppm"))).unwrap();
    let patch = extract_patch(&slide.pyramid, &g, i).unwrap();
    assert!(bytes.ends_with(&patch.data));

    let ds = build_dataset(&[(&g, &labels)], true, 1).unwrap();
    assert_eq!(ds.positives, ds.negatives.min(ds.positives));
    assert!(ds.entries.iter().all(|e| g.in_tissue[e.index]));
}
