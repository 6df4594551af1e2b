//! Deterministic synthetic slides with ground truth.
//!
//! A slide is a white background with optional dark-grey speckle noise,
//! a few pink textured tissue blobs, and purple tumor regions placed inside
//! the blobs. The geometry ([`SlideLayout`]) is generated first and can be
//! used on its own; [`SlideLayout::render`] paints the pixels.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annot::{AnnotationSet, Region};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::pyramid::{PyramidImage, RgbImage};

/// Normal tissue, hue ≈ 322°.
pub const TISSUE_RGB: [u8; 3] = [230, 150, 200];
/// Tumor tissue, hue ≈ 258°.
pub const TUMOR_RGB: [u8; 3] = [120, 80, 210];

const BLOB_VERTICES: usize = 128;
const TUMOR_VERTICES: usize = 48;
const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Defaults to `synth-<seed>`.
    pub slide_id: Option<String>,
    pub width: u32,
    pub height: u32,
    pub tissue_blob_count: u32,
    pub tumor_region_count: u32,
    pub tumor_diameter_range_um: (f64, f64),
    /// Probability that a background pixel is a dark-grey speckle.
    pub dark_noise_speckle_density: f64,
    /// Minimum gap between tumor bounding boxes.
    pub tumor_gap_um: f64,
    pub microns_per_pixel: f64,
    pub base_magnification: f64,
    pub downsamples: Vec<u32>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            slide_id: None,
            width: 10240,
            height: 10240,
            tissue_blob_count: 2,
            tumor_region_count: 3,
            tumor_diameter_range_um: (100.0, 600.0),
            dark_noise_speckle_density: 0.0,
            tumor_gap_um: 128.0,
            microns_per_pixel: 0.25,
            base_magnification: 40.0,
            downsamples: vec![1, 4, 16, 32],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn slide_id(&self) -> String {
        self.slide_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}", self.seed))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("slide dimensions must be positive");
        }
        if self.tumor_region_count > 0 && self.tissue_blob_count == 0 {
            return bad("tumor regions need at least one tissue blob");
        }
        let (lo, hi) = self.tumor_diameter_range_um;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("tumor diameter range must satisfy 0 < min <= max");
        }
        if !(0.0..=1.0).contains(&self.dark_noise_speckle_density) {
            return bad("speckle density must lie in [0, 1]");
        }
        if !(self.microns_per_pixel > 0.0) {
            return bad("microns_per_pixel must be positive");
        }
        if self.tumor_gap_um < 0.0 {
            return bad("tumor gap must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: Point,
    /// Smallest vertex radius.
    pub inner_radius: f64,
    pub polygon: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tumor {
    pub blob: usize,
    pub center: Point,
    pub diameter_um: f64,
    pub polygon: Vec<Point>,
}

/// Pixel classes painted by the renderer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Speckle,
    Tissue,
    Tumor,
}

/// Geometry of a synthetic slide, in level-0 pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideLayout {
    pub config: SynthConfig,
    pub blobs: Vec<Blob>,
    pub tumors: Vec<Tumor>,
}

/// Output of [`generate_synthetic_slide`].
#[derive(Clone, Debug)]
pub struct SyntheticSlide {
    pub pyramid: PyramidImage,
    pub annotations: AnnotationSet,
    pub layout: SlideLayout,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn pixel_hash(seed: u64, salt: u64, x: u32, y: u32) -> u64 {
    splitmix64(seed ^ splitmix64(salt ^ ((y as u64) << 32 | x as u64)))
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn star_polygon(center: Point, radius: f64, n: usize, harmonics: &[(f64, f64, f64)]) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let wobble: f64 = harmonics
                .iter()
                .map(|&(k, a, ph)| a * (k * t + ph).cos())
                .sum();
            let r = radius * (1.0 + wobble);
            [center[0] + r * t.cos(), center[1] + r * t.sin()]
        })
        .collect()
}

/// Blob boundary harmonics `(frequency, maximum amplitude)`.
const BLOB_WOBBLE: [(f64, f64); 3] = [(2.0, 0.07), (3.0, 0.05), (5.0, 0.03)];
const TUMOR_WOBBLE: [(f64, f64); 2] = [(3.0, 0.08), (5.0, 0.05)];
const LAYOUT_ATTEMPTS: u64 = 64;

/// Fraction of a blob's nominal radius whose disc lies inside the blob.
fn blob_safe_fraction() -> f64 {
    let wobble: f64 = BLOB_WOBBLE.iter().map(|h| h.1).sum();
    0.99 * (1.0 - wobble) * (PI / BLOB_VERTICES as f64).cos()
}

struct TumorShape {
    diameter_um: f64,
    /// Centred on the origin.
    shape: Vec<Point>,
    reach: f64,
}

fn random_harmonics(rng: &mut ChaCha8Rng, spec: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    spec.iter()
        .map(|&(k, amp)| {
            (
                k,
                amp * rng.random::<f64>(),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect()
}

/// Builds the geometry for `cfg`. Pure function of the config.
///
/// Tumor shapes are drawn first and dealt round-robin to the blobs; each
/// blob is made large enough to hold its tumors side by side. Placement is
/// by rejection sampling, and a layout that fails is redrawn from a derived
/// seed, so the result stays deterministic.
pub fn generate_layout(cfg: &SynthConfig) -> Result<SlideLayout> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mpp = cfg.microns_per_pixel;
    let shapes: Vec<TumorShape> = (0..cfg.tumor_region_count)
        .map(|_| {
            let (lo, hi) = cfg.tumor_diameter_range_um;
            let diameter_um = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            let harmonics = random_harmonics(&mut rng, &TUMOR_WOBBLE);
            let unit_shape = star_polygon([0.0, 0.0], 1.0, TUMOR_VERTICES, &harmonics);
            let scale = diameter_um / mpp / geometry::max_vertex_distance(&unit_shape);
            let shape: Vec<Point> = unit_shape
                .iter()
                .map(|p| [p[0] * scale, p[1] * scale])
                .collect();
            let reach = shape.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
            TumorShape {
                diameter_um,
                shape,
                reach,
            }
        })
        .collect();

    let blobs = cfg.tissue_blob_count as usize;
    let max_r = 0.45 * cfg.width.min(cfg.height) as f64;
    let gap_px = cfg.tumor_gap_um / mpp;
    let need: Vec<f64> = (0..blobs)
        .map(|k| {
            let mine: Vec<&TumorShape> = shapes.iter().skip(k).step_by(blobs).collect();
            let row: f64 = mine.iter().map(|t| 2.0 * t.reach).sum::<f64>()
                + gap_px * mine.len().saturating_sub(1) as f64;
            0.5 * row / blob_safe_fraction()
        })
        .collect();
    if need.iter().any(|&r| r > max_r) {
        return Err(Error::Config(format!(
            "tumors up to {} um do not fit inside {} tissue blobs on a {}x{} slide",
            cfg.tumor_diameter_range_um.1, blobs, cfg.width, cfg.height
        )));
    }
    for attempt in 0..LAYOUT_ATTEMPTS {
        let mut arng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ splitmix64(attempt)));
        if let Some(layout) = try_layout(cfg, &shapes, &need, &mut arng) {
            return Ok(layout);
        }
    }
    Err(Error::Config(format!(
        "could not place {} tumors {} um apart in {} layouts; use fewer or smaller tumors",
        shapes.len(),
        cfg.tumor_gap_um,
        LAYOUT_ATTEMPTS
    )))
}

fn try_layout(
    cfg: &SynthConfig,
    shapes: &[TumorShape],
    need: &[f64],
    rng: &mut ChaCha8Rng,
) -> Option<SlideLayout> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let min_side = w.min(h);
    let max_r = 0.45 * min_side;
    let outer: f64 = 1.0 + BLOB_WOBBLE.iter().map(|h| h.1).sum::<f64>();
    let safe = blob_safe_fraction();

    let mut blobs = Vec::with_capacity(need.len());
    let mut radii = Vec::with_capacity(need.len());
    for &n in need {
        let lo = (1.2 * n).max(0.18 * min_side).min(max_r);
        let radius = rng.random_range(lo..=max_r);
        let reach = (outer * radius).min(0.5 * min_side);
        let cx = rng.random_range(reach..=(w - reach).max(reach));
        let cy = rng.random_range(reach..=(h - reach).max(reach));
        let harmonics = random_harmonics(rng, &BLOB_WOBBLE);
        let polygon = star_polygon([cx, cy], radius, BLOB_VERTICES, &harmonics);
        let inner_radius = polygon
            .iter()
            .map(|p| (p[0] - cx).hypot(p[1] - cy))
            .fold(f64::INFINITY, f64::min);
        blobs.push(Blob {
            center: [cx, cy],
            inner_radius,
            polygon,
        });
        radii.push(radius);
    }

    let gap_px = cfg.tumor_gap_um / cfg.microns_per_pixel;
    let mut tumors: Vec<Tumor> = Vec::with_capacity(shapes.len());
    for (i, t) in shapes.iter().enumerate() {
        let b = i % blobs.len();
        let room = safe * radii[b] - t.reach;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (ang, rad) = (
                rng.random_range(0.0..2.0 * PI),
                room * rng.random::<f64>().sqrt(),
            );
            let c = [
                blobs[b].center[0] + rad * ang.cos(),
                blobs[b].center[1] + rad * ang.sin(),
            ];
            let poly: Vec<Point> = t.shape.iter().map(|p| [p[0] + c[0], p[1] + c[1]]).collect();
            let bb = geometry::bounding_box(&poly);
            if bb.x0 < 0.0 || bb.y0 < 0.0 || bb.x1 > w || bb.y1 > h {
                continue;
            }
            let clear = tumors.iter().all(|o| {
                let o = geometry::bounding_box(&o.polygon);
                bb.x0 - o.x1 >= gap_px
                    || o.x0 - bb.x1 >= gap_px
                    || bb.y0 - o.y1 >= gap_px
                    || o.y0 - bb.y1 >= gap_px
            });
            if clear {
                placed = Some(Tumor {
                    blob: b,
                    center: c,
                    diameter_um: t.diameter_um,
                    polygon: poly,
                });
                break;
            }
        }
        tumors.push(placed?);
    }
    Some(SlideLayout {
        config: cfg.clone(),
        blobs,
        tumors,
    })
}

fn fill_spans(polys: &[&[Point]], y: f64, width: u32, row: &mut [bool], xs: &mut Vec<f64>) {
    for poly in polys {
        geometry::scanline_crossings(poly, y, xs);
        for pair in xs.chunks_exact(2) {
            // pixel x is inside when its center x + 0.5 lies in [a, b)
            let a = (pair[0] - 0.5).ceil().max(0.0) as u32;
            let b = ((pair[1] - 0.5).ceil().max(0.0) as u32).min(width);
            for v in row.iter_mut().take(b as usize).skip(a as usize) {
                *v = true;
            }
        }
    }
}

impl SlideLayout {
    pub fn slide_id(&self) -> String {
        self.config.slide_id()
    }

    pub fn annotations(&self) -> AnnotationSet {
        AnnotationSet {
            slide_id: self.slide_id(),
            regions: self
                .tumors
                .iter()
                .enumerate()
                .map(|(i, t)| Region {
                    region_id: i as u32,
                    polygon: t.polygon.clone(),
                })
                .collect(),
        }
    }

    /// Tissue blobs as an annotation-style polygon set (for geometric
    /// tissue fractions without rendering).
    pub fn tissue_regions(&self) -> AnnotationSet {
        AnnotationSet {
            slide_id: self.slide_id(),
            regions: self
                .blobs
                .iter()
                .enumerate()
                .map(|(i, b)| Region {
                    region_id: i as u32,
                    polygon: b.polygon.clone(),
                })
                .collect(),
        }
    }

    /// Class of every pixel in row `y`.
    pub fn classify_row(&self, y: u32) -> Vec<PixelClass> {
        let w = self.config.width;
        let yc = y as f64 + 0.5;
        let mut xs = Vec::new();
        let mut tissue = vec![false; w as usize];
        let mut tumor = vec![false; w as usize];
        let blob_polys: Vec<&[Point]> = self.blobs.iter().map(|b| b.polygon.as_slice()).collect();
        let tumor_polys: Vec<&[Point]> = self.tumors.iter().map(|t| t.polygon.as_slice()).collect();
        fill_spans(&blob_polys, yc, w, &mut tissue, &mut xs);
        fill_spans(&tumor_polys, yc, w, &mut tumor, &mut xs);
        let density = self.config.dark_noise_speckle_density;
        (0..w)
            .map(|x| {
                if tumor[x as usize] {
                    PixelClass::Tumor
                } else if tissue[x as usize] {
                    PixelClass::Tissue
                } else if density > 0.0 && unit(pixel_hash(self.config.seed, 1, x, y)) < density {
                    PixelClass::Speckle
                } else {
                    PixelClass::Background
                }
            })
            .collect()
    }

    /// Level-0 class raster, row-major.
    pub fn class_map(&self) -> Vec<PixelClass> {
        (0..self.config.height)
            .into_par_iter()
            .flat_map_iter(|y| self.classify_row(y))
            .collect()
    }

    fn paint(&self, class: PixelClass, x: u32, y: u32) -> [u8; 3] {
        let seed = self.config.seed;
        match class {
            PixelClass::Background => [255, 255, 255],
            PixelClass::Speckle => {
                let hsh = pixel_hash(seed, 2, x, y);
                let grey = 20 + (hsh % 41) as i32;
                let j = |k: u32| ((hsh >> (8 + 8 * k)) % 11) as i32 - 5;
                [
                    (grey + j(0)) as u8,
                    (grey + j(1)) as u8,
                    (grey + j(2)) as u8,
                ]
            }
            PixelClass::Tissue | PixelClass::Tumor => {
                let base = if class == PixelClass::Tumor {
                    TUMOR_RGB
                } else {
                    TISSUE_RGB
                };
                // 8x8-block luminance texture plus per-pixel jitter
                let block = unit(pixel_hash(seed, 3, x / 8, y / 8));
                let lum = 0.82 + 0.2 * block;
                let hsh = pixel_hash(seed, 4, x, y);
                let mut out = [0u8; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    let jitter = ((hsh >> (16 * c)) % 13) as f64 - 6.0;
                    *o = (base[c] as f64 * lum + jitter).round().clamp(0.0, 255.0) as u8;
                }
                out
            }
        }
    }

    /// Paints the level-0 raster and builds the configured pyramid levels.
    pub fn render(&self) -> Result<PyramidImage> {
        let (w, h) = (self.config.width, self.config.height);
        let mut img = RgbImage::new(w, h);
        img.data
            .par_chunks_mut(w as usize * 3)
            .enumerate()
            .for_each(|(y, row)| {
                let y = y as u32;
                for (x, class) in self.classify_row(y).into_iter().enumerate() {
                    let px = self.paint(class, x as u32, y);
                    row[x * 3..x * 3 + 3].copy_from_slice(&px);
                }
            });
        PyramidImage::from_level0(
            self.slide_id(),
            self.config.base_magnification,
            self.config.microns_per_pixel,
            img,
            &self.config.downsamples,
        )
    }
}

/// Generates a slide and its tumor annotations. Deterministic in `cfg`.
pub fn generate_synthetic_slide(cfg: &SynthConfig) -> Result<SyntheticSlide> {
    let layout = generate_layout(cfg)?;
    let pyramid = layout.render()?;
    Ok(SyntheticSlide {
        pyramid,
        annotations: layout.annotations(),
        layout,
    })
}

/// Hue in degrees of an RGB triple.
pub fn hue_degrees([r, g, b]: [u8; 3]) -> f64 {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    60.0 * h
}
