//! Unsupervised tissue segmentation.
//!
//! The colorization value `c(r,g,b) = |r-m| + |g-m| + |b-m|` with
//! `m = (r+g+b)/3` is zero on every shade of grey and large on stained
//! tissue, so an Otsu threshold on it separates tissue from both the white
//! background and dark-grey scanner noise. HSV saturation is kept as the
//! baseline it is compared against.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::pyramid::{PyramidImage, RgbImage};

/// Largest colorization value, reached by pure primaries such as (255,0,0).
pub const MAX_COLORIZATION: u16 = 340;

/// Colorization value rounded half up to an integer in `[0, 340]`.
///
/// Computed exactly: with `s = r+g+b`, `3c = |3r-s| + |3g-s| + |3b-s|`.
#[inline]
pub fn colorization_value([r, g, b]: [u8; 3]) -> u16 {
    let s = r as i32 + g as i32 + b as i32;
    let t = (3 * r as i32 - s).abs() + (3 * g as i32 - s).abs() + (3 * b as i32 - s).abs();
    // round(t / 3) half up == floor((2t + 3) / 6)
    ((2 * t + 3) / 6) as u16
}

/// HSV saturation scaled to `[0, 255]`, rounded half up; 0 for black.
#[inline]
pub fn saturation_value([r, g, b]: [u8; 3]) -> u16 {
    let max = r.max(g).max(b) as u32;
    let min = r.min(g).min(b) as u32;
    if max == 0 {
        return 0;
    }
    ((2 * 255 * (max - min) + max) / (2 * max)) as u16
}

/// Per-pixel scalar map with integer values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalarMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

impl ScalarMap {
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Histogram with `bins` bins; values beyond the last bin are clamped.
    pub fn histogram(&self, bins: usize) -> Vec<u64> {
        let mut h = vec![0u64; bins];
        for &v in &self.values {
            h[(v as usize).min(bins - 1)] += 1;
        }
        h
    }
}

fn map_pixels(image: &RgbImage, f: fn([u8; 3]) -> u16) -> ScalarMap {
    let values = image
        .data
        .par_chunks_exact(3)
        .map(|c| f([c[0], c[1], c[2]]))
        .collect();
    ScalarMap {
        width: image.width,
        height: image.height,
        values,
    }
}

pub fn colorization_map(image: &RgbImage) -> ScalarMap {
    map_pixels(image, colorization_value)
}

pub fn saturation_map(image: &RgbImage) -> ScalarMap {
    map_pixels(image, saturation_value)
}

/// Between-class variance of a split, kept as the exact fraction
/// `d² / (w0·w1)` with `d = s0·N − S·w0` (a positive multiple of the usual
/// `w0·w1·(m0−m1)²`).
#[derive(Clone, Copy, Debug)]
struct SplitScore {
    d: u128,
    den: u128,
}

impl SplitScore {
    const ZERO: SplitScore = SplitScore { d: 0, den: 1 };

    fn cmp(&self, other: &SplitScore) -> Ordering {
        let exact = self
            .d
            .checked_mul(self.d)
            .and_then(|a| a.checked_mul(other.den))
            .zip(
                other
                    .d
                    .checked_mul(other.d)
                    .and_then(|b| b.checked_mul(self.den)),
            );
        match exact {
            Some((a, b)) => a.cmp(&b),
            None => {
                let a = (self.d as f64).powi(2) / self.den as f64;
                let b = (other.d as f64).powi(2) / other.den as f64;
                a.total_cmp(&b)
            }
        }
    }
}

/// Otsu's threshold over a histogram.
///
/// Returns the `t` maximising the between-class variance of the split
/// `{bins ≤ t} | {bins > t}`, smallest `t` on ties. A histogram with a single
/// non-empty bin returns that bin. The usual histogram has 256 bins; any
/// non-empty length is accepted so that colorization maps (0..=340) can be
/// thresholded without rescaling.
pub fn otsu_threshold(hist: &[u64]) -> Result<usize> {
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "histogram has zero total count".into(),
        ));
    }
    let mut occupied = hist.iter().enumerate().filter(|(_, &c)| c > 0);
    let first = occupied.next().map(|(i, _)| i).unwrap();
    if occupied.next().is_none() {
        return Ok(first);
    }
    let sum_total: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();

    let mut best_t = 0usize;
    let mut best = SplitScore::ZERO;
    let (mut w0, mut s0) = (0u128, 0u128);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as u128;
        s0 += t as u128 * c as u128;
        let w1 = total - w0;
        let score = if w0 == 0 || w1 == 0 {
            SplitScore::ZERO
        } else {
            let (a, b) = (s0 * total, sum_total * w0);
            SplitScore {
                d: a.abs_diff(b),
                den: w0 * w1,
            }
        };
        if score.cmp(&best) == Ordering::Greater {
            best = score;
            best_t = t;
        }
    }
    Ok(best_t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMethod {
    Colorization,
    Saturation,
}

impl std::str::FromStr for SegmentationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colorization" => Ok(Self::Colorization),
            "saturation" => Ok(Self::Saturation),
            other => Err(Error::InvalidArgument(format!(
                "unknown segmentation method {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentOptions {
    pub method: SegmentationMethod,
    /// Pyramid level to segment; `None` picks the level with downsample 32
    /// (or the coarsest level below it).
    pub level: Option<usize>,
    /// Radius of an optional binary closing with a disk; 0 disables it.
    pub closing_radius: u32,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            method: SegmentationMethod::Colorization,
            level: None,
            closing_radius: 0,
        }
    }
}

/// Binary tissue raster at one pyramid level (`true` = tissue).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TissueMask {
    pub slide_id: String,
    pub level: usize,
    pub downsample: u32,
    pub width: u32,
    pub height: u32,
    pub level0_width: u32,
    pub level0_height: u32,
    pub bits: Vec<bool>,
}

impl TissueMask {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub mask: TissueMask,
    pub threshold: usize,
    /// Set when the map histogram had a single occupied bin (blank slide).
    pub degenerate: bool,
}

fn default_level(pyramid: &PyramidImage) -> usize {
    pyramid.level_with_downsample(32).unwrap_or_else(|| {
        pyramid
            .levels
            .iter()
            .rposition(|l| l.downsample <= 32)
            .unwrap_or(0)
    })
}

/// Thresholds the chosen map at Otsu's level; pixels strictly above it are tissue.
pub fn segment_tissue(pyramid: &PyramidImage, opts: &SegmentOptions) -> Result<Segmentation> {
    let level = opts.level.unwrap_or_else(|| default_level(pyramid));
    let lvl = pyramid.levels.get(level).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "level {level} does not exist (slide has {} levels)",
            pyramid.levels.len()
        ))
    })?;
    let (map, bins) = match opts.method {
        SegmentationMethod::Colorization => {
            (colorization_map(&lvl.image), MAX_COLORIZATION as usize + 1)
        }
        SegmentationMethod::Saturation => (saturation_map(&lvl.image), 256),
    };
    let hist = map.histogram(bins);
    let degenerate = hist.iter().filter(|&&c| c > 0).count() == 1;
    if degenerate {
        log::warn!(
            "slide {}: degenerate histogram, tissue mask is empty",
            pyramid.slide_id
        );
    }
    let threshold = otsu_threshold(&hist)?;
    let mut bits: Vec<bool> = map.values.iter().map(|&v| v as usize > threshold).collect();
    if opts.closing_radius > 0 {
        bits = binary_closing(&bits, map.width, map.height, opts.closing_radius);
    }
    Ok(Segmentation {
        mask: TissueMask {
            slide_id: pyramid.slide_id.clone(),
            level,
            downsample: lvl.downsample,
            width: map.width,
            height: map.height,
            level0_width: pyramid.width(),
            level0_height: pyramid.height(),
            bits,
        },
        threshold,
        degenerate,
    })
}

fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}

fn morph(bits: &[bool], w: u32, h: u32, offsets: &[(i64, i64)], dilate: bool) -> Vec<bool> {
    let (w, h) = (w as i64, h as i64);
    (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut hit = offsets.iter().map(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                // outside pixels are background
                nx >= 0 && ny >= 0 && nx < w && ny < h && bits[(ny * w + nx) as usize]
            });
            if dilate {
                hit.any(|b| b)
            } else {
                hit.all(|b| b)
            }
        })
        .collect()
}

/// Dilation followed by erosion with a disk of the given radius.
pub fn binary_closing(bits: &[bool], width: u32, height: u32, radius: u32) -> Vec<bool> {
    let offsets = disk_offsets(radius);
    let dilated = morph(bits, width, height, &offsets, true);
    morph(&dilated, width, height, &offsets, false)
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    slide_id: String,
    level: usize,
    width: u32,
    height: u32,
    downsample: u32,
    level0_width: u32,
    level0_height: u32,
}

/// Writes `mask.json` and `mask.bin` into `dir`.
pub fn save_mask(mask: &TissueMask, dir: &Path) -> Result<()> {
    io::create_dir(dir)?;
    io::write_json(
        &dir.join("mask.json"),
        &MaskHeader {
            slide_id: mask.slide_id.clone(),
            level: mask.level,
            width: mask.width,
            height: mask.height,
            downsample: mask.downsample,
            level0_width: mask.level0_width,
            level0_height: mask.level0_height,
        },
    )?;
    io::write_bitmap(&dir.join("mask.bin"), &mask.bits)
}

pub fn load_mask(dir: &Path) -> Result<TissueMask> {
    let h: MaskHeader = io::read_json(&dir.join("mask.json"))?;
    let bits = io::read_bitmap(&dir.join("mask.bin"), h.width as usize * h.height as usize)?;
    Ok(TissueMask {
        slide_id: h.slide_id,
        level: h.level,
        downsample: h.downsample,
        width: h.width,
        height: h.height,
        level0_width: h.level0_width,
        level0_height: h.level0_height,
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn colorization_examples() {
        assert_eq!(colorization_value([128, 128, 128]), 0);
        assert_eq!(colorization_value([255, 0, 0]), 340);
        assert_eq!(colorization_value([200, 150, 100]), 100);
        assert_eq!(colorization_value([30, 25, 35]), 10);
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturation_value([77, 77, 77]), 0);
        assert_eq!(saturation_value([0, 0, 0]), 0);
        assert_eq!(saturation_value([255, 0, 0]), 255);
        assert_eq!(saturation_value([30, 25, 35]), 73);
    }

    #[test]
    fn colorization_is_bounded_over_all_inputs() {
        let mut max = 0;
        for r in (0..=255).step_by(5) {
            for g in (0..=255).step_by(5) {
                for b in (0..=255).step_by(5) {
                    max = max.max(colorization_value([r as u8, g as u8, b as u8]));
                }
            }
        }
        assert_eq!(max, MAX_COLORIZATION);
    }

    proptest! {
        #[test]
        fn colorization_permutation_invariant(r: u8, g: u8, b: u8) {
            let c = colorization_value([r, g, b]);
            for p in [[r, b, g], [g, r, b], [g, b, r], [b, r, g], [b, g, r]] {
                prop_assert_eq!(colorization_value(p), c);
            }
        }

        #[test]
        fn colorization_zero_iff_grey(r: u8, g: u8, b: u8) {
            // exact value before rounding is t/3; check t == 0 iff grey
            let s = r as i32 + g as i32 + b as i32;
            let t = (3 * r as i32 - s).abs() + (3 * g as i32 - s).abs() + (3 * b as i32 - s).abs();
            prop_assert_eq!(t == 0, r == g && g == b);
        }
    }

    #[test]
    fn otsu_two_spikes_picks_smallest() {
        let mut h = vec![0u64; 256];
        h[0] = 10;
        h[255] = 10;
        assert_eq!(otsu_threshold(&h).unwrap(), 0);
    }

    #[test]
    fn otsu_single_bin() {
        let mut h = vec![0u64; 256];
        h[100] = 42;
        assert_eq!(otsu_threshold(&h).unwrap(), 100);
    }

    #[test]
    fn otsu_equal_split_tie() {
        // spikes at 10, 20, 30: splits after 10 and after 20 tie exactly
        let mut h = vec![0u64; 256];
        h[10] = 1;
        h[20] = 1;
        h[30] = 1;
        assert_eq!(otsu_threshold(&h).unwrap(), 10);
    }

    #[test]
    fn otsu_empty_histogram_is_error() {
        assert!(otsu_threshold(&[0; 256]).is_err());
        assert!(otsu_threshold(&[]).is_err());
    }

    #[test]
    fn white_slide_gives_empty_mask() {
        let img = RgbImage::filled(64, 64, [255; 3]);
        let p = PyramidImage::from_level0("w", 40.0, 0.25, img, &[1, 4, 16, 32]).unwrap();
        let seg = segment_tissue(&p, &SegmentOptions::default()).unwrap();
        assert_eq!(seg.mask.level, 3);
        assert_eq!(seg.mask.count(), 0);
        assert!(seg.degenerate);
    }

    #[test]
    fn missing_level_is_rejected() {
        let img = RgbImage::filled(8, 8, [255; 3]);
        let p = PyramidImage::from_level0("w", 40.0, 0.25, img, &[1]).unwrap();
        let opts = SegmentOptions {
            level: Some(3),
            ..Default::default()
        };
        assert!(matches!(
            segment_tissue(&p, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn closing_fills_small_hole() {
        let (w, h) = (9u32, 9u32);
        let mut bits = vec![false; 81];
        for y in 2..7 {
            for x in 2..7 {
                bits[y * 9 + x] = true;
            }
        }
        bits[4 * 9 + 4] = false;
        let closed = binary_closing(&bits, w, h, 1);
        assert!(closed[4 * 9 + 4]);
        assert!(!closed[0]);
    }

    #[test]
    fn mask_round_trip() {
        let mask = TissueMask {
            slide_id: "s".into(),
            level: 1,
            downsample: 4,
            width: 3,
            height: 2,
            level0_width: 12,
            level0_height: 8,
            bits: vec![true, false, true, false, false, true],
        };
        let dir = tempfile::tempdir().unwrap();
        save_mask(&mask, dir.path()).unwrap();
        assert_eq!(load_mask(dir.path()).unwrap(), mask);
        assert_eq!(
            std::fs::read(dir.path().join("mask.bin")).unwrap(),
            vec![1, 0, 1, 0, 0, 1]
        );
    }
}
