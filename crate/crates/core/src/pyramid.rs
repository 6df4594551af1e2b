//! Multi-resolution slide model and its directory format.
//!
//! A slide directory holds `meta.json` plus one binary PPM per level
//! (`level_<i>.ppm`). Level 0 is full resolution; each further level is the
//! exact block mean of level 0 over `downsample × downsample` blocks.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Side of every extracted patch after downsampling.
pub const PATCH_SIZE: u32 = 256;

const WHITE: u8 = 255;

/// 8-bit interleaved RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::InvalidArgument(format!(
                "raw buffer of {} bytes does not hold a {}x{} RGB image",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Per-channel mean in `[0, 255]`.
    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut sums = [0u64; 3];
        for px in self.pixels() {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        let n = (self.width as u64 * self.height as u64).max(1) as f64;
        [sums[0] as f64 / n, sums[1] as f64 / n, sums[2] as f64 / n]
    }
}

/// One pyramid level: dimensions, downsample relative to level 0, pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    pub downsample: u32,
    pub image: RgbImage,
}

impl Level {
    pub fn width(&self) -> u32 {
        self.image.width
    }

    pub fn height(&self) -> u32 {
        self.image.height
    }
}

/// A whole-slide image held in memory. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidImage {
    pub slide_id: String,
    pub base_magnification: f64,
    /// Microns per pixel at level 0.
    pub microns_per_pixel: f64,
    pub levels: Vec<Level>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LevelMeta {
    width: u32,
    height: u32,
    downsample: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlideMeta {
    slide_id: String,
    base_magnification: f64,
    microns_per_pixel: f64,
    levels: Vec<LevelMeta>,
}

/// Rounded-half-up integer mean `sum / count`.
#[inline]
fn mean_half_up(sum: u64, count: u64) -> u8 {
    ((2 * sum + count) / (2 * count)) as u8
}

fn ceil_div(a: u32, b: u32) -> u32 {
    a.div_ceil(b)
}

impl PyramidImage {
    /// Builds a pyramid from a level-0 raster, deriving every further level
    /// as the exact block mean over in-bounds level-0 pixels.
    pub fn from_level0(
        slide_id: impl Into<String>,
        base_magnification: f64,
        microns_per_pixel: f64,
        level0: RgbImage,
        downsamples: &[u32],
    ) -> Result<Self> {
        if downsamples.first() != Some(&1) {
            return Err(Error::InvalidArgument(
                "the first downsample factor must be 1".into(),
            ));
        }
        let mut levels = Vec::with_capacity(downsamples.len());
        for &d in &downsamples[1..] {
            levels.push(Level {
                downsample: d,
                image: block_mean(&level0, d),
            });
        }
        levels.insert(
            0,
            Level {
                downsample: 1,
                image: level0,
            },
        );
        let pyramid = Self {
            slide_id: slide_id.into(),
            base_magnification,
            microns_per_pixel,
            levels,
        };
        pyramid.validate()?;
        Ok(pyramid)
    }

    pub fn width(&self) -> u32 {
        self.levels[0].width()
    }

    pub fn height(&self) -> u32 {
        self.levels[0].height()
    }

    pub fn level0(&self) -> &RgbImage {
        &self.levels[0].image
    }

    /// Index of the level with the given downsample factor.
    pub fn level_with_downsample(&self, downsample: u32) -> Option<usize> {
        self.levels.iter().position(|l| l.downsample == downsample)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Consistency(m));
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("pyramid has no levels".into()));
        }
        if !(self.microns_per_pixel > 0.0 && self.microns_per_pixel.is_finite()) {
            return Err(Error::InvalidArgument(
                "microns_per_pixel must be positive".into(),
            ));
        }
        if !(self.base_magnification > 0.0 && self.base_magnification.is_finite()) {
            return Err(Error::InvalidArgument(
                "base_magnification must be positive".into(),
            ));
        }
        if self.levels[0].downsample != 1 {
            return fail("level 0 must have downsample 1".into());
        }
        let (w0, h0) = (self.width(), self.height());
        if w0 == 0 || h0 == 0 {
            return Err(Error::InvalidArgument("level 0 has zero area".into()));
        }
        let mut prev = 0;
        for (i, level) in self.levels.iter().enumerate() {
            let d = level.downsample;
            if !d.is_power_of_two() || d <= prev {
                return fail(format!(
                    "level {i}: downsample {d} must be a power of two larger than {prev}"
                ));
            }
            prev = d;
            if level.width() != ceil_div(w0, d) || level.height() != ceil_div(h0, d) {
                return fail(format!(
                    "level {i}: {}x{} does not match ceil({w0}/{d})xceil({h0}/{d})",
                    level.width(),
                    level.height()
                ));
            }
            if level.image.data.len() != level.width() as usize * level.height() as usize * 3 {
                return fail(format!("level {i}: pixel buffer length mismatch"));
            }
        }
        Ok(())
    }

    /// Reads a square level-0 rectangle of side `side` at `(x, y)` and
    /// reduces it to a `PATCH_SIZE × PATCH_SIZE` patch by exact block mean.
    /// Pixels outside the slide count as white.
    pub fn read_region(&self, x: i64, y: i64, side: u32) -> Result<RgbImage> {
        if side == 0 || side % PATCH_SIZE != 0 {
            return Err(Error::InvalidArgument(format!(
                "region side {side} is not a positive multiple of {PATCH_SIZE}"
            )));
        }
        let factor = (side / PATCH_SIZE) as i64;
        let src = self.level0();
        let (w, h) = (src.width as i64, src.height as i64);
        let count = (factor * factor) as u64;
        let mut out = RgbImage::new(PATCH_SIZE, PATCH_SIZE);

        out.data
            .par_chunks_mut(PATCH_SIZE as usize * 3)
            .enumerate()
            .for_each(|(oy, row)| {
                let mut sums = vec![0u64; PATCH_SIZE as usize * 3];
                let y0 = y + oy as i64 * factor;
                for sy in y0..y0 + factor {
                    let row_inside = sy >= 0 && sy < h;
                    for ox in 0..PATCH_SIZE as usize {
                        let x0 = x + ox as i64 * factor;
                        let (lo, hi) = if row_inside {
                            (x0.clamp(0, w), (x0 + factor).clamp(0, w))
                        } else {
                            (0, 0)
                        };
                        let outside = (factor - (hi - lo)) as u64 * WHITE as u64;
                        let acc = &mut sums[ox * 3..ox * 3 + 3];
                        for c in acc.iter_mut() {
                            *c += outside;
                        }
                        if hi > lo {
                            let start = ((sy * w + lo) * 3) as usize;
                            let end = ((sy * w + hi) * 3) as usize;
                            for px in src.data[start..end].chunks_exact(3) {
                                acc[0] += px[0] as u64;
                                acc[1] += px[1] as u64;
                                acc[2] += px[2] as u64;
                            }
                        }
                    }
                }
                for (dst, &s) in row.iter_mut().zip(&sums) {
                    *dst = mean_half_up(s, count);
                }
            });
        Ok(out)
    }
}

/// Block mean over `d × d` blocks of in-bounds pixels, rounded half up.
pub(crate) fn block_mean(src: &RgbImage, d: u32) -> RgbImage {
    let (w, h) = (src.width, src.height);
    let (ow, oh) = (ceil_div(w, d), ceil_div(h, d));
    let mut out = RgbImage::new(ow, oh);
    out.data
        .par_chunks_mut(ow as usize * 3)
        .enumerate()
        .for_each(|(oy, row)| {
            let y0 = oy as u32 * d;
            let y1 = (y0 + d).min(h);
            let mut sums = vec![0u64; ow as usize * 3];
            for sy in y0..y1 {
                let line =
                    &src.data[sy as usize * w as usize * 3..(sy as usize + 1) * w as usize * 3];
                for (sx, px) in line.chunks_exact(3).enumerate() {
                    let o = (sx / d as usize) * 3;
                    sums[o] += px[0] as u64;
                    sums[o + 1] += px[1] as u64;
                    sums[o + 2] += px[2] as u64;
                }
            }
            let rows = (y1 - y0) as u64;
            for ox in 0..ow as usize {
                let x0 = ox as u32 * d;
                let cols = ((x0 + d).min(w) - x0) as u64;
                for c in 0..3 {
                    row[ox * 3 + c] = mean_half_up(sums[ox * 3 + c], rows * cols);
                }
            }
        });
    out
}

/// Loads a slide directory written by [`save_pyramid`].
pub fn load_pyramid(dir: impl AsRef<Path>) -> Result<PyramidImage> {
    let dir = dir.as_ref();
    let meta: SlideMeta = io::read_json(&dir.join("meta.json"))?;
    if meta.levels.is_empty() {
        return Err(Error::format("meta.json", "no levels declared"));
    }
    let mut levels = Vec::with_capacity(meta.levels.len());
    for (i, lm) in meta.levels.iter().enumerate() {
        let what = format!("level {i}");
        let path = dir.join(format!("level_{i}.ppm"));
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::format(&what, format!("cannot read {}: {e}", path.display())))?;
        let (width, height, data) = io::decode_ppm(&bytes, &what)?;
        if width != lm.width || height != lm.height {
            return Err(Error::Consistency(format!(
                "level {i}: file is {width}x{height} but meta.json declares {}x{}",
                lm.width, lm.height
            )));
        }
        levels.push(Level {
            downsample: lm.downsample,
            image: RgbImage {
                width,
                height,
                data,
            },
        });
    }
    let pyramid = PyramidImage {
        slide_id: meta.slide_id,
        base_magnification: meta.base_magnification,
        microns_per_pixel: meta.microns_per_pixel,
        levels,
    };
    pyramid.validate()?;
    Ok(pyramid)
}

/// Slide facts from `meta.json` alone, without decoding pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideInfo {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    pub base_magnification: f64,
    pub microns_per_pixel: f64,
}

pub fn load_slide_info(dir: impl AsRef<Path>) -> Result<SlideInfo> {
    let meta: SlideMeta = io::read_json(&dir.as_ref().join("meta.json"))?;
    let l0 = meta
        .levels
        .iter()
        .find(|l| l.downsample == 1)
        .ok_or_else(|| Error::format("meta.json", "no level with downsample 1"))?;
    Ok(SlideInfo {
        slide_id: meta.slide_id,
        width: l0.width,
        height: l0.height,
        base_magnification: meta.base_magnification,
        microns_per_pixel: meta.microns_per_pixel,
    })
}

/// Writes `meta.json` and `level_<i>.ppm` files into `dir` (created if needed).
pub fn save_pyramid(pyramid: &PyramidImage, dir: impl AsRef<Path>) -> Result<()> {
    pyramid.validate()?;
    let dir = dir.as_ref();
    io::create_dir(dir)?;
    let meta = SlideMeta {
        slide_id: pyramid.slide_id.clone(),
        base_magnification: pyramid.base_magnification,
        microns_per_pixel: pyramid.microns_per_pixel,
        levels: pyramid
            .levels
            .iter()
            .map(|l| LevelMeta {
                width: l.width(),
                height: l.height(),
                downsample: l.downsample,
            })
            .collect(),
    };
    io::write_json(&dir.join("meta.json"), &meta)?;
    for (i, level) in pyramid.levels.iter().enumerate() {
        let bytes = io::encode_ppm(level.width(), level.height(), &level.image.data);
        io::write_bytes(&dir.join(format!("level_{i}.ppm")), &bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> PyramidImage {
        let mut img = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put_pixel(x, y, f(x, y));
            }
        }
        PyramidImage::from_level0("t", 40.0, 0.25, img, &[1]).unwrap()
    }

    #[test]
    fn constant_region_stays_constant() {
        let p = slide(1024, 1024, |_, _| [12, 200, 99]);
        for side in [256, 512, 1024] {
            let r = p.read_region(0, 0, side).unwrap();
            assert!(r.pixels().all(|px| px == [12, 200, 99]));
        }
    }

    #[test]
    fn factor_one_is_identity_crop() {
        let p = slide(300, 300, |x, y| {
            [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]
        });
        let r = p.read_region(10, 20, 256).unwrap();
        for y in 0..256 {
            for x in 0..256 {
                assert_eq!(r.pixel(x, y), p.level0().pixel(x + 10, y + 20));
            }
        }
    }

    #[test]
    fn half_is_rounded_up() {
        // each 2x2 block holds {0, 0, 255, 255}: mean 127.5 -> 128
        let p = slide(512, 512, |_, y| if y % 2 == 0 { [0; 3] } else { [255; 3] });
        let r = p.read_region(0, 0, 512).unwrap();
        assert!(r.pixels().all(|px| px == [128; 3]));
    }

    #[test]
    fn outside_pixels_are_white() {
        let p = slide(100, 100, |_, _| [0, 0, 0]);
        let r = p.read_region(0, 0, 256).unwrap();
        assert_eq!(r.pixel(99, 99), [0, 0, 0]);
        assert_eq!(r.pixel(100, 0), [255; 3]);
        assert_eq!(r.pixel(0, 100), [255; 3]);
        let r = p.read_region(-256, 0, 256).unwrap();
        assert!(r.pixels().all(|px| px == [255; 3]));
    }

    #[test]
    fn side_must_be_multiple_of_patch() {
        let p = slide(8, 8, |_, _| [0; 3]);
        assert!(matches!(
            p.read_region(0, 0, 300),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            p.read_region(0, 0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn levels_follow_ceil_dimensions() {
        let img = RgbImage::filled(1000, 37, [1, 2, 3]);
        let p = PyramidImage::from_level0("t", 40.0, 0.25, img, &[1, 4, 16, 32]).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(1000, 37), (250, 10), (63, 3), (32, 2)]);
        assert!(p.levels[3].image.pixels().all(|px| px == [1, 2, 3]));
    }

    #[test]
    fn non_increasing_downsamples_rejected() {
        let img = RgbImage::filled(8, 8, [0; 3]);
        assert!(PyramidImage::from_level0("t", 40.0, 0.25, img.clone(), &[1, 4, 4]).is_err());
        assert!(PyramidImage::from_level0("t", 40.0, 0.25, img, &[2]).is_err());
    }

    #[test]
    fn empty_levels_fail_validation() {
        let p = PyramidImage {
            slide_id: "x".into(),
            base_magnification: 40.0,
            microns_per_pixel: 0.25,
            levels: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_pyramid(&p, dir.path()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn white_pixel_payload() {
        let p = slide(1, 1, |_, _| [255; 3]);
        let dir = tempfile::tempdir().unwrap();
        save_pyramid(&p, dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join("level_0.ppm")).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0xFF, 0xFF, 0xFF]);
        assert_eq!(bytes, b"P6\n1 1\n255\n\xFF\xFF\xFF");
    }

    #[test]
    fn missing_level_file_names_the_level() {
        let img = RgbImage::filled(64, 64, [9; 3]);
        let p = PyramidImage::from_level0("t", 40.0, 0.25, img, &[1, 4, 16, 32]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pyramid(&p, dir.path()).unwrap();
        assert_eq!(load_pyramid(dir.path()).unwrap().levels.len(), 4);
        std::fs::remove_file(dir.path().join("level_2.ppm")).unwrap();
        match load_pyramid(dir.path()) {
            Err(Error::Format { what, .. }) => assert_eq!(what, "level 2"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_consistency_error() {
        let img = RgbImage::filled(64, 64, [9; 3]);
        let p = PyramidImage::from_level0("t", 40.0, 0.25, img, &[1, 4]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pyramid(&p, dir.path()).unwrap();
        let wrong = io::encode_ppm(15, 16, &vec![0; 15 * 16 * 3]);
        std::fs::write(dir.path().join("level_1.ppm"), wrong).unwrap();
        assert!(matches!(
            load_pyramid(dir.path()),
            Err(Error::Consistency(_))
        ));
    }
}
