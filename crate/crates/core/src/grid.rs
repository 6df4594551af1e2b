//! Aligned patch grids at 40×, 20×, 10× and 5×.
//!
//! Every grid is anchored at level-0 `(0, 0)` with stride equal to the patch
//! size, so one 5× cell is exactly the union of 4 10× cells, 16 20× cells
//! and 64 40× cells.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::io;
use crate::pyramid::{PyramidImage, RgbImage, PATCH_SIZE};
use crate::tissue::TissueMask;

/// Default minimum tissue fraction for a cell to count as tissue.
pub const DEFAULT_TAU: f64 = 0.25;

/// Product of magnification and level-0 patch size, constant across scales.
pub const FIELD_OF_VIEW: u32 = 10240;

/// Objective magnification paired with its level-0 patch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Magnification {
    X5,
    X10,
    X20,
    X40,
}

impl Magnification {
    /// Finest to coarsest.
    pub const ALL: [Magnification; 4] = [Self::X40, Self::X20, Self::X10, Self::X5];
    pub const FINEST: Magnification = Self::X40;

    pub fn value(self) -> u32 {
        match self {
            Self::X5 => 5,
            Self::X10 => 10,
            Self::X20 => 20,
            Self::X40 => 40,
        }
    }

    /// Side of a patch in level-0 pixels before downsampling to 256.
    pub fn patch_size(self) -> u32 {
        FIELD_OF_VIEW / self.value()
    }

    /// Number of finest-grid cells along one side of a cell at this magnification.
    pub fn cells_per_side(self) -> u32 {
        self.patch_size() / PATCH_SIZE
    }

    pub fn from_value(v: u32) -> Result<Self> {
        match v {
            5 => Ok(Self::X5),
            10 => Ok(Self::X10),
            20 => Ok(Self::X20),
            40 => Ok(Self::X40),
            other => Err(Error::InvalidArgument(format!(
                "magnification {other} is not one of 5, 10, 20, 40"
            ))),
        }
    }

    pub fn from_patch_size(size: u32) -> Result<Self> {
        if size == 0 || FIELD_OF_VIEW % size != 0 {
            return Err(Error::InvalidArgument(format!(
                "unsupported patch size {size}"
            )));
        }
        Self::from_value(FIELD_OF_VIEW / size)
    }
}

impl TryFrom<u32> for Magnification {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::from_value(v)
    }
}

impl From<Magnification> for u32 {
    fn from(m: Magnification) -> u32 {
        m.value()
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.value())
    }
}

impl FromStr for Magnification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .trim()
            .trim_end_matches(['x', 'X'])
            .parse::<u32>()
            .map_err(|_| Error::InvalidArgument(format!("bad magnification {s:?}")))?;
        Self::from_value(v)
    }
}

/// Rows and columns of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: u32,
    pub cols: u32,
}

impl GridDims {
    pub fn for_slide(width: u32, height: u32, mag: Magnification) -> Self {
        let s = mag.patch_size();
        Self {
            rows: height.div_ceil(s),
            cols: width.div_ceil(s),
        }
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimensions of the grid `factor` times coarser that covers this one.
    pub fn coarsen(&self, factor: u32) -> Self {
        Self {
            rows: self.rows.div_ceil(factor),
            cols: self.cols.div_ceil(factor),
        }
    }
}

/// Tiling of one slide at one magnification.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub slide_id: String,
    pub mag: Magnification,
    pub slide_width: u32,
    pub slide_height: u32,
    pub dims: GridDims,
    pub tissue_fraction: Vec<f64>,
    pub in_tissue: Vec<bool>,
    pub tau: f64,
}

impl PatchGrid {
    pub fn rows(&self) -> u32 {
        self.dims.rows
    }

    pub fn cols(&self) -> u32 {
        self.dims.cols
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn index(&self, row: u32, col: u32) -> usize {
        row as usize * self.dims.cols as usize + col as usize
    }

    pub fn row_col(&self, index: usize) -> (u32, u32) {
        let cols = self.dims.cols as usize;
        ((index / cols) as u32, (index % cols) as u32)
    }

    /// Level-0 rectangle of a cell (may extend past the slide edge).
    pub fn cell_rect(&self, index: usize) -> Rect {
        let (row, col) = self.row_col(index);
        let s = self.mag.patch_size() as f64;
        Rect::square(col as f64 * s, row as f64 * s, s)
    }

    pub fn slide_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.slide_width as f64, self.slide_height as f64)
    }

    pub fn tissue_count(&self) -> usize {
        self.in_tissue.iter().filter(|&&b| b).count()
    }
}

/// Full non-overlapping tiling anchored at (0,0). All cells start out as
/// tissue with fraction 1 until [`filter_by_tissue`] is applied.
pub fn build_grid(
    slide_id: impl Into<String>,
    width: u32,
    height: u32,
    mag: Magnification,
) -> Result<PatchGrid> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "slide dimensions must be positive".into(),
        ));
    }
    let dims = GridDims::for_slide(width, height, mag);
    Ok(PatchGrid {
        slide_id: slide_id.into(),
        mag,
        slide_width: width,
        slide_height: height,
        dims,
        tissue_fraction: vec![1.0; dims.len()],
        in_tissue: vec![true; dims.len()],
        tau: 0.0,
    })
}

/// Tissue fraction of a level-0 rectangle, measured at mask resolution and
/// area-weighted over the part of the rectangle that lies inside the slide.
pub fn tissue_fraction(rect: &Rect, mask: &TissueMask) -> f64 {
    let slide = Rect::new(
        0.0,
        0.0,
        mask.level0_width as f64,
        mask.level0_height as f64,
    );
    let inside = rect.intersect(&slide);
    let total = inside.area();
    if total <= 0.0 {
        return 0.0;
    }
    let d = mask.downsample as f64;
    let mx0 = (inside.x0 / d).floor().max(0.0) as u32;
    let my0 = (inside.y0 / d).floor().max(0.0) as u32;
    let mx1 = ((inside.x1 / d).ceil() as u32).min(mask.width);
    let my1 = ((inside.y1 / d).ceil() as u32).min(mask.height);
    let mut covered = 0.0;
    for my in my0..my1 {
        let py0 = (my as f64 * d).max(inside.y0);
        let py1 = ((my + 1) as f64 * d).min(inside.y1);
        if py1 <= py0 {
            continue;
        }
        let mut row_len = 0.0;
        for mx in mx0..mx1 {
            if mask.get(mx, my) {
                let px0 = (mx as f64 * d).max(inside.x0);
                let px1 = ((mx + 1) as f64 * d).min(inside.x1);
                row_len += (px1 - px0).max(0.0);
            }
        }
        covered += row_len * (py1 - py0);
    }
    (covered / total).clamp(0.0, 1.0)
}

/// Computes every cell's tissue fraction and sets `in_tissue = fraction ≥ τ`.
pub fn filter_by_tissue(grid: &PatchGrid, mask: &TissueMask, tau: f64) -> Result<PatchGrid> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    if mask.slide_id != grid.slide_id {
        return Err(Error::Consistency(format!(
            "mask belongs to slide {:?}, grid to {:?}",
            mask.slide_id, grid.slide_id
        )));
    }
    let fractions: Vec<f64> = (0..grid.len())
        .map(|i| tissue_fraction(&grid.cell_rect(i), mask))
        .collect();
    let in_tissue = fractions.iter().map(|&f| f >= tau).collect();
    Ok(PatchGrid {
        tissue_fraction: fractions,
        in_tissue,
        tau,
        ..grid.clone()
    })
}

/// The 256×256 patch of a cell: exact block mean of its level-0 rectangle.
pub fn extract_patch(pyramid: &PyramidImage, grid: &PatchGrid, index: usize) -> Result<RgbImage> {
    if index >= grid.len() {
        return Err(Error::InvalidArgument(format!(
            "patch index {index} out of range for a {}x{} grid",
            grid.rows(),
            grid.cols()
        )));
    }
    let (row, col) = grid.row_col(index);
    let s = grid.mag.patch_size();
    pyramid.read_region(col as i64 * s as i64, row as i64 * s as i64, s)
}

#[derive(Serialize, Deserialize)]
pub(crate) struct GridFile {
    pub slide_id: String,
    pub magnification: Magnification,
    pub patch_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub tau: f64,
    pub slide_width: u32,
    pub slide_height: u32,
    pub in_tissue: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tissue_fraction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

impl GridFile {
    pub(crate) fn new(grid: &PatchGrid, labels: Option<&[bool]>, with_fractions: bool) -> Self {
        Self {
            slide_id: grid.slide_id.clone(),
            magnification: grid.mag,
            patch_size: grid.mag.patch_size(),
            rows: grid.rows(),
            cols: grid.cols(),
            tau: grid.tau,
            slide_width: grid.slide_width,
            slide_height: grid.slide_height,
            in_tissue: grid.in_tissue.iter().map(|&b| b as u8).collect(),
            tissue_fraction: with_fractions.then(|| grid.tissue_fraction.clone()),
            labels: labels.map(|l| l.iter().map(|&b| b as u8).collect()),
        }
    }

    pub(crate) fn into_grid(self, what: &str) -> Result<(PatchGrid, Option<Vec<bool>>)> {
        if self.magnification.patch_size() != self.patch_size {
            return Err(Error::Consistency(format!(
                "{what}: patch size {} does not match magnification {}",
                self.patch_size, self.magnification
            )));
        }
        let dims = GridDims {
            rows: self.rows,
            cols: self.cols,
        };
        if dims != GridDims::for_slide(self.slide_width, self.slide_height, self.magnification) {
            return Err(Error::Consistency(format!(
                "{what}: {}x{} grid does not tile a {}x{} slide",
                self.rows, self.cols, self.slide_width, self.slide_height
            )));
        }
        let to_bits = |v: &[u8], field: &str| -> Result<Vec<bool>> {
            if v.len() != dims.len() || v.iter().any(|&b| b > 1) {
                return Err(Error::format(
                    what,
                    format!("{field} must hold {} values in {{0,1}}", dims.len()),
                ));
            }
            Ok(v.iter().map(|&b| b == 1).collect())
        };
        let in_tissue = to_bits(&self.in_tissue, "in_tissue")?;
        let labels = self
            .labels
            .as_deref()
            .map(|l| to_bits(l, "labels"))
            .transpose()?;
        let tissue_fraction = match self.tissue_fraction {
            Some(f) if f.len() == dims.len() => f,
            Some(_) => return Err(Error::format(what, "tissue_fraction has the wrong length")),
            None => in_tissue.iter().map(|&b| b as u8 as f64).collect(),
        };
        Ok((
            PatchGrid {
                slide_id: self.slide_id,
                mag: self.magnification,
                slide_width: self.slide_width,
                slide_height: self.slide_height,
                dims,
                tissue_fraction,
                in_tissue,
                tau: self.tau,
            },
            labels,
        ))
    }
}

pub fn save_grid(grid: &PatchGrid, path: &Path) -> Result<()> {
    io::write_json(path, &GridFile::new(grid, None, true))
}

pub fn load_grid(path: &Path) -> Result<PatchGrid> {
    let file: GridFile = io::read_json(path)?;
    Ok(file.into_grid(&path.display().to_string())?.0)
}

/// Writes every in-tissue patch as `patch_<row>_<col>.ppm` plus `grid.json`
/// (with labels when given) into `dir`.
pub fn export_patches(
    pyramid: &PyramidImage,
    grid: &PatchGrid,
    labels: Option<&[bool]>,
    dir: &Path,
) -> Result<usize> {
    use rayon::prelude::*;

    if let Some(l) = labels {
        if l.len() != grid.len() {
            return Err(Error::Consistency("label count does not match grid".into()));
        }
    }
    io::create_dir(dir)?;
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| grid.in_tissue[i]).collect();
    cells.par_iter().try_for_each(|&i| {
        let patch = extract_patch(pyramid, grid, i)?;
        let (row, col) = grid.row_col(i);
        let bytes = io::encode_ppm(patch.width, patch.height, &patch.data);
        io::write_bytes(&dir.join(format!("patch_{row}_{col}.ppm")), &bytes)
    })?;
    io::write_json(&dir.join("grid.json"), &GridFile::new(grid, labels, false))?;
    Ok(cells.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(
        width: u32,
        height: u32,
        downsample: u32,
        f: impl Fn(u32, u32) -> bool,
    ) -> TissueMask {
        let (mw, mh) = (width.div_ceil(downsample), height.div_ceil(downsample));
        let mut bits = Vec::new();
        for y in 0..mh {
            for x in 0..mw {
                bits.push(f(x, y));
            }
        }
        TissueMask {
            slide_id: "s".into(),
            level: 0,
            downsample,
            width: mw,
            height: mh,
            level0_width: width,
            level0_height: height,
            bits,
        }
    }

    #[test]
    fn magnification_pairs() {
        let pairs: Vec<_> = Magnification::ALL
            .iter()
            .map(|m| (m.value(), m.patch_size()))
            .collect();
        assert_eq!(pairs, vec![(40, 256), (20, 512), (10, 1024), (5, 2048)]);
        for m in Magnification::ALL {
            assert_eq!(m.value() * m.patch_size(), FIELD_OF_VIEW);
        }
        assert!(Magnification::from_value(30).is_err());
        assert_eq!("20x".parse::<Magnification>().unwrap(), Magnification::X20);
    }

    #[test]
    fn grid_dimensions() {
        let g = build_grid("s", 10240, 10240, Magnification::X40).unwrap();
        assert_eq!((g.rows(), g.cols()), (40, 40));
        let g = build_grid("s", 10240, 10240, Magnification::X5).unwrap();
        assert_eq!((g.rows(), g.cols()), (5, 5));
        let g = build_grid("s", 10300, 10240, Magnification::X40).unwrap();
        assert_eq!((g.rows(), g.cols()), (40, 41));
        assert!(build_grid("s", 0, 10, Magnification::X40).is_err());
    }

    #[test]
    fn coarse_cells_are_unions_of_fine_cells() {
        let (w, h) = (5000, 3000);
        let fine = build_grid("s", w, h, Magnification::X40).unwrap();
        for mag in [Magnification::X20, Magnification::X10, Magnification::X5] {
            let coarse = build_grid("s", w, h, mag).unwrap();
            let j = mag.cells_per_side();
            assert_eq!(coarse.dims, fine.dims.coarsen(j));
            for ci in 0..coarse.len() {
                let cr = coarse.cell_rect(ci);
                let (crow, ccol) = coarse.row_col(ci);
                let mut area = 0.0;
                for r in crow * j..(crow + 1) * j {
                    for c in ccol * j..(ccol + 1) * j {
                        // children past the fine grid edge are outside the slide
                        let fr = Rect::square(c as f64 * 256.0, r as f64 * 256.0, 256.0);
                        assert_eq!(fr.intersect(&cr), fr);
                        area += fr.area();
                    }
                }
                assert_eq!(area, cr.area());
            }
        }
    }

    #[test]
    fn cells_partition_the_covered_area() {
        let g = build_grid("s", 700, 300, Magnification::X40).unwrap();
        let total: f64 = (0..g.len()).map(|i| g.cell_rect(i).area()).sum();
        assert_eq!(total, (g.cols() * 256) as f64 * (g.rows() * 256) as f64);
        for i in 0..g.len() {
            for k in i + 1..g.len() {
                assert!(!g.cell_rect(i).overlaps(&g.cell_rect(k)));
            }
        }
    }

    #[test]
    fn fraction_of_full_and_empty_masks() {
        let full = mask_from(1024, 1024, 32, |_, _| true);
        let empty = mask_from(1024, 1024, 32, |_, _| false);
        let r = Rect::square(256.0, 256.0, 256.0);
        assert_eq!(tissue_fraction(&r, &full), 1.0);
        assert_eq!(tissue_fraction(&r, &empty), 0.0);
        assert_eq!(
            tissue_fraction(&Rect::square(2048.0, 0.0, 256.0), &full),
            0.0
        );
    }

    #[test]
    fn fraction_on_half_plane() {
        // tissue on mask columns < 20 at downsample 32: level-0 x < 640
        let mask = mask_from(2048, 2048, 32, |x, _| x < 20);
        let r = Rect::square(512.0, 0.0, 256.0);
        let f = tissue_fraction(&r, &mask);
        assert!((f - 0.5).abs() <= 1.0 / 8.0, "{f}");
        assert_eq!(f, 0.5);
    }

    #[test]
    fn edge_cell_uses_in_bounds_area() {
        let mask = mask_from(300, 300, 1, |_, _| true);
        let r = Rect::square(256.0, 256.0, 256.0);
        assert_eq!(tissue_fraction(&r, &mask), 1.0);
    }

    #[test]
    fn tau_extremes_and_monotonicity() {
        let mask = mask_from(2048, 2048, 32, |x, y| x + y < 40);
        let g = build_grid("s", 2048, 2048, Magnification::X40).unwrap();
        let all = filter_by_tissue(&g, &mask, 0.0).unwrap();
        assert!(all.in_tissue.iter().all(|&b| b));
        let full = filter_by_tissue(&g, &mask, 1.0).unwrap();
        for i in 0..g.len() {
            assert_eq!(full.in_tissue[i], full.tissue_fraction[i] == 1.0);
        }
        let mut prev = all.tissue_count();
        for k in 1..=20 {
            let n = filter_by_tissue(&g, &mask, k as f64 / 20.0)
                .unwrap()
                .tissue_count();
            assert!(n <= prev);
            prev = n;
        }
        assert!(filter_by_tissue(&g, &mask, 1.5).is_err());
    }

    #[test]
    fn extract_patch_checks_index() {
        let img = RgbImage::filled(300, 300, [5, 6, 7]);
        let p = PyramidImage::from_level0("s", 40.0, 0.25, img, &[1]).unwrap();
        let g = build_grid("s", 300, 300, Magnification::X40).unwrap();
        assert!(extract_patch(&p, &g, 4).is_err());
        let patch = extract_patch(&p, &g, 3).unwrap();
        assert_eq!(patch.pixel(0, 0), [5, 6, 7]);
        assert_eq!(patch.pixel(44, 44), [255, 255, 255]);
    }

    #[test]
    fn grid_file_round_trip() {
        let mask = mask_from(700, 600, 4, |x, _| x < 60);
        let g = build_grid("s", 700, 600, Magnification::X20).unwrap();
        let g = filter_by_tissue(&g, &mask, 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        save_grid(&g, &path).unwrap();
        assert_eq!(load_grid(&path).unwrap(), g);
    }
}
