//! Ground truth: tumor polygons, their rasterization to per-cell labels,
//! coarse-annotation noise and training-set construction.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::connected_components;
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::grid::{GridDims, Magnification, PatchGrid};
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: u32,
    /// Closed polygon in level-0 pixel coordinates; the last vertex connects
    /// back to the first.
    pub polygon: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub slide_id: String,
    pub regions: Vec<Region>,
}

impl AnnotationSet {
    pub fn empty(slide_id: impl Into<String>) -> Self {
        Self {
            slide_id: slide_id.into(),
            regions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.regions {
            let what = format!("region {}", r.region_id);
            if r.polygon.len() < 3 {
                return Err(Error::format(what, "polygon has fewer than 3 vertices"));
            }
            if r.polygon.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::format(what, "polygon has non-finite vertices"));
            }
            if !geometry::is_simple(&r.polygon) {
                return Err(Error::format(what, "polygon self-intersects"));
            }
        }
        Ok(())
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let set: AnnotationSet = io::read_json(path)?;
    set.validate()?;
    Ok(set)
}

pub fn save_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    io::write_json(path, set)
}

/// Where a label grid came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Noisy {
        margin_cells: u32,
        eta: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    pub slide_id: String,
    pub mag: Magnification,
    pub dims: GridDims,
    pub labels: Vec<bool>,
    pub provenance: Provenance,
}

impl LabelGrid {
    pub fn zeros(slide_id: impl Into<String>, mag: Magnification, dims: GridDims) -> Self {
        Self {
            slide_id: slide_id.into(),
            mag,
            dims,
            labels: vec![false; dims.len()],
            provenance: Provenance::Clean,
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn check_matches(&self, grid: &PatchGrid) -> Result<()> {
        if self.slide_id != grid.slide_id || self.mag != grid.mag || self.dims != grid.dims {
            return Err(Error::Consistency(format!(
                "labels ({}, {}, {}x{}) do not match grid ({}, {}, {}x{})",
                self.slide_id,
                self.mag,
                self.dims.rows,
                self.dims.cols,
                grid.slide_id,
                grid.mag,
                grid.rows(),
                grid.cols()
            )));
        }
        Ok(())
    }
}

/// Per-cell covered area fraction, summed over regions and clamped to 1.
/// Zero-area polygons are skipped with a warning.
pub fn tumor_fractions(annotations: &AnnotationSet, grid: &PatchGrid) -> Result<Vec<f64>> {
    if annotations.slide_id != grid.slide_id {
        return Err(Error::Consistency(format!(
            "annotations belong to slide {:?}, grid to {:?}",
            annotations.slide_id, grid.slide_id
        )));
    }
    let s = grid.mag.patch_size() as f64;
    let cell_area = s * s;
    let mut covered = vec![0.0f64; grid.len()];
    for region in &annotations.regions {
        if geometry::area(&region.polygon) == 0.0 {
            log::warn!(
                "slide {}: region {} has zero area and is ignored",
                annotations.slide_id,
                region.region_id
            );
            continue;
        }
        let bb = geometry::bounding_box(&region.polygon);
        let c0 = (bb.x0 / s).floor().max(0.0) as u32;
        let r0 = (bb.y0 / s).floor().max(0.0) as u32;
        let c1 = ((bb.x1 / s).ceil().max(0.0) as u32).min(grid.cols());
        let r1 = ((bb.y1 / s).ceil().max(0.0) as u32).min(grid.rows());
        for row in r0..r1 {
            for col in c0..c1 {
                let i = grid.index(row, col);
                covered[i] += geometry::clipped_area(&region.polygon, &grid.cell_rect(i));
            }
        }
    }
    Ok(covered
        .into_iter()
        .map(|a| (a / cell_area).min(1.0))
        .collect())
}

// Clipping round-off can leave a sliver of area on cells that only share an
// edge with a polygon; fractions at or below this count as zero.
const AREA_EPS: f64 = 1e-9;

/// Cell label is 1 iff the covered fraction exceeds `min_frac`
/// (`min_frac = 0`: any strictly positive intersection).
pub fn rasterize_labels(
    annotations: &AnnotationSet,
    grid: &PatchGrid,
    min_frac: f64,
) -> Result<LabelGrid> {
    if !(0.0..=1.0).contains(&min_frac) {
        return Err(Error::InvalidArgument(format!(
            "min_frac {min_frac} outside [0, 1]"
        )));
    }
    let fractions = tumor_fractions(annotations, grid)?;
    Ok(LabelGrid {
        slide_id: grid.slide_id.clone(),
        mag: grid.mag,
        dims: grid.dims,
        labels: fractions
            .iter()
            .map(|&f| f > min_frac.max(AREA_EPS))
            .collect(),
        provenance: Provenance::Clean,
    })
}

/// Binary dilation with a `(2r+1)×(2r+1)` square.
pub fn expand_labels(labels: &LabelGrid, margin_cells: u32) -> LabelGrid {
    let mut out = labels.clone();
    if let Provenance::Noisy {
        margin_cells: m, ..
    } = &mut out.provenance
    {
        *m += margin_cells;
    } else {
        out.provenance = Provenance::Noisy {
            margin_cells,
            eta: 0.0,
            seed: 0,
        };
    }
    if margin_cells == 0 {
        return out;
    }
    let (rows, cols) = (labels.dims.rows as usize, labels.dims.cols as usize);
    let r = margin_cells as usize;
    // separable: horizontal pass then vertical pass
    let mut horiz = vec![false; labels.labels.len()];
    for y in 0..rows {
        for x in 0..cols {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(cols - 1);
            horiz[y * cols + x] = labels.labels[y * cols + lo..=y * cols + hi]
                .iter()
                .any(|&b| b);
        }
    }
    for y in 0..rows {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(rows - 1);
        for x in 0..cols {
            out.labels[y * cols + x] = (lo..=hi).any(|yy| horiz[yy * cols + x]);
        }
    }
    out
}

/// Zeroes each 8-connected positive component independently with
/// probability `eta`. Components are visited in raster order and each
/// consumes one uniform draw from a ChaCha8 stream seeded with `seed`.
pub fn drop_tumor_regions(labels: &LabelGrid, eta: f64, seed: u64) -> Result<LabelGrid> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
    }
    let mut out = labels.clone();
    match &mut out.provenance {
        Provenance::Noisy {
            eta: e, seed: s, ..
        } => {
            *e = eta;
            *s = seed;
        }
        p @ Provenance::Clean => {
            *p = Provenance::Noisy {
                margin_cells: 0,
                eta,
                seed,
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for comp in connected_components(&labels.labels, labels.dims) {
        if rng.random::<f64>() < eta {
            for i in comp {
                out.labels[i] = false;
            }
        }
    }
    Ok(out)
}

/// Coarse-annotation noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub margin_cells: u32,
    pub eta: f64,
    pub seed: u64,
}

impl NoiseConfig {
    /// Assumed regime: 2-cell expansion, 10% of regions dropped.
    pub fn weak(seed: u64) -> Self {
        Self {
            margin_cells: 2,
            eta: 0.1,
            seed,
        }
    }

    /// Assumed regime: 4-cell expansion, 30% of regions dropped.
    pub fn strong(seed: u64) -> Self {
        Self {
            margin_cells: 4,
            eta: 0.3,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "weak" => Ok(Self::weak(seed)),
            "strong" => Ok(Self::strong(seed)),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise preset {other:?}"
            ))),
        }
    }
}

/// Expansion followed by region dropping. Regions are dropped after
/// expansion, so a dropped region takes its margin with it.
pub fn apply_noise(labels: &LabelGrid, cfg: &NoiseConfig) -> Result<LabelGrid> {
    let expanded = expand_labels(labels, cfg.margin_cells);
    let mut out = drop_tumor_regions(&expanded, cfg.eta, cfg.seed)?;
    out.provenance = Provenance::Noisy {
        margin_cells: cfg.margin_cells,
        eta: cfg.eta,
        seed: cfg.seed,
    };
    Ok(out)
}

/// Projects labels onto a coarser grid: a coarse cell is positive iff any
/// nested fine cell is.
pub fn project_labels(fine: &LabelGrid, target: Magnification) -> Result<LabelGrid> {
    let (src, dst) = (fine.mag.patch_size(), target.patch_size());
    if dst < src {
        return Err(Error::InvalidArgument(format!(
            "cannot project {} labels onto finer {} grid",
            fine.mag, target
        )));
    }
    let factor = dst / src;
    let dims = fine.dims.coarsen(factor);
    let mut labels = vec![false; dims.len()];
    let fcols = fine.dims.cols as usize;
    for (i, &b) in fine.labels.iter().enumerate() {
        if b {
            let (r, c) = (i / fcols, i % fcols);
            let (cr, cc) = (r / factor as usize, c / factor as usize);
            labels[cr * dims.cols as usize + cc] = true;
        }
    }
    Ok(LabelGrid {
        slide_id: fine.slide_id.clone(),
        mag: target,
        dims,
        labels,
        provenance: fine.provenance,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub slide_id: String,
    pub magnification: Magnification,
    pub index: usize,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub positives: usize,
    pub negatives: usize,
    /// negatives / positives after sampling
    pub balance_ratio: f64,
    pub seed: u64,
}

/// Collects in-tissue cells of every slide. With `undersample`, negatives
/// are drawn uniformly without replacement down to the positive count.
pub fn build_dataset(
    slides: &[(&PatchGrid, &LabelGrid)],
    undersample: bool,
    seed: u64,
) -> Result<Dataset> {
    if slides.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset needs at least one slide".into(),
        ));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (grid, labels) in slides {
        labels.check_matches(grid)?;
        for i in (0..grid.len()).filter(|&i| grid.in_tissue[i]) {
            let entry = DatasetEntry {
                slide_id: grid.slide_id.clone(),
                magnification: grid.mag,
                index: i,
                label: labels.labels[i],
            };
            if entry.label {
                pos.push(entry);
            } else {
                neg.push(entry);
            }
        }
    }
    if pos.is_empty() {
        return Err(Error::NoPositiveClass);
    }
    if undersample && neg.len() > pos.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = index::sample(&mut rng, neg.len(), pos.len()).into_vec();
        keep.sort_unstable();
        neg = keep.into_iter().map(|i| neg[i].clone()).collect();
    }
    let (positives, negatives) = (pos.len(), neg.len());
    let mut entries = pos;
    entries.extend(neg);
    entries.sort_by(|a, b| (&a.slide_id, a.index).cmp(&(&b.slide_id, b.index)));
    Ok(Dataset {
        entries,
        positives,
        negatives,
        balance_ratio: negatives as f64 / positives as f64,
        seed,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelHeader {
    slide_id: String,
    magnification: Magnification,
    patch_size: u32,
    rows: u32,
    cols: u32,
    provenance: Provenance,
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`.
pub fn save_labels(labels: &LabelGrid, dir: &Path, stem: &str) -> Result<()> {
    io::create_dir(dir)?;
    io::write_json(
        &dir.join(format!("{stem}.json")),
        &LabelHeader {
            slide_id: labels.slide_id.clone(),
            magnification: labels.mag,
            patch_size: labels.mag.patch_size(),
            rows: labels.dims.rows,
            cols: labels.dims.cols,
            provenance: labels.provenance,
        },
    )?;
    io::write_bitmap(&dir.join(format!("{stem}.bin")), &labels.labels)
}

pub fn load_labels(dir: &Path, stem: &str) -> Result<LabelGrid> {
    let h: LabelHeader = io::read_json(&dir.join(format!("{stem}.json")))?;
    if h.magnification.patch_size() != h.patch_size {
        return Err(Error::Consistency(format!(
            "{stem}.json: patch size {} does not match magnification {}",
            h.patch_size, h.magnification
        )));
    }
    let dims = GridDims {
        rows: h.rows,
        cols: h.cols,
    };
    let labels = io::read_bitmap(&dir.join(format!("{stem}.bin")), dims.len())?;
    Ok(LabelGrid {
        slide_id: h.slide_id,
        mag: h.magnification,
        dims,
        labels,
        provenance: h.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn square(id: u32, x: f64, y: f64, side: f64) -> Region {
        Region {
            region_id: id,
            polygon: vec![[x, y], [x + side, y], [x + side, y + side], [x, y + side]],
        }
    }

    fn labels_from(rows: u32, cols: u32, on: &[usize]) -> LabelGrid {
        let dims = GridDims { rows, cols };
        let mut l = LabelGrid::zeros("s", Magnification::X40, dims);
        for &i in on {
            l.labels[i] = true;
        }
        l
    }

    #[test]
    fn whole_slide_polygon_labels_everything() {
        let g = build_grid("s", 1000, 700, Magnification::X40).unwrap();
        let set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![square(0, 0.0, 0.0, 1024.0)],
        };
        let l = rasterize_labels(&set, &g, 0.0).unwrap();
        assert!(l.labels.iter().all(|&b| b));
        let empty = rasterize_labels(&AnnotationSet::empty("s"), &g, 0.0).unwrap();
        assert_eq!(empty.positives(), 0);
    }

    #[test]
    fn edge_touching_polygon_does_not_leak() {
        let g = build_grid("s", 1024, 1024, Magnification::X40).unwrap();
        let set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![square(0, 256.0, 256.0, 256.0)],
        };
        let l = rasterize_labels(&set, &g, 0.0).unwrap();
        assert_eq!(l.positives(), 1);
        assert!(l.labels[g.index(1, 1)]);
    }

    #[test]
    fn min_frac_is_strict() {
        let g = build_grid("s", 512, 256, Magnification::X40).unwrap();
        // covers exactly half of cell 0 and nothing of cell 1
        let set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![Region {
                region_id: 0,
                polygon: vec![[0.0, 0.0], [128.0, 0.0], [128.0, 256.0], [0.0, 256.0]],
            }],
        };
        assert!(rasterize_labels(&set, &g, 0.49).unwrap().labels[0]);
        assert!(!rasterize_labels(&set, &g, 0.5).unwrap().labels[0]);
        assert!(rasterize_labels(&set, &g, 1.5).is_err());
    }

    #[test]
    fn degenerate_polygon_is_ignored() {
        let g = build_grid("s", 512, 512, Magnification::X40).unwrap();
        let set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![Region {
                region_id: 3,
                polygon: vec![[10.0, 10.0], [100.0, 100.0], [200.0, 200.0]],
            }],
        };
        assert_eq!(rasterize_labels(&set, &g, 0.0).unwrap().positives(), 0);
    }

    #[test]
    fn validation_rejects_bad_polygons() {
        let mut set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![Region {
                region_id: 0,
                polygon: vec![[0.0, 0.0], [1.0, 1.0]],
            }],
        };
        assert!(set.validate().is_err());
        set.regions[0].polygon = vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]];
        assert!(set.validate().is_err());
        set.regions[0].polygon = vec![[0.0, 0.0], [f64::NAN, 2.0], [2.0, 0.0]];
        assert!(set.validate().is_err());
    }

    #[test]
    fn dilation_examples() {
        let l = labels_from(5, 5, &[12]);
        assert_eq!(expand_labels(&l, 0).labels, l.labels);
        let e = expand_labels(&l, 1);
        let expected: Vec<bool> = (0..25)
            .map(|i| (1..=3).contains(&(i / 5)) && (1..=3).contains(&(i % 5)))
            .collect();
        assert_eq!(e.labels, expected);
        // clipped at the border
        let corner = expand_labels(&labels_from(5, 5, &[0]), 2);
        assert_eq!(corner.positives(), 9);
    }

    #[test]
    fn drop_extremes() {
        let l = labels_from(4, 4, &[0, 5, 3, 15]);
        assert_eq!(drop_tumor_regions(&l, 0.0, 1).unwrap().labels, l.labels);
        assert_eq!(drop_tumor_regions(&l, 1.0, 1).unwrap().positives(), 0);
        assert!(drop_tumor_regions(&l, 1.1, 1).is_err());
        assert_eq!(
            drop_tumor_regions(&l, 0.5, 9).unwrap(),
            drop_tumor_regions(&l, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn projection() {
        let fine = labels_from(10, 10, &[]);
        let c = project_labels(&fine, Magnification::X5).unwrap();
        assert_eq!((c.dims.rows, c.dims.cols), (2, 2));
        assert_eq!(c.positives(), 0);
        let fine = labels_from(10, 10, &[99]);
        for mag in [Magnification::X20, Magnification::X10, Magnification::X5] {
            assert_eq!(project_labels(&fine, mag).unwrap().positives(), 1);
        }
        let c = project_labels(&fine, Magnification::X20).unwrap();
        assert!(project_labels(&c, Magnification::X40).is_err());
    }

    #[test]
    fn projection_matches_direct_rasterization() {
        let (w, h) = (5000, 4100);
        let set = AnnotationSet {
            slide_id: "s".into(),
            regions: vec![
                Region {
                    region_id: 0,
                    polygon: vec![[300.0, 400.0], [1900.0, 700.0], [900.0, 2500.0]],
                },
                square(1, 3000.0, 3000.0, 10.0),
            ],
        };
        let fine = rasterize_labels(
            &set,
            &build_grid("s", w, h, Magnification::X40).unwrap(),
            0.0,
        )
        .unwrap();
        for mag in [Magnification::X20, Magnification::X10, Magnification::X5] {
            let direct = rasterize_labels(&set, &build_grid("s", w, h, mag).unwrap(), 0.0).unwrap();
            assert_eq!(project_labels(&fine, mag).unwrap().labels, direct.labels);
        }
    }

    #[test]
    fn undersampling_balances() {
        let g = build_grid("s", 256 * 44, 256 * 25, Magnification::X40).unwrap();
        assert_eq!(g.len(), 1100);
        let l = labels_from(25, 44, &(0..100).map(|i| i * 11).collect::<Vec<_>>());
        let d = build_dataset(&[(&g, &l)], true, 5).unwrap();
        assert_eq!((d.positives, d.negatives), (100, 100));
        assert_eq!(d, build_dataset(&[(&g, &l)], true, 5).unwrap());
        let all = build_dataset(&[(&g, &l)], false, 5).unwrap();
        assert_eq!(all.entries.len(), 1100);
        let none = labels_from(25, 44, &[]);
        assert!(matches!(
            build_dataset(&[(&g, &none)], true, 5),
            Err(Error::NoPositiveClass)
        ));
    }

    #[test]
    fn label_file_round_trip() {
        let l = apply_noise(&labels_from(3, 4, &[1, 6]), &NoiseConfig::weak(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_labels(&l, dir.path(), "labels_40").unwrap();
        assert_eq!(load_labels(dir.path(), "labels_40").unwrap(), l);
    }

    fn arb_labels() -> impl Strategy<Value = LabelGrid> {
        (1u32..12, 1u32..12).prop_flat_map(|(r, c)| {
            proptest::collection::vec(proptest::bool::weighted(0.1), (r * c) as usize).prop_map(
                move |bits| {
                    let mut l = labels_from(r, c, &[]);
                    l.labels = bits;
                    l
                },
            )
        })
    }

    proptest! {
        #[test]
        fn expansion_composes(l in arb_labels(), r1 in 0u32..3, r2 in 0u32..3) {
            let twice = expand_labels(&expand_labels(&l, r1), r2);
            prop_assert_eq!(twice.labels, expand_labels(&l, r1 + r2).labels);
        }

        #[test]
        fn expansion_keeps_and_dropping_never_adds(l in arb_labels(), r in 0u32..3, seed: u64) {
            let e = expand_labels(&l, r);
            let d = drop_tumor_regions(&l, 0.5, seed).unwrap();
            for i in 0..l.labels.len() {
                prop_assert!(!l.labels[i] || e.labels[i]);
                prop_assert!(!d.labels[i] || l.labels[i]);
            }
        }

        #[test]
        fn noisy_labels_differ_only_in_margin_or_dropped(l in arb_labels(), r in 0u32..3, seed: u64) {
            let cfg = NoiseConfig { margin_cells: r, eta: 0.4, seed };
            let noisy = apply_noise(&l, &cfg).unwrap();
            let dilated = expand_labels(&l, r);
            for i in 0..l.labels.len() {
                if noisy.labels[i] != l.labels[i] {
                    // added only inside the margin ring; removed only where dropped
                    prop_assert!((dilated.labels[i] && !l.labels[i]) || (l.labels[i] && !noisy.labels[i]));
                }
            }
        }

        #[test]
        fn adding_a_region_never_clears_labels(x in 0.0f64..900.0, y in 0.0f64..900.0, s in 1.0f64..400.0) {
            let g = build_grid("s", 1300, 1300, Magnification::X40).unwrap();
            let base = AnnotationSet { slide_id: "s".into(), regions: vec![square(0, 200.0, 300.0, 333.0)] };
            let mut more = base.clone();
            more.regions.push(square(1, x, y, s));
            let a = rasterize_labels(&base, &g, 0.0).unwrap();
            let b = rasterize_labels(&more, &g, 0.0).unwrap();
            for i in 0..g.len() {
                prop_assert!(!a.labels[i] || b.labels[i]);
            }
        }
    }
}
