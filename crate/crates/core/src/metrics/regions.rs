use serde::{Deserialize, Serialize};

use crate::annot::LabelGrid;
use crate::components::connected_components;
use crate::error::{Error, Result};

/// Diameter thresholds separating isolated tumor cells, micro- and
/// macro-metastases (defaults: 0.2 mm and 2 mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeThresholds {
    pub micro_um: f64,
    pub macro_um: f64,
}

impl Default for SizeThresholds {
    fn default() -> Self {
        Self {
            micro_um: 200.0,
            macro_um: 2000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Itc,
    Micro,
    Macro,
}

impl SizeThresholds {
    pub fn classify(&self, diameter_um: f64) -> SizeClass {
        if diameter_um >= self.macro_um {
            SizeClass::Macro
        } else if diameter_um >= self.micro_um {
            SizeClass::Micro
        } else {
            SizeClass::Itc
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetastasisRegion {
    pub region_id: u32,
    /// Row-major indices on the finest grid.
    pub cells: Vec<usize>,
    pub area_um2: f64,
    /// Largest distance between cell centers plus one cell diagonal: an
    /// upper bound on the true extent at grid resolution.
    pub max_diameter_um: f64,
    pub size_class: SizeClass,
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (Andrew's monotone chain) of integer points.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() + 1);
    for pass in [&pts[..], &pts.iter().rev().copied().collect::<Vec<_>>()[..]] {
        let base = hull.len();
        for &p in pass {
            while hull.len() >= base + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Squared largest pairwise distance between cell centers, in cells².
fn max_sq_distance(cells: &[usize], cols: usize) -> i64 {
    let pts: Vec<(i64, i64)> = cells
        .iter()
        .map(|&i| ((i % cols) as i64, (i / cols) as i64))
        .collect();
    let hull = convex_hull(pts);
    let mut best = 0;
    for (k, a) in hull.iter().enumerate() {
        for b in &hull[k + 1..] {
            best = best.max((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2));
        }
    }
    best
}

/// 8-connected tumor regions of a finest-grid label map, classified by size.
pub fn find_regions(
    labels: &LabelGrid,
    microns_per_pixel: f64,
    thresholds: &SizeThresholds,
) -> Result<Vec<MetastasisRegion>> {
    if !(microns_per_pixel > 0.0) {
        return Err(Error::InvalidArgument(
            "microns_per_pixel must be positive".into(),
        ));
    }
    let cell_um = labels.mag.patch_size() as f64 * microns_per_pixel;
    let cols = labels.dims.cols as usize;
    Ok(connected_components(&labels.labels, labels.dims)
        .into_iter()
        .enumerate()
        .map(|(id, cells)| {
            let span = (max_sq_distance(&cells, cols) as f64).sqrt();
            let max_diameter_um = (span + std::f64::consts::SQRT_2) * cell_um;
            MetastasisRegion {
                region_id: id as u32,
                area_um2: cells.len() as f64 * cell_um * cell_um,
                size_class: thresholds.classify(max_diameter_um),
                max_diameter_um,
                cells,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRate {
    pub detected: usize,
    pub total: usize,
    /// `None` for an empty class.
    pub rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub itc: ClassRate,
    pub micro: ClassRate,
    #[serde(rename = "macro")]
    pub macro_: ClassRate,
}

impl DetectionRates {
    pub fn get(&self, class: SizeClass) -> &ClassRate {
        match class {
            SizeClass::Itc => &self.itc,
            SizeClass::Micro => &self.micro,
            SizeClass::Macro => &self.macro_,
        }
    }

    fn get_mut(&mut self, class: SizeClass) -> &mut ClassRate {
        match class {
            SizeClass::Itc => &mut self.itc,
            SizeClass::Micro => &mut self.micro,
            SizeClass::Macro => &mut self.macro_,
        }
    }

    /// Sums counts from several slides.
    pub fn merge(&mut self, other: &DetectionRates) {
        for class in [SizeClass::Itc, SizeClass::Micro, SizeClass::Macro] {
            let o = *other.get(class);
            let c = self.get_mut(class);
            c.detected += o.detected;
            c.total += o.total;
            c.rate = (c.total > 0).then(|| c.detected as f64 / c.total as f64);
        }
    }
}

/// A region counts as detected when at least one of its cells is predicted
/// positive.
pub fn detection_rate(regions: &[MetastasisRegion], pred: &[bool]) -> DetectionRates {
    let mut out = DetectionRates::default();
    for r in regions {
        let c = out.get_mut(r.size_class);
        c.total += 1;
        if r.cells.iter().any(|&i| pred[i]) {
            c.detected += 1;
        }
    }
    for class in [SizeClass::Itc, SizeClass::Micro, SizeClass::Macro] {
        let c = out.get_mut(class);
        c.rate = (c.total > 0).then(|| c.detected as f64 / c.total as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridDims, Magnification};

    fn labels(rows: u32, cols: u32, on: impl IntoIterator<Item = usize>) -> LabelGrid {
        let mut l = LabelGrid::zeros("s", Magnification::X40, GridDims { rows, cols });
        for i in on {
            l.labels[i] = true;
        }
        l
    }

    #[test]
    fn no_positives_no_regions() {
        assert!(
            find_regions(&labels(3, 3, []), 0.25, &SizeThresholds::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn single_cell_is_itc() {
        let r = find_regions(&labels(3, 3, [4]), 0.25, &SizeThresholds::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].max_diameter_um - 64.0 * 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(r[0].size_class, SizeClass::Itc);
        assert_eq!(r[0].area_um2, 64.0 * 64.0);
    }

    #[test]
    fn long_strip_is_macro() {
        let r = find_regions(&labels(3, 50, 50..90), 0.25, &SizeThresholds::default()).unwrap();
        assert_eq!(r.len(), 1);
        // 39 cells between centers plus a diagonal
        assert!(
            (r[0].max_diameter_um - (39.0 + 2f64.sqrt()) * 64.0).abs() < 1e-9,
            "{}",
            r[0].max_diameter_um
        );
        assert!(r[0].max_diameter_um >= 2560.0);
        assert_eq!(r[0].size_class, SizeClass::Macro);
    }

    #[test]
    fn hull_diameter_matches_brute_force() {
        let cells: Vec<usize> = vec![0, 1, 12, 13, 25, 26, 38, 50, 62, 63, 64, 75];
        let cols = 12;
        let brute = cells
            .iter()
            .flat_map(|&a| cells.iter().map(move |&b| (a, b)))
            .map(|(a, b)| {
                let (ax, ay, bx, by) = (
                    (a % cols) as i64,
                    (a / cols) as i64,
                    (b % cols) as i64,
                    (b / cols) as i64,
                );
                (ax - bx).pow(2) + (ay - by).pow(2)
            })
            .max()
            .unwrap();
        assert_eq!(max_sq_distance(&cells, cols), brute);
    }

    #[test]
    fn detection_counts() {
        let l = labels(1, 9, [0, 1, 4, 8]);
        let regions = find_regions(&l, 0.25, &SizeThresholds::default()).unwrap();
        assert_eq!(regions.len(), 3);
        let all = detection_rate(&regions, &l.labels);
        assert_eq!(all.itc.rate, Some(1.0));
        assert_eq!(all.micro.rate, None);
        let none = detection_rate(&regions, &[false; 9]);
        assert_eq!(none.itc.rate, Some(0.0));
        let mut half = [false; 9];
        half[1] = true;
        half[4] = true;
        let d = detection_rate(&regions, &half);
        assert_eq!((d.itc.detected, d.itc.total), (2, 3));
        let mut merged = d;
        merged.merge(&none);
        assert_eq!(merged.itc.rate, Some(2.0 / 6.0));
    }
}
