//! Multi-magnification ensembles.
//!
//! Each member scores the cells of its own magnification's grid. Members are
//! brought to the finest (40×) grid by block replication, then combined by
//! the uniform average.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDims, Magnification};
use crate::io;

/// Default decision threshold; cells score positive when strictly above it.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-cell scores of one model on one slide.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    pub slide_id: String,
    pub model_id: String,
    pub mag: Magnification,
    pub dims: GridDims,
    pub scores: Vec<f32>,
}

impl PredictionMap {
    pub fn new(
        slide_id: impl Into<String>,
        model_id: impl Into<String>,
        mag: Magnification,
        dims: GridDims,
        scores: Vec<f32>,
    ) -> Result<Self> {
        let map = Self {
            slide_id: slide_id.into(),
            model_id: model_id.into(),
            mag,
            dims,
            scores,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.dims.len() {
            return Err(Error::Consistency(format!(
                "map {}: {} scores for a {}x{} grid",
                self.model_id,
                self.scores.len(),
                self.dims.rows,
                self.dims.cols
            )));
        }
        if let Some(i) = self.scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument(format!(
                "map {}: score {} at cell {i} is not in [0, 1]",
                self.model_id, self.scores[i]
            )));
        }
        Ok(())
    }

    pub fn scores_f64(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| s as f64).collect()
    }
}

/// Replicates each cell onto its `j × j` nested finest cells
/// (`j = patch_size / 256`) and clips to `finest`.
pub fn upsample_to_finest(map: &PredictionMap, finest: GridDims) -> Result<PredictionMap> {
    let j = map.mag.cells_per_side();
    if finest.coarsen(j) != map.dims {
        return Err(Error::Consistency(format!(
            "{} map of {}x{} cells does not cover a {}x{} finest grid",
            map.mag, map.dims.rows, map.dims.cols, finest.rows, finest.cols
        )));
    }
    if j == 1 {
        return Ok(map.clone());
    }
    let mut scores = Vec::with_capacity(finest.len());
    for r in 0..finest.rows {
        let src_row = (r / j) as usize * map.dims.cols as usize;
        for c in 0..finest.cols {
            scores.push(map.scores[src_row + (c / j) as usize]);
        }
    }
    Ok(PredictionMap {
        slide_id: map.slide_id.clone(),
        model_id: map.model_id.clone(),
        mag: Magnification::FINEST,
        dims: finest,
        scores,
    })
}

/// Uniform average of finest-grid maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedMap {
    pub slide_id: String,
    pub dims: GridDims,
    pub scores: Vec<f32>,
    pub members: Vec<String>,
}

impl FusedMap {
    /// The fused scores in wire form, tagged with `model_id`.
    pub fn to_prediction_map(&self, model_id: impl Into<String>) -> PredictionMap {
        PredictionMap {
            slide_id: self.slide_id.clone(),
            model_id: model_id.into(),
            mag: Magnification::FINEST,
            dims: self.dims,
            scores: self.scores.clone(),
        }
    }

    pub fn scores_f64(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| s as f64).collect()
    }
}

/// Per-cell arithmetic mean over `K ≥ 1` finest-grid members.
///
/// Member values are summed in sorted order in `f64`, so the result does
/// not depend on member order.
pub fn fuse_uniform(members: &[PredictionMap]) -> Result<FusedMap> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one member".into()))?;
    for m in members {
        if m.mag != Magnification::FINEST {
            return Err(Error::Consistency(format!(
                "member {} is at {}; upsample to the finest grid first",
                m.model_id, m.mag
            )));
        }
        if m.slide_id != first.slide_id || m.dims != first.dims {
            return Err(Error::Consistency(format!(
                "member {} ({}, {}x{}) does not match {} ({}, {}x{})",
                m.model_id,
                m.slide_id,
                m.dims.rows,
                m.dims.cols,
                first.model_id,
                first.slide_id,
                first.dims.rows,
                first.dims.cols
            )));
        }
        m.validate()?;
    }
    let k = members.len() as f64;
    let mut cell = Vec::with_capacity(members.len());
    let scores = (0..first.dims.len())
        .map(|i| {
            cell.clear();
            cell.extend(members.iter().map(|m| m.scores[i]));
            cell.sort_by(f32::total_cmp);
            let sum: f64 = cell.iter().map(|&s| s as f64).sum();
            (sum / k) as f32
        })
        .collect();
    Ok(FusedMap {
        slide_id: first.slide_id.clone(),
        dims: first.dims,
        scores,
        members: members.iter().map(|m| m.model_id.clone()).collect(),
    })
}

/// Upsamples every member to `finest` and fuses them.
pub fn fuse_magnifications(members: &[PredictionMap], finest: GridDims) -> Result<FusedMap> {
    let up = members
        .iter()
        .map(|m| upsample_to_finest(m, finest))
        .collect::<Result<Vec<_>>>()?;
    fuse_uniform(&up)
}

/// `score > threshold`.
pub fn binarize(scores: &[f32], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s as f64 > threshold).collect()
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    slide_id: String,
    model_id: String,
    magnification: Magnification,
    patch_size: u32,
    rows: u32,
    cols: u32,
    dtype: String,
}

/// Writes `<name>.json` and `<name>.f32` (row-major little-endian f32).
pub fn save_prediction_map(map: &PredictionMap, dir: &Path, name: &str) -> Result<()> {
    map.validate()?;
    io::create_dir(dir)?;
    io::write_json(
        &dir.join(format!("{name}.json")),
        &MapHeader {
            slide_id: map.slide_id.clone(),
            model_id: map.model_id.clone(),
            magnification: map.mag,
            patch_size: map.mag.patch_size(),
            rows: map.dims.rows,
            cols: map.dims.cols,
            dtype: "f32le".into(),
        },
    )?;
    let mut bytes = Vec::with_capacity(map.scores.len() * 4);
    for s in &map.scores {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    io::write_bytes(&dir.join(format!("{name}.f32")), &bytes)
}

/// Reads and validates a prediction map in the wire format.
pub fn load_prediction_map(dir: &Path, name: &str) -> Result<PredictionMap> {
    let header_path = dir.join(format!("{name}.json"));
    let h: MapHeader = io::read_json(&header_path)?;
    let what = header_path.display().to_string();
    if h.dtype != "f32le" {
        return Err(Error::format(
            &what,
            format!("unsupported dtype {:?}", h.dtype),
        ));
    }
    if h.magnification.patch_size() != h.patch_size {
        return Err(Error::Consistency(format!(
            "{what}: patch size {} does not match magnification {}",
            h.patch_size, h.magnification
        )));
    }
    let dims = GridDims {
        rows: h.rows,
        cols: h.cols,
    };
    let bytes = io::read_bytes(&dir.join(format!("{name}.f32")))?;
    if bytes.len() != dims.len() * 4 {
        return Err(Error::format(
            format!("{name}.f32"),
            format!("{} bytes, expected {}", bytes.len(), dims.len() * 4),
        ));
    }
    let scores = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let map = PredictionMap {
        slide_id: h.slide_id,
        model_id: h.model_id,
        mag: h.magnification,
        dims,
        scores,
    };
    map.validate()
        .map_err(|e| Error::format(&what, e.to_string()))?;
    Ok(map)
}
