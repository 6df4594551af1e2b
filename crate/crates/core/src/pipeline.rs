//! In-memory composition of the stages for one slide: segmentation, grids
//! at every magnification, clean labels, and evaluation of a fused map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annot::{project_labels, rasterize_labels, AnnotationSet, LabelGrid};
use crate::ensemble::{binarize, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::{build_grid, filter_by_tissue, Magnification, PatchGrid, DEFAULT_TAU};
use crate::metrics::{
    detection_rate, evaluate_slide, find_regions, DetectionRates, SizeThresholds, SlideMetrics,
};
use crate::pyramid::PyramidImage;
use crate::tissue::{segment_tissue, SegmentOptions, TissueMask};

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub segment: SegmentOptions,
    pub tau: f64,
    pub min_frac: f64,
    pub threshold: f64,
    pub sizes: SizeThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment: SegmentOptions::default(),
            tau: DEFAULT_TAU,
            min_frac: 0.0,
            threshold: DEFAULT_THRESHOLD,
            sizes: SizeThresholds::default(),
        }
    }
}

/// Everything derived from a slide and its annotations before any model runs.
#[derive(Clone, Debug)]
pub struct PreparedSlide {
    pub slide_id: String,
    pub microns_per_pixel: f64,
    pub mask: TissueMask,
    pub grids: BTreeMap<Magnification, PatchGrid>,
    pub clean: BTreeMap<Magnification, LabelGrid>,
}

impl PreparedSlide {
    pub fn finest_grid(&self) -> &PatchGrid {
        &self.grids[&Magnification::FINEST]
    }

    pub fn finest_labels(&self) -> &LabelGrid {
        &self.clean[&Magnification::FINEST]
    }
}

/// Segments the slide, builds all four grids, and rasterizes the clean
/// labels once on the finest grid before projecting them to coarser ones.
pub fn prepare_slide(
    pyramid: &PyramidImage,
    annotations: &AnnotationSet,
    cfg: &PipelineConfig,
) -> Result<PreparedSlide> {
    if annotations.slide_id != pyramid.slide_id {
        return Err(Error::Consistency(format!(
            "annotations for {:?} given with slide {:?}",
            annotations.slide_id, pyramid.slide_id
        )));
    }
    let mask = segment_tissue(pyramid, &cfg.segment)?.mask;
    let mut grids = BTreeMap::new();
    for mag in Magnification::ALL {
        let g = build_grid(&pyramid.slide_id, pyramid.width(), pyramid.height(), mag)?;
        grids.insert(mag, filter_by_tissue(&g, &mask, cfg.tau)?);
    }
    let fine = rasterize_labels(annotations, &grids[&Magnification::FINEST], cfg.min_frac)?;
    let mut clean = BTreeMap::new();
    for mag in Magnification::ALL {
        clean.insert(mag, project_labels(&fine, mag)?);
    }
    Ok(PreparedSlide {
        slide_id: pyramid.slide_id.clone(),
        microns_per_pixel: pyramid.microns_per_pixel,
        mask,
        grids,
        clean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideEvaluation {
    pub metrics: SlideMetrics,
    pub detection: DetectionRates,
}

/// Scores a finest-grid score map against the clean labels (in-tissue cells
/// only) and computes per-size-class detection rates.
pub fn evaluate_scores(
    prepared: &PreparedSlide,
    scores: &[f32],
    cfg: &PipelineConfig,
) -> Result<SlideEvaluation> {
    let grid = prepared.finest_grid();
    let labels = prepared.finest_labels();
    if scores.len() != grid.len() {
        return Err(Error::Consistency(format!(
            "{} scores for a {}-cell finest grid",
            scores.len(),
            grid.len()
        )));
    }
    let s64: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    let metrics = evaluate_slide(
        &prepared.slide_id,
        &s64,
        &labels.labels,
        &grid.in_tissue,
        cfg.threshold,
    )?;
    let regions = find_regions(labels, prepared.microns_per_pixel, &cfg.sizes)?;
    let detection = detection_rate(&regions, &binarize(scores, cfg.threshold));
    Ok(SlideEvaluation { metrics, detection })
}
