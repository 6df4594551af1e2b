//! Deterministic stand-in classifiers that emit prediction maps.
//!
//! They make the pipeline runnable end to end without a neural network:
//! the oracle echoes ground truth, the noisy oracle corrupts it in a
//! controlled way, the colour statistic scores patch pixels, and the
//! fraction threshold fires on cells mostly covered by tumor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annot::LabelGrid;
use crate::ensemble::PredictionMap;
use crate::error::{Error, Result};
use crate::grid::{extract_patch, PatchGrid};
use crate::pyramid::PyramidImage;

/// Rectangle of grid cells, `[row0, row0+rows) × [col0, col0+cols)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRegion {
    pub row0: u32,
    pub col0: u32,
    pub rows: u32,
    pub cols: u32,
}

impl CellRegion {
    pub fn contains(&self, row: u32, col: u32) -> bool {
        row >= self.row0
            && row < self.row0 + self.rows
            && col >= self.col0
            && col < self.col0 + self.cols
    }
}

/// Weights `[bias, red, green, blue]` on the patch mean colour in `[0, 1]`
/// that separate the synthetic tumor hue from normal tissue and background.
pub const SYNTHETIC_COLOR_WEIGHTS: [f64; 4] = [8.0, -12.0, 0.0, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StubKind {
    Oracle,
    NoisyOracle {
        flip_p: f64,
        score_noise_sd: f64,
        /// Restricts label flips to these cells; everywhere when absent.
        #[serde(default)]
        error_support: Option<CellRegion>,
    },
    ColorStat {
        weights: [f64; 4],
    },
    FractionThreshold {
        theta: f64,
    },
}

impl StubKind {
    pub fn name(&self) -> &'static str {
        match self {
            StubKind::Oracle => "oracle",
            StubKind::NoisyOracle { .. } => "noisy_oracle",
            StubKind::ColorStat { .. } => "color_stat",
            StubKind::FractionThreshold { .. } => "fraction_threshold",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubSpec {
    pub kind: StubKind,
    pub seed: u64,
}

impl StubSpec {
    pub fn new(kind: StubKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match &self.kind {
            StubKind::Oracle => Ok(()),
            StubKind::NoisyOracle {
                flip_p,
                score_noise_sd,
                ..
            } => {
                if !(0.0..=1.0).contains(flip_p) {
                    return bad("flip_p must lie in [0, 1]");
                }
                if !(*score_noise_sd >= 0.0 && score_noise_sd.is_finite()) {
                    return bad("score_noise_sd must be non-negative");
                }
                Ok(())
            }
            StubKind::ColorStat { weights } => {
                if weights.iter().any(|w| !w.is_finite()) {
                    return bad("colour weights must be finite");
                }
                Ok(())
            }
            StubKind::FractionThreshold { theta } => {
                if !(0.0..=1.0).contains(theta) {
                    return bad("theta must lie in [0, 1]");
                }
                Ok(())
            }
        }
    }
}

/// Whatever a stub may need; each kind checks for its own input.
#[derive(Clone, Copy, Default)]
pub struct StubInputs<'a> {
    pub labels: Option<&'a LabelGrid>,
    pub pyramid: Option<&'a PyramidImage>,
    pub tumor_fractions: Option<&'a [f64]>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Scores every cell of `grid`.
pub fn run_stub(
    spec: &StubSpec,
    grid: &PatchGrid,
    inputs: StubInputs<'_>,
) -> Result<PredictionMap> {
    spec.validate()?;
    let missing =
        |what: &str| Error::InvalidArgument(format!("{} stub needs {what}", spec.kind.name()));
    let labels = || -> Result<&LabelGrid> {
        let l = inputs.labels.ok_or_else(|| missing("clean labels"))?;
        l.check_matches(grid)?;
        Ok(l)
    };
    let scores: Vec<f32> = match &spec.kind {
        StubKind::Oracle => labels()?.labels.iter().map(|&b| b as u8 as f32).collect(),
        StubKind::NoisyOracle {
            flip_p,
            score_noise_sd,
            error_support,
        } => {
            let l = labels()?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let noise = Normal::new(0.0, *score_noise_sd)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            l.labels
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let (row, col) = grid.row_col(i);
                    // one flip draw and one noise draw per cell, always consumed
                    let u: f64 = rng.random();
                    let eps = noise.sample(&mut rng);
                    let eligible = error_support.is_none_or(|r| r.contains(row, col));
                    let label = if eligible && u < *flip_p { !y } else { y };
                    (label as u8 as f64 + eps).clamp(0.0, 1.0) as f32
                })
                .collect()
        }
        StubKind::ColorStat { weights } => {
            let pyramid = inputs.pyramid.ok_or_else(|| missing("slide pixels"))?;
            if pyramid.slide_id != grid.slide_id {
                return Err(Error::Consistency("slide and grid ids differ".into()));
            }
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let [r, g, b] = extract_patch(pyramid, grid, i)?.mean_rgb();
                    let z = weights[0] + (weights[1] * r + weights[2] * g + weights[3] * b) / 255.0;
                    Ok(sigmoid(z) as f32)
                })
                .collect::<Result<Vec<_>>>()?
        }
        StubKind::FractionThreshold { theta } => {
            let f = inputs
                .tumor_fractions
                .ok_or_else(|| missing("per-cell tumor fractions"))?;
            if f.len() != grid.len() {
                return Err(Error::Consistency(
                    "tumor fractions do not match grid".into(),
                ));
            }
            f.iter()
                .map(|&x| if x >= *theta { 1.0 } else { 0.0 })
                .collect()
        }
    };
    PredictionMap::new(
        grid.slide_id.clone(),
        format!("{}-{}", spec.kind.name(), grid.mag.value()),
        grid.mag,
        grid.dims,
        scores,
    )
}
