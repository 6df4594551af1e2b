//! The `tumormap` command line. Every stage reads and writes only the file
//! formats of the library, so external tools can replace any stage.
//!
//! Layout: `--slides` is either one slide directory (it holds `meta.json`)
//! or a cohort directory of slide directories. Stage outputs go to
//! `<out>/<slide_id>/`, with reports written at the top of `<out>`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::annot::{
    apply_noise, load_annotations, load_labels, project_labels, rasterize_labels, save_annotations,
    save_labels, tumor_fractions, AnnotationSet, LabelGrid, NoiseConfig,
};
use crate::ensemble::{
    binarize, fuse_magnifications, load_prediction_map, save_prediction_map, upsample_to_finest,
    DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::grid::{
    build_grid, export_patches, filter_by_tissue, load_grid, save_grid, Magnification, PatchGrid,
    DEFAULT_TAU,
};
use crate::io;
use crate::metrics::{
    aggregate, detection_rate, evaluate_slide, find_regions, welch_t, DetectionRates, EvalReport,
    SizeThresholds, TABLE_HEADER,
};
use crate::pyramid::{load_pyramid, load_slide_info, save_pyramid, SlideInfo};
use crate::stubs::{run_stub, StubInputs, StubKind, StubSpec, SYNTHETIC_COLOR_WEIGHTS};
use crate::synth::{generate_synthetic_slide, SynthConfig};
use crate::tissue::{load_mask, save_mask, segment_tissue, SegmentOptions, SegmentationMethod};

#[derive(Debug, Parser)]
#[command(
    name = "tumormap",
    version,
    about = "Tumor localization on whole-slide images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic slides with ground-truth annotations.
    Synth(SynthArgs),
    /// Segment tissue on each slide.
    Segment(SegmentArgs),
    /// Build tissue-filtered patch grids.
    Grid(GridArgs),
    /// Rasterize annotations into clean label grids.
    Label(LabelArgs),
    /// Derive coarse-annotation labels from the clean ones.
    Noise(NoiseArgs),
    /// Write in-tissue patches and labels for external classifiers.
    ExportPatches(ExportArgs),
    /// Run a stand-in classifier and write prediction maps.
    PredictStub(PredictArgs),
    /// Fuse per-magnification prediction maps on the finest grid.
    Fuse(FuseArgs),
    /// Evaluate a prediction map against clean labels.
    Eval(EvalArgs),
    /// Detection rate per metastasis size class.
    DetectRate(DetectArgs),
    /// Welch's t-test between two evaluation reports.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CohortArgs {
    /// Slide directory or a directory of slide directories.
    #[arg(long)]
    pub slides: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// Cohort directory; slide `i` goes to `<out>/synth-<seed+i>/`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: u32,
    #[arg(long, default_value_t = 10240)]
    pub width: u32,
    #[arg(long, default_value_t = 10240)]
    pub height: u32,
    #[arg(long, default_value_t = 2)]
    pub blobs: u32,
    #[arg(long, default_value_t = 3)]
    pub tumors: u32,
    #[arg(long, default_value_t = 100.0)]
    pub tumor_min_um: f64,
    #[arg(long, default_value_t = 600.0)]
    pub tumor_max_um: f64,
    /// Probability that a background pixel is a dark speckle.
    #[arg(long, default_value_t = 0.0)]
    pub speckle: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Colorization,
    Saturation,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Colorization)]
    pub method: MethodArg,
    /// Pyramid level; defaults to downsample 32.
    #[arg(long)]
    pub level: Option<usize>,
    /// Disk radius of a binary closing on the mask, 0 for none.
    #[arg(long, default_value_t = 0)]
    pub closing: u32,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// The 40× grid is always built as well.
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Annotation file (single slide) or directory of `<slide_id>.json`;
    /// defaults to `annotations.json` inside each slide directory.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub min_frac: f64,
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// `weak` or `strong`; explicit flags override the preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub margin_cells: Option<u32>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelSet {
    Clean,
    Noisy,
}

impl LabelSet {
    fn stem(self, mag: Magnification) -> String {
        match self {
            LabelSet::Clean => format!("labels_{}", mag.value()),
            LabelSet::Noisy => format!("noisy_labels_{}", mag.value()),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
    #[arg(long, value_enum, default_value_t = LabelSet::Clean)]
    pub labels: LabelSet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Oracle,
    NoisyOracle,
    ColorStat,
    FractionThreshold,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0.0)]
    pub flip_p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Bias and red, green, blue weights on the patch mean colour in [0, 1].
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 4,
        allow_negative_numbers = true
    )]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
    /// Labels the oracle stubs read.
    #[arg(long, value_enum, default_value_t = LabelSet::Clean)]
    pub labels: LabelSet,
    /// Annotations for the fraction-threshold stub, as for `label`.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Map name; defaults to the stub kind.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Reads `pred_<model>_<mag>` for every magnification.
    #[arg(long, default_value = "oracle")]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_value = "40,20,10,5")]
    pub mags: Vec<Magnification>,
    /// Output map name; defaults to `fused_<model>`.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Map name inside each slide directory, e.g. `fused_oracle`.
    #[arg(long, default_value = "fused_oracle")]
    pub map: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Report path; defaults to `<out>/report_<map>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[arg(long, default_value = "fused_oracle")]
    pub map: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 200.0)]
    pub micro_um: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub macro_um: f64,
    /// Report path; defaults to `<out>/detection_<map>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "mcc")]
    pub metric: String,
    /// Also write the result as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Grid(a) => grid(a),
        Command::Label(a) => label(a),
        Command::Noise(a) => noise(a),
        Command::ExportPatches(a) => export(a),
        Command::PredictStub(a) => predict(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::DetectRate(a) => detect(a),
        Command::Compare(a) => compare(a),
    }
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Slide directories under `--slides`, sorted by path.
pub fn discover_slides(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join("meta.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::read(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "--slides {}: no slide directories found",
            path.display()
        )));
    }
    Ok(dirs)
}

struct SlideCtx {
    dir: PathBuf,
    info: SlideInfo,
    run: PathBuf,
}

/// Runs `f` on every slide (in parallel up to `--jobs`) and prints each
/// returned log line in slide order.
fn per_slide(cohort: &CohortArgs, f: impl Fn(&SlideCtx) -> Result<String> + Sync) -> Result<()> {
    let dirs = discover_slides(&cohort.slides)?;
    let ctxs = dirs
        .into_iter()
        .map(|dir| {
            let info = load_slide_info(&dir)?;
            let run = cohort.out.join(&info.slide_id);
            Ok(SlideCtx { dir, info, run })
        })
        .collect::<Result<Vec<_>>>()?;
    let lines = with_jobs(cohort.jobs, || {
        ctxs.par_iter()
            .map(|c| {
                io::create_dir(&c.run)?;
                f(c)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn with_finest(mags: &[Magnification]) -> Vec<Magnification> {
    let mut all: Vec<Magnification> = mags.to_vec();
    all.push(Magnification::FINEST);
    all.sort_by_key(|m| std::cmp::Reverse(m.value()));
    all.dedup();
    all
}

/// Stable per-(seed, slide, magnification) stream seed.
fn derive_seed(seed: u64, slide_id: &str, mag: Option<Magnification>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in slide_id
        .bytes()
        .chain(mag.map_or(0, |m| m.value()).to_le_bytes())
    {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn grid_path(run: &Path, mag: Magnification) -> PathBuf {
    run.join(format!("grid_{}.json", mag.value()))
}

fn pred_name(model: &str, mag: Magnification) -> String {
    format!("pred_{model}_{}", mag.value())
}

fn annotations_for(flag: Option<&Path>, ctx: &SlideCtx) -> Result<AnnotationSet> {
    let path = match flag {
        None => ctx.dir.join("annotations.json"),
        Some(p) if p.is_dir() => {
            let direct = p.join(format!("{}.json", ctx.info.slide_id));
            if direct.is_file() {
                direct
            } else {
                p.join(&ctx.info.slide_id).join("annotations.json")
            }
        }
        Some(p) => p.to_path_buf(),
    };
    let set = load_annotations(&path)?;
    if set.slide_id != ctx.info.slide_id {
        return Err(Error::Consistency(format!(
            "{} annotates {:?}, not {:?}",
            path.display(),
            set.slide_id,
            ctx.info.slide_id
        )));
    }
    Ok(set)
}

fn synth(a: SynthArgs) -> Result<()> {
    let configs: Vec<SynthConfig> = (0..a.count)
        .map(|i| SynthConfig {
            width: a.width,
            height: a.height,
            tissue_blob_count: a.blobs,
            tumor_region_count: a.tumors,
            tumor_diameter_range_um: (a.tumor_min_um, a.tumor_max_um),
            dark_noise_speckle_density: a.speckle,
            seed: a.seed.wrapping_add(i as u64),
            ..SynthConfig::default()
        })
        .collect();
    let lines = with_jobs(a.jobs, || {
        configs
            .par_iter()
            .map(|cfg| {
                let slide = generate_synthetic_slide(cfg)?;
                let dir = a.out.join(cfg.slide_id());
                save_pyramid(&slide.pyramid, &dir)?;
                save_annotations(&slide.annotations, &dir.join("annotations.json"))?;
                Ok(format!(
                    "{}: {}x{} px, {} tumor regions",
                    cfg.slide_id(),
                    cfg.width,
                    cfg.height,
                    slide.annotations.regions.len()
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    for line in lines {
        println!("{line}");
    }
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let opts = SegmentOptions {
        method: match a.method {
            MethodArg::Colorization => SegmentationMethod::Colorization,
            MethodArg::Saturation => SegmentationMethod::Saturation,
        },
        level: a.level,
        closing_radius: a.closing,
    };
    per_slide(&a.cohort, |c| {
        let pyramid = load_pyramid(&c.dir)?;
        let seg = segment_tissue(&pyramid, &opts)?;
        save_mask(&seg.mask, &c.run)?;
        Ok(format!(
            "{}: threshold {}, {} of {} mask pixels are tissue",
            c.info.slide_id,
            seg.threshold,
            seg.mask.count(),
            seg.mask.bits.len()
        ))
    })
}

fn grid(a: GridArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(Error::InvalidArgument("--tau must lie in [0, 1]".into()));
    }
    let mags = with_finest(&a.mags);
    per_slide(&a.cohort, |c| {
        let mask = load_mask(&c.run)?;
        let mut parts = Vec::new();
        for &mag in &mags {
            let g = build_grid(&c.info.slide_id, c.info.width, c.info.height, mag)?;
            let g = filter_by_tissue(&g, &mask, a.tau)?;
            save_grid(&g, &grid_path(&c.run, mag))?;
            parts.push(format!("{mag} {}/{}", g.tissue_count(), g.len()));
        }
        Ok(format!(
            "{}: in-tissue cells {}",
            c.info.slide_id,
            parts.join(", ")
        ))
    })
}

fn label(a: LabelArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.min_frac) {
        return Err(Error::InvalidArgument(
            "--min-frac must lie in [0, 1]".into(),
        ));
    }
    let mags = with_finest(&a.mags);
    per_slide(&a.cohort, |c| {
        let set = annotations_for(a.annotations.as_deref(), c)?;
        let fine_grid = load_grid(&grid_path(&c.run, Magnification::FINEST))?;
        let fine = rasterize_labels(&set, &fine_grid, a.min_frac)?;
        for &mag in &mags {
            let l = project_labels(&fine, mag)?;
            save_labels(&l, &c.run, &LabelSet::Clean.stem(mag))?;
        }
        Ok(format!(
            "{}: {} positive cells at 40x",
            c.info.slide_id,
            fine.positives()
        ))
    })
}

fn noise(a: NoiseArgs) -> Result<()> {
    let base = match &a.preset {
        Some(p) => NoiseConfig::preset(p, a.seed)?,
        None if a.margin_cells.is_some() && a.eta.is_some() => NoiseConfig::weak(a.seed),
        None => {
            return Err(Error::InvalidArgument(
                "give --preset or both --margin-cells and --eta".into(),
            ))
        }
    };
    let mags = with_finest(&a.mags);
    per_slide(&a.cohort, |c| {
        let cfg = NoiseConfig {
            margin_cells: a.margin_cells.unwrap_or(base.margin_cells),
            eta: a.eta.unwrap_or(base.eta),
            seed: derive_seed(a.seed, &c.info.slide_id, None),
        };
        let clean = load_labels(&c.run, &LabelSet::Clean.stem(Magnification::FINEST))?;
        let noisy = apply_noise(&clean, &cfg)?;
        for &mag in &mags {
            save_labels(
                &project_labels(&noisy, mag)?,
                &c.run,
                &LabelSet::Noisy.stem(mag),
            )?;
        }
        Ok(format!(
            "{}: {} clean, {} noisy positive cells at 40x",
            c.info.slide_id,
            clean.positives(),
            noisy.positives()
        ))
    })
}

fn export(a: ExportArgs) -> Result<()> {
    per_slide(&a.cohort, |c| {
        let pyramid = load_pyramid(&c.dir)?;
        let mut parts = Vec::new();
        for &mag in &a.mags {
            let g = load_grid(&grid_path(&c.run, mag))?;
            let l = load_labels(&c.run, &a.labels.stem(mag))?;
            l.check_matches(&g)?;
            let n = export_patches(
                &pyramid,
                &g,
                Some(&l.labels),
                &c.run.join(format!("patches_{}", mag.value())),
            )?;
            parts.push(format!("{mag} {n}"));
        }
        Ok(format!(
            "{}: exported patches {}",
            c.info.slide_id,
            parts.join(", ")
        ))
    })
}

fn predict(a: PredictArgs) -> Result<()> {
    let kind = match a.kind {
        KindArg::Oracle => StubKind::Oracle,
        KindArg::NoisyOracle => StubKind::NoisyOracle {
            flip_p: a.flip_p,
            score_noise_sd: a.noise_sd,
            error_support: None,
        },
        KindArg::ColorStat => {
            let w = a
                .weights
                .clone()
                .unwrap_or(SYNTHETIC_COLOR_WEIGHTS.to_vec());
            StubKind::ColorStat {
                weights: [w[0], w[1], w[2], w[3]],
            }
        }
        KindArg::FractionThreshold => StubKind::FractionThreshold { theta: a.theta },
    };
    StubSpec::new(kind.clone(), a.seed).validate()?;
    let name = a.name.clone().unwrap_or_else(|| kind.name().to_string());
    per_slide(&a.cohort, |c| {
        let pyramid = match kind {
            StubKind::ColorStat { .. } => Some(load_pyramid(&c.dir)?),
            _ => None,
        };
        let annotations = match kind {
            StubKind::FractionThreshold { .. } => {
                Some(annotations_for(a.annotations.as_deref(), c)?)
            }
            _ => None,
        };
        let mut parts = Vec::new();
        for &mag in &a.mags {
            let g = load_grid(&grid_path(&c.run, mag))?;
            let labels: Option<LabelGrid> = match kind {
                StubKind::Oracle | StubKind::NoisyOracle { .. } => {
                    Some(load_labels(&c.run, &a.labels.stem(mag))?)
                }
                _ => None,
            };
            let fractions = match &annotations {
                Some(set) => Some(tumor_fractions(set, &g)?),
                None => None,
            };
            let spec = StubSpec::new(
                kind.clone(),
                derive_seed(a.seed, &c.info.slide_id, Some(mag)),
            );
            let inputs = StubInputs {
                labels: labels.as_ref(),
                pyramid: pyramid.as_ref(),
                tumor_fractions: fractions.as_deref(),
            };
            let map = run_stub(&spec, &g, inputs)?;
            save_prediction_map(&map, &c.run, &pred_name(&name, mag))?;
            parts.push(mag.to_string());
        }
        Ok(format!(
            "{}: {name} maps at {}",
            c.info.slide_id,
            parts.join(", ")
        ))
    })
}

fn fuse(a: FuseArgs) -> Result<()> {
    if a.mags.is_empty() {
        return Err(Error::InvalidArgument("--mags is empty".into()));
    }
    let out_name = a
        .name
        .clone()
        .unwrap_or_else(|| format!("fused_{}", a.model));
    let model_id = format!(
        "MME({})",
        a.mags
            .iter()
            .map(|m| m.value().to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    per_slide(&a.cohort, |c| {
        let members = a
            .mags
            .iter()
            .map(|&m| load_prediction_map(&c.run, &pred_name(&a.model, m)))
            .collect::<Result<Vec<_>>>()?;
        let finest = load_grid(&grid_path(&c.run, Magnification::FINEST))?.dims;
        let fused = fuse_magnifications(&members, finest)?;
        save_prediction_map(
            &fused.to_prediction_map(model_id.clone()),
            &c.run,
            &out_name,
        )?;
        Ok(format!(
            "{}: {out_name} from {} members",
            c.info.slide_id,
            members.len()
        ))
    })
}

/// Finest-grid scores of a stored map, upsampled when it is coarser.
fn finest_scores(c: &SlideCtx, map: &str, finest: &PatchGrid) -> Result<(String, Vec<f32>)> {
    let m = load_prediction_map(&c.run, map)?;
    if m.slide_id != c.info.slide_id {
        return Err(Error::Consistency(format!(
            "map {map} belongs to {:?}, not {:?}",
            m.slide_id, c.info.slide_id
        )));
    }
    let m = if m.mag == Magnification::FINEST {
        m
    } else {
        upsample_to_finest(&m, finest.dims)?
    };
    if m.dims != finest.dims {
        return Err(Error::Consistency(format!(
            "map {map} does not match the 40x grid"
        )));
    }
    Ok((m.model_id, m.scores))
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "--threshold must lie in [0, 1]".into(),
        ))
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let dirs = discover_slides(&a.cohort.slides)?;
    let results = with_jobs(a.cohort.jobs, || {
        dirs.par_iter()
            .map(|dir| {
                let info = load_slide_info(dir)?;
                let c = SlideCtx {
                    dir: dir.clone(),
                    run: a.cohort.out.join(&info.slide_id),
                    info,
                };
                let g = load_grid(&grid_path(&c.run, Magnification::FINEST))?;
                let l = load_labels(&c.run, &LabelSet::Clean.stem(Magnification::FINEST))?;
                l.check_matches(&g)?;
                let (model, scores) = finest_scores(&c, &a.map, &g)?;
                let s64: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
                let m =
                    evaluate_slide(&c.info.slide_id, &s64, &l.labels, &g.in_tissue, a.threshold)?;
                Ok((model, m))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let model = results[0].0.clone();
    let slides: Vec<_> = results.into_iter().map(|(_, m)| m).collect();
    let report = EvalReport {
        model,
        threshold: a.threshold,
        aggregate: aggregate(&slides)?,
        slides,
    };
    io::create_dir(&a.cohort.out)?;
    let path = a
        .report
        .clone()
        .unwrap_or_else(|| a.cohort.out.join(format!("report_{}.json", a.map)));
    io::write_json(&path, &report)?;
    if let Some(csv) = &a.csv {
        io::write_bytes(csv, report.to_csv().as_bytes())?;
    }
    for s in &report.slides {
        println!(
            "{}: mcc {} auroc {}",
            s.slide_id,
            fmt_opt(s.mcc),
            fmt_opt(s.auroc)
        );
    }
    println!("{TABLE_HEADER}");
    println!("{}", report.table_row());
    println!("report written to {}", path.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

#[derive(Debug, Serialize)]
struct SlideDetection {
    slide_id: String,
    regions: usize,
    rates: DetectionRates,
}

#[derive(Debug, Serialize)]
struct DetectionReport {
    map: String,
    threshold: f64,
    micro_um: f64,
    macro_um: f64,
    slides: Vec<SlideDetection>,
    total: DetectionRates,
}

fn detect(a: DetectArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let sizes = SizeThresholds {
        micro_um: a.micro_um,
        macro_um: a.macro_um,
    };
    if !(0.0 < sizes.micro_um && sizes.micro_um < sizes.macro_um) {
        return Err(Error::InvalidArgument(
            "need 0 < --micro-um < --macro-um".into(),
        ));
    }
    let dirs = discover_slides(&a.cohort.slides)?;
    let slides = with_jobs(a.cohort.jobs, || {
        dirs.par_iter()
            .map(|dir| {
                let info = load_slide_info(dir)?;
                let c = SlideCtx {
                    dir: dir.clone(),
                    run: a.cohort.out.join(&info.slide_id),
                    info,
                };
                let g = load_grid(&grid_path(&c.run, Magnification::FINEST))?;
                let l = load_labels(&c.run, &LabelSet::Clean.stem(Magnification::FINEST))?;
                let (_, scores) = finest_scores(&c, &a.map, &g)?;
                let regions = find_regions(&l, c.info.microns_per_pixel, &sizes)?;
                Ok(SlideDetection {
                    slide_id: c.info.slide_id.clone(),
                    regions: regions.len(),
                    rates: detection_rate(&regions, &binarize(&scores, a.threshold)),
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut total = DetectionRates::default();
    for s in &slides {
        total.merge(&s.rates);
    }
    let report = DetectionReport {
        map: a.map.clone(),
        threshold: a.threshold,
        micro_um: sizes.micro_um,
        macro_um: sizes.macro_um,
        slides,
        total,
    };
    io::create_dir(&a.cohort.out)?;
    let path = a
        .report
        .clone()
        .unwrap_or_else(|| a.cohort.out.join(format!("detection_{}.json", a.map)));
    io::write_json(&path, &report)?;
    for (name, r) in [
        ("itc", total.itc),
        ("micro", total.micro),
        ("macro", total.macro_),
    ] {
        println!(
            "{name}: {}/{} detected, rate {}",
            r.detected,
            r.total,
            fmt_opt(r.rate)
        );
    }
    println!("report written to {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompareResult {
    metric: String,
    n_a: usize,
    n_b: usize,
    mean_a: f64,
    mean_b: f64,
    t: f64,
    df: f64,
    p: f64,
}

fn compare(a: CompareArgs) -> Result<()> {
    let values = |path: &Path| -> Result<Vec<f64>> {
        let report: EvalReport = io::read_json(path)?;
        report.metric_values(&a.metric).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "--metric {:?}: expected precision, recall, specificity, auroc or mcc",
                a.metric
            ))
        })
    };
    let (xa, xb) = (values(&a.a)?, values(&a.b)?);
    let w = welch_t(&xa, &xb)?;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let result = CompareResult {
        metric: a.metric.clone(),
        n_a: xa.len(),
        n_b: xb.len(),
        mean_a: mean(&xa),
        mean_b: mean(&xb),
        t: w.t,
        df: w.df,
        p: w.p,
    };
    println!(
        "{}: mean {:.6} vs {:.6}, t = {:.6}, df = {:.3}, p = {:.6}",
        result.metric, result.mean_a, result.mean_b, result.t, result.df, result.p
    );
    if let Some(out) = &a.out {
        io::write_json(out, &result)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_magnification_lists() {
        let cli = Cli::try_parse_from([
            "tumormap", "grid", "--slides", "s", "--out", "o", "--mags", "20,5",
        ])
        .unwrap();
        match cli.command {
            Command::Grid(g) => {
                assert_eq!(g.mags, vec![Magnification::X20, Magnification::X5]);
                assert_eq!(
                    with_finest(&g.mags),
                    vec![Magnification::X40, Magnification::X20, Magnification::X5]
                );
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from([
            "tumormap", "grid", "--slides", "s", "--out", "o", "--mags", "30"
        ])
        .is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with_args(["tumormap", "segment", "--bogus"]), 2);
        assert_eq!(main_with_args(["tumormap", "--help"]), 0);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, "s1", Some(Magnification::X40));
        assert_eq!(a, derive_seed(7, "s1", Some(Magnification::X40)));
        assert_ne!(a, derive_seed(7, "s2", Some(Magnification::X40)));
        assert_ne!(a, derive_seed(7, "s1", Some(Magnification::X20)));
        assert_ne!(a, derive_seed(8, "s1", Some(Magnification::X40)));
    }
}
