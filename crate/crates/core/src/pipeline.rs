//! Stage orchestration: ingest → pool → adapt → segment → eval.
//!
//! Every stage is also exposed on its own so that a run can be split into
//! separate invocations chained through the files in the output directory.
//! Per-class artifacts live under `<out>/<class>/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceField, Derivation};
use crate::error::{Error, Result};
use crate::eval::{evaluate, render_overlay, Annotations, EvalReport};
use crate::exec::Exec;
use crate::gmm::{fit_gmm, sample_training_sets, DEFAULT_COMPONENTS};
use crate::graph::{build_graph, GraphParams, SpaceTimeGraph, DEFAULT_WC};
use crate::mrf::{
    build_problem, rasterize, solve_binary, MrfParams, DEFAULT_LAMBDA_O, DEFAULT_LAMBDA_S,
    DEFAULT_LAMBDA_T,
};
use crate::propagation::{
    adapt_confidence, Preconditioner, PropagationConfig, PropagationResult, Solver,
    DEFAULT_MAX_ITERATIONS, DEFAULT_MU, DEFAULT_TOLERANCE,
};
use crate::proposal::{
    load_proposal_manifest, normalize_and_combine, pool_video, score_context, ScoredProposal,
    DEFAULT_THRESHOLD,
};
use crate::video::{
    compute_superpixel_stats, create_dir, load_flows, load_indexed_masks, load_masks,
    load_superpixels, load_video, write_mask, BinaryMask, FlowField, SuperpixelMap,
    SuperpixelStats, VideoVolume,
};

pub const POOLED_CSV: &str = "pooled.csv";
pub const ADAPTED_CSV: &str = "adapted.csv";
pub const MASKS_DIR: &str = "masks";
pub const OVERLAYS_DIR: &str = "overlays";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Video name used in the report.
    pub video: String,
    pub frames: PathBuf,
    pub superpixels: PathBuf,
    pub flow: PathBuf,
    pub motion: PathBuf,
    pub proposals: PathBuf,
    pub gt: Option<PathBuf>,
    pub classes: Vec<String>,
    pub threshold: f64,
    pub mu: f64,
    pub w_c: f64,
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub gmm_components: usize,
    pub seed: u64,
    pub solver: Solver,
    pub preconditioner: Preconditioner,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub skip_adaptation: bool,
    pub overlays: bool,
    pub exec: Exec,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            video: "video".into(),
            frames: "frames".into(),
            superpixels: "superpixels".into(),
            flow: "flow".into(),
            motion: "motion".into(),
            proposals: "proposals.jsonl".into(),
            gt: None,
            classes: Vec::new(),
            threshold: DEFAULT_THRESHOLD,
            mu: DEFAULT_MU,
            w_c: DEFAULT_WC,
            lambda_o: DEFAULT_LAMBDA_O,
            lambda_s: DEFAULT_LAMBDA_S,
            lambda_t: DEFAULT_LAMBDA_T,
            gmm_components: DEFAULT_COMPONENTS,
            seed: 0,
            solver: Solver::default(),
            preconditioner: Preconditioner::default(),
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            skip_adaptation: false,
            overlays: true,
            exec: Exec::default(),
            out: "out".into(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.frames,
            &mut self.superpixels,
            &mut self.flow,
            &mut self.motion,
            &mut self.proposals,
            &mut self.out,
        ] {
            *p = base.join(&*p);
        }
        if let Some(gt) = &mut self.gt {
            *gt = base.join(&*gt);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("no classes configured".into()));
        }
        for c in &self.classes {
            if c.is_empty() || c.contains(['/', '\\', ',']) || c == "." || c == ".." {
                return Err(Error::InvalidConfig(format!("invalid class id {c:?}")));
            }
        }
        if !(self.threshold >= 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig("threshold must lie in [0, 1]".into()));
        }
        if self.w_c.is_nan() || self.w_c < 0.0 {
            return Err(Error::InvalidConfig("w_c must be non-negative".into()));
        }
        if !(self.lambda_o >= 0.0 && self.lambda_s >= 0.0 && self.lambda_t >= 0.0) {
            return Err(Error::InvalidConfig(
                "MRF weights must be non-negative".into(),
            ));
        }
        if self.gmm_components == 0 {
            return Err(Error::InvalidConfig(
                "gmm_components must be positive".into(),
            ));
        }
        self.propagation().validate()
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            mu: self.mu,
            solver: self.solver,
            preconditioner: self.preconditioner,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            exec: self.exec,
        }
    }

    pub fn mrf(&self) -> MrfParams {
        MrfParams {
            lambda_o: self.lambda_o,
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t,
        }
    }

    pub fn class_dir(&self, class: &str) -> PathBuf {
        self.out.join(class)
    }
}

/// Everything read from disk, with proposals scored and normalized.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub video: VideoVolume,
    pub superpixels: SuperpixelMap,
    pub stats: SuperpixelStats,
    pub flows: Vec<FlowField>,
    pub proposals: Vec<ScoredProposal>,
    pub gt: Option<Annotations>,
}

fn check_dims(what: &str, w: usize, h: usize, video: &VideoVolume) -> Result<()> {
    if (w, h) != (video.width, video.height) {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {w}x{h}, video is {}x{}",
            video.width, video.height
        )));
    }
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Inputs> {
    let run = || -> Result<Inputs> {
        let video = load_video(&cfg.frames)?;
        let n = video.frame_count();
        let superpixels = load_superpixels(&cfg.superpixels, n)?;
        check_dims(
            "superpixel map",
            superpixels.width,
            superpixels.height,
            &video,
        )?;
        let flows = load_flows(&cfg.flow, n - 1)?;
        for f in &flows {
            check_dims("flow field", f.width, f.height, &video)?;
        }
        let motion = load_masks(&cfg.motion)?;
        if motion.len() != n {
            return Err(Error::FrameCount {
                what: "motion masks",
                expected: n,
                found: motion.len(),
            });
        }
        for m in &motion {
            check_dims("motion mask", m.width, m.height, &video)?;
        }
        let mut proposals = load_proposal_manifest(&cfg.proposals)?;
        for p in &proposals {
            check_dims("proposal mask", p.mask.width, p.mask.height, &video)?;
            if p.frame >= n {
                return Err(Error::InvalidConfig(format!(
                    "proposal frame {} out of range",
                    p.frame
                )));
            }
        }
        score_context(&mut proposals, &motion, cfg.exec)?;
        let proposals = normalize_and_combine(proposals);
        let gt = match &cfg.gt {
            Some(dir) => {
                let gt = load_indexed_masks(dir)?;
                for (&t, m) in &gt {
                    if t >= n {
                        return Err(Error::InvalidConfig(format!(
                            "ground truth for frame {t} out of range"
                        )));
                    }
                    check_dims("ground-truth mask", m.width, m.height, &video)?;
                }
                Some(gt)
            }
            None => None,
        };
        let stats = compute_superpixel_stats(&video, &superpixels, cfg.exec)?;
        Ok(Inputs {
            video,
            superpixels,
            stats,
            flows,
            proposals,
            gt,
        })
    };
    run().map_err(|e| e.in_stage("ingest"))
}

pub fn graph(cfg: &PipelineConfig, inputs: &Inputs) -> Result<SpaceTimeGraph> {
    build_graph(
        &inputs.superpixels,
        &inputs.stats,
        &inputs.flows,
        GraphParams { w_c: cfg.w_c },
        cfg.exec,
    )
    .map_err(|e| e.in_stage("graph"))
}

pub fn pool(cfg: &PipelineConfig, inputs: &Inputs, class: &str) -> Result<ConfidenceField> {
    pool_video(
        &inputs.proposals,
        class,
        cfg.threshold,
        &inputs.superpixels,
        cfg.exec,
    )
    .map_err(|e| e.in_stage("pool"))
}

pub fn adapt(
    cfg: &PipelineConfig,
    graph: &SpaceTimeGraph,
    pooled: &ConfidenceField,
) -> Result<(ConfidenceField, PropagationResult)> {
    adapt_confidence(pooled, graph, &cfg.propagation()).map_err(|e| e.in_stage("adapt"))
}

/// Fits the colour models on `field`, solves the MRF and rasterizes.
pub fn segment(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    graph: &SpaceTimeGraph,
    field: &ConfidenceField,
) -> Result<Vec<BinaryMask>> {
    let run = || -> Result<Vec<BinaryMask>> {
        let (obj, bg) = sample_training_sets(field, &inputs.stats)?;
        let object = fit_gmm(&obj, cfg.gmm_components, cfg.seed)?;
        let background = fit_gmm(&bg, cfg.gmm_components, cfg.seed.wrapping_add(1))?;
        let problem = build_problem(
            graph,
            field,
            &inputs.stats,
            &object,
            &background,
            &cfg.mrf(),
        )?;
        let labeling = solve_binary(&problem)?;
        rasterize(&labeling, &inputs.superpixels)
    };
    run().map_err(|e| e.in_stage("segment"))
}

pub fn write_masks(dir: &Path, masks: &[BinaryMask]) -> Result<()> {
    create_dir(dir)?;
    for (t, m) in masks.iter().enumerate() {
        write_mask(&dir.join(format!("{t:05}.pgm")), m)?;
    }
    Ok(())
}

/// Writes the per-class segmentation artifacts.
pub fn write_segmentation(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    class: &str,
    masks: &[BinaryMask],
) -> Result<()> {
    let dir = cfg.class_dir(class);
    write_masks(&dir.join(MASKS_DIR), masks)?;
    if cfg.overlays {
        render_overlay(&inputs.video, masks, &dir.join(OVERLAYS_DIR))?;
    }
    Ok(())
}

/// Scores every class's masks against the ground truth.
pub fn report(
    cfg: &PipelineConfig,
    gt: &Annotations,
    masks: &[(String, Vec<BinaryMask>)],
) -> Result<EvalReport> {
    let rows = masks
        .iter()
        .map(|(class, m)| evaluate(&cfg.video, class, m, gt))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("eval"))?;
    Ok(EvalReport { rows })
}

pub fn write_report(cfg: &PipelineConfig, report: &EvalReport) -> Result<()> {
    create_dir(&cfg.out)?;
    let path = cfg.out.join(REPORT_CSV);
    fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct ClassOutcome {
    pub class: String,
    pub pooled: ConfidenceField,
    pub adapted: Option<(ConfidenceField, PropagationResult)>,
    pub masks: Vec<BinaryMask>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub classes: Vec<ClassOutcome>,
    pub report: Option<EvalReport>,
}

/// Runs every stage in memory without touching the output directory.
pub fn execute(cfg: &PipelineConfig) -> Result<(Inputs, PipelineOutcome)> {
    cfg.validate()?;
    let inputs = ingest(cfg)?;
    let graph = graph(cfg, &inputs)?;
    log::info!(
        "graph: {} nodes, {} edges",
        graph.num_nodes(),
        graph.edges().len()
    );
    let mut classes = Vec::with_capacity(cfg.classes.len());
    for class in &cfg.classes {
        let pooled = pool(cfg, &inputs, class)?;
        let adapted = if cfg.skip_adaptation {
            None
        } else {
            let (field, result) = adapt(cfg, &graph, &pooled)?;
            log::info!(
                "{class}: {:?} solver, {} iterations, residual {:.3e}",
                result.solver,
                result.iterations,
                result.residual
            );
            Some((field, result))
        };
        let field = adapted.as_ref().map_or(&pooled, |(f, _)| f);
        let masks = segment(cfg, &inputs, &graph, field)?;
        classes.push(ClassOutcome {
            class: class.clone(),
            pooled,
            adapted,
            masks,
        });
    }
    let report = match &inputs.gt {
        Some(gt) => {
            let masks: Vec<_> = classes
                .iter()
                .map(|c| (c.class.clone(), c.masks.clone()))
                .collect();
            Some(report(cfg, gt, &masks)?)
        }
        None => None,
    };
    Ok((inputs, PipelineOutcome { classes, report }))
}

/// Single-shot run writing all artifacts under `cfg.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let (inputs, outcome) = execute(cfg)?;
    let sp = &inputs.superpixels;
    for c in &outcome.classes {
        let dir = cfg.class_dir(&c.class);
        create_dir(&dir)?;
        c.pooled.write_csv(&dir.join(POOLED_CSV), sp)?;
        if let Some((adapted, _)) = &c.adapted {
            adapted.write_csv(&dir.join(ADAPTED_CSV), sp)?;
        }
        write_segmentation(cfg, &inputs, &c.class, &c.masks)?;
    }
    if let Some(report) = &outcome.report {
        write_report(cfg, report)?;
    }
    Ok(outcome)
}

/// `pool` subcommand: writes `<class>/pooled.csv` for every class.
pub fn run_pool(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let inputs = ingest(cfg)?;
    for class in &cfg.classes {
        let dir = cfg.class_dir(class);
        create_dir(&dir)?;
        pool(cfg, &inputs, class)?.write_csv(&dir.join(POOLED_CSV), &inputs.superpixels)?;
    }
    Ok(())
}

fn read_field(
    cfg: &PipelineConfig,
    sp: &SuperpixelMap,
    class: &str,
    name: &str,
    d: Derivation,
    stage: &'static str,
) -> Result<ConfidenceField> {
    ConfidenceField::read_csv(&cfg.class_dir(class).join(name), class, sp, d)
        .map_err(|e| e.in_stage(stage))
}

/// `adapt` subcommand: reads `<class>/pooled.csv`, writes `<class>/adapted.csv`.
pub fn run_adapt(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let inputs = ingest(cfg)?;
    let graph = graph(cfg, &inputs)?;
    for class in &cfg.classes {
        let pooled = read_field(
            cfg,
            &inputs.superpixels,
            class,
            POOLED_CSV,
            Derivation::Pooled,
            "adapt",
        )?;
        let (adapted, _) = adapt(cfg, &graph, &pooled)?;
        adapted.write_csv(&cfg.class_dir(class).join(ADAPTED_CSV), &inputs.superpixels)?;
    }
    Ok(())
}

/// `segment` subcommand: reads the adapted field (the pooled one when
/// adaptation is skipped) and writes masks and overlays.
pub fn run_segment(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let inputs = ingest(cfg)?;
    let graph = graph(cfg, &inputs)?;
    for class in &cfg.classes {
        let field = if cfg.skip_adaptation {
            read_field(
                cfg,
                &inputs.superpixels,
                class,
                POOLED_CSV,
                Derivation::Pooled,
                "segment",
            )?
        } else {
            read_field(
                cfg,
                &inputs.superpixels,
                class,
                ADAPTED_CSV,
                Derivation::Adapted,
                "segment",
            )?
        };
        let masks = segment(cfg, &inputs, &graph, &field)?;
        write_segmentation(cfg, &inputs, class, &masks)?;
    }
    Ok(())
}

/// `eval` subcommand: scores `<class>/masks` against the configured ground
/// truth and writes the report.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let gt_dir = cfg
        .gt
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no ground truth configured".into()))?;
    let gt = load_indexed_masks(gt_dir).map_err(|e| e.in_stage("eval"))?;
    let mut masks = Vec::new();
    for class in &cfg.classes {
        let m =
            load_masks(&cfg.class_dir(class).join(MASKS_DIR)).map_err(|e| e.in_stage("eval"))?;
        masks.push((class.clone(), m));
    }
    let report = report(cfg, &gt, &masks)?;
    write_report(cfg, &report)?;
    Ok(report)
}
