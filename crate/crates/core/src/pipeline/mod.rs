//! End-to-end runs.
//!
//! Stage 1 warms the dataset up, edits key views one at a time while
//! projecting each edit into every other view, then refines every view with
//! the two-pass blend. Post-refinement and metrics follow. Every stage
//! reports the editor invocations it caused into a [`RunLedger`], and the
//! run can be checkpointed and resumed at key-view and blend-batch
//! granularity.
//!
//! No radiance field is trained: post-refinement uses the stage-1 output in
//! place of a rendered view.

mod baseline;
mod checkpoint;

pub use baseline::{run_independent, simulate_iterative_baseline, BaselineRun};
pub use checkpoint::{Phase, Progress};

use crate::editing::{blend_refine, post_refine, EditError, EditRequest, EditorConfig, EditorHandle, EditorSpec, MockEditor};
use crate::geometry::FilterPolicy;
use crate::metrics::{provider_from_spec, Captions, InvocationLedger, MetricError, MetricReport};
use crate::propagation::{
    project_unmodified, run_warmup, select_next_key_view, PropagationConfig, PropagationError, PropagationState,
    Selection, StopReason,
};
use crate::scene::{load_dataset, save_dataset, BinaryMask, DatasetManifest, ImageBuffer, SceneError, ViewRecord};
use crate::seed;
use checkpoint::Checkpointer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

const TAG_KEY_T: u64 = 0x6b74;
const TAG_KEY_EDIT: u64 = 0x6b65;
const TAG_BLEND: u64 = 0x626c;
const TAG_POST: u64 = 0x706f;

pub const RENDER_STANDIN_NOTE: &str =
    "post-refinement input is the stage-1 output standing in for a rendered view; no radiance field was trained";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("run interrupted during {stage}; the checkpoint can be resumed")]
    Interrupted { stage: &'static str },
    #[error(transparent)]
    Metrics(#[from] MetricError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: Box::new(e) }
}

/// Editor selection plus the per-stage editor hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EditorSettings {
    pub spec: EditorSpec,
    pub instruction: String,
    /// Key-view timesteps are drawn uniformly from this closed range.
    pub key_t_range: (f64, f64),
    pub key_steps: u32,
    pub blend_t: f64,
    pub blend_steps: u32,
    pub n_r: u32,
    pub image_guidance: f64,
    pub text_guidance: f64,
}

impl Default for EditorSettings {
    fn default() -> Self {
        Self {
            spec: EditorSpec::Mock(MockEditor::Identity),
            instruction: String::new(),
            key_t_range: (0.5, 0.9),
            key_steps: 10,
            blend_t: 0.6,
            blend_steps: 3,
            n_r: 5,
            image_guidance: 1.5,
            text_guidance: 7.5,
        }
    }
}

impl EditorSettings {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let (lo, hi) = self.key_t_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(PipelineError::Config(format!("key timestep range [{lo}, {hi}] must lie in (0, 1]")));
        }
        self.blend_config(0).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.key_config(0, 0).validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn base(&self) -> EditorConfig {
        EditorConfig {
            timestep_t: self.blend_t,
            diffusion_steps: self.blend_steps,
            image_guidance: self.image_guidance,
            text_guidance: self.text_guidance,
            n_r: self.n_r,
            seed: 0,
            instruction: self.instruction.clone(),
        }
    }

    /// Config for directly editing a view; the timestep is drawn from
    /// `key_t_range` with the run seed and `draw` as stream index.
    pub fn key_config(&self, run_seed: u64, draw: u64) -> EditorConfig {
        let (lo, hi) = self.key_t_range;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(run_seed, &[TAG_KEY_T, draw]));
        EditorConfig {
            timestep_t: rng.gen_range(lo..=hi),
            diffusion_steps: self.key_steps,
            n_r: 1,
            seed: seed::derive(run_seed, &[TAG_KEY_EDIT, draw]),
            ..self.base()
        }
    }

    /// Config for the blend passes of one view.
    pub fn blend_config(&self, seed: u64) -> EditorConfig {
        EditorConfig { seed, ..self.base() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub propagation: PropagationConfig,
    pub editor: EditorSettings,
    pub filter: FilterPolicy,
    pub enable_post_refine: bool,
    pub metrics_enabled: bool,
    /// `builtin` or `external:<command>`.
    pub metrics_provider: String,
    pub captions: Captions,
    pub worker_count: usize,
    pub output_dir: PathBuf,
    /// Continue from `output_dir/checkpoint` when it exists.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            propagation: PropagationConfig::default(),
            editor: EditorSettings::default(),
            filter: FilterPolicy::default(),
            enable_post_refine: true,
            metrics_enabled: true,
            metrics_provider: "builtin".into(),
            captions: Captions::default(),
            worker_count: 1,
            output_dir: PathBuf::from("out"),
            resume: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.propagation.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.filter.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.editor.validate()?;
        if self.worker_count == 0 {
            return Err(PipelineError::Config("worker_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Identifies the settings that influence results; a checkpoint is only
    /// resumed by a run with the same fingerprint.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|post={}",
            self.propagation, self.editor, self.filter, self.enable_post_refine
        )
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoint")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyViewRecord {
    pub iteration: usize,
    pub view: usize,
    pub timestep_t: f64,
    /// Pixels written into other views by this key view's projection.
    pub projected_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// What a run did, stage by stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub editor: String,
    pub render_standin: String,
    pub views: usize,
    pub seed: u64,
    pub invocations: InvocationLedger,
    pub warmup_views: Vec<usize>,
    pub key_views: Vec<KeyViewRecord>,
    /// Modified ratio of every view after warm-up and after each key view.
    pub ratio_history: Vec<Vec<f64>>,
    pub stop_reason: Option<StopReason>,
    pub post_refined: bool,
    /// Wall-clock time per stage. Not serialized, so that identical runs
    /// write identical ledgers.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl RunLedger {
    pub fn key_view_ids(&self) -> Vec<usize> {
        self.key_views.iter().map(|k| k.view).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ledger serializes");
        s.push('\n');
        s
    }

    fn time(&mut self, stage: &str, elapsed: Duration) {
        log::info!("{stage}: {:.3} s", elapsed.as_secs_f64());
        self.timings.push(StageTiming { stage: stage.into(), seconds: elapsed.as_secs_f64() });
    }
}

/// Progress notifications; returning `ControlFlow::Break` stops the run
/// right after the event's checkpoint was written.
#[derive(Debug)]
pub enum Stage1Event<'a> {
    WarmupDone { views: &'a [ViewRecord] },
    KeyView { iteration: usize, view: usize, views: &'a [ViewRecord], state: &'a PropagationState },
    BlendBatch { completed: usize, total: usize },
}

pub type Observer<'o> = dyn FnMut(&Stage1Event<'_>) -> ControlFlow<()> + Send + 'o;

/// Observer that never interrupts.
pub fn no_observer(_: &Stage1Event<'_>) -> ControlFlow<()> {
    ControlFlow::Continue(())
}

/// Result of stage 1.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    /// Blend-refined views; `modified` carries the final projection masks.
    pub dataset: DatasetManifest,
    /// Images right after the key-view loop, before blending.
    pub mixup: Vec<ImageBuffer>,
    pub progress: Progress,
}

impl Stage1Output {
    pub fn ledger(&self) -> &RunLedger {
        &self.progress.ledger
    }

    pub fn state(&self) -> &PropagationState {
        &self.progress.state
    }
}

struct Counter<'h> {
    handle: &'h EditorHandle,
    invocations: u64,
    sub_runs: u64,
}

impl<'h> Counter<'h> {
    fn start(handle: &'h EditorHandle) -> Self {
        Self { handle, invocations: handle.invocations(), sub_runs: handle.sub_runs() }
    }

    /// Invocations and sub-runs since the last call.
    fn take(&mut self) -> (u64, u64) {
        let (i, s) = (self.handle.invocations(), self.handle.sub_runs());
        let out = (i - self.invocations, s - self.sub_runs);
        self.invocations = i;
        self.sub_runs = s;
        out
    }
}

fn check_dataset(dataset: &DatasetManifest) -> Result<(), PipelineError> {
    dataset.validate()?;
    if dataset.views.is_empty() {
        return Err(PipelineError::Config("dataset has no views".into()));
    }
    if dataset.views.iter().all(|v| v.depth.valid_count() == 0) {
        return Err(PipelineError::Config("dataset has no valid depth in any view".into()));
    }
    Ok(())
}

fn interrupted(flow: ControlFlow<()>, stage: &'static str) -> Result<(), PipelineError> {
    match flow {
        ControlFlow::Continue(()) => Ok(()),
        ControlFlow::Break(()) => Err(PipelineError::Interrupted { stage }),
    }
}

/// Warm-up, key-view loop and blend refinement.
///
/// With `checkpoint_dir` set, progress is saved after warm-up, after every
/// key view and after every blend batch of `worker_count` views; with
/// `config.resume` a matching checkpoint there is continued.
pub fn run_stage1(
    dataset: &DatasetManifest,
    config: &RunConfig,
    handle: &EditorHandle,
    checkpoint_dir: Option<&Path>,
    observer: &mut Observer<'_>,
) -> Result<Stage1Output, PipelineError> {
    config.validate()?;
    check_dataset(dataset)?;
    let ckpt = checkpoint_dir.map(|d| Checkpointer::new(d, config.fingerprint()));
    let run_seed = config.propagation.seed;

    let saved = match (&ckpt, config.resume) {
        (Some(c), true) => c.load()?,
        (Some(c), false) => {
            c.reset()?;
            None
        }
        (None, _) => None,
    };
    let (mut progress, mut views) = match saved {
        Some(p) if p.phase > Phase::Warmup => {
            let views = ckpt.as_ref().expect("loaded from checkpoint").load_views(&p, dataset)?;
            log::info!("resuming from checkpoint in phase {:?}", p.phase);
            (p, views)
        }
        _ => {
            let mut fresh = dataset.clone();
            fresh.reset_modified();
            let ledger = RunLedger {
                editor: handle.describe(),
                render_standin: RENDER_STANDIN_NOTE.into(),
                views: dataset.views.len(),
                seed: run_seed,
                ..Default::default()
            };
            let progress = Progress {
                phase: Phase::Warmup,
                state: PropagationState::new(&fresh.views),
                ledger,
                blended: Vec::new(),
                post_refined: Vec::new(),
                views_dir: None,
            };
            (progress, fresh.views)
        }
    };
    let save_views = |progress: &mut Progress, views: &[ViewRecord]| -> Result<(), PipelineError> {
        if let Some(c) = &ckpt {
            progress.views_dir = Some(c.save_views(views, progress.state.key_views.len())?);
            c.commit(progress)?;
        }
        Ok(())
    };
    let mut counter = Counter::start(handle);

    if progress.phase == Phase::Warmup {
        let started = Instant::now();
        let mut warmup_config = config.editor.key_config(run_seed, u64::MAX);
        warmup_config.timestep_t = (config.editor.key_t_range.0 + config.editor.key_t_range.1) / 2.0;
        let steps = run_warmup(&mut views, handle, &warmup_config, &config.propagation, &config.filter)
            .map_err(stage_err("warm-up"))?;
        let (inv, sub) = counter.take();
        progress.ledger.invocations.warmup += inv;
        progress.ledger.invocations.sub_runs += sub;
        progress.ledger.warmup_views = steps.iter().map(|s| s.view).collect();
        progress.ledger.ratio_history.push(progress.state.ratios.clone());
        progress.ledger.time("warm-up", started.elapsed());
        progress.phase = Phase::KeyViews;
        save_views(&mut progress, &views)?;
        interrupted(observer(&Stage1Event::WarmupDone { views: &views }), "warm-up")?;
    }

    if progress.phase == Phase::KeyViews {
        let started = Instant::now();
        loop {
            let key = match select_next_key_view(&progress.state, &config.propagation) {
                Selection::Finished(reason) => {
                    progress.state.finished = true;
                    progress.state.stop_reason = Some(reason);
                    progress.ledger.stop_reason = Some(reason);
                    if reason == StopReason::NoProgress {
                        log::warn!(
                            "key-view selection stopped without full coverage; minimum modified ratio {:.4}",
                            progress.state.min_ratio()
                        );
                    }
                    break;
                }
                Selection::View(k) => k,
            };
            let iteration = progress.state.key_views.len();
            let record = edit_key_view(&mut views, dataset, key, iteration, config, handle)?;
            progress.state.key_views.push(key);
            for v in &views {
                progress.state.refresh(v);
            }
            let (inv, sub) = counter.take();
            progress.ledger.invocations.key_views += inv;
            progress.ledger.invocations.sub_runs += sub;
            log::info!(
                "key view {iteration}: view {key} (t = {:.3}), min ratio {:.4}",
                record.timestep_t,
                progress.state.min_ratio()
            );
            progress.ledger.key_views.push(record);
            progress.ledger.ratio_history.push(progress.state.ratios.clone());
            save_views(&mut progress, &views)?;
            let event = Stage1Event::KeyView { iteration, view: key, views: &views, state: &progress.state };
            interrupted(observer(&event), "key-view loop")?;
        }
        progress.ledger.time("key-view loop", started.elapsed());
        progress.phase = Phase::Blend;
        if let Some(c) = &ckpt {
            c.commit(&progress)?;
        }
    }

    let mixup: Vec<ImageBuffer> = views.iter().map(|v| v.image.clone()).collect();
    let mut refined: Vec<Option<ImageBuffer>> = vec![None; views.len()];
    if let Some(c) = &ckpt {
        for &id in &progress.blended {
            refined[id] = Some(c.load_result("blend", id)?);
        }
    }

    if progress.phase == Phase::Blend {
        let started = Instant::now();
        let pending: Vec<usize> = (0..views.len()).filter(|&id| refined[id].is_none()).collect();
        for batch in pending.chunks(config.worker_count) {
            let results: Vec<(usize, ImageBuffer)> = batch
                .par_iter()
                .map(|&id| {
                    let cfg = config.editor.blend_config(seed::derive(run_seed, &[TAG_BLEND, id as u64]));
                    blend_refine(&dataset.views[id].image, &mixup[id], handle, &cfg).map(|img| (id, img))
                })
                .collect::<Result<_, EditError>>()
                .map_err(stage_err("blend refinement"))?;
            for (id, img) in results {
                if let Some(c) = &ckpt {
                    c.save_result("blend", id, &img)?;
                }
                refined[id] = Some(img);
                progress.blended.push(id);
            }
            progress.blended.sort_unstable();
            let (inv, sub) = counter.take();
            progress.ledger.invocations.blend += inv;
            progress.ledger.invocations.sub_runs += sub;
            if let Some(c) = &ckpt {
                c.commit(&progress)?;
            }
            let event = Stage1Event::BlendBatch { completed: progress.blended.len(), total: views.len() };
            interrupted(observer(&event), "blend refinement")?;
        }
        progress.ledger.time("blend refinement", started.elapsed());
        progress.phase = Phase::PostRefine;
        if let Some(c) = &ckpt {
            c.commit(&progress)?;
        }
    }

    let mut out = dataset.clone();
    for (view, (working, img)) in out.views.iter_mut().zip(views.into_iter().zip(refined)) {
        view.image = img.ok_or_else(|| PipelineError::Checkpoint(format!("missing blend result for view {}", view.id)))?;
        view.modified = working.modified;
    }
    Ok(Stage1Output { dataset: out, mixup, progress })
}

/// Edits key view `key` in place and projects it into every other view.
fn edit_key_view(
    views: &mut [ViewRecord],
    originals: &DatasetManifest,
    key: usize,
    iteration: usize,
    config: &RunConfig,
    handle: &EditorHandle,
) -> Result<KeyViewRecord, PipelineError> {
    let cfg = config.editor.key_config(config.propagation.seed, iteration as u64);
    let timestep_t = cfg.timestep_t;
    let request = EditRequest::new(views[key].image.clone(), originals.views[key].image.clone(), cfg);
    let edited = handle.edit(&request).map_err(stage_err("key-view loop"))?;

    // Pixels already written by earlier key views keep their values.
    let view = &mut views[key];
    for idx in 0..view.pixel_count() {
        if !view.modified.get_index(idx) {
            view.image.set_index(idx, edited.get_index(idx));
        }
    }
    let (w, h) = view.dims();
    view.modified = BinaryMask::full(w, h);

    let source = views[key].clone();
    let policy = config.filter;
    let projected = views
        .par_iter_mut()
        .filter(|v| v.id != key)
        .map(|v| project_unmodified(v, &source, &policy))
        .collect::<Result<Vec<usize>, PropagationError>>()
        .map_err(stage_err("key-view loop"))?
        .into_iter()
        .sum();
    Ok(KeyViewRecord { iteration, view: key, timestep_t, projected_pixels: projected })
}

/// Final averaged pass per view with the stage-1 output as input and the
/// mixup as condition. Disabled post-refinement returns the stage-1 dataset
/// unchanged.
pub fn run_post_refinement(
    stage1: Stage1Output,
    config: &RunConfig,
    handle: &EditorHandle,
    checkpoint_dir: Option<&Path>,
) -> Result<(DatasetManifest, RunLedger), PipelineError> {
    let Stage1Output { dataset, mixup, mut progress } = stage1;
    if !config.enable_post_refine {
        progress.ledger.post_refined = false;
        return Ok((dataset, progress.ledger));
    }
    let ckpt = checkpoint_dir.map(|d| Checkpointer::new(d, config.fingerprint()));
    let run_seed = config.propagation.seed;
    let mut results: Vec<Option<ImageBuffer>> = vec![None; dataset.views.len()];
    if let Some(c) = &ckpt {
        for &id in &progress.post_refined {
            results[id] = Some(c.load_result("post", id)?);
        }
    }
    let started = Instant::now();
    let mut counter = Counter::start(handle);
    let pending: Vec<usize> = (0..dataset.views.len()).filter(|&id| results[id].is_none()).collect();
    for batch in pending.chunks(config.worker_count) {
        let done: Vec<(usize, ImageBuffer)> = batch
            .par_iter()
            .map(|&id| {
                let cfg = config.editor.blend_config(seed::derive(run_seed, &[TAG_POST, id as u64]));
                post_refine(&dataset.views[id].image, &mixup[id], handle, &cfg).map(|img| (id, img))
            })
            .collect::<Result<_, EditError>>()
            .map_err(stage_err("post-refinement"))?;
        for (id, img) in done {
            if let Some(c) = &ckpt {
                c.save_result("post", id, &img)?;
            }
            results[id] = Some(img);
            progress.post_refined.push(id);
        }
        progress.post_refined.sort_unstable();
        let (inv, sub) = counter.take();
        progress.ledger.invocations.post_refine += inv;
        progress.ledger.invocations.sub_runs += sub;
        if let Some(c) = &ckpt {
            c.commit(&progress)?;
        }
    }
    progress.ledger.post_refined = true;
    progress.ledger.time("post-refinement", started.elapsed());
    let mut out = dataset;
    for (view, img) in out.views.iter_mut().zip(results) {
        view.image = img.expect("every view post-refined");
    }
    Ok((out, progress.ledger))
}

/// Paths and results of a completed [`run_all`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub ledger: RunLedger,
    pub report: MetricReport,
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

/// Full run on the dataset at `dataset_dir`; writes `dataset/`,
/// `ledger.json`, `metrics.json` and `checkpoint/` under
/// `config.output_dir`.
pub fn run_all(dataset_dir: impl AsRef<Path>, config: &RunConfig) -> Result<RunSummary, PipelineError> {
    let handle = EditorHandle::from_spec(&config.editor.spec);
    run_all_with(dataset_dir, config, &handle, &mut no_observer)
}

/// [`run_all`] with a caller-supplied editor handle and observer.
pub fn run_all_with(
    dataset_dir: impl AsRef<Path>,
    config: &RunConfig,
    handle: &EditorHandle,
    observer: &mut Observer<'_>,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let dataset = load_dataset(dataset_dir)?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
    let ckpt_dir = config.checkpoint_dir();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))?;
    let (edited, mut ledger) = pool.install(|| -> Result<_, PipelineError> {
        let stage1 = run_stage1(&dataset, config, handle, Some(&ckpt_dir), observer)?;
        run_post_refinement(stage1, config, handle, Some(&ckpt_dir))
    })?;

    let dataset_out = out.join("dataset");
    if dataset_out.exists() {
        fs::remove_dir_all(&dataset_out).map_err(|source| PipelineError::Io { path: dataset_out.clone(), source })?;
    }
    save_dataset(&edited, &dataset_out)?;

    let invocations_before_metrics = handle.invocations();
    let started = Instant::now();
    let report = if config.metrics_enabled {
        let provider = provider_from_spec(&config.metrics_provider, crate::editing::DEFAULT_TIMEOUT)?;
        pool.install(|| {
            MetricReport::evaluate(
                &dataset.views,
                &edited.views,
                &config.captions,
                provider.as_ref(),
                &config.filter,
                ledger.invocations.clone(),
            )
        })?
    } else {
        MetricReport::ledger_only(ledger.invocations.clone())
    };
    for e in &report.errors {
        log::warn!("metric unavailable: {e}");
    }
    if handle.invocations() != invocations_before_metrics {
        return Err(PipelineError::Config("editor invoked during evaluation".into()));
    }
    ledger.time("metrics", started.elapsed());

    write_file(&out.join("ledger.json"), &ledger.to_json())?;
    write_file(&out.join("metrics.json"), &report.to_json())?;

    let checkpoint = Checkpointer::new(&ckpt_dir, config.fingerprint());
    if let Some(mut progress) = checkpoint.load()? {
        progress.phase = Phase::Complete;
        progress.ledger = ledger.clone();
        checkpoint.commit(&progress)?;
    }
    Ok(RunSummary { output_dir: out.clone(), ledger, report })
}
