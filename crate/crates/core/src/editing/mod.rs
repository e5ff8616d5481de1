//! Pluggable 2D editors and the refinement passes built on top of them.
//!
//! Every call through an [`EditorHandle`] is one *logical invocation*,
//! whether it is a single edit or an `n_r`-way averaged edit. The handle
//! counts logical invocations and the underlying sub-runs separately; the
//! pipeline ledger is built from these counters.

mod external;
mod mock;

pub use external::{ExternalEditor, EditRequestFile, DEFAULT_TIMEOUT};
pub use mock::{luminance, rgb_to_hsv, hsv_to_rgb, stylize_sepia, MockEditor};

use crate::process::ProcessError;
use crate::scene::ImageBuffer;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("invalid edit request: {0}")]
    InvalidRequest(String),
    #[error("editor returned a {actual:?} image for a {expected:?} request")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("unknown editor {0:?}")]
    UnknownEditor(String),
    #[error("external editor failed: {0}")]
    Process(#[from] ProcessError),
    #[error("external editor produced no usable output: {0}")]
    MalformedReply(String),
}

/// Hyperparameters forwarded to the editor for one logical invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct EditorConfig {
    /// Starting timestep as a fraction of the schedule, in `(0, 1]`.
    pub timestep_t: f64,
    pub diffusion_steps: u32,
    pub image_guidance: f64,
    pub text_guidance: f64,
    /// Number of independent runs averaged by [`EditorHandle::edit_averaged`].
    pub n_r: u32,
    pub seed: u64,
    pub instruction: String,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            timestep_t: 0.6,
            diffusion_steps: 3,
            image_guidance: 1.5,
            text_guidance: 7.5,
            n_r: 5,
            seed: 0,
            instruction: String::new(),
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<(), EditError> {
        let bad = |m: String| Err(EditError::InvalidRequest(m));
        if !(self.timestep_t > 0.0 && self.timestep_t <= 1.0) {
            return bad(format!("timestep_t must be in (0, 1], got {}", self.timestep_t));
        }
        if self.diffusion_steps == 0 {
            return bad("diffusion_steps must be positive".into());
        }
        if !(self.image_guidance > 0.0 && self.text_guidance > 0.0) {
            return bad("guidance scales must be positive".into());
        }
        if self.n_r == 0 {
            return bad("n_r must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub input: ImageBuffer,
    pub condition: ImageBuffer,
    pub config: EditorConfig,
}

impl EditRequest {
    pub fn new(input: ImageBuffer, condition: ImageBuffer, config: EditorConfig) -> Self {
        Self { input, condition, config }
    }

    pub fn validate(&self) -> Result<(), EditError> {
        if self.input.dims() != self.condition.dims() {
            return Err(EditError::InvalidRequest(format!(
                "input is {:?} but condition is {:?}",
                self.input.dims(),
                self.condition.dims()
            )));
        }
        self.config.validate()
    }
}

/// A 2D instruction-following image editor.
pub trait Editor: Send + Sync {
    fn describe(&self) -> String;

    fn edit(&self, request: &EditRequest) -> Result<ImageBuffer, EditError>;

    /// Editors that average `n_r` runs themselves receive one request per
    /// averaged edit instead of `n_r` seeded requests.
    fn averages_internally(&self) -> bool {
        false
    }
}

/// Parsed editor selector: `mock:<name>[:<param>]` or `external:<command>`.
#[derive(Debug, Clone, PartialEq)]
pub enum EditorSpec {
    Mock(MockEditor),
    External { command: Vec<String>, timeout: Duration },
}

impl EditorSpec {
    pub fn with_timeout(self, timeout: Duration) -> Self {
        match self {
            EditorSpec::External { command, .. } => EditorSpec::External { command, timeout },
            other => other,
        }
    }

    pub fn build(&self) -> Box<dyn Editor> {
        match self {
            EditorSpec::Mock(m) => Box::new(m.clone()),
            EditorSpec::External { command, timeout } => Box::new(ExternalEditor::new(command.clone(), *timeout)),
        }
    }
}

impl FromStr for EditorSpec {
    type Err = EditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("mock:") {
            return rest.parse::<MockEditor>().map(EditorSpec::Mock);
        }
        if let Some(rest) = s.strip_prefix("external:") {
            let command = crate::process::split_command(rest)?;
            return Ok(EditorSpec::External { command, timeout: DEFAULT_TIMEOUT });
        }
        Err(EditError::UnknownEditor(s.to_string()))
    }
}

impl fmt::Display for EditorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditorSpec::Mock(m) => write!(f, "mock:{m}"),
            EditorSpec::External { command, .. } => write!(f, "external:{}", command.join(" ")),
        }
    }
}

/// An editor plus its invocation counters.
pub struct EditorHandle {
    editor: Box<dyn Editor>,
    invocations: AtomicU64,
    sub_runs: AtomicU64,
}

impl fmt::Debug for EditorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EditorHandle")
            .field("editor", &self.editor.describe())
            .field("invocations", &self.invocations())
            .field("sub_runs", &self.sub_runs())
            .finish()
    }
}

impl EditorHandle {
    pub fn new(editor: Box<dyn Editor>) -> Self {
        Self { editor, invocations: AtomicU64::new(0), sub_runs: AtomicU64::new(0) }
    }

    pub fn from_spec(spec: &EditorSpec) -> Self {
        Self::new(spec.build())
    }

    pub fn describe(&self) -> String {
        self.editor.describe()
    }

    /// Logical invocations so far.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    /// Individual editor runs so far (an averaged edit contributes `n_r`).
    pub fn sub_runs(&self) -> u64 {
        self.sub_runs.load(Ordering::SeqCst)
    }

    fn run(&self, request: &EditRequest) -> Result<ImageBuffer, EditError> {
        let out = self.editor.edit(request)?;
        if out.dims() != request.input.dims() {
            return Err(EditError::DimensionMismatch { expected: request.input.dims(), actual: out.dims() });
        }
        // ImageBuffer clamps on construction, so the output is already in [0, 1].
        Ok(out)
    }

    /// One plain edit; `config.n_r` is ignored.
    pub fn edit(&self, request: &EditRequest) -> Result<ImageBuffer, EditError> {
        request.validate()?;
        self.invocations.fetch_add(1, Ordering::SeqCst);
        self.sub_runs.fetch_add(1, Ordering::SeqCst);
        let mut single = request.clone();
        single.config.n_r = 1;
        self.run(&single)
    }

    /// Per-pixel mean of `n_r` runs seeded `seed, seed + 1, ..., seed + n_r - 1`.
    pub fn edit_averaged(&self, request: &EditRequest) -> Result<ImageBuffer, EditError> {
        request.validate()?;
        let n_r = request.config.n_r;
        self.invocations.fetch_add(1, Ordering::SeqCst);
        self.sub_runs.fetch_add(n_r as u64, Ordering::SeqCst);
        if self.editor.averages_internally() {
            return self.run(request);
        }
        let mut sub = request.clone();
        sub.config.n_r = 1;
        let (w, h) = request.input.dims();
        let mut mean = vec![[0.0f64; 3]; w as usize * h as usize];
        for k in 0..n_r {
            sub.config.seed = request.config.seed.wrapping_add(k as u64);
            let out = self.run(&sub)?;
            // Running mean: identical runs reproduce their value exactly.
            let weight = 1.0 / (k + 1) as f64;
            for (m, p) in mean.iter_mut().zip(out.pixels()) {
                for c in 0..3 {
                    m[c] += (p[c] - m[c]) * weight;
                }
            }
        }
        Ok(ImageBuffer::from_pixels(w, h, mean).expect("accumulator sized from input"))
    }
}

/// Two averaged passes: clean the mixup while holding on to the original
/// structure, then pull the result back towards the mixup's details.
///
/// Pass 1 edits `mixup` conditioned on `original`; pass 2 edits the pass-1
/// output conditioned on `mixup`. Pass 2 uses sub-seeds starting at
/// `seed + n_r` so the passes never share noise.
pub fn blend_refine(
    original: &ImageBuffer,
    mixup: &ImageBuffer,
    handle: &EditorHandle,
    config: &EditorConfig,
) -> Result<ImageBuffer, EditError> {
    if original.dims() != mixup.dims() {
        return Err(EditError::InvalidRequest(format!(
            "original is {:?} but mixup is {:?}",
            original.dims(),
            mixup.dims()
        )));
    }
    let first = handle.edit_averaged(&EditRequest::new(mixup.clone(), original.clone(), config.clone()))?;
    let mut second_config = config.clone();
    second_config.seed = config.seed.wrapping_add(config.n_r as u64);
    handle.edit_averaged(&EditRequest::new(first, mixup.clone(), second_config))
}

/// Final averaged pass with the render stand-in as input and the mixup as
/// condition.
pub fn post_refine(
    render_standin: &ImageBuffer,
    mixup: &ImageBuffer,
    handle: &EditorHandle,
    config: &EditorConfig,
) -> Result<ImageBuffer, EditError> {
    handle.edit_averaged(&EditRequest::new(render_standin.clone(), mixup.clone(), config.clone()))
}
