//! Sequential key-view bookkeeping: modified ratios, the key-view weight,
//! selection, write-once projection mixup and warm-up blending.

use crate::editing::{EditError, EditRequest, EditorConfig, EditorHandle};
use crate::geometry::{build_correspondences, transfer_colors, FilterPolicy, GeometryError};
use crate::scene::{BinaryMask, ViewRecord};
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const TAG_FIRST_KEY: u64 = 0x6b65_7930;
const TAG_WARMUP_VIEW: u64 = 0x7761_726d;
const TAG_WARMUP_EDIT: u64 = 0x7765_6474;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("invalid propagation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("view {0} is not fully modified and cannot act as an edited key view")]
    SourceNotKeyView(usize),
    #[error("warm-up iteration {iteration} failed: {source}")]
    Warmup {
        iteration: u32,
        #[source]
        source: EditError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Modified ratio at which a view is most attractive as the next key view.
    pub phi: f64,
    /// Selection stops once every view has at least this modified ratio.
    pub stop_ratio: f64,
    pub seed: u64,
    /// Weight kept from the original pixel when warm-up blends an edit in.
    pub warmup_lambda: f64,
    pub warmup_iterations: u32,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { phi: 0.3, stop_ratio: 0.95, seed: 0, warmup_lambda: 0.5, warmup_iterations: 10 }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |m: String| Err(PropagationError::InvalidConfig(m));
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return bad(format!("phi must be in (0, 1], got {}", self.phi));
        }
        if !(self.stop_ratio > 0.0 && self.stop_ratio <= 1.0) {
            return bad(format!("stop_ratio must be in (0, 1], got {}", self.stop_ratio));
        }
        if !(0.0..=1.0).contains(&self.warmup_lambda) {
            return bad(format!("warmup_lambda must be in [0, 1], got {}", self.warmup_lambda));
        }
        Ok(())
    }
}

/// Fraction of set bits.
pub fn modified_ratio(mask: &BinaryMask) -> f64 {
    match mask.len() {
        0 => 0.0,
        n => mask.count() as f64 / n as f64,
    }
}

/// Rises linearly up to `phi`, then falls with slope -1.
pub fn key_view_weight(rho: f64, phi: f64) -> f64 {
    if rho < phi {
        rho
    } else {
        2.0 * phi - rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every view reached the stop ratio.
    Coverage,
    /// No remaining view can gain modified pixels by being edited.
    NoProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    View(usize),
    Finished(StopReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationState {
    /// Modified ratio per view, indexed by view id.
    pub ratios: Vec<f64>,
    pub key_views: Vec<usize>,
    pub finished: bool,
    pub stop_reason: Option<StopReason>,
}

impl PropagationState {
    pub fn new(views: &[ViewRecord]) -> Self {
        Self {
            ratios: views.iter().map(|v| modified_ratio(&v.modified)).collect(),
            key_views: Vec::new(),
            finished: false,
            stop_reason: None,
        }
    }

    /// Recomputes `view`'s ratio from its mask.
    pub fn refresh(&mut self, view: &ViewRecord) {
        self.ratios[view.id] = modified_ratio(&view.modified);
    }

    pub fn min_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_key_view(&self, id: usize) -> bool {
        self.key_views.contains(&id)
    }
}

/// Picks the next key view, or reports why selection is over.
///
/// The first key view is drawn uniformly from all views using the run seed.
/// Afterwards the non-key view with the largest [`key_view_weight`] wins,
/// ties going to the lowest id. Fully modified views are never candidates
/// since editing them could not change anything.
pub fn select_next_key_view(state: &PropagationState, config: &PropagationConfig) -> Selection {
    if state.ratios.is_empty() {
        return Selection::Finished(StopReason::NoProgress);
    }
    if state.min_ratio() >= config.stop_ratio {
        return Selection::Finished(StopReason::Coverage);
    }
    if state.key_views.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[TAG_FIRST_KEY]));
        return Selection::View(rng.gen_range(0..state.ratios.len()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (id, &rho) in state.ratios.iter().enumerate() {
        if rho >= 1.0 || state.is_key_view(id) {
            continue;
        }
        let w = key_view_weight(rho, config.phi);
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((id, w));
        }
    }
    match best {
        Some((id, _)) => Selection::View(id),
        None => Selection::Finished(StopReason::NoProgress),
    }
}

/// Writes `edited_source`'s projected colors into the unmodified pixels of
/// `target` and marks them modified. Returns the number of pixels written.
pub fn project_unmodified(
    target: &mut ViewRecord,
    edited_source: &ViewRecord,
    policy: &FilterPolicy,
) -> Result<usize, PropagationError> {
    if edited_source.modified.count() != edited_source.pixel_count() {
        return Err(PropagationError::SourceNotKeyView(edited_source.id));
    }
    let map = build_correspondences(target, edited_source, policy);
    let transfer = transfer_colors(&map, &edited_source.image)?;
    let mut written = 0;
    for idx in 0..target.pixel_count() {
        if transfer.mask.get_index(idx) && !target.modified.get_index(idx) {
            target.image.set_index(idx, transfer.image.get_index(idx));
            target.modified.set_index(idx, true);
            written += 1;
        }
    }
    Ok(written)
}

/// [`project_unmodified`] followed by a ratio update in `state`.
pub fn apply_projection_mixup(
    target: &mut ViewRecord,
    edited_source: &ViewRecord,
    state: &mut PropagationState,
    policy: &FilterPolicy,
) -> Result<usize, PropagationError> {
    let written = project_unmodified(target, edited_source, policy)?;
    state.refresh(target);
    Ok(written)
}

/// Blends `edited_source` into `target` where a valid projection exists:
/// `lambda * current + (1 - lambda) * projected`. Leaves the modified mask
/// alone and returns the blend region.
pub fn warmup_blend(
    target: &mut ViewRecord,
    edited_source: &ViewRecord,
    lambda: f64,
    policy: &FilterPolicy,
) -> Result<BinaryMask, PropagationError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PropagationError::InvalidConfig(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let map = build_correspondences(target, edited_source, policy);
    let transfer = transfer_colors(&map, &edited_source.image)?;
    for idx in 0..target.pixel_count() {
        if transfer.mask.get_index(idx) {
            let o = target.image.get_index(idx);
            let t = transfer.image.get_index(idx);
            target.image.set_index(idx, [0, 1, 2].map(|c| lambda * o[c] + (1.0 - lambda) * t[c]));
        }
    }
    Ok(transfer.mask)
}

/// One warm-up iteration's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupStep {
    pub iteration: u32,
    pub view: usize,
}

/// Runs the warm-up phase in place and returns which view each iteration
/// edited. Each iteration edits a seeded-random view once (input: its
/// current image, condition: its image before warm-up) and blends the
/// result into every other view.
pub fn run_warmup(
    views: &mut [ViewRecord],
    editor: &EditorHandle,
    editor_config: &EditorConfig,
    config: &PropagationConfig,
    policy: &FilterPolicy,
) -> Result<Vec<WarmupStep>, PropagationError> {
    config.validate()?;
    policy.validate()?;
    if config.warmup_iterations == 0 || views.is_empty() {
        return Ok(Vec::new());
    }
    let originals: Vec<_> = views.iter().map(|v| v.image.clone()).collect();
    let mut steps = Vec::with_capacity(config.warmup_iterations as usize);
    for iteration in 0..config.warmup_iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[TAG_WARMUP_VIEW, iteration as u64]));
        let chosen = rng.gen_range(0..views.len());
        let mut cfg = editor_config.clone();
        cfg.seed = seed::derive(config.seed, &[TAG_WARMUP_EDIT, iteration as u64]);
        let request = EditRequest::new(views[chosen].image.clone(), originals[chosen].clone(), cfg);
        let edited = editor.edit(&request).map_err(|source| PropagationError::Warmup { iteration, source })?;

        let mut source = views[chosen].clone();
        source.image = edited;
        views
            .par_iter_mut()
            .filter(|v| v.id != source.id)
            .try_for_each(|v| warmup_blend(v, &source, config.warmup_lambda, policy).map(|_| ()))?;
        log::debug!("warm-up iteration {iteration}: edited view {chosen}");
        steps.push(WarmupStep { iteration, view: chosen });
    }
    Ok(steps)
}
