//! Edit-quality metrics.
//!
//! The two cosine scores compare embedding *differences*: the direction
//! score measures how well each view's image change follows the caption
//! change, the consistency score how similar the changes between adjacent
//! views are before and after editing. Embeddings come from an
//! [`EmbeddingProvider`]. The photometric measure needs no embeddings: it
//! is the mean color disagreement across depth-validated correspondences of
//! adjacent views.

use crate::editing::luminance;
use crate::geometry::{build_correspondences, FilterPolicy};
use crate::process::{run_in_dir, split_command, ProcessError};
use crate::scene::io::encode_rgb8;
use crate::scene::{ImageBuffer, ViewRecord};
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

/// Difference vectors at or below this norm are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("degenerate direction: {0} is a zero vector")]
    Degenerate(String),
    #[error("view count mismatch: {original} original views, {edited} edited views")]
    LengthMismatch { original: usize, edited: usize },
    #[error("need at least {needed} views, got {got}")]
    TooFewViews { needed: usize, got: usize },
    #[error("caption must not be empty")]
    EmptyCaption,
    #[error("no valid correspondences between adjacent views")]
    NoCorrespondences,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("embedding provider process failed: {0}")]
    Process(#[from] ProcessError),
    #[error("missing run artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
}

/// Maps images and captions into a shared vector space.
pub trait EmbeddingProvider: Send + Sync {
    fn describe(&self) -> String;
    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>, MetricError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError>;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn difference(a: &[f64], b: &[f64]) -> Result<Vec<f64>, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Dimension { expected: b.len(), actual: a.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Cosine of two difference vectors; zero vectors are an error.
pub fn cosine(a: &[f64], b: &[f64], what_a: &str, what_b: &str) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Dimension { expected: a.len(), actual: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= DEGENERATE_NORM {
        return Err(MetricError::Degenerate(what_a.to_string()));
    }
    if nb <= DEGENERATE_NORM {
        return Err(MetricError::Degenerate(what_b.to_string()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Built-in provider: mean-pooled luminance thumbnail for images, seeded
/// hash-to-unit-vector for text. Deterministic, fast and semantically
/// meaningless for text.
#[derive(Debug, Clone, PartialEq)]
pub struct ThumbnailProvider {
    pub grid: u32,
}

impl Default for ThumbnailProvider {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl ThumbnailProvider {
    pub fn dimension(&self) -> usize {
        (self.grid * self.grid) as usize
    }

    /// Unnormalized mean luminance per grid cell, row-major.
    pub fn thumbnail(&self, image: &ImageBuffer) -> Vec<f64> {
        let (w, h) = image.dims();
        let g = self.grid;
        let span = |i: u32, n: u32| {
            let lo = (i as u64 * n as u64 / g as u64) as u32;
            let hi = ((i as u64 + 1) * n as u64 / g as u64) as u32;
            (lo.min(n - 1), hi.max(lo + 1).min(n))
        };
        let mut out = Vec::with_capacity(self.dimension());
        for gy in 0..g {
            let (y0, y1) = span(gy, h);
            for gx in 0..g {
                let (x0, x1) = span(gx, w);
                let mut sum = 0.0;
                for v in y0..y1 {
                    for u in x0..x1 {
                        sum += luminance(image.get(u, v));
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        out
    }
}

impl EmbeddingProvider for ThumbnailProvider {
    fn describe(&self) -> String {
        "builtin".into()
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>, MetricError> {
        Ok(normalize(self.thumbnail(image)))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::hash_str(text), &[]));
        Ok(normalize((0..self.dimension()).map(|_| rng.gen_range(-1.0..1.0)).collect()))
    }
}

/// Request written as `embed_request.json` for an external provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequestFile {
    /// `"image"` or `"text"`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Expected embedding length, once known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
}

/// Provider backed by a command following the editor-style protocol: the
/// work directory holds `embed_request.json` (and `image.png` for images);
/// the command writes `embedding.bin` as little-endian `f32`s.
#[derive(Debug)]
pub struct ExternalProvider {
    command: Vec<String>,
    timeout: Duration,
    dimension: std::sync::OnceLock<usize>,
}

impl ExternalProvider {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout, dimension: std::sync::OnceLock::new() }
    }

    pub fn parse(command: &str, timeout: Duration) -> Result<Self, MetricError> {
        Ok(Self::new(split_command(command)?, timeout))
    }

    fn call(&self, request: EmbedRequestFile, image: Option<&ImageBuffer>) -> Result<Vec<f64>, MetricError> {
        let dir = tempfile::Builder::new()
            .prefix("viewprop-embed-")
            .tempdir()
            .map_err(|e| MetricError::Provider(format!("cannot create work directory: {e}")))?;
        let request = EmbedRequestFile { dimension: self.dimension.get().copied(), ..request };
        let json = serde_json::to_string_pretty(&request).expect("request serializes");
        fs::write(dir.path().join("embed_request.json"), json).map_err(|e| MetricError::Process(e.into()))?;
        if let Some(img) = image {
            encode_rgb8(img)
                .save(dir.path().join("image.png"))
                .map_err(|e| MetricError::Provider(format!("cannot write image.png: {e}")))?;
        }
        run_in_dir(&self.command, dir.path(), self.timeout)?;
        let bytes = fs::read(dir.path().join("embedding.bin"))
            .map_err(|e| MetricError::Provider(format!("embedding.bin: {e}")))?;
        if bytes.is_empty() || bytes.len() % 4 != 0 {
            return Err(MetricError::Provider(format!("embedding.bin has {} bytes", bytes.len())));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let expected = *self.dimension.get_or_init(|| values.len());
        if values.len() != expected {
            return Err(MetricError::Dimension { expected, actual: values.len() });
        }
        Ok(normalize(values))
    }
}

impl EmbeddingProvider for ExternalProvider {
    fn describe(&self) -> String {
        format!("external:{}", self.command.join(" "))
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<Vec<f64>, MetricError> {
        self.call(
            EmbedRequestFile { kind: "image".into(), image: Some("image.png".into()), text: None, dimension: None },
            Some(image),
        )
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
        self.call(EmbedRequestFile { kind: "text".into(), image: None, text: Some(text.into()), dimension: None }, None)
    }
}

/// `builtin` or `external:<command>`.
pub fn provider_from_spec(spec: &str, timeout: Duration) -> Result<Box<dyn EmbeddingProvider>, MetricError> {
    if spec == "builtin" {
        return Ok(Box::new(ThumbnailProvider::default()));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        return Ok(Box::new(ExternalProvider::parse(cmd, timeout)?));
    }
    Err(MetricError::Provider(format!("unknown provider {spec:?} (expected builtin or external:<command>)")))
}

fn embed_all(images: &[&ImageBuffer], provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f64>>, MetricError> {
    images.par_iter().map(|img| provider.embed_image(img)).collect()
}

fn check_lengths(original: usize, edited: usize, needed: usize) -> Result<(), MetricError> {
    if original != edited {
        return Err(MetricError::LengthMismatch { original, edited });
    }
    if original < needed {
        return Err(MetricError::TooFewViews { needed, got: original });
    }
    Ok(())
}

/// Mean over views of cos(E(edit_i) - E(orig_i), T(edit caption) - T(orig caption)).
pub fn direction_score(
    originals: &[&ImageBuffer],
    edits: &[&ImageBuffer],
    orig_caption: &str,
    edit_caption: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    check_lengths(originals.len(), edits.len(), 1)?;
    if orig_caption.trim().is_empty() || edit_caption.trim().is_empty() {
        return Err(MetricError::EmptyCaption);
    }
    let text = difference(&provider.embed_text(edit_caption)?, &provider.embed_text(orig_caption)?)?;
    let o = embed_all(originals, provider)?;
    let e = embed_all(edits, provider)?;
    let mut total = 0.0;
    for (i, (eo, ee)) in o.iter().zip(&e).enumerate() {
        let d = difference(ee, eo)?;
        total += cosine(&d, &text, &format!("image change of view {i}"), "caption change")?;
    }
    Ok(total / o.len() as f64)
}

/// Mean over adjacent pairs of cos(E(edit_{i+1}) - E(edit_i), E(orig_{i+1}) - E(orig_i)).
pub fn consistency_score(
    originals: &[&ImageBuffer],
    edits: &[&ImageBuffer],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    check_lengths(originals.len(), edits.len(), 2)?;
    let o = embed_all(originals, provider)?;
    let e = embed_all(edits, provider)?;
    let mut total = 0.0;
    for i in 0..o.len() - 1 {
        let de = difference(&e[i + 1], &e[i])?;
        let d_o = difference(&o[i + 1], &o[i])?;
        total += cosine(
            &de,
            &d_o,
            &format!("edited change between views {i} and {}", i + 1),
            &format!("original change between views {i} and {}", i + 1),
        )?;
    }
    Ok(total / (o.len() - 1) as f64)
}

/// Sum of absolute channel differences and channel-sample count for one
/// direction of one pair.
fn pair_disagreement(target: &ViewRecord, source: &ViewRecord, policy: &FilterPolicy) -> (f64, usize) {
    let map = build_correspondences(target, source, policy);
    let mut sum = 0.0;
    let mut n = 0;
    for (idx, e) in map.entries.iter().enumerate() {
        if let (true, Some((x, y))) = (e.valid, e.source_uv) {
            let a = target.image.get_index(idx);
            let b = source.image.sample_bilinear(x, y);
            sum += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>();
            n += 3;
        }
    }
    (sum, n)
}

/// Mean absolute per-channel color difference over valid correspondences
/// of each adjacent view pair (manifest order, both directions pooled).
pub fn photometric_inconsistency(views: &[ViewRecord], policy: &FilterPolicy) -> Result<f64, MetricError> {
    if views.len() < 2 {
        return Err(MetricError::TooFewViews { needed: 2, got: views.len() });
    }
    let parts: Vec<(f64, usize)> = (0..views.len() - 1)
        .into_par_iter()
        .flat_map_iter(|i| [(i, i + 1), (i + 1, i)])
        .map(|(t, s)| pair_disagreement(&views[t], &views[s], policy))
        .collect();
    // Summed in pair order so the value does not depend on scheduling.
    let (sum, n) = parts.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        return Err(MetricError::NoCorrespondences);
    }
    Ok(sum / n as f64)
}

/// Logical editor invocations per stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationLedger {
    pub warmup: u64,
    pub key_views: u64,
    pub blend: u64,
    pub post_refine: u64,
    /// Individual editor runs including every averaged sub-run.
    pub sub_runs: u64,
}

impl InvocationLedger {
    pub fn stage1(&self) -> u64 {
        self.warmup + self.key_views + self.blend
    }

    pub fn total(&self) -> u64 {
        self.stage1() + self.post_refine
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub direction_score: Option<f64>,
    pub consistency_score: Option<f64>,
    pub photometric_inconsistency: Option<f64>,
    pub invocations: InvocationLedger,
    pub provider: Option<String>,
    /// Metrics that could not be computed, with the reason.
    pub errors: Vec<String>,
}

/// Captions fed to the direction score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Captions {
    pub original: String,
    pub edited: String,
}

impl Default for Captions {
    fn default() -> Self {
        Self { original: "original scene".into(), edited: "edited scene".into() }
    }
}

impl MetricReport {
    /// Invocation ledger only, for runs with metrics disabled.
    pub fn ledger_only(invocations: InvocationLedger) -> Self {
        Self { invocations, ..Default::default() }
    }

    /// Computes all three metrics. A metric that fails is left empty and its
    /// error recorded, so one degenerate score does not hide the others.
    pub fn evaluate(
        originals: &[ViewRecord],
        edited: &[ViewRecord],
        captions: &Captions,
        provider: &dyn EmbeddingProvider,
        policy: &FilterPolicy,
        invocations: InvocationLedger,
    ) -> Result<Self, MetricError> {
        check_lengths(originals.len(), edited.len(), 1)?;
        let o: Vec<_> = originals.iter().map(|v| &v.image).collect();
        let e: Vec<_> = edited.iter().map(|v| &v.image).collect();
        let mut report = Self { invocations, provider: Some(provider.describe()), ..Default::default() };
        let mut record = |name: &str, r: Result<f64, MetricError>| match r {
            Ok(v) => Some(v),
            Err(err) => {
                report.errors.push(format!("{name}: {err}"));
                None
            }
        };
        let direction = record(
            "direction_score",
            direction_score(&o, &e, &captions.original, &captions.edited, provider),
        );
        let consistency = record("consistency_score", consistency_score(&o, &e, provider));
        let photometric = record("photometric_inconsistency", photometric_inconsistency(edited, policy));
        report.direction_score = direction;
        report.consistency_score = consistency;
        report.photometric_inconsistency = photometric;
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Checks that a run directory holds everything a report needs.
pub fn require_artifacts(run_dir: &std::path::Path, names: &[&str]) -> Result<Vec<PathBuf>, MetricError> {
    let paths: Vec<PathBuf> = names.iter().map(|n| run_dir.join(n)).collect();
    let missing: Vec<String> =
        paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(paths)
    } else {
        Err(MetricError::MissingArtifacts(missing))
    }
}
