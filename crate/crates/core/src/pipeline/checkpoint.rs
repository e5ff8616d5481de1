//! On-disk run checkpoints.
//!
//! Layout of the checkpoint directory:
//!
//! - `state.json`: phase, propagation state, ledger and which per-view
//!   results exist; replaced atomically, so it only ever names complete
//!   files;
//! - `views_NNN/`: working images (`image_VVV.bin`) and modified masks
//!   (`modified_VVV.png`) after NNN key views;
//! - `blend_VVV.bin`, `post_VVV.bin`: per-view refinement results.
//!
//! Images are stored as raw little-endian `f64` so a resumed run continues
//! from exactly the values it stopped with.

use super::{PipelineError, RunLedger};
use crate::propagation::PropagationState;
use crate::scene::{load_mask, save_mask, DatasetManifest, ImageBuffer, ViewRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const STATE_FILE: &str = "state.json";
const FORMAT: &str = "viewprop-checkpoint-1";
const IMAGE_MAGIC: &[u8; 8] = b"VPIMG64\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    KeyViews,
    Blend,
    PostRefine,
    Complete,
}

/// Everything needed to continue a run, minus the image payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: Phase,
    pub state: PropagationState,
    pub ledger: RunLedger,
    /// Views whose blend refinement finished, ascending.
    pub blended: Vec<usize>,
    /// Views whose post-refinement finished, ascending.
    pub post_refined: Vec<usize>,
    /// Directory holding the current working images, if any were saved.
    pub views_dir: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    fingerprint: String,
    progress: Progress,
}

pub(crate) struct Checkpointer {
    dir: PathBuf,
    fingerprint: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_image(image: &ImageBuffer, path: &Path) -> Result<(), PipelineError> {
    let mut bytes = Vec::with_capacity(16 + image.pixels().len() * 24);
    bytes.extend_from_slice(IMAGE_MAGIC);
    bytes.extend_from_slice(&image.width().to_le_bytes());
    bytes.extend_from_slice(&image.height().to_le_bytes());
    for p in image.pixels() {
        for c in p {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io(path))
}

pub(crate) fn read_image(path: &Path) -> Result<ImageBuffer, PipelineError> {
    let bytes = fs::read(path).map_err(io(path))?;
    let bad = || PipelineError::Checkpoint(format!("{} is not a checkpoint image", path.display()));
    if bytes.len() < 16 || &bytes[..8] != IMAGE_MAGIC {
        return Err(bad());
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let body = &bytes[16..];
    if body.len() != w as usize * h as usize * 24 {
        return Err(bad());
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let pixels = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    ImageBuffer::from_pixels(w, h, pixels).ok_or_else(bad)
}

impl Checkpointer {
    pub(crate) fn new(dir: impl Into<PathBuf>, fingerprint: String) -> Self {
        Self { dir: dir.into(), fingerprint }
    }

    /// Removes any previous checkpoint.
    pub(crate) fn reset(&self) -> Result<(), PipelineError> {
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir).map_err(io(&self.dir))?;
        }
        Ok(())
    }

    /// Returns the saved progress, `None` if there is no checkpoint, and an
    /// error if it belongs to a differently configured run.
    pub(crate) fn load(&self) -> Result<Option<Progress>, PipelineError> {
        let path = self.dir.join(STATE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.format != FORMAT {
            return Err(PipelineError::Checkpoint(format!("unsupported checkpoint format {:?}", file.format)));
        }
        if file.fingerprint != self.fingerprint {
            return Err(PipelineError::Checkpoint(
                "checkpoint was written by a run with different settings; rerun without --resume".into(),
            ));
        }
        Ok(Some(file.progress))
    }

    /// Writes the working images and masks for `views` under a directory
    /// named after the number of key views so far.
    pub(crate) fn save_views(&self, views: &[ViewRecord], key_views: usize) -> Result<String, PipelineError> {
        let name = format!("views_{key_views:03}");
        let dir = self.dir.join(&name);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for v in views {
            write_image(&v.image, &dir.join(format!("image_{:03}.bin", v.id)))?;
            save_mask(&v.modified, dir.join(format!("modified_{:03}.png", v.id)))?;
        }
        Ok(name)
    }

    pub(crate) fn load_views(&self, progress: &Progress, originals: &DatasetManifest) -> Result<Vec<ViewRecord>, PipelineError> {
        let name = progress
            .views_dir
            .as_ref()
            .ok_or_else(|| PipelineError::Checkpoint("checkpoint has no saved views".into()))?;
        let dir = self.dir.join(name);
        originals
            .views
            .iter()
            .map(|orig| {
                let mut v = orig.clone();
                v.image = read_image(&dir.join(format!("image_{:03}.bin", v.id)))?;
                v.modified = load_mask(dir.join(format!("modified_{:03}.png", v.id)))?;
                v.validate()?;
                Ok(v)
            })
            .collect()
    }

    pub(crate) fn result_path(&self, stage: &str, id: usize) -> PathBuf {
        self.dir.join(format!("{stage}_{id:03}.bin"))
    }

    pub(crate) fn save_result(&self, stage: &str, id: usize, image: &ImageBuffer) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        write_image(image, &self.result_path(stage, id))
    }

    pub(crate) fn load_result(&self, stage: &str, id: usize) -> Result<ImageBuffer, PipelineError> {
        read_image(&self.result_path(stage, id))
    }

    /// Atomically replaces `state.json`, then drops view directories it no
    /// longer references.
    pub(crate) fn commit(&self, progress: &Progress) -> Result<(), PipelineError> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let file = CheckpointFile { format: FORMAT.into(), fingerprint: self.fingerprint.clone(), progress: progress.clone() };
        let mut text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        text.push('\n');
        let tmp = self.dir.join("state.json.tmp");
        fs::write(&tmp, text).map_err(io(&tmp))?;
        let path = self.dir.join(STATE_FILE);
        fs::rename(&tmp, &path).map_err(io(&path))?;

        for entry in fs::read_dir(&self.dir).map_err(io(&self.dir))? {
            let entry = entry.map_err(io(&self.dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with("views_") && progress.views_dir.as_deref() != Some(name.as_str()) {
                fs::remove_dir_all(entry.path()).map_err(io(&entry.path()))?;
            }
        }
        Ok(())
    }
}
