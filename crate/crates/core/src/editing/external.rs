//! Out-of-process editors.
//!
//! Each edit gets a fresh work directory containing `request.json`,
//! `input.png` and `condition.png`. The configured command runs with the
//! directory as its last argument and must leave `output.png` (same size as
//! the input) behind and exit with status 0.

use super::{EditError, EditRequest, Editor};
use crate::process::run_in_dir;
use crate::scene::io::{decode_rgb, encode_rgb8};
use crate::scene::ImageBuffer;
use serde::{Deserialize, Serialize};
use std::fs;
use std::time::Duration;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

/// Contents of `request.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequestFile {
    pub instruction: String,
    pub timestep_t: f64,
    pub diffusion_steps: u32,
    #[serde(rename = "S_I")]
    pub image_guidance: f64,
    #[serde(rename = "S_T")]
    pub text_guidance: f64,
    pub n_r: u32,
    pub seed: u64,
    pub input: String,
    pub condition: String,
}

#[derive(Debug, Clone)]
pub struct ExternalEditor {
    command: Vec<String>,
    timeout: Duration,
}

impl ExternalEditor {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout }
    }
}

impl Editor for ExternalEditor {
    fn describe(&self) -> String {
        format!("external:{}", self.command.join(" "))
    }

    fn averages_internally(&self) -> bool {
        true
    }

    fn edit(&self, request: &EditRequest) -> Result<ImageBuffer, EditError> {
        let dir = tempfile::Builder::new()
            .prefix("viewprop-edit-")
            .tempdir()
            .map_err(|e| EditError::MalformedReply(format!("cannot create work directory: {e}")))?;
        let io = |e: std::io::Error| EditError::Process(e.into());

        let c = &request.config;
        let file = EditRequestFile {
            instruction: c.instruction.clone(),
            timestep_t: c.timestep_t,
            diffusion_steps: c.diffusion_steps,
            image_guidance: c.image_guidance,
            text_guidance: c.text_guidance,
            n_r: c.n_r,
            seed: c.seed,
            input: "input.png".into(),
            condition: "condition.png".into(),
        };
        let json = serde_json::to_string_pretty(&file).expect("request serializes");
        fs::write(dir.path().join("request.json"), json).map_err(io)?;
        let save = |img: &ImageBuffer, name: &str| {
            encode_rgb8(img)
                .save(dir.path().join(name))
                .map_err(|e| EditError::MalformedReply(format!("cannot write {name}: {e}")))
        };
        save(&request.input, "input.png")?;
        save(&request.condition, "condition.png")?;

        run_in_dir(&self.command, dir.path(), self.timeout)?;

        let output_path = dir.path().join("output.png");
        let out = decode_rgb(&output_path).map_err(|e| EditError::MalformedReply(format!("output.png: {e}")))?;
        if out.dims() != request.input.dims() {
            return Err(EditError::DimensionMismatch { expected: request.input.dims(), actual: out.dims() });
        }
        Ok(out)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::editing::{EditorConfig, EditorHandle, EditorSpec};
    use std::os::unix::fs::PermissionsExt;
    use std::path::Path;

    fn script(dir: &Path, name: &str, body: &str) -> String {
        let path = dir.join(name);
        fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
        path.display().to_string()
    }

    fn request() -> EditRequest {
        let img = ImageBuffer::from_fn(6, 5, |u, v| [u as f64 / 5.0, v as f64 / 4.0, 0.2]);
        EditRequest::new(img.clone(), img, EditorConfig { instruction: "make it pop".into(), ..Default::default() })
    }

    #[test]
    fn copying_editor_round_trips_through_png() {
        let bin = tempfile::tempdir().unwrap();
        let cmd = script(bin.path(), "copy.sh", "cp \"$1/input.png\" \"$1/output.png\"");
        let handle = EditorHandle::from_spec(&format!("external:{cmd}").parse::<EditorSpec>().unwrap());
        let req = request();
        let out = handle.edit_averaged(&req).unwrap();
        assert_eq!(handle.invocations(), 1);
        assert_eq!(handle.sub_runs(), 5);
        for (a, b) in out.pixels().iter().zip(req.input.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn request_file_carries_hyperparameters() {
        let bin = tempfile::tempdir().unwrap();
        let keep = tempfile::tempdir().unwrap();
        let cmd = script(
            bin.path(),
            "spy.sh",
            &format!("cp \"$1/request.json\" {}/ && cp \"$1/input.png\" \"$1/output.png\"", keep.path().display()),
        );
        let editor = ExternalEditor::new(vec![cmd], DEFAULT_TIMEOUT);
        editor.edit(&request()).unwrap();
        let text = fs::read_to_string(keep.path().join("request.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["S_I"], 1.5);
        assert_eq!(value["S_T"], 7.5);
        assert_eq!(value["n_r"], 5);
        assert_eq!(value["input"], "input.png");
        assert_eq!(value["condition"], "condition.png");
        assert_eq!(value["instruction"], "make it pop");
    }

    #[test]
    fn failures_surface_diagnostics() {
        let bin = tempfile::tempdir().unwrap();
        let cmd = script(bin.path(), "fail.sh", "echo 'model weights missing' >&2; exit 3");
        let err = ExternalEditor::new(vec![cmd], DEFAULT_TIMEOUT).edit(&request()).unwrap_err();
        assert!(err.to_string().contains("model weights missing"), "{err}");

        let cmd = script(bin.path(), "silent.sh", "exit 0");
        let err = ExternalEditor::new(vec![cmd], DEFAULT_TIMEOUT).edit(&request()).unwrap_err();
        assert!(matches!(err, EditError::MalformedReply(_)), "{err}");

        let err = ExternalEditor::new(vec!["/nonexistent/editor".into()], DEFAULT_TIMEOUT)
            .edit(&request())
            .unwrap_err();
        assert!(matches!(err, EditError::Process(_)), "{err}");
    }

    #[test]
    fn wrong_output_size_is_rejected() {
        let bin = tempfile::tempdir().unwrap();
        let img = ImageBuffer::new(3, 3);
        let dir = tempfile::tempdir().unwrap();
        encode_rgb8(&img).save(dir.path().join("small.png")).unwrap();
        let cmd = script(bin.path(), "small.sh", &format!("cp {}/small.png \"$1/output.png\"", dir.path().display()));
        let err = ExternalEditor::new(vec![cmd], DEFAULT_TIMEOUT).edit(&request()).unwrap_err();
        assert!(matches!(err, EditError::DimensionMismatch { .. }));
    }

    #[test]
    fn slow_editor_times_out() {
        let bin = tempfile::tempdir().unwrap();
        let cmd = script(bin.path(), "slow.sh", "sleep 5");
        let err = ExternalEditor::new(vec![cmd], Duration::from_millis(200)).edit(&request()).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }
}
