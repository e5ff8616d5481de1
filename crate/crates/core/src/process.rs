//! Runs an external helper on a prepared work directory.

use std::fs::File;
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("empty command line")]
    EmptyCommand,
    #[error("failed to start {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{program:?} timed out after {timeout:?}")]
    Timeout { program: String, timeout: Duration },
    #[error("{program:?} exited with {status}; stderr: {stderr}")]
    Failed { program: String, status: ExitStatus, stderr: String },
    #[error("i/o error in work directory: {0}")]
    Io(#[from] std::io::Error),
}

/// Splits a command line on whitespace; no quoting support.
pub fn split_command(command: &str) -> Result<Vec<String>, ProcessError> {
    let parts: Vec<String> = command.split_whitespace().map(str::to_string).collect();
    if parts.is_empty() {
        return Err(ProcessError::EmptyCommand);
    }
    Ok(parts)
}

/// Invokes `command` with `work_dir` appended as its last argument and waits
/// up to `timeout`. Output streams go to `stdout.log` / `stderr.log` inside
/// the work directory.
pub fn run_in_dir(command: &[String], work_dir: &Path, timeout: Duration) -> Result<(), ProcessError> {
    let (program, args) = command.split_first().ok_or(ProcessError::EmptyCommand)?;
    let stdout = File::create(work_dir.join("stdout.log"))?;
    let stderr_path = work_dir.join("stderr.log");
    let stderr = File::create(&stderr_path)?;
    let mut child = Command::new(program)
        .args(args)
        .arg(work_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::from(stdout))
        .stderr(Stdio::from(stderr))
        .spawn()
        .map_err(|source| ProcessError::Spawn { program: program.clone(), source })?;

    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ProcessError::Timeout { program: program.clone(), timeout });
        }
        thread::sleep(Duration::from_millis(5));
    };
    if !status.success() {
        let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(ProcessError::Failed { program: program.clone(), status, stderr: stderr.trim().to_string() });
    }
    Ok(())
}
