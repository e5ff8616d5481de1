//! `viewprop` command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags or inputs that
//! violate a precondition), 2 for failures while running.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "viewprop", version, about = "Propagate 2D edits across a posed multi-view dataset")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic posed dataset with exact depth.
    GenScene(GenSceneArgs),
    /// Edit key views and propagate the edits to every view.
    Propagate(Box<PropagateArgs>),
    /// Score an edited dataset against its original.
    Metrics(MetricsArgs),
    /// Spread an instance mask from one view to the others.
    PropagateMask(PropagateMaskArgs),
    /// Summarize a dataset.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    /// Scene layout: plane-ring or sphere-over-plane.
    #[arg(long, default_value = "plane-ring")]
    preset: String,
    /// Number of cameras on the ring.
    #[arg(long, default_value_t = 20)]
    views: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 128)]
    res: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Largest accepted cycle reprojection error, in pixels.
    #[arg(long, default_value_t = 5.0)]
    max_reproj: f64,
    /// Largest accepted relative depth disagreement.
    #[arg(long, default_value_t = 0.01)]
    depth_tol: f64,
    /// Smallest accepted cosine between a surface normal and the direction
    /// to the other camera; -1 disables the check.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    min_facing: f64,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// `mock:<name>[:<param>]` (identity, hue-rotate, grayscale, checker-stamp,
    /// noisy-stylize, median-denoise) or `external:<command>`.
    #[arg(long, default_value = "mock:identity")]
    editor: String,
    /// Edit instruction passed to the editor.
    #[arg(long, default_value = "")]
    instruction: String,
    /// Modified ratio at which a view is preferred as the next key view.
    #[arg(long, default_value_t = 0.3)]
    phi: f64,
    /// Stop selecting key views once every view reaches this modified ratio.
    #[arg(long, default_value_t = 0.95)]
    stop: f64,
    /// Share of the original pixel kept by warm-up blending.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Warm-up iterations (10 for object-centric, 30 for outdoor scenes).
    #[arg(long, default_value_t = 10)]
    warmup: u32,
    /// Runs averaged per refinement edit.
    #[arg(long, default_value_t = 5)]
    n_r: u32,
    /// Lower bound of the key-view timestep range.
    #[arg(long, default_value_t = 0.5)]
    key_t_min: f64,
    /// Upper bound of the key-view timestep range.
    #[arg(long, default_value_t = 0.9)]
    key_t_max: f64,
    /// Diffusion steps for key-view edits.
    #[arg(long, default_value_t = 10)]
    key_steps: u32,
    /// Timestep for blend and post-refinement passes.
    #[arg(long, default_value_t = 0.6)]
    blend_t: f64,
    /// Diffusion steps for blend and post-refinement passes.
    #[arg(long, default_value_t = 3)]
    blend_steps: u32,
    /// Image guidance scale.
    #[arg(long, default_value_t = 1.5)]
    s_i: f64,
    /// Text guidance scale.
    #[arg(long, default_value_t = 7.5)]
    s_t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run post-refinement after stage 1.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    post_refine: bool,
    /// Compute metrics after the run.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    metrics: bool,
    /// Embedding provider for metrics: builtin or external:<command>.
    #[arg(long, default_value = "builtin")]
    provider: String,
    #[arg(long, default_value = "original scene")]
    orig_caption: String,
    #[arg(long, default_value = "edited scene")]
    edit_caption: String,
    /// Parallel workers for projection and refinement.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    filter: FilterArgs,
    /// Timeout for one external editor call, in seconds.
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, value_name = "DIR")]
    original: PathBuf,
    #[arg(long, value_name = "DIR")]
    edited: PathBuf,
    /// builtin or external:<command>.
    #[arg(long, default_value = "builtin")]
    provider: String,
    #[arg(long, default_value = "original scene")]
    orig_caption: String,
    #[arg(long, default_value = "edited scene")]
    edit_caption: String,
    /// Ledger of the run that produced the edited dataset.
    #[arg(long, value_name = "FILE")]
    ledger: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    /// Timeout for one external provider call, in seconds.
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    #[arg(long, value_name = "FILE", default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PropagateMaskArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Id of the view the mask belongs to.
    #[arg(long)]
    seed_view: usize,
    /// Mask image; pixels with luma of at least 128 are inside.
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,
    /// Round-trip IoU a view needs to join.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Also write every view tiled into one PNG.
    #[arg(long, value_name = "FILE")]
    contact_sheet: Option<PathBuf>,
    /// Tiles per row in the contact sheet.
    #[arg(long, default_value_t = 5)]
    columns: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VIEWPROP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenScene(a) => commands::gen_scene(a),
        Command::Propagate(a) => commands::propagate(*a),
        Command::Metrics(a) => commands::metrics(a),
        Command::PropagateMask(a) => commands::propagate_mask(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
