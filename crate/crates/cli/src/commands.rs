use crate::{FilterArgs, GenSceneArgs, InspectArgs, MetricsArgs, PropagateArgs, PropagateMaskArgs};
use anyhow::{Context, Result};
use std::fmt;
use std::fs;
use std::time::Duration;
use viewprop::editing::EditorSpec;
use viewprop::geometry::{propagate_mask as spread_mask, FilterPolicy};
use viewprop::metrics::{provider_from_spec, Captions, InvocationLedger, MetricError, MetricReport};
use viewprop::pipeline::{run_all, EditorSettings, RunConfig, RunLedger};
use viewprop::propagation::PropagationConfig;
use viewprop::scene::{
    gen_synthetic, load_dataset, load_mask, save_dataset, save_image, save_mask, ImageBuffer, SceneError,
    ScenePreset, SyntheticSceneSpec,
};

/// An error caused by the invocation rather than by the run; exits with 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

impl FilterArgs {
    fn policy(&self) -> Result<FilterPolicy> {
        let policy = FilterPolicy {
            max_reprojection_error: self.max_reproj,
            depth_agreement_tolerance: self.depth_tol,
            min_facing_cosine: self.min_facing,
            require_in_frustum: true,
        };
        policy.validate().map_err(usage)?;
        Ok(policy)
    }
}

pub fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let preset: ScenePreset = a.preset.parse().map_err(usage)?;
    if a.res == 0 {
        return Err(usage("resolution must be positive"));
    }
    let spec = SyntheticSceneSpec::preset(preset, a.views, a.res).map_err(usage)?;
    let dataset = gen_synthetic(&spec, a.seed).map_err(|e| match e {
        SceneError::CameraInsideSphere { .. } | SceneError::InvalidSpec(_) => usage(e),
        other => other.into(),
    })?;
    save_dataset(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} {} views ({}x{}) to {}", dataset.views.len(), preset, a.res, a.res, a.out.display());
    Ok(())
}

pub fn propagate(a: PropagateArgs) -> Result<()> {
    let spec: EditorSpec = a.editor.parse().map_err(usage)?;
    let config = RunConfig {
        propagation: PropagationConfig {
            phi: a.phi,
            stop_ratio: a.stop,
            seed: a.seed,
            warmup_lambda: a.lambda,
            warmup_iterations: a.warmup,
        },
        editor: EditorSettings {
            spec: spec.with_timeout(Duration::from_secs(a.timeout)),
            instruction: a.instruction,
            key_t_range: (a.key_t_min, a.key_t_max),
            key_steps: a.key_steps,
            blend_t: a.blend_t,
            blend_steps: a.blend_steps,
            n_r: a.n_r,
            image_guidance: a.s_i,
            text_guidance: a.s_t,
        },
        filter: a.filter.policy()?,
        enable_post_refine: a.post_refine,
        metrics_enabled: a.metrics,
        metrics_provider: a.provider,
        captions: Captions { original: a.orig_caption, edited: a.edit_caption },
        worker_count: a.workers,
        output_dir: a.out,
        resume: a.resume,
    };
    config.validate().map_err(usage)?;
    if config.metrics_enabled {
        provider_from_spec(&config.metrics_provider, Duration::from_secs(a.timeout)).map_err(usage)?;
    }
    let summary = run_all(&a.dataset, &config)?;
    print_ledger(&summary.ledger);
    print_report(&summary.report);
    println!("output written to {}", summary.output_dir.display());
    Ok(())
}

fn print_ledger(ledger: &RunLedger) {
    println!("editor: {}", ledger.editor);
    println!("key views ({}):", ledger.key_views.len());
    for k in &ledger.key_views {
        println!("  #{:<2} view {:>3}  t = {:.3}  projected {} px", k.iteration, k.view, k.timestep_t, k.projected_pixels);
    }
    if let Some(reason) = ledger.stop_reason {
        println!("selection stopped: {reason:?}");
    }
    let i = &ledger.invocations;
    println!(
        "editor invocations: warm-up {} + key views {} + blend {} = stage 1 {}; post-refine {}; total {} ({} sub-runs)",
        i.warmup,
        i.key_views,
        i.blend,
        i.stage1(),
        i.post_refine,
        i.total(),
        i.sub_runs
    );
    for t in &ledger.timings {
        println!("  {:<18} {:>8.3} s", t.stage, t.seconds);
    }
}

fn print_report(report: &MetricReport) {
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    println!("{:<28} {:>12}", "metric", "value");
    println!("{:<28} {:>12}", "direction_score", show(report.direction_score));
    println!("{:<28} {:>12}", "consistency_score", show(report.consistency_score));
    println!("{:<28} {:>12}", "photometric_inconsistency", show(report.photometric_inconsistency));
    for e in &report.errors {
        println!("unavailable: {e}");
    }
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let policy = a.filter.policy()?;
    let provider = provider_from_spec(&a.provider, Duration::from_secs(a.timeout)).map_err(usage)?;
    let original = load_dataset(&a.original).with_context(|| format!("loading {}", a.original.display()))?;
    let edited = load_dataset(&a.edited).with_context(|| format!("loading {}", a.edited.display()))?;
    if original.views.len() != edited.views.len() {
        return Err(usage(MetricError::LengthMismatch { original: original.views.len(), edited: edited.views.len() }));
    }
    let invocations = match &a.ledger {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let ledger: RunLedger =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            ledger.invocations
        }
        None => InvocationLedger::default(),
    };
    let captions = Captions { original: a.orig_caption, edited: a.edit_caption };
    let report = MetricReport::evaluate(&original.views, &edited.views, &captions, provider.as_ref(), &policy, invocations)?;
    fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    print_report(&report);
    if let Some(first) = report.errors.first() {
        anyhow::bail!("{} metric(s) could not be computed; first: {first}", report.errors.len());
    }
    Ok(())
}

pub fn propagate_mask(a: PropagateMaskArgs) -> Result<()> {
    let policy = a.filter.policy()?;
    if !(0.0..=1.0).contains(&a.overlap) {
        return Err(usage(format!("--overlap must be in [0, 1], got {}", a.overlap)));
    }
    let dataset = load_dataset(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let seed_view = dataset
        .views
        .get(a.seed_view)
        .ok_or_else(|| usage(format!("seed view {} not in dataset of {} views", a.seed_view, dataset.views.len())))?;
    let mask = load_mask(&a.mask).map_err(usage)?;
    if mask.dims() != seed_view.dims() {
        return Err(usage(format!("mask is {:?} but view {} is {:?}", mask.dims(), a.seed_view, seed_view.dims())));
    }
    if mask.is_empty() {
        return Err(usage("seed mask is empty"));
    }
    let masks = spread_mask(seed_view, &mask, &dataset.views, a.overlap, &policy)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut written = 0;
    for (view, m) in dataset.views.iter().zip(&masks) {
        if m.is_empty() {
            continue;
        }
        save_mask(m, a.out.join(format!("mask_{:03}.png", view.id)))?;
        println!("view {:>3}: {} px", view.id, m.count());
        written += 1;
    }
    println!("wrote {written} mask(s) to {}", a.out.display());
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let dataset = load_dataset(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    println!("{} ({}), depth scale {} m", a.dataset.display(), dataset.version, dataset.depth_scale);
    println!("{} views", dataset.views.len());
    println!("{:>4} {:>9} {:>8} {:>8} {:>8}  {:>24}", "id", "size", "fx", "valid", "depth", "center");
    for v in &dataset.views {
        let depths: Vec<f64> = v.depth.values().iter().flatten().copied().collect();
        let range = if depths.is_empty() {
            "-".to_string()
        } else {
            let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            format!("{lo:.2}-{hi:.2}")
        };
        let c = v.pose.center();
        println!(
            "{:>4} {:>9} {:>8.2} {:>7.1}% {:>8}  ({:>6.3}, {:>6.3}, {:>6.3})",
            v.id,
            format!("{}x{}", v.intrinsics.width, v.intrinsics.height),
            v.intrinsics.fx,
            100.0 * depths.len() as f64 / v.pixel_count() as f64,
            range,
            c.x,
            c.y,
            c.z
        );
    }
    if let Some(path) = &a.contact_sheet {
        if a.columns == 0 {
            return Err(usage("--columns must be positive"));
        }
        let sheet = contact_sheet(dataset.views.iter().map(|v| &v.image).collect(), a.columns);
        save_image(&sheet, path)?;
        println!("contact sheet written to {}", path.display());
    }
    Ok(())
}

/// Tiles images row by row; tiles are as large as the largest image.
fn contact_sheet(images: Vec<&ImageBuffer>, columns: u32) -> ImageBuffer {
    let tw = images.iter().map(|i| i.width()).max().unwrap_or(1);
    let th = images.iter().map(|i| i.height()).max().unwrap_or(1);
    let columns = columns.min(images.len().max(1) as u32);
    let rows = (images.len() as u32).div_ceil(columns).max(1);
    let mut sheet = ImageBuffer::new(tw * columns, th * rows);
    for (i, img) in images.iter().enumerate() {
        let (ox, oy) = ((i as u32 % columns) * tw, (i as u32 / columns) * th);
        for v in 0..img.height() {
            for u in 0..img.width() {
                sheet.set(ox + u, oy + v, img.get(u, v));
            }
        }
    }
    sheet
}
