mod common;

use common::dataset;
use std::ops::ControlFlow;
use viewprop::editing::{rgb_to_hsv, EditorHandle, EditorSpec, MockEditor};
use viewprop::geometry::{build_correspondences, FilterPolicy};
use viewprop::metrics::photometric_inconsistency;
use viewprop::pipeline::{
    no_observer, run_post_refinement, run_stage1, EditorSettings, PipelineError, RunConfig, Stage1Event,
};
use viewprop::propagation::{apply_projection_mixup, modified_ratio, PropagationState, StopReason};
use viewprop::scene::{BinaryMask, ImageBuffer, ScenePreset, ViewRecord};

fn config(spec: EditorSpec, instruction: &str) -> RunConfig {
    RunConfig {
        editor: EditorSettings { spec, instruction: instruction.into(), ..Default::default() },
        ..Default::default()
    }
}

fn stylize() -> EditorSpec {
    "mock:noisy-stylize".parse().unwrap()
}

#[test]
fn overlapping_projections_keep_the_first_writer() {
    let data = dataset(ScenePreset::PlaneRing, 8, 48, 0);
    let policy = FilterPolicy::default();
    let mut first = data.views[0].clone();
    first.image = ImageBuffer::filled(48, 48, [1.0, 0.0, 0.0]);
    first.modified = BinaryMask::full(48, 48);
    let mut second = data.views[2].clone();
    second.image = ImageBuffer::filled(48, 48, [0.0, 0.0, 1.0]);
    second.modified = BinaryMask::full(48, 48);

    let mut target = data.views[1].clone();
    let original = target.image.clone();
    let from_first = build_correspondences(&target, &first, &policy).valid_mask();
    let from_second = build_correspondences(&target, &second, &policy).valid_mask();
    assert!(from_first.intersection_count(&from_second) > 100, "fixture needs an overlap");

    let mut state = PropagationState::new(std::slice::from_ref(&target));
    state.ratios = vec![0.0];
    // PropagationState is indexed by view id.
    target.id = 0;
    apply_projection_mixup(&mut target, &first, &mut state, &policy).unwrap();
    apply_projection_mixup(&mut target, &second, &mut state, &policy).unwrap();

    for v in 0..48 {
        for u in 0..48 {
            let want = if from_first.get(u, v) {
                [1.0, 0.0, 0.0]
            } else if from_second.get(u, v) {
                [0.0, 0.0, 1.0]
            } else {
                original.get(u, v)
            };
            let got = target.image.get(u, v);
            assert!((0..3).all(|c| (got[c] - want[c]).abs() < 1e-12), "pixel ({u}, {v}): {got:?}");
        }
    }
    assert_eq!(target.modified.count(), from_first.union_count(&from_second));
    assert_eq!(state.ratios[0], modified_ratio(&target.modified));
}

/// Snapshot of every view's image and modified mask.
type Snapshot = Vec<(ImageBuffer, BinaryMask)>;

fn snapshot(views: &[ViewRecord]) -> Snapshot {
    views.iter().map(|v| (v.image.clone(), v.modified.clone())).collect()
}

#[test]
fn key_view_loop_writes_each_pixel_once() {
    let data = dataset(ScenePreset::PlaneRing, 20, 64, 11);
    let cfg = config(stylize(), "sepia");
    let handle = EditorHandle::from_spec(&cfg.editor.spec);
    let mut previous: Option<Snapshot> = None;
    let mut double_writes = 0usize;
    let mut ratio_drops = 0usize;
    let mut stale_ratios = 0usize;
    let mut observer = |event: &Stage1Event<'_>| {
        match event {
            Stage1Event::WarmupDone { views } => previous = Some(snapshot(views)),
            Stage1Event::KeyView { views, state, .. } => {
                let before = previous.as_ref().expect("warm-up reported first");
                for (view, (image, mask)) in views.iter().zip(before) {
                    for i in 0..mask.len() {
                        if mask.get_index(i) {
                            double_writes += (view.image.get_index(i) != image.get_index(i)) as usize;
                            ratio_drops += !view.modified.get_index(i) as usize;
                        }
                    }
                    stale_ratios += (state.ratios[view.id] != modified_ratio(&view.modified)) as usize;
                }
                previous = Some(snapshot(views));
            }
            Stage1Event::BlendBatch { .. } => {}
        }
        ControlFlow::Continue(())
    };
    let out = run_stage1(&data, &cfg, &handle, None, &mut observer).unwrap();
    assert_eq!(double_writes, 0);
    assert_eq!(ratio_drops, 0);
    assert_eq!(stale_ratios, 0);

    let state = out.state();
    match state.stop_reason.unwrap() {
        StopReason::Coverage => assert!(state.ratios.iter().all(|&r| r >= 0.95)),
        StopReason::NoProgress => assert_eq!(state.key_views.len(), 20),
    }
    assert!(state.key_views.len() <= 20);
    let ledger = out.ledger();
    for pair in ledger.ratio_history.windows(2) {
        assert!(pair[0].iter().zip(&pair[1]).all(|(a, b)| b >= a));
    }
    let inv = &ledger.invocations;
    assert_eq!(inv.warmup, 10);
    assert_eq!(inv.key_views, state.key_views.len() as u64);
    assert_eq!(inv.blend, 40);
    assert_eq!(inv.stage1(), 10 + state.key_views.len() as u64 + 40);

    let again = run_stage1(&data, &cfg, &EditorHandle::from_spec(&cfg.editor.spec), None, &mut no_observer).unwrap();
    assert_eq!(again.ledger().key_views, ledger.key_views);
    assert_eq!(again.dataset, out.dataset);
}

#[test]
fn identity_propagation_only_resamples() {
    let data = dataset(ScenePreset::PlaneRing, 12, 96, 2);
    let cfg = config(EditorSpec::Mock(MockEditor::Identity), "");
    let handle = EditorHandle::from_spec(&cfg.editor.spec);
    let out = run_stage1(&data, &cfg, &handle, None, &mut no_observer).unwrap();
    let value = photometric_inconsistency(&out.dataset.views, &FilterPolicy::default()).unwrap();
    assert!(value <= 2.0 / 255.0, "{value}");
}

#[test]
fn first_key_view_controls_the_hue() {
    let data = dataset(ScenePreset::PlaneRing, 12, 64, 6);
    let cfg = config(EditorSpec::Mock(MockEditor::HueRotate { degrees: None }), "rotate hue by 90 degrees");
    let handle = EditorHandle::from_spec(&cfg.editor.spec);
    let out = run_stage1(&data, &cfg, &handle, None, &mut no_observer).unwrap();
    let first = out.state().key_views[0];
    let mut key = data.views[first].clone();
    key.image = out.mixup[first].clone();
    let policy = FilterPolicy::default();
    let mut total = (0usize, 0usize);
    for (view, mixup) in data.views.iter().zip(&out.mixup) {
        if view.id == first {
            continue;
        }
        let map = build_correspondences(view, &key, &policy);
        let (mut checked, mut matching) = (0usize, 0usize);
        for (i, e) in map.entries.iter().enumerate() {
            let (true, Some((x, y))) = (e.valid, e.source_uv) else { continue };
            let (h_key, s_key, v_key) = rgb_to_hsv(key.image.sample_bilinear(x, y));
            if s_key < 0.1 || v_key < 0.1 {
                continue;
            }
            let (h, _, _) = rgb_to_hsv(mixup.get_index(i));
            checked += 1;
            let diff = (h - h_key).rem_euclid(360.0);
            matching += (diff.min(360.0 - diff) <= 3.0) as usize;
        }
        if checked >= 200 {
            assert!(matching as f64 >= 0.95 * checked as f64, "view {}: {matching}/{checked}", view.id);
        }
        total.0 += checked;
        total.1 += matching;
    }
    assert!(total.0 > 1_000, "{total:?}");
    assert!(total.1 as f64 >= 0.95 * total.0 as f64, "{total:?}");
}

#[test]
fn post_refinement_does_not_add_inconsistency() {
    let data = dataset(ScenePreset::PlaneRing, 10, 64, 8);
    let cfg = config(stylize(), "sepia");
    let handle = EditorHandle::from_spec(&cfg.editor.spec);
    let stage1 = run_stage1(&data, &cfg, &handle, None, &mut no_observer).unwrap();
    let policy = FilterPolicy::default();
    let before = photometric_inconsistency(&stage1.dataset.views, &policy).unwrap();
    let k = stage1.state().key_views.len() as u64;
    let (refined, ledger) = run_post_refinement(stage1, &cfg, &handle, None).unwrap();
    let after = photometric_inconsistency(&refined.views, &policy).unwrap();
    assert!(after <= before + 1e-12, "{after} > {before}");
    assert_eq!(ledger.invocations.total(), 10 + k + 2 * 10 + 10);
    assert!(ledger.post_refined);
}

fn interrupt_at(limit: usize) -> impl FnMut(&Stage1Event<'_>) -> ControlFlow<()> + Send {
    let mut seen = 0;
    move |_| {
        seen += 1;
        if seen >= limit {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let data = dataset(ScenePreset::PlaneRing, 8, 48, 9);
    let cfg = RunConfig { worker_count: 3, ..config(stylize(), "sepia") };
    let reference = {
        let handle = EditorHandle::from_spec(&cfg.editor.spec);
        let s1 = run_stage1(&data, &cfg, &handle, None, &mut no_observer).unwrap();
        run_post_refinement(s1, &cfg, &handle, None).unwrap()
    };
    let events = 2 + reference.1.key_views.len() + 2;
    // Stop after warm-up, inside the key-view loop and inside blending.
    for stop in [1, 2, events - 1] {
        let dir = tempfile::tempdir().unwrap();
        let handle = EditorHandle::from_spec(&cfg.editor.spec);
        let err = run_stage1(&data, &cfg, &handle, Some(dir.path()), &mut interrupt_at(stop)).unwrap_err();
        assert!(matches!(err, PipelineError::Interrupted { .. }), "{err}");

        let resumed_cfg = RunConfig { resume: true, ..cfg.clone() };
        let handle = EditorHandle::from_spec(&cfg.editor.spec);
        let s1 = run_stage1(&data, &resumed_cfg, &handle, Some(dir.path()), &mut no_observer).unwrap();
        let (final_data, ledger) = run_post_refinement(s1, &resumed_cfg, &handle, Some(dir.path())).unwrap();
        assert_eq!(final_data, reference.0, "stopped at event {stop}");
        assert_eq!(ledger.to_json(), reference.1.to_json(), "stopped at event {stop}");
    }
}
