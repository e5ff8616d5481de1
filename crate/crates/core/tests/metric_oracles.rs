mod common;

use common::dataset;
use viewprop::editing::{hsv_to_rgb, rgb_to_hsv};
use viewprop::geometry::FilterPolicy;
use viewprop::metrics::{
    consistency_score, direction_score, photometric_inconsistency, EmbeddingProvider, MetricError, ThumbnailProvider,
};
use viewprop::scene::{DepthMap, ImageBuffer, ScenePreset};

/// Embedding by definition: 8x8 grid of mean Rec. 601 luma, unit length.
/// Only used with sizes divisible by 8.
fn oracle_embed(img: &ImageBuffer) -> Vec<f64> {
    let (cw, ch) = (img.width() / 8, img.height() / 8);
    let mut cells = Vec::new();
    for gy in 0..8 {
        for gx in 0..8 {
            let mut s = 0.0;
            for v in gy * ch..(gy + 1) * ch {
                for u in gx * cw..(gx + 1) * cw {
                    let p = img.get(u, v);
                    s += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
                }
            }
            cells.push(s / (cw * ch) as f64);
        }
    }
    let n = cells.iter().map(|x| x * x).sum::<f64>().sqrt();
    cells.iter().map(|x| x / n).collect()
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Three (original, edited) fixtures of three views each.
fn fixtures() -> Vec<(Vec<ImageBuffer>, Vec<ImageBuffer>)> {
    let ramp = |shift: f64| {
        ImageBuffer::from_fn(16, 16, move |u, v| [(u as f64 / 15.0 + shift).fract(), v as f64 / 15.0, 0.5])
    };
    let rings = |r0: f64| {
        ImageBuffer::from_fn(24, 24, move |u, v| {
            let d = ((u as f64 - 11.5).powi(2) + (v as f64 - 11.5).powi(2)).sqrt();
            let on = ((d + r0) / 3.0).floor() as i64 % 2 == 0;
            if on { [0.9, 0.8, 0.2] } else { [0.1, 0.2, 0.4] }
        })
    };
    let blocks = |k: u32| ImageBuffer::from_fn(32, 16, move |u, v| if (u / 4 + v / 2 + k).is_multiple_of(3) { [0.8; 3] } else { [0.3, 0.1, 0.6] });

    let mut out = Vec::new();
    let o: Vec<_> = (0..3).map(|i| ramp(i as f64 * 0.1)).collect();
    let e = o.iter().map(|img| img.map(|p| [p[0] * 0.5, p[1], 1.0 - p[2] * 0.3])).collect();
    out.push((o, e));
    let o: Vec<_> = (0..3).map(|i| rings(i as f64)).collect();
    let e = o.iter().enumerate().map(|(i, img)| img.map(|p| [p[2], p[0], (p[1] + 0.1 * i as f64).min(1.0)])).collect();
    out.push((o, e));
    let o: Vec<_> = (0..3).map(blocks).collect();
    let e = o
        .iter()
        .enumerate()
        .map(|(i, img)| ImageBuffer::from_fn(32, 16, |u, v| if u < 8 * (i as u32 + 1) { [1.0, 0.0, 0.0] } else { img.get(u, v) }))
        .collect();
    out.push((o, e));
    out
}

#[test]
fn scores_match_definition() {
    let provider = ThumbnailProvider::default();
    let t_orig = provider.embed_text("a photo").unwrap();
    let t_edit = provider.embed_text("a sketch").unwrap();
    let t_diff = sub(&t_edit, &t_orig);
    for (k, (orig, edit)) in fixtures().iter().enumerate() {
        let o: Vec<&ImageBuffer> = orig.iter().collect();
        let e: Vec<&ImageBuffer> = edit.iter().collect();
        let eo: Vec<_> = orig.iter().map(oracle_embed).collect();
        let ee: Vec<_> = edit.iter().map(oracle_embed).collect();

        let want_dir = (0..3).map(|i| oracle_cos(&sub(&ee[i], &eo[i]), &t_diff)).sum::<f64>() / 3.0;
        let got_dir = direction_score(&o, &e, "a photo", "a sketch", &provider).unwrap();
        assert!((got_dir - want_dir).abs() <= 1e-9, "fixture {k}: {got_dir} vs {want_dir}");

        let want_cons = (0..2)
            .map(|i| oracle_cos(&sub(&ee[i + 1], &ee[i]), &sub(&eo[i + 1], &eo[i])))
            .sum::<f64>()
            / 2.0;
        let got_cons = consistency_score(&o, &e, &provider).unwrap();
        assert!((got_cons - want_cons).abs() <= 1e-9, "fixture {k}: {got_cons} vs {want_cons}");
    }
}

#[test]
fn zero_directions_are_errors() {
    let provider = ThumbnailProvider::default();
    let (orig, edit) = &fixtures()[0];
    let o: Vec<&ImageBuffer> = orig.iter().collect();
    let e: Vec<&ImageBuffer> = edit.iter().collect();
    assert!(matches!(direction_score(&o, &o, "a", "b", &provider), Err(MetricError::Degenerate(_))));
    assert!(matches!(direction_score(&o, &e, "same", "same", &provider), Err(MetricError::Degenerate(_))));
    let same = [o[0], o[0], o[0]];
    assert!(matches!(consistency_score(&same, &e, &provider), Err(MetricError::Degenerate(_))));
}

#[test]
fn alternating_hue_edits_are_less_consistent() {
    let data = dataset(ScenePreset::PlaneRing, 8, 64, 4);
    let rotate = |img: &ImageBuffer, deg: f64| {
        img.map(|p| {
            let (h, s, v) = rgb_to_hsv(p);
            hsv_to_rgb((h + deg).rem_euclid(360.0), s, v)
        })
    };
    let orig: Vec<&ImageBuffer> = data.views.iter().map(|v| &v.image).collect();
    let uniform: Vec<ImageBuffer> = orig.iter().map(|img| rotate(img, 60.0)).collect();
    let alternating: Vec<ImageBuffer> =
        orig.iter().enumerate().map(|(i, img)| rotate(img, if i % 2 == 0 { 60.0 } else { -60.0 })).collect();
    let provider = ThumbnailProvider::default();
    let u = consistency_score(&orig, &uniform.iter().collect::<Vec<_>>(), &provider).unwrap();
    let a = consistency_score(&orig, &alternating.iter().collect::<Vec<_>>(), &provider).unwrap();
    assert!(a < u, "alternating {a} vs uniform {u}");
}

#[test]
fn constant_views_have_no_photometric_inconsistency() {
    let mut data = dataset(ScenePreset::PlaneRing, 4, 32, 0);
    for v in &mut data.views {
        v.image = ImageBuffer::filled(32, 32, [0.3, 0.6, 0.9]);
    }
    assert!(photometric_inconsistency(&data.views, &FilterPolicy::default()).unwrap() < 1e-12);
    for v in &mut data.views {
        v.depth = DepthMap::invalid(32, 32);
    }
    assert!(matches!(
        photometric_inconsistency(&data.views, &FilterPolicy::default()),
        Err(MetricError::NoCorrespondences)
    ));
}
