//! Helpers for driving the binary plus reference computations that do not
//! go through the library's projection or sampling code.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use std::path::Path;
use std::process::{Command, Output};
use viewprop::scene::{BinaryMask, ImageBuffer, Primitive, Rgb, ViewRecord};

pub fn viewprop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewprop"))
        .args(args)
        .current_dir(cwd)
        .env("VIEWPROP_LOG", "error")
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it exits with `code`.
pub fn expect_exit(args: &[&str], cwd: &Path, code: i32) -> Output {
    let out = viewprop(args, cwd);
    assert_eq!(
        out.status.code(),
        Some(code),
        "viewprop {}\nstdout:\n{}\nstderr:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn k_matrix(view: &ViewRecord) -> Matrix3<f64> {
    let k = &view.intrinsics;
    Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0)
}

/// Homography taking target pixel coordinates to source pixel coordinates
/// for points on the world plane `n . X = d`.
pub fn plane_homography(target: &ViewRecord, source: &ViewRecord, n: Vector3<f64>, d: f64) -> Matrix3<f64> {
    let (rt, ct) = (target.pose.rotation, target.pose.translation);
    let (rs, cs) = (source.pose.rotation, source.pose.translation);
    let r = rs.transpose() * rt;
    let t = rs.transpose() * (ct - cs);
    let n_t = rt.transpose() * n;
    let d_t = d - n.dot(&ct);
    k_matrix(source) * (r + t * n_t.transpose() / d_t) * k_matrix(target).try_inverse().unwrap()
}

pub fn apply_h(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Bilinear lookup with texel centers at half-integers and clamped borders.
pub fn bilinear(img: &ImageBuffer, x: f64, y: f64) -> Rgb {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (gx, gy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (ax, ay) = (gx - x0, gy - y0);
    let at = |u: i64, v: i64| img.get(u.clamp(0, w - 1) as u32, v.clamp(0, h - 1) as u32);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = [0.0; 3];
    for (du, dv, wgt) in [(0, 0, (1.0 - ax) * (1.0 - ay)), (1, 0, ax * (1.0 - ay)), (0, 1, (1.0 - ax) * ay), (1, 1, ax * ay)] {
        let p = at(x0 + du, y0 + dv);
        for c in 0..3 {
            out[c] += wgt * p[c];
        }
    }
    out
}

pub fn max_channel_diff(a: Rgb, b: Rgb) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
}

/// World point seen at pixel center `(u, v)` of `view`, from its depth.
pub fn world_point(view: &ViewRecord, u: u32, v: u32) -> Option<Vector3<f64>> {
    let z = view.depth.get(u, v)?;
    let k = &view.intrinsics;
    let cam = Vector3::new((u as f64 + 0.5 - k.cx) / k.fx * z, (v as f64 + 0.5 - k.cy) / k.fy * z, z);
    Some(view.pose.rotation * cam + view.pose.translation)
}

fn blocked(primitives: &[Primitive], origin: Vector3<f64>, dir: Vector3<f64>, limit: f64) -> bool {
    primitives.iter().any(|p| match p {
        Primitive::Plane(plane) => {
            let denom = plane.normal.dot(&dir);
            if denom.abs() < 1e-15 {
                return false;
            }
            let s = plane.normal.dot(&(plane.point - origin)) / denom;
            s > 1e-9 && s < limit
        }
        Primitive::Sphere(sphere) => {
            let oc = origin - sphere.center;
            let b = oc.dot(&dir);
            let disc = b * b - (oc.norm_squared() - sphere.radius * sphere.radius);
            if disc < 0.0 {
                return false;
            }
            let root = disc.sqrt();
            [-b - root, -b + root].into_iter().any(|s| s > 1e-9 && s < limit)
        }
    })
}

/// Whether world point `x` falls inside the image of `view` with nothing in
/// between it and the camera center.
pub fn visible_from(primitives: &[Primitive], view: &ViewRecord, x: &Vector3<f64>) -> bool {
    let cam = view.pose.rotation.transpose() * (x - view.pose.translation);
    if cam.z <= 1e-9 {
        return false;
    }
    let k = &view.intrinsics;
    let (px, py) = (k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);
    if !(px >= 0.0 && py >= 0.0 && px < k.width as f64 && py < k.height as f64) {
        return false;
    }
    let to = x - view.pose.translation;
    let dist = to.norm();
    !blocked(primitives, view.pose.translation, to / dist, dist * (1.0 - 1e-7))
}

/// Pixels of `view` whose label differs from the homography-warped `seed_mask`
/// outside a one-pixel band around the warped boundary.
pub fn mask_mismatches(view: &ViewRecord, seed: &ViewRecord, seed_mask: &BinaryMask, mask: &BinaryMask) -> usize {
    let h = plane_homography(view, seed, Vector3::z(), 0.0);
    let (sw, sh) = seed_mask.dims();
    let expected = |u: i64, v: i64| {
        let (x, y) = apply_h(&h, u as f64 + 0.5, v as f64 + 0.5);
        x >= 0.0 && y >= 0.0 && x < sw as f64 && y < sh as f64 && seed_mask.get(x.floor() as u32, y.floor() as u32)
    };
    let (w, hgt) = (view.dims().0 as i64, view.dims().1 as i64);
    let mut bad = 0;
    for v in 1..hgt - 1 {
        for u in 1..w - 1 {
            let label = expected(u, v);
            let band = (-1..=1).any(|dv| (-1..=1).any(|du| expected(u + du, v + dv) != label));
            if !band && mask.get(u as u32, v as u32) != label {
                bad += 1;
            }
        }
    }
    bad
}
