//! Depth-guided correspondences between posed views.
//!
//! Correspondences use gather semantics: every target pixel is unprojected
//! with the target's own depth and projected into the source view, where
//! colors (bilinear) or mask bits (nearest) are read back. A correspondence
//! survives only if the cycle target -> source -> target lands within
//! `max_reprojection_error` pixels of where it started and the source depth
//! agrees with the projected depth. Near silhouettes of convex objects the
//! front and back surfaces have almost the same depth, so points whose
//! surface (estimated from the target depth map) turns away from the source
//! camera are rejected as well.

use crate::scene::{BinaryMask, CameraIntrinsics, ImageBuffer, RigidPose, ViewRecord};
use nalgebra::Vector3;
use rayon::prelude::*;
use std::io::{self, Read, Write};
use thiserror::Error;

/// Points at or behind this camera-frame depth are never in frustum.
pub const MIN_CAMERA_Z: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid filter policy: {0}")]
    InvalidPolicy(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("seed mask is empty")]
    EmptySeedMask,
    #[error("seed view {0} is not part of the view list")]
    UnknownSeedView(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPolicy {
    /// Maximum cycle reprojection error in pixels.
    pub max_reprojection_error: f64,
    /// Allowed `|projected - sampled| / projected` depth disagreement.
    pub depth_agreement_tolerance: f64,
    /// Smallest accepted cosine between the target surface normal and the
    /// direction to the source camera; -1 disables the check.
    pub min_facing_cosine: f64,
    pub require_in_frustum: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            max_reprojection_error: 5.0,
            depth_agreement_tolerance: 0.01,
            min_facing_cosine: 0.1,
            require_in_frustum: true,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.max_reprojection_error > 0.0) {
            return Err(GeometryError::InvalidPolicy(format!(
                "max_reprojection_error must be positive, got {}",
                self.max_reprojection_error
            )));
        }
        if !(self.depth_agreement_tolerance >= 0.0) {
            return Err(GeometryError::InvalidPolicy(format!(
                "depth_agreement_tolerance must be non-negative, got {}",
                self.depth_agreement_tolerance
            )));
        }
        if !(-1.0..1.0).contains(&self.min_facing_cosine) {
            return Err(GeometryError::InvalidPolicy(format!(
                "min_facing_cosine must be in [-1, 1), got {}",
                self.min_facing_cosine
            )));
        }
        if !self.require_in_frustum {
            return Err(GeometryError::InvalidPolicy("require_in_frustum cannot be disabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub pixel: (u32, u32),
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// World point seen at continuous image location `(x, y)` with z-depth `depth`.
pub fn unproject_point(k: &CameraIntrinsics, pose: &RigidPose, x: f64, y: f64, depth: f64) -> Vector3<f64> {
    pose.camera_to_world(&(k.ray_direction(x, y) * depth))
}

/// One world point per valid-depth pixel, taken at the pixel center.
pub fn unproject(view: &ViewRecord) -> PointCloud {
    let k = &view.intrinsics;
    let mut points = Vec::with_capacity(view.depth.valid_count());
    for v in 0..k.height {
        for u in 0..k.width {
            if let Some(d) = view.depth.get(u, v) {
                let position = unproject_point(k, &view.pose, u as f64 + 0.5, v as f64 + 0.5, d);
                points.push(CloudPoint { pixel: (u, v), position });
            }
        }
    }
    PointCloud { points }
}

/// World-space unit normal at pixel `(u, v)` from its depth neighborhood,
/// oriented toward the camera. On each axis the neighbor with the closer
/// depth is used so that depth edges do not bend the estimate. `None` when
/// the pixel or both neighbors on an axis lack depth.
pub fn surface_normal(view: &ViewRecord, u: u32, v: u32) -> Option<Vector3<f64>> {
    let (w, h) = view.dims();
    let d = view.depth.get(u, v)?;
    let k = &view.intrinsics;
    let at = |u: u32, v: u32, d: f64| unproject_point(k, &view.pose, u as f64 + 0.5, v as f64 + 0.5, d);
    let p = at(u, v, d);
    let tangent = |prev: Option<(u32, u32)>, next: Option<(u32, u32)>| {
        let pick = |n: Option<(u32, u32)>| n.and_then(|(nu, nv)| view.depth.get(nu, nv).map(|nd| (nu, nv, nd)));
        match (pick(prev), pick(next)) {
            (Some(a), Some(b)) if (a.2 - d).abs() <= (b.2 - d).abs() => Some(p - at(a.0, a.1, a.2)),
            (_, Some(b)) => Some(at(b.0, b.1, b.2) - p),
            (Some(a), None) => Some(p - at(a.0, a.1, a.2)),
            (None, None) => None,
        }
    };
    let tx = tangent(u.checked_sub(1).map(|x| (x, v)), (u + 1 < w).then(|| (u + 1, v)))?;
    let ty = tangent(v.checked_sub(1).map(|y| (u, y)), (v + 1 < h).then(|| (u, v + 1)))?;
    let n = tx.cross(&ty).try_normalize(1e-300)?;
    Some(if n.dot(&(view.pose.center() - p)) < 0.0 { -n } else { n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub uv: (f64, f64),
    /// Camera-frame z-depth.
    pub z: f64,
    pub in_frustum: bool,
}

pub fn project_point(k: &CameraIntrinsics, pose: &RigidPose, world: &Vector3<f64>) -> Projection {
    let p = pose.world_to_camera(world);
    if p.z <= MIN_CAMERA_Z {
        return Projection { uv: (f64::NAN, f64::NAN), z: p.z, in_frustum: false };
    }
    let uv = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    Projection { uv, z: p.z, in_frustum: k.contains(uv.0, uv.1) }
}

pub fn project_points(cloud: &PointCloud, target: &ViewRecord) -> Vec<Projection> {
    cloud
        .points
        .iter()
        .map(|p| project_point(&target.intrinsics, &target.pose, &p.position))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_uv: Option<(f64, f64)>,
    /// Depth of the target point in the source camera frame.
    pub projected_depth: f64,
    /// Cycle error in target pixels; infinite when the cycle cannot close.
    pub reprojection_error: f64,
    pub valid: bool,
}

impl Correspondence {
    const NONE: Correspondence = Correspondence {
        source_uv: None,
        projected_depth: f64::NAN,
        reprojection_error: f64::INFINITY,
        valid: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub target_view_id: usize,
    pub source_view_id: usize,
    pub width: u32,
    pub height: u32,
    pub source_dims: (u32, u32),
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceMap {
    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    pub fn valid_mask(&self) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.entries.iter().map(|e| e.valid).collect())
            .expect("entries sized to map")
    }

    pub fn get(&self, u: u32, v: u32) -> &Correspondence {
        &self.entries[v as usize * self.width as usize + u as usize]
    }

    /// Flat little-endian dump: `u32` target id, source id, width, height,
    /// then per pixel `f32` u, v, error and a validity byte.
    pub fn write_binary(&self, mut w: impl Write) -> io::Result<()> {
        for header in [self.target_view_id as u32, self.source_view_id as u32, self.width, self.height] {
            w.write_all(&header.to_le_bytes())?;
        }
        for e in &self.entries {
            let (u, v) = e.source_uv.unwrap_or((f64::NAN, f64::NAN));
            w.write_all(&(u as f32).to_le_bytes())?;
            w.write_all(&(v as f32).to_le_bytes())?;
            w.write_all(&(e.reprojection_error as f32).to_le_bytes())?;
            w.write_all(&[e.valid as u8])?;
        }
        Ok(())
    }
}

/// A decoded correspondence dump (single precision, as stored).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceDump {
    pub target_view_id: u32,
    pub source_view_id: u32,
    pub width: u32,
    pub height: u32,
    pub records: Vec<([f32; 3], bool)>,
}

pub fn read_correspondence_dump(mut r: impl Read) -> io::Result<CorrespondenceDump> {
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let n = header[2] as usize * header[3] as usize;
    let mut records = Vec::with_capacity(n);
    let mut rec = [0u8; 13];
    for _ in 0..n {
        r.read_exact(&mut rec)?;
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        records.push(([f(0), f(4), f(8)], rec[12] != 0));
    }
    Ok(CorrespondenceDump {
        target_view_id: header[0],
        source_view_id: header[1],
        width: header[2],
        height: header[3],
        records,
    })
}

/// Correspondence for the continuous target location `(x, y)` given its depth.
pub fn correspond_point(
    target: &ViewRecord,
    source: &ViewRecord,
    x: f64,
    y: f64,
    depth: f64,
    policy: &FilterPolicy,
) -> Correspondence {
    let world = unproject_point(&target.intrinsics, &target.pose, x, y, depth);
    let fwd = project_point(&source.intrinsics, &source.pose, &world);
    if fwd.z <= MIN_CAMERA_Z {
        return Correspondence::NONE;
    }
    let mut out = Correspondence {
        source_uv: Some(fwd.uv),
        projected_depth: fwd.z,
        reprojection_error: f64::INFINITY,
        valid: false,
    };
    if !fwd.in_frustum {
        return out;
    }
    let Some(source_depth) = source.depth.sample_bilinear(fwd.uv.0, fwd.uv.1) else {
        return out;
    };
    let back_world = unproject_point(&source.intrinsics, &source.pose, fwd.uv.0, fwd.uv.1, source_depth);
    let back = project_point(&target.intrinsics, &target.pose, &back_world);
    if back.z <= MIN_CAMERA_Z {
        return out;
    }
    out.reprojection_error = (back.uv.0 - x).hypot(back.uv.1 - y);
    let depth_ok = (fwd.z - source_depth).abs() <= policy.depth_agreement_tolerance * fwd.z;
    out.valid = back.in_frustum
        && out.reprojection_error <= policy.max_reprojection_error
        && depth_ok
        && faces(target, source, x, y, &world, policy.min_facing_cosine);
    out
}

fn faces(target: &ViewRecord, source: &ViewRecord, x: f64, y: f64, world: &Vector3<f64>, min_cosine: f64) -> bool {
    if min_cosine <= -1.0 {
        return true;
    }
    let (w, h) = target.dims();
    let u = (x.floor().max(0.0) as u32).min(w - 1);
    let v = (y.floor().max(0.0) as u32).min(h - 1);
    let Some(n) = surface_normal(target, u, v) else {
        return true;
    };
    let to_source = (source.pose.center() - world).normalize();
    n.dot(&to_source) >= min_cosine
}

/// Maps every target pixel into `source`; see the module docs for the filter.
pub fn build_correspondences(target: &ViewRecord, source: &ViewRecord, policy: &FilterPolicy) -> CorrespondenceMap {
    let (w, h) = target.dims();
    let entries = (0..target.pixel_count())
        .into_par_iter()
        .map(|idx| {
            let u = (idx % w as usize) as u32;
            let v = (idx / w as usize) as u32;
            match target.depth.get(u, v) {
                Some(d) => correspond_point(target, source, u as f64 + 0.5, v as f64 + 0.5, d, policy),
                None => Correspondence::NONE,
            }
        })
        .collect();
    CorrespondenceMap {
        target_view_id: target.id,
        source_view_id: source.id,
        width: w,
        height: h,
        source_dims: source.dims(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub image: ImageBuffer,
    pub mask: BinaryMask,
}

/// Samples `source_image` at each valid correspondence; the rest stays black.
pub fn transfer_colors(map: &CorrespondenceMap, source_image: &ImageBuffer) -> Result<Transfer, GeometryError> {
    if source_image.dims() != map.source_dims {
        return Err(GeometryError::DimensionMismatch { expected: map.source_dims, actual: source_image.dims() });
    }
    let mut image = ImageBuffer::new(map.width, map.height);
    let mut mask = BinaryMask::new(map.width, map.height);
    for (idx, e) in map.entries.iter().enumerate() {
        if let (true, Some((x, y))) = (e.valid, e.source_uv) {
            image.set_index(idx, source_image.sample_bilinear(x, y));
            mask.set_index(idx, true);
        }
    }
    Ok(Transfer { image, mask })
}

/// Nearest-neighbor warp of a source-view mask into the map's target view.
pub fn warp_mask(map: &CorrespondenceMap, source_mask: &BinaryMask) -> Result<BinaryMask, GeometryError> {
    if source_mask.dims() != map.source_dims {
        return Err(GeometryError::DimensionMismatch { expected: map.source_dims, actual: source_mask.dims() });
    }
    let (sw, sh) = map.source_dims;
    let mut out = BinaryMask::new(map.width, map.height);
    for (idx, e) in map.entries.iter().enumerate() {
        if let (true, Some((x, y))) = (e.valid, e.source_uv) {
            let su = (x.floor() as u32).min(sw - 1);
            let sv = (y.floor() as u32).min(sh - 1);
            out.set_index(idx, source_mask.get(su, sv));
        }
    }
    Ok(out)
}

pub fn project_mask(
    mask: &BinaryMask,
    from: &ViewRecord,
    to: &ViewRecord,
    policy: &FilterPolicy,
) -> Result<BinaryMask, GeometryError> {
    warp_mask(&build_correspondences(to, from, policy), mask)
}

/// Default IoU needed for a view to join a propagated mask.
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

/// Spreads an instance mask from `seed_view` across `all_views`.
///
/// Views are visited in order of camera-center distance to the seed. A
/// candidate's mask gathers the masks of the accepted views: each pixel is
/// labeled by the earliest accepted view (the seed first) that has a valid
/// correspondence for it, so later views only fill in what earlier ones
/// cannot see and resampling errors do not pile up along chains of views.
/// The candidate is accepted when warping its mask back into the nearest
/// accepted view reproduces that view's mask with IoU at least
/// `overlap_threshold`. Rejected views get empty masks but do not stop the
/// scan. The result is indexed like `all_views`.
pub fn propagate_mask(
    seed_view: &ViewRecord,
    seed_mask: &BinaryMask,
    all_views: &[ViewRecord],
    overlap_threshold: f64,
    policy: &FilterPolicy,
) -> Result<Vec<BinaryMask>, GeometryError> {
    policy.validate()?;
    if seed_mask.dims() != seed_view.dims() {
        return Err(GeometryError::DimensionMismatch { expected: seed_view.dims(), actual: seed_mask.dims() });
    }
    if seed_mask.is_empty() {
        return Err(GeometryError::EmptySeedMask);
    }
    let seed_index = all_views
        .iter()
        .position(|v| v.id == seed_view.id)
        .ok_or(GeometryError::UnknownSeedView(seed_view.id))?;

    let mut out: Vec<BinaryMask> = all_views.iter().map(|v| BinaryMask::new(v.dims().0, v.dims().1)).collect();
    out[seed_index] = seed_mask.clone();
    let mut accepted = vec![seed_index];

    let seed_center = seed_view.pose.center();
    let mut order: Vec<usize> = (0..all_views.len()).filter(|&i| i != seed_index).collect();
    order.sort_by(|&a, &b| {
        let da = (all_views[a].pose.center() - seed_center).norm();
        let db = (all_views[b].pose.center() - seed_center).norm();
        da.total_cmp(&db).then(all_views[a].id.cmp(&all_views[b].id))
    });

    for candidate in order {
        let view = &all_views[candidate];
        let mut mask = BinaryMask::new(view.dims().0, view.dims().1);
        let mut decided = BinaryMask::new(view.dims().0, view.dims().1);
        for &a in &accepted {
            let map = build_correspondences(view, &all_views[a], policy);
            let warped = warp_mask(&map, &out[a])?;
            for idx in 0..mask.len() {
                if map.entries[idx].valid && !decided.get_index(idx) {
                    decided.set_index(idx, true);
                    mask.set_index(idx, warped.get_index(idx));
                }
            }
        }
        if mask.is_empty() {
            continue;
        }
        let center = view.pose.center();
        let nearest = *accepted
            .iter()
            .min_by(|&&a, &&b| {
                let da = (all_views[a].pose.center() - center).norm();
                let db = (all_views[b].pose.center() - center).norm();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("seed is always accepted");
        let back = project_mask(&mask, view, &all_views[nearest], policy)?;
        let score = back.iou(&out[nearest]);
        log::debug!("mask propagation: view {} round-trip IoU {score:.4}", view.id);
        if score >= overlap_threshold {
            out[candidate] = mask;
            accepted.push(candidate);
        }
    }
    Ok(out)
}
