//! Camera, image and depth data model for posed multi-view datasets.
//!
//! Conventions used throughout the crate:
//!
//! - poses are camera-to-world; the camera looks down +z with x to the right
//!   and y pointing down;
//! - pixel `(u, v)` covers the continuous square `[u, u+1) x [v, v+1)`, so its
//!   center sits at `(u + 0.5, v + 0.5)`;
//! - depth is z-depth (distance along the camera forward axis), in meters.

pub(crate) mod io;
mod synthetic;

pub use io::{load_dataset, load_mask, save_dataset, save_image, save_mask, MANIFEST_FILE, MANIFEST_VERSION};
pub use synthetic::{
    cast_ray, gen_synthetic, CameraRing, Hit, PlanePrimitive, Primitive, ScenePreset,
    SpherePrimitive, SyntheticSceneSpec,
};

use nalgebra::{Matrix3, Matrix4, Vector3};
use std::path::PathBuf;
use thiserror::Error;

/// Errors raised while building, loading or saving scenes.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid synthetic scene: {0}")]
    InvalidSpec(String),
    #[error("camera {camera} is inside sphere primitive {primitive}")]
    CameraInsideSphere { camera: usize, primitive: usize },
    #[error("view {view}: {message}")]
    View { view: usize, message: String },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, SceneError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, SceneError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidIntrinsics("image dimensions must be positive".into()));
        }
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(SceneError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(SceneError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame direction (z = 1) through the continuous image point `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, SceneError> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction
    /// and ends up pointing towards -y in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, SceneError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(SceneError::InvalidPose("eye and target coincide".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(SceneError::InvalidPose("up vector parallel to viewing direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(SceneError::InvalidPose("non-finite entries".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(SceneError::InvalidPose(format!("rotation not orthonormal (error {err:e})")));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(SceneError::InvalidPose(format!("rotation determinant {det}, expected 1")));
        }
        Ok(())
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, SceneError> {
        if values.len() != 16 {
            return Err(SceneError::InvalidPose(format!("expected 16 values, got {}", values.len())));
        }
        let m = Matrix4::from_row_slice(values);
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(SceneError::InvalidPose(format!("bottom row {bottom:?} is not [0, 0, 0, 1]")));
        }
        Self::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub type Rgb = [f64; 3];

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self { width, height, pixels: vec![clamp_rgb(color); width as usize * height as usize] }
    }

    /// Builds an image from raw pixels; channels are clamped to `[0, 1]`.
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Option<Self> {
        if pixels.len() != width as usize * height as usize {
            return None;
        }
        Some(Self { width, height, pixels: pixels.into_iter().map(clamp_rgb).collect() })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                pixels.push(clamp_rgb(f(u, v)));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> Rgb {
        self.pixels[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, color: Rgb) {
        let idx = v as usize * self.width as usize + u as usize;
        self.pixels[idx] = clamp_rgb(color);
    }

    pub fn get_index(&self, idx: usize) -> Rgb {
        self.pixels[idx]
    }

    pub fn set_index(&mut self, idx: usize, color: Rgb) {
        self.pixels[idx] = clamp_rgb(color);
    }

    pub fn map(&self, mut f: impl FnMut(Rgb) -> Rgb) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| clamp_rgb(f(p))).collect(),
        }
    }

    /// Bilinear sample at the continuous image point `(x, y)`; texel centers
    /// sit at half-integer coordinates and borders are clamped.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Rgb {
        let (taps, weights) = bilinear_taps(self.width, self.height, x, y);
        let mut out = [0.0; 3];
        for (&idx, &w) in taps.iter().zip(weights.iter()) {
            let p = self.pixels[idx];
            for c in 0..3 {
                out[c] += w * p[c];
            }
        }
        clamp_rgb(out)
    }
}

pub(crate) fn clamp_rgb(c: Rgb) -> Rgb {
    [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)]
}

/// Indices and weights of the four texels surrounding `(x, y)`.
pub(crate) fn bilinear_taps(width: u32, height: u32, x: f64, y: f64) -> ([usize; 4], [f64; 4]) {
    let fx = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let w = width as usize;
    let idx = |u: u32, v: u32| v as usize * w + u as usize;
    (
        [idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1)],
        [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
    )
}

/// Per-pixel z-depth in meters. Invalid pixels are `None`, never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        Self { width, height, depth: vec![None; width as usize * height as usize] }
    }

    pub fn constant(width: u32, height: u32, depth: f64) -> Self {
        let mut map = Self::invalid(width, height);
        for d in map.depth.iter_mut() {
            *d = sanitize_depth(Some(depth));
        }
        map
    }

    /// Non-finite or non-positive entries become invalid.
    pub fn from_values(width: u32, height: u32, depth: Vec<Option<f64>>) -> Option<Self> {
        if depth.len() != width as usize * height as usize {
            return None;
        }
        Some(Self { width, height, depth: depth.into_iter().map(sanitize_depth).collect() })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.depth
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        self.depth[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, depth: Option<f64>) {
        let idx = v as usize * self.width as usize + u as usize;
        self.depth[idx] = sanitize_depth(depth);
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }

    /// Bilinear depth sample; `None` if any contributing texel is invalid.
    ///
    /// In the half-pixel border outside the outermost texel centers the
    /// value is extrapolated linearly rather than clamped, since the depth of
    /// a slanted surface keeps changing up to the image edge.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (taps, weights) = extrapolating_taps(self.width, self.height, x, y);
        let mut acc = 0.0;
        for (&idx, &w) in taps.iter().zip(weights.iter()) {
            match self.depth[idx] {
                Some(d) => acc += w * d,
                None if w == 0.0 => {}
                None => return None,
            }
        }
        (acc > 0.0).then_some(acc)
    }
}

/// Like [`bilinear_taps`], but within half a pixel of the border the weights
/// extend linearly past the outermost texel centers.
fn extrapolating_taps(width: u32, height: u32, x: f64, y: f64) -> ([usize; 4], [f64; 4]) {
    let axis = |p: f64, n: u32| {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let f = (p - 0.5).clamp(-0.5, n as f64 - 0.5);
        let base = (f.floor().max(0.0) as u32).min(n - 2);
        (base, base + 1, f - base as f64)
    };
    let (x0, x1, ax) = axis(x, width);
    let (y0, y1, ay) = axis(y, height);
    let w = width as usize;
    let idx = |u: u32, v: u32| v as usize * w + u as usize;
    (
        [idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1)],
        [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
    )
}

fn sanitize_depth(d: Option<f64>) -> Option<f64> {
    d.filter(|v| v.is_finite() && *v > 0.0)
}

/// Converts a distance measured along the pixel ray into z-depth.
///
/// NeRF renderers usually report the expected ray distance; z-depth is that
/// distance times the cosine between the ray and the optical axis.
pub fn ray_distance_to_z_depth(intrinsics: &CameraIntrinsics, x: f64, y: f64, distance: f64) -> f64 {
    distance / intrinsics.ray_direction(x, y).norm()
}

pub fn ray_distance_map_to_z_depth(intrinsics: &CameraIntrinsics, distances: &DepthMap) -> DepthMap {
    let mut out = DepthMap::invalid(distances.width(), distances.height());
    for v in 0..distances.height() {
        for u in 0..distances.width() {
            if let Some(d) = distances.get(u, v) {
                let z = ray_distance_to_z_depth(intrinsics, u as f64 + 0.5, v as f64 + 0.5, d);
                out.set(u, v, Some(z));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                bits.push(f(u, v));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        let idx = v as usize * self.width as usize + u as usize;
        self.bits[idx] = value;
    }

    pub fn get_index(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn set_index(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, b) in self.bits.iter_mut().zip(other.bits.iter()) {
            *a |= *b;
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(other.bits.iter()).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(other.bits.iter()).filter(|(a, b)| **a || **b).count()
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let union = self.union_count(other);
        if union == 0 {
            return 1.0;
        }
        self.intersection_count(other) as f64 / union as f64
    }
}

/// One posed camera with its image, depth and write-once modification mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidPose,
    pub image: ImageBuffer,
    pub depth: DepthMap,
    pub modified: BinaryMask,
}

impl ViewRecord {
    pub fn new(
        id: usize,
        intrinsics: CameraIntrinsics,
        pose: RigidPose,
        image: ImageBuffer,
        depth: DepthMap,
    ) -> Result<Self, SceneError> {
        let modified = BinaryMask::new(intrinsics.width, intrinsics.height);
        let view = Self { id, intrinsics, pose, image, depth, modified };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let err = |message: String| SceneError::View { view: self.id, message };
        self.intrinsics.validate().map_err(|e| err(e.to_string()))?;
        self.pose.validate().map_err(|e| err(e.to_string()))?;
        let dims = (self.intrinsics.width, self.intrinsics.height);
        if self.image.dims() != dims {
            return Err(err(format!("image is {:?}, intrinsics say {:?}", self.image.dims(), dims)));
        }
        if self.depth.dims() != dims {
            return Err(err(format!("depth is {:?}, intrinsics say {:?}", self.depth.dims(), dims)));
        }
        if self.modified.dims() != dims {
            return Err(err(format!("modified mask is {:?}, intrinsics say {:?}", self.modified.dims(), dims)));
        }
        Ok(())
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.intrinsics.width, self.intrinsics.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.intrinsics.pixel_count()
    }

    pub fn valid_depth_mask(&self) -> BinaryMask {
        let (w, h) = self.dims();
        BinaryMask::from_bits(w, h, self.depth.values().iter().map(|d| d.is_some()).collect())
            .expect("depth dims validated")
    }
}

/// A loaded dataset: ordered views plus the depth quantization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: String,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn new(depth_scale: f64, views: Vec<ViewRecord>) -> Self {
        Self { version: MANIFEST_VERSION.to_string(), depth_scale, views }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.depth_scale.is_finite() && self.depth_scale > 0.0) {
            return Err(SceneError::InvalidSpec(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        for (i, view) in self.views.iter().enumerate() {
            if view.id != i {
                return Err(SceneError::View {
                    view: view.id,
                    message: format!("view ids must be contiguous from 0; found id {} at position {i}", view.id),
                });
            }
            view.validate()?;
        }
        Ok(())
    }

    pub fn reset_modified(&mut self) {
        for view in &mut self.views {
            view.modified = BinaryMask::new(view.intrinsics.width, view.intrinsics.height);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_produces_valid_rotation() {
        let pose = RigidPose::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        pose.validate().unwrap();
        let forward = pose.rotation.column(2).into_owned();
        let expected = -Vector3::new(1.0, 2.0, 3.0).normalize();
        assert!((forward - expected).norm() < 1e-12);
        // World up projects to image "up", i.e. negative camera y.
        assert!(pose.world_to_camera(&(pose.center() + Vector3::z())).y < 0.0);
    }

    #[test]
    fn pose_row_major_round_trip() {
        let pose = RigidPose::look_at(
            Vector3::new(0.3, -1.0, 2.0),
            Vector3::new(0.1, 0.2, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let back = RigidPose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(pose, back);
    }

    #[test]
    fn rejects_bad_rotation() {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidPose::new(r, Vector3::zeros()).is_err());
        let r = Matrix3::identity() * 1.01;
        assert!(RigidPose::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 64.0, 64.0, 128, 128).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 128.0, 64.0, 128, 128).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, -0.5, 64.0, 128, 128).is_err());
    }

    #[test]
    fn depth_sentinel_rejects_nonpositive() {
        let d = DepthMap::from_values(2, 1, vec![Some(0.0), Some(-1.0)]).unwrap();
        assert_eq!(d.valid_count(), 0);
        let mut d = DepthMap::invalid(2, 2);
        d.set(0, 0, Some(f64::NAN));
        assert_eq!(d.get(0, 0), None);
    }

    #[test]
    fn bilinear_sample_at_texel_center_is_exact() {
        let img = ImageBuffer::from_fn(4, 3, |u, v| [u as f64 / 4.0, v as f64 / 3.0, 0.5]);
        assert_eq!(img.sample_bilinear(2.5, 1.5), img.get(2, 1));
        let mid = img.sample_bilinear(2.0, 1.5);
        assert!((mid[0] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn depth_bilinear_refuses_invalid_taps() {
        let mut d = DepthMap::constant(3, 3, 2.0);
        d.set(1, 1, None);
        assert_eq!(d.sample_bilinear(0.5, 0.5), Some(2.0));
        assert_eq!(d.sample_bilinear(1.2, 1.2), None);
        // Zero-weight invalid taps are ignored.
        assert_eq!(d.sample_bilinear(0.5, 1.5), Some(2.0));
        assert_eq!(d.sample_bilinear(2.5, 0.5), Some(2.0));
    }

    #[test]
    fn depth_extrapolates_linearly_at_the_border() {
        let d = DepthMap::from_values(3, 1, vec![Some(1.0), Some(2.0), Some(3.0)]).unwrap();
        assert!((d.sample_bilinear(0.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((d.sample_bilinear(2.9, 0.5).unwrap() - 3.4).abs() < 1e-12);
        assert!((d.sample_bilinear(1.25, 0.3).unwrap() - 1.75).abs() < 1e-12);
        let single = DepthMap::constant(1, 1, 4.0);
        assert_eq!(single.sample_bilinear(0.9, 0.1), Some(4.0));
    }

    #[test]
    fn ray_distance_conversion_on_axis_and_off_axis() {
        let k = CameraIntrinsics::centered(100.0, 200, 200).unwrap();
        assert!((ray_distance_to_z_depth(&k, 100.0, 100.0, 3.0) - 3.0).abs() < 1e-12);
        // 45 degrees off axis: z = d * cos(45).
        let z = ray_distance_to_z_depth(&k, 200.0 - 1e-9, 100.0, 2.0_f64.sqrt());
        assert!((z - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_iou() {
        let a = BinaryMask::from_fn(4, 4, |u, _| u < 2);
        let b = BinaryMask::from_fn(4, 4, |u, _| u < 3);
        assert!((a.iou(&b) - 8.0 / 12.0).abs() < 1e-12);
        assert_eq!(BinaryMask::new(2, 2).iou(&BinaryMask::new(2, 2)), 1.0);
    }
}
