//! Analytic ray-cast scenes (textured planes and Lambertian spheres) seen
//! from a ring of cameras. Depth is exact, which makes these scenes the
//! ground truth for the geometric tests.

use super::{CameraIntrinsics, DatasetManifest, DepthMap, ImageBuffer, RigidPose, Rgb, SceneError, ViewRecord};
use nalgebra::Vector3;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanePrimitive {
    pub point: Vector3<f64>,
    /// Unit normal.
    pub normal: Vector3<f64>,
    /// Checker square size in meters.
    pub period: f64,
    pub colors: [Rgb; 2],
}

impl PlanePrimitive {
    /// Orthonormal in-plane axes used for the checker texture.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let helper = if n.z.abs() < 0.9 { Vector3::z() } else { Vector3::y() };
        let e1 = helper.cross(&n).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }

    pub fn albedo_at(&self, p: &Vector3<f64>) -> Rgb {
        let (e1, e2) = self.basis();
        let rel = p - self.point;
        let a = (rel.dot(&e1) / self.period).floor() as i64;
        let b = (rel.dot(&e2) / self.period).floor() as i64;
        self.colors[(a + b).rem_euclid(2) as usize]
    }

    /// Plane offset `d` in `normal . x = d`.
    pub fn offset(&self) -> f64 {
        self.normal.dot(&self.point)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpherePrimitive {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub albedo: Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Plane(PlanePrimitive),
    Sphere(SpherePrimitive),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Camera height above the look-at point.
    pub height: f64,
    pub look_at: Vector3<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl CameraRing {
    pub fn eye(&self, index: usize, phase: f64) -> Vector3<f64> {
        let angle = phase + 2.0 * PI * index as f64 / self.count as f64;
        self.look_at + Vector3::new(self.radius * angle.cos(), self.radius * angle.sin(), self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub primitives: Vec<Primitive>,
    /// Unit direction towards the light.
    pub light_direction: Vector3<f64>,
    pub ambient: f64,
    pub background: Rgb,
    pub camera_ring: CameraRing,
    pub depth_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// Checkered ground plane viewed from a ring of downward-looking cameras.
    PlaneRing,
    /// The same plane with a sphere resting on it, producing occlusions.
    SphereOverPlane,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 2] = [ScenePreset::PlaneRing, ScenePreset::SphereOverPlane];

    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::PlaneRing => "plane-ring",
            ScenePreset::SphereOverPlane => "sphere-over-plane",
        }
    }
}

impl fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset {s:?} (expected plane-ring or sphere-over-plane)"))
    }
}

pub(crate) fn checker_plane() -> PlanePrimitive {
    PlanePrimitive {
        point: Vector3::zeros(),
        normal: Vector3::z(),
        period: 0.4,
        colors: [[0.80, 0.60, 0.40], [0.25, 0.30, 0.45]],
    }
}

impl SyntheticSceneSpec {
    /// Builds one of the named fixtures at `resolution x resolution` pixels.
    pub fn preset(preset: ScenePreset, views: usize, resolution: u32) -> Result<Self, SceneError> {
        let focal = 0.9 * resolution as f64;
        let intrinsics = CameraIntrinsics::centered(focal, resolution, resolution)?;
        let (primitives, radius, height) = match preset {
            ScenePreset::PlaneRing => (vec![Primitive::Plane(checker_plane())], 1.0, 2.5),
            ScenePreset::SphereOverPlane => (
                vec![
                    Primitive::Plane(checker_plane()),
                    Primitive::Sphere(SpherePrimitive {
                        center: Vector3::new(0.0, 0.0, 0.6),
                        radius: 0.35,
                        albedo: [0.85, 0.85, 0.85],
                    }),
                ],
                1.2,
                2.2,
            ),
        };
        let spec = Self {
            primitives,
            light_direction: Vector3::new(0.3, 0.2, 1.0).normalize(),
            ambient: 0.3,
            background: [0.0, 0.0, 0.0],
            camera_ring: CameraRing { count: views, radius, height, look_at: Vector3::zeros(), intrinsics },
            depth_scale: 1e-4,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::InvalidSpec(m));
        if self.camera_ring.count < 2 {
            return invalid(format!("camera count ≥ 2 required, got {}", self.camera_ring.count));
        }
        if !(self.camera_ring.radius > 0.0) {
            return invalid("camera ring radius must be positive".into());
        }
        self.camera_ring.intrinsics.validate()?;
        if (self.light_direction.norm() - 1.0).abs() > 1e-9 {
            return invalid("light direction must be a unit vector".into());
        }
        if !(self.depth_scale > 0.0) {
            return invalid("depth_scale must be positive".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            match p {
                Primitive::Plane(plane) => {
                    if !(plane.period > 0.0) {
                        return invalid(format!("primitive {i}: texture period must be positive"));
                    }
                    if (plane.normal.norm() - 1.0).abs() > 1e-9 {
                        return invalid(format!("primitive {i}: plane normal must be a unit vector"));
                    }
                }
                Primitive::Sphere(sphere) => {
                    if !(sphere.radius > 0.0) {
                        return invalid(format!("primitive {i}: sphere radius must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Lambertian color of a hit; surfaces are lit on the side facing the ray origin.
    pub fn shade(&self, hit: &Hit, ray_dir: &Vector3<f64>) -> Rgb {
        let mut normal = hit.normal;
        if normal.dot(ray_dir) > 0.0 {
            normal = -normal;
        }
        let albedo = match &self.primitives[hit.primitive] {
            Primitive::Plane(plane) => plane.albedo_at(&hit.point),
            Primitive::Sphere(sphere) => sphere.albedo,
        };
        let lambert = normal.dot(&self.light_direction).max(0.0);
        let gain = self.ambient + (1.0 - self.ambient) * lambert;
        [albedo[0] * gain, albedo[1] * gain, albedo[2] * gain]
    }

    pub fn poses(&self, seed: u64) -> Result<Vec<RigidPose>, SceneError> {
        let ring = &self.camera_ring;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = rng.gen::<f64>() * 2.0 * PI / ring.count as f64;
        (0..ring.count)
            .map(|k| RigidPose::look_at(ring.eye(k, phase), ring.look_at, Vector3::z()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals z-depth when the direction has unit camera z.
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub primitive: usize,
}

/// Nearest intersection with `t > 0` of `origin + t * dir`.
pub fn cast_ray(primitives: &[Primitive], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in primitives.iter().enumerate() {
        let t = match prim {
            Primitive::Plane(plane) => intersect_plane(plane, origin, dir),
            Primitive::Sphere(sphere) => intersect_sphere(sphere, origin, dir),
        };
        let Some(t) = t else { continue };
        if best.as_ref().is_some_and(|b| b.t <= t) {
            continue;
        }
        let point = origin + dir * t;
        let normal = match prim {
            Primitive::Plane(plane) => plane.normal,
            Primitive::Sphere(sphere) => (point - sphere.center) / sphere.radius,
        };
        best = Some(Hit { t, point, normal, primitive: i });
    }
    best
}

fn intersect_plane(plane: &PlanePrimitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let denom = plane.normal.dot(dir);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = plane.normal.dot(&(plane.point - origin)) / denom;
    (t > HIT_EPS).then_some(t)
}

fn intersect_sphere(sphere: &SpherePrimitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let oc = origin - sphere.center;
    let a = dir.norm_squared();
    let half_b = oc.dot(dir);
    let c = oc.norm_squared() - sphere.radius * sphere.radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable root pair.
    let q = if half_b >= 0.0 { -(half_b + sq) } else { -half_b + sq };
    let (mut t0, mut t1) = (q / a, if q != 0.0 { c / q } else { 0.0 });
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    if t0 > HIT_EPS {
        Some(t0)
    } else if t1 > HIT_EPS {
        Some(t1)
    } else {
        None
    }
}

/// Ray-casts every ring camera against the scene primitives.
///
/// Pixels that miss every primitive get the background color and invalid
/// depth. The seed only sets the angular phase of the ring.
pub fn gen_synthetic(spec: &SyntheticSceneSpec, seed: u64) -> Result<DatasetManifest, SceneError> {
    spec.validate()?;
    let poses = spec.poses(seed)?;
    for (camera, pose) in poses.iter().enumerate() {
        for (primitive, prim) in spec.primitives.iter().enumerate() {
            if let Primitive::Sphere(s) = prim {
                if (pose.center() - s.center).norm() <= s.radius {
                    return Err(SceneError::CameraInsideSphere { camera, primitive });
                }
            }
        }
    }

    let k = spec.camera_ring.intrinsics;
    let views = poses
        .into_par_iter()
        .enumerate()
        .map(|(id, pose)| {
            let mut image = ImageBuffer::filled(k.width, k.height, spec.background);
            let mut depth = DepthMap::invalid(k.width, k.height);
            let origin = pose.center();
            for v in 0..k.height {
                for u in 0..k.width {
                    let dir = pose.rotation * k.ray_direction(u as f64 + 0.5, v as f64 + 0.5);
                    if let Some(hit) = cast_ray(&spec.primitives, &origin, &dir) {
                        image.set(u, v, spec.shade(&hit, &dir));
                        depth.set(u, v, Some(hit.t));
                    }
                }
            }
            ViewRecord::new(id, k, pose, image, depth)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DatasetManifest::new(spec.depth_scale, views))
}
