use super::{BinaryMask, CameraIntrinsics, DatasetManifest, DepthMap, ImageBuffer, RigidPose, SceneError, ViewRecord};
use image::{DynamicImage, ImageBuffer as RawImage, Luma, Rgb as RawRgb};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: &str = "viewprop-1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: String,
    depth_scale: f64,
    views: Vec<ViewEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    id: usize,
    image: String,
    depth: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    pose: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.to_path_buf(), source }
}

/// Loads `manifest.json` and every referenced image and depth file.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetManifest, SceneError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| SceneError::Manifest { path: manifest_path.clone(), message: e.to_string() })?;
    if file.version != MANIFEST_VERSION {
        return Err(SceneError::Manifest {
            path: manifest_path,
            message: format!("unsupported version {:?}, expected {MANIFEST_VERSION:?}", file.version),
        });
    }
    if !(file.depth_scale.is_finite() && file.depth_scale > 0.0) {
        return Err(SceneError::Manifest {
            path: manifest_path,
            message: format!("depth_scale must be positive, got {}", file.depth_scale),
        });
    }

    let mut views = Vec::with_capacity(file.views.len());
    for (position, entry) in file.views.iter().enumerate() {
        if entry.id != position {
            return Err(SceneError::View {
                view: entry.id,
                message: format!("view ids must be unique and contiguous from 0; found id {} at position {position}", entry.id),
            });
        }
        views.push(load_view(dir, entry, file.depth_scale)?);
    }
    Ok(DatasetManifest { version: file.version, depth_scale: file.depth_scale, views })
}

fn load_view(dir: &Path, entry: &ViewEntry, depth_scale: f64) -> Result<ViewRecord, SceneError> {
    let id = entry.id;
    let view_err = |message: String| SceneError::View { view: id, message };
    let intrinsics = CameraIntrinsics::new(entry.fx, entry.fy, entry.cx, entry.cy, entry.width, entry.height)
        .map_err(|e| view_err(e.to_string()))?;
    let pose = RigidPose::from_row_major(&entry.pose).map_err(|e| view_err(e.to_string()))?;

    let image_path = dir.join(&entry.image);
    let image = decode_rgb(&image_path).map_err(|m| view_err(format!("image {}: {m}", image_path.display())))?;
    let depth_path = dir.join(&entry.depth);
    let depth = decode_depth(&depth_path, depth_scale)
        .map_err(|m| view_err(format!("depth {}: {m}", depth_path.display())))?;

    let dims = (entry.width, entry.height);
    if image.dims() != dims {
        return Err(view_err(format!("image is {:?} but manifest says {:?}", image.dims(), dims)));
    }
    if depth.dims() != image.dims() {
        return Err(view_err(format!("depth is {:?} but image is {:?}", depth.dims(), image.dims())));
    }
    ViewRecord::new(id, intrinsics, pose, image, depth)
}

pub(crate) fn decode_rgb(path: &Path) -> Result<ImageBuffer, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let (w, h) = (img.width(), img.height());
    let pixels = match img {
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLuma16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| [p[0] as f64 / 65535.0, p[1] as f64 / 65535.0, p[2] as f64 / 65535.0])
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect(),
    };
    ImageBuffer::from_pixels(w, h, pixels).ok_or_else(|| "pixel count mismatch".to_string())
}

fn decode_depth(path: &Path, depth_scale: f64) -> Result<DepthMap, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let luma = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => return Err(format!("expected 16-bit single-channel PNG, got {:?}", other.color())),
    };
    let values = luma
        .pixels()
        .map(|p| match p[0] {
            0 => None,
            stored => Some(stored as f64 * depth_scale),
        })
        .collect();
    DepthMap::from_values(luma.width(), luma.height(), values).ok_or_else(|| "pixel count mismatch".to_string())
}

pub(crate) fn encode_rgb8(image: &ImageBuffer) -> RawImage<RawRgb<u8>, Vec<u8>> {
    let mut raw = Vec::with_capacity(image.pixels().len() * 3);
    for p in image.pixels() {
        for c in p {
            raw.push((c * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    RawImage::from_raw(image.width(), image.height(), raw).expect("buffer sized from image")
}

/// Writes `manifest.json` plus `NNN.png` / `NNN_depth.png` for every view.
///
/// Depth is stored as `round(meters / depth_scale)`; values that would land
/// outside `1..=65535` are rejected since 0 is reserved for invalid pixels.
pub fn save_dataset(manifest: &DatasetManifest, dir: impl AsRef<Path>) -> Result<(), SceneError> {
    let dir = dir.as_ref();
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut entries = Vec::with_capacity(manifest.views.len());
    for view in &manifest.views {
        let image_name = format!("{:03}.png", view.id);
        let depth_name = format!("{:03}_depth.png", view.id);

        let image_path = dir.join(&image_name);
        encode_rgb8(&view.image).save(&image_path).map_err(|e| image_write_err(&image_path, e))?;

        let depth_path = dir.join(&depth_name);
        encode_depth(view, manifest.depth_scale)?
            .save(&depth_path)
            .map_err(|e| image_write_err(&depth_path, e))?;

        let k = &view.intrinsics;
        entries.push(ViewEntry {
            id: view.id,
            image: image_name,
            depth: depth_name,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            pose: view.pose.to_row_major().to_vec(),
        });
    }

    let file = ManifestFile { version: manifest.version.clone(), depth_scale: manifest.depth_scale, views: entries };
    let mut text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    text.push('\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))
}

fn encode_depth(view: &ViewRecord, depth_scale: f64) -> Result<RawImage<Luma<u16>, Vec<u16>>, SceneError> {
    let mut raw = Vec::with_capacity(view.pixel_count());
    for d in view.depth.values() {
        let stored = match d {
            None => 0,
            Some(meters) => {
                let q = (meters / depth_scale).round();
                if !(1.0..=65535.0).contains(&q) {
                    return Err(SceneError::View {
                        view: view.id,
                        message: format!("depth {meters} m not representable with depth_scale {depth_scale}"),
                    });
                }
                q as u16
            }
        };
        raw.push(stored);
    }
    Ok(RawImage::from_raw(view.intrinsics.width, view.intrinsics.height, raw).expect("buffer sized from view"))
}

fn image_write_err(path: &Path, e: image::ImageError) -> SceneError {
    let source = match e {
        image::ImageError::IoError(io) => io,
        other => std::io::Error::other(other.to_string()),
    };
    SceneError::Io { path: PathBuf::from(path), source }
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    encode_rgb8(image).save(path).map_err(|e| image_write_err(path, e))
}

/// Writes a mask as an 8-bit grayscale PNG (0 or 255).
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let raw = mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    RawImage::<Luma<u8>, Vec<u8>>::from_raw(mask.width(), mask.height(), raw)
        .expect("buffer sized from mask")
        .save(path)
        .map_err(|e| image_write_err(path, e))
}

/// Reads any image as a mask; a pixel is set when its luma is at least half.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, SceneError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| SceneError::Manifest {
        path: path.to_path_buf(),
        message: format!("cannot read mask: {e}"),
    })?;
    let luma = img.to_luma8();
    let bits = luma.pixels().map(|p| p[0] >= 128).collect();
    Ok(BinaryMask::from_bits(luma.width(), luma.height(), bits).expect("bits sized from image"))
}
