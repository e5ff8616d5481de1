//! Deterministic stand-ins for a diffusion editor.

use super::{EditError, EditRequest, Editor};
use crate::scene::{ImageBuffer, Rgb};
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Sepia tint used by the stylizing mock, before luminance normalization.
const SEPIA: Rgb = [1.0, 0.85, 0.6];
/// Lattice spacing (pixels) of the smooth noise field.
const NOISE_CELL: u32 = 4;
/// Per-pixel style change at which the noise reaches full amplitude.
const FULL_STRENGTH_CHANGE: f64 = 0.05;
pub const DEFAULT_NOISE_AMPLITUDE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum MockEditor {
    /// Returns the input unchanged.
    Identity,
    /// Rotates hue by a fixed angle. Without an explicit angle the first
    /// number in the instruction is used, in degrees.
    HueRotate { degrees: Option<f64> },
    Grayscale,
    /// Blends a magenta checkerboard of 8-pixel cells over the input.
    CheckerStamp,
    /// Luminance-preserving sepia plus seeded, smooth, zero-mean luminance
    /// noise. The noise is scaled by how much the stylization changes each
    /// pixel, so already-stylized inputs come back unchanged.
    NoisyStylize { amplitude: f64 },
    /// 3x3 per-channel median filter.
    MedianDenoise,
}

impl FromStr for MockEditor {
    type Err = EditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let number = |p: &str| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| EditError::UnknownEditor(format!("mock:{s} (bad parameter {p:?})")))
        };
        let no_param = |m: MockEditor| match param {
            None => Ok(m),
            Some(p) => Err(EditError::UnknownEditor(format!("mock:{s} (unexpected parameter {p:?})"))),
        };
        match name {
            "identity" => no_param(MockEditor::Identity),
            "grayscale" => no_param(MockEditor::Grayscale),
            "checker-stamp" => no_param(MockEditor::CheckerStamp),
            "median-denoise" => no_param(MockEditor::MedianDenoise),
            "hue-rotate" => Ok(MockEditor::HueRotate { degrees: param.map(number).transpose()? }),
            "noisy-stylize" => Ok(MockEditor::NoisyStylize {
                amplitude: param.map(number).transpose()?.unwrap_or(DEFAULT_NOISE_AMPLITUDE),
            }),
            _ => Err(EditError::UnknownEditor(format!("mock:{s}"))),
        }
    }
}

impl fmt::Display for MockEditor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockEditor::Identity => f.write_str("identity"),
            MockEditor::HueRotate { degrees: None } => f.write_str("hue-rotate"),
            MockEditor::HueRotate { degrees: Some(d) } => write!(f, "hue-rotate:{d}"),
            MockEditor::Grayscale => f.write_str("grayscale"),
            MockEditor::CheckerStamp => f.write_str("checker-stamp"),
            MockEditor::NoisyStylize { amplitude } => write!(f, "noisy-stylize:{amplitude}"),
            MockEditor::MedianDenoise => f.write_str("median-denoise"),
        }
    }
}

impl Editor for MockEditor {
    fn describe(&self) -> String {
        format!("mock:{self}")
    }

    fn edit(&self, request: &EditRequest) -> Result<ImageBuffer, EditError> {
        let input = &request.input;
        Ok(match self {
            MockEditor::Identity => input.clone(),
            MockEditor::HueRotate { degrees } => {
                let deg = match degrees {
                    Some(d) => *d,
                    None => first_number(&request.config.instruction).ok_or_else(|| {
                        EditError::InvalidRequest(format!(
                            "hue-rotate needs an angle in the instruction, got {:?}",
                            request.config.instruction
                        ))
                    })?,
                };
                input.map(|p| rotate_hue(p, deg))
            }
            MockEditor::Grayscale => input.map(|p| {
                let l = luminance(p);
                [l, l, l]
            }),
            MockEditor::CheckerStamp => {
                let mut out = input.clone();
                for v in 0..input.height() {
                    for u in 0..input.width() {
                        if (u / 8 + v / 8) % 2 == 0 {
                            let p = input.get(u, v);
                            out.set(u, v, [0.5 * p[0] + 0.5, 0.5 * p[1], 0.5 * p[2] + 0.5]);
                        }
                    }
                }
                out
            }
            MockEditor::NoisyStylize { amplitude } => {
                let noise_seed = seed::derive(request.config.seed, &[seed::hash_str(&request.config.instruction)]);
                let field = NoiseField::new(input.width(), input.height(), noise_seed);
                let tint = sepia_direction();
                ImageBuffer::from_fn(input.width(), input.height(), |u, v| {
                    let p = input.get(u, v);
                    let styled = stylize_sepia(p);
                    let change = (0..3).map(|c| (styled[c] - p[c]).abs()).fold(0.0, f64::max);
                    let strength = (change / FULL_STRENGTH_CHANGE).min(1.0);
                    let eta = amplitude * strength * field.at(u, v);
                    [styled[0] + eta * tint[0], styled[1] + eta * tint[1], styled[2] + eta * tint[2]]
                })
            }
            MockEditor::MedianDenoise => median3x3(input),
        })
    }
}

fn first_number(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter(|t| !t.is_empty())
        .find_map(|t| t.parse::<f64>().ok())
}

/// Rec. 601 luma weights.
pub fn luminance(p: Rgb) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn sepia_direction() -> Rgb {
    let l = luminance(SEPIA);
    [SEPIA[0] / l, SEPIA[1] / l, SEPIA[2] / l]
}

/// Projects a color onto the sepia ray while keeping its luminance, so the
/// map is idempotent.
pub fn stylize_sepia(p: Rgb) -> Rgb {
    let l = luminance(p);
    let d = sepia_direction();
    [l * d[0], l * d[1], l * d[2]]
}

/// RGB in [0,1] to (hue degrees in [0,360), saturation, value).
pub fn rgb_to_hsv(p: Rgb) -> (f64, f64, f64) {
    let max = p[0].max(p[1]).max(p[2]);
    let min = p[0].min(p[1]).min(p[2]);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == p[0] {
        60.0 * ((p[1] - p[2]) / delta).rem_euclid(6.0)
    } else if max == p[1] {
        60.0 * ((p[2] - p[0]) / delta + 2.0)
    } else {
        60.0 * ((p[0] - p[1]) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn rotate_hue(p: Rgb, degrees: f64) -> Rgb {
    let (h, s, v) = rgb_to_hsv(p);
    hsv_to_rgb(h + degrees, s, v)
}

fn median3x3(input: &ImageBuffer) -> ImageBuffer {
    let (w, h) = input.dims();
    ImageBuffer::from_fn(w, h, |u, v| {
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut window = [0.0; 9];
            let mut n = 0;
            for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    let uu = (u as i64 + du).clamp(0, w as i64 - 1) as u32;
                    let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as u32;
                    window[n] = input.get(uu, vv)[c];
                    n += 1;
                }
            }
            window.sort_by(f64::total_cmp);
            *slot = window[4];
        }
        out
    })
}

/// Bilinearly interpolated lattice of i.i.d. uniform values in [-1, 1].
struct NoiseField {
    nodes_x: u32,
    values: Vec<f64>,
}

impl NoiseField {
    fn new(width: u32, height: u32, seed: u64) -> Self {
        let nodes_x = width / NOISE_CELL + 2;
        let nodes_y = height / NOISE_CELL + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..nodes_x * nodes_y).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self { nodes_x, values }
    }

    fn at(&self, u: u32, v: u32) -> f64 {
        let cell = NOISE_CELL as f64;
        let fx = (u as f64 + 0.5) / cell;
        let fy = (v as f64 + 0.5) / cell;
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let node = |x: u32, y: u32| self.values[(y * self.nodes_x + x) as usize];
        (1.0 - ax) * (1.0 - ay) * node(x0, y0)
            + ax * (1.0 - ay) * node(x0 + 1, y0)
            + (1.0 - ax) * ay * node(x0, y0 + 1)
            + ax * ay * node(x0 + 1, y0 + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editing::EditorConfig;

    fn request(input: ImageBuffer, instruction: &str, seed: u64) -> EditRequest {
        let config = EditorConfig { instruction: instruction.into(), seed, ..Default::default() };
        EditRequest::new(input.clone(), input, config)
    }

    #[test]
    fn identity_mock() {
        let img = ImageBuffer::from_fn(5, 4, |u, v| [u as f64 / 5.0, v as f64 / 4.0, 0.1]);
        assert_eq!(MockEditor::Identity.edit(&request(img.clone(), "", 0)).unwrap(), img);
    }

    #[test]
    fn red_rotated_by_120_is_green() {
        let red = ImageBuffer::filled(4, 4, [1.0, 0.0, 0.0]);
        let out = MockEditor::HueRotate { degrees: None }.edit(&request(red, "rotate hue by 120 degrees", 0)).unwrap();
        for p in out.pixels() {
            assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn hue_rotate_requires_angle() {
        let img = ImageBuffer::filled(2, 2, [0.5, 0.2, 0.1]);
        assert!(MockEditor::HueRotate { degrees: None }.edit(&request(img, "make it blue", 0)).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.2, 0.4, 0.6], [0.9, 0.1, 0.3], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0], [0.3, 0.8, 0.1]] {
            let (h, s, v) = rgb_to_hsv(p);
            let q = hsv_to_rgb(h, s, v);
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sepia_is_idempotent_and_keeps_luminance() {
        let p = [0.3, 0.55, 0.2];
        let s = stylize_sepia(p);
        assert!((luminance(s) - luminance(p)).abs() < 1e-12);
        let ss = stylize_sepia(s);
        for c in 0..3 {
            assert!((s[c] - ss[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_stylize_leaves_stylized_input_alone() {
        let styled = ImageBuffer::from_fn(16, 16, |u, _| stylize_sepia([0.2 + u as f64 / 40.0, 0.4, 0.3]));
        let out = MockEditor::NoisyStylize { amplitude: 0.1 }.edit(&request(styled.clone(), "", 3)).unwrap();
        for (a, b) in out.pixels().iter().zip(styled.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noisy_stylize_is_deterministic_and_seed_dependent() {
        let img = ImageBuffer::filled(16, 16, [0.2, 0.5, 0.7]);
        let m = MockEditor::NoisyStylize { amplitude: 0.1 };
        let a = m.edit(&request(img.clone(), "x", 1)).unwrap();
        assert_eq!(a, m.edit(&request(img.clone(), "x", 1)).unwrap());
        assert_ne!(a, m.edit(&request(img, "x", 2)).unwrap());
    }

    #[test]
    fn grayscale_and_stamp() {
        let img = ImageBuffer::filled(16, 16, [0.2, 0.5, 0.7]);
        let g = MockEditor::Grayscale.edit(&request(img.clone(), "", 0)).unwrap();
        let l = luminance([0.2, 0.5, 0.7]);
        assert!(g.pixels().iter().all(|p| p.iter().all(|c| (c - l).abs() < 1e-12)));
        let s = MockEditor::CheckerStamp.edit(&request(img.clone(), "", 0)).unwrap();
        assert_ne!(s.get(0, 0), img.get(0, 0));
        assert_eq!(s.get(8, 0), img.get(8, 0));
    }

    #[test]
    fn parse_and_display() {
        for s in ["identity", "grayscale", "checker-stamp", "median-denoise", "hue-rotate", "hue-rotate:45", "noisy-stylize:0.2"] {
            let m: MockEditor = s.parse().unwrap();
            assert_eq!(m.to_string().parse::<MockEditor>().unwrap(), m);
        }
        assert_eq!(
            "noisy-stylize".parse::<MockEditor>().unwrap(),
            MockEditor::NoisyStylize { amplitude: DEFAULT_NOISE_AMPLITUDE }
        );
        assert!("identity:3".parse::<MockEditor>().is_err());
        assert!("hue-rotate:abc".parse::<MockEditor>().is_err());
    }
}
