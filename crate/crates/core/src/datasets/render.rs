//! Deterministic rasterizers for the procedural presets.
//!
//! Every renderer supersamples each pixel on a 4×4 grid and stores the
//! covered fraction, so edges are antialiased but interiors are exactly 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factors::{FactorSpace, Preset};

use super::ImageSample;

const SUPERSAMPLE: usize = 4;

/// Coverage of an implicit region given in pixel coordinates.
fn rasterize(size: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f32> {
    let mut out = vec![0.0f32; size * size];
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) * step;
                    let y = py as f64 + (sy as f64 + 0.5) * step;
                    if inside(x, y) {
                        hits += 1;
                    }
                }
            }
            out[py * size + px] = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        }
    }
    out
}

/// Nuisance values for a 2-d sprite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpriteNuisance {
    /// Relative size in `[0.5, 1.0]`.
    pub scale: f64,
    /// Rotation in radians.
    pub orientation: f64,
}

impl Default for SpriteNuisance {
    fn default() -> Self {
        SpriteNuisance {
            scale: 1.0,
            orientation: 0.0,
        }
    }
}

/// Unit-size shape membership in local coordinates (`v` grows downwards).
fn sprite_shape(shape: &str) -> Result<fn(f64, f64) -> bool> {
    Ok(match shape {
        "square" => |u: f64, v: f64| u.abs() <= 0.8 && v.abs() <= 0.8,
        "ellipse" => |u: f64, v: f64| u * u + (v / 0.5) * (v / 0.5) <= 1.0,
        "heart" => |u: f64, v: f64| {
            let x = u * 1.15;
            let y = -v * 1.15 + 0.1;
            let a = x * x + y * y - 1.0;
            a * a * a - x * x * y * y * y <= 0.0
        },
        other => {
            return Err(Error::UnknownValue {
                factor: "shape".into(),
                value: other.to_string(),
            })
        }
    })
}

/// Renders a dSprites-style sprite at the grid cell given by the
/// combination's x/y position.
pub fn render_sprite(
    space: &FactorSpace,
    combination: usize,
    nuisance: SpriteNuisance,
    size: usize,
) -> Result<ImageSample> {
    if !(0.5..=1.0).contains(&nuisance.scale) {
        return Err(Error::Config(format!(
            "sprite scale {} outside [0.5, 1]",
            nuisance.scale
        )));
    }
    if !nuisance.orientation.is_finite() {
        return Err(Error::Config("sprite orientation must be finite".into()));
    }
    let combo = space.index_to_combination(combination)?;
    let get = |name: &str| -> Result<&str> {
        let pos = space
            .generative_position(name)
            .ok_or_else(|| Error::InvalidSpace(format!("sprite space lacks `{name}`")))?;
        Ok(&combo.values[pos])
    };
    let cell = |label: &str, values: [&str; 3]| -> Result<f64> {
        values
            .iter()
            .position(|v| *v == label)
            .map(|i| (2 * i + 1) as f64 / 6.0)
            .ok_or_else(|| Error::UnknownValue {
                factor: "position".into(),
                value: label.to_string(),
            })
    };
    let s = size as f64;
    let cx = cell(get("x_position")?, ["left", "center", "right"])? * s;
    let cy = cell(get("y_position")?, ["up", "center", "down"])? * s;
    let inside = sprite_shape(get("shape")?)?;
    let radius = 0.45 * (s / 3.0) * nuisance.scale;
    let (sin, cos) = nuisance.orientation.sin_cos();
    let pixels = rasterize(size, |x, y| {
        let (dx, dy) = ((x - cx) / radius, (y - cy) / radius);
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        inside(u, v)
    });
    Ok(ImageSample {
        pixels,
        combination: Some(combination),
        nuisance: Vec::new(),
    })
}

/// Nuisance values for a procedural handwritten-style glyph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphNuisance {
    /// Seeds the per-control-point stroke jitter.
    pub jitter_seed: u64,
    /// Stroke radius as a fraction of the image size.
    pub thickness: f64,
}

impl Default for GlyphNuisance {
    fn default() -> Self {
        GlyphNuisance {
            jitter_seed: 0,
            thickness: 0.06,
        }
    }
}

pub const GLYPH_THICKNESS: [f64; 3] = [0.04, 0.06, 0.08];
const GLYPH_JITTER: f64 = 0.025;

fn loop_points(cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<(f64, f64)> {
    (0..=16)
        .map(|i| {
            let t = i as f64 / 16.0 * std::f64::consts::TAU;
            (cx + rx * t.sin(), cy - ry * t.cos())
        })
        .collect()
}

/// Stroke polylines of each symbol in the unit square.
fn glyph_strokes(symbol: &str) -> Result<Vec<Vec<(f64, f64)>>> {
    let poly = |pts: &[(f64, f64)]| pts.to_vec();
    Ok(match symbol {
        "0" => vec![loop_points(0.5, 0.5, 0.24, 0.36)],
        "1" => vec![poly(&[(0.36, 0.26), (0.52, 0.12), (0.52, 0.88)])],
        "2" => vec![poly(&[
            (0.26, 0.3),
            (0.36, 0.15),
            (0.58, 0.12),
            (0.72, 0.26),
            (0.66, 0.45),
            (0.26, 0.86),
            (0.76, 0.86),
        ])],
        "3" => vec![poly(&[
            (0.26, 0.14),
            (0.7, 0.14),
            (0.46, 0.44),
            (0.7, 0.58),
            (0.7, 0.78),
            (0.5, 0.88),
            (0.26, 0.82),
        ])],
        "4" => vec![poly(&[(0.62, 0.88), (0.62, 0.12), (0.22, 0.62), (0.78, 0.62)])],
        "5" => vec![poly(&[
            (0.72, 0.12),
            (0.32, 0.12),
            (0.28, 0.44),
            (0.58, 0.4),
            (0.72, 0.58),
            (0.66, 0.8),
            (0.46, 0.88),
            (0.26, 0.8),
        ])],
        "6" => vec![poly(&[
            (0.68, 0.14),
            (0.42, 0.24),
            (0.28, 0.52),
            (0.3, 0.78),
            (0.5, 0.88),
            (0.68, 0.78),
            (0.68, 0.6),
            (0.5, 0.5),
            (0.3, 0.6),
        ])],
        "7" => vec![poly(&[(0.24, 0.12), (0.76, 0.12), (0.42, 0.88)])],
        "8" => vec![loop_points(0.5, 0.3, 0.17, 0.17), loop_points(0.5, 0.68, 0.21, 0.2)],
        "9" => vec![loop_points(0.48, 0.33, 0.2, 0.2), poly(&[(0.68, 0.36), (0.6, 0.88)])],
        "+" => vec![poly(&[(0.2, 0.5), (0.8, 0.5)]), poly(&[(0.5, 0.2), (0.5, 0.8)])],
        "-" => vec![poly(&[(0.2, 0.5), (0.8, 0.5)])],
        "*" => vec![poly(&[(0.26, 0.26), (0.74, 0.74)]), poly(&[(0.74, 0.26), (0.26, 0.74)])],
        other => {
            return Err(Error::UnknownValue {
                factor: "symbol".into(),
                value: other.to_string(),
            })
        }
    })
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one of the 13 hwf-like symbols as bright strokes on black.
pub fn render_glyph(symbol: &str, nuisance: GlyphNuisance, size: usize) -> Result<ImageSample> {
    let strokes = glyph_strokes(symbol)?;
    if !(nuisance.thickness > 0.0 && nuisance.thickness < 0.5) {
        return Err(Error::Config(format!(
            "glyph thickness {} outside (0, 0.5)",
            nuisance.thickness
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(nuisance.jitter_seed);
    let s = size as f64;
    let strokes: Vec<Vec<(f64, f64)>> = strokes
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|(x, y)| {
                    let jx: f64 = rng.sample(StandardNormal);
                    let jy: f64 = rng.sample(StandardNormal);
                    ((x + GLYPH_JITTER * jx) * s, (y + GLYPH_JITTER * jy) * s)
                })
                .collect()
        })
        .collect();
    let radius = nuisance.thickness * s;
    let pixels = rasterize(size, |x, y| {
        strokes
            .iter()
            .any(|line| line.windows(2).any(|w| segment_distance((x, y), w[0], w[1]) <= radius))
    });
    Ok(ImageSample {
        pixels,
        combination: None,
        nuisance: Vec::new(),
    })
}

/// Nuisance values for a shapes3d-style scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectNuisance {
    pub floor_hue: f64,
    pub wall_hue: f64,
    /// Rotation in radians.
    pub orientation: f64,
}

fn hue_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Renders a flat-shaded colored object in front of a wall and floor.
/// Output is channel-last RGB.
pub fn render_object(
    space: &FactorSpace,
    combination: usize,
    nuisance: ObjectNuisance,
    size: usize,
) -> Result<ImageSample> {
    let combo = space.index_to_combination(combination)?;
    let get = |name: &str| -> Result<&str> {
        let pos = space
            .generative_position(name)
            .ok_or_else(|| Error::InvalidSpace(format!("object space lacks `{name}`")))?;
        Ok(&combo.values[pos])
    };
    let hue: f64 = get("object_hue")?
        .parse()
        .map_err(|_| Error::InvalidSpace("object_hue labels must be numeric".into()))?;
    let scale = match get("scale")? {
        "small" => 0.65,
        "medium" => 0.82,
        "big" => 1.0,
        other => {
            return Err(Error::UnknownValue {
                factor: "scale".into(),
                value: other.to_string(),
            })
        }
    };
    let inside: fn(f64, f64) -> bool = match get("shape")? {
        "cube" => |u: f64, v: f64| u.abs() <= 0.8 && v.abs() <= 0.8,
        "sphere" => |u: f64, v: f64| u * u + v * v <= 0.81,
        "cylinder" => |u: f64, v: f64| {
            u.abs() <= 0.6 && (v.abs() <= 0.75 || (u / 0.6).powi(2) + ((v.abs() - 0.75) / 0.2).powi(2) <= 1.0)
        },
        "ellipsoid" => |u: f64, v: f64| (u / 1.0).powi(2) + (v / 0.6).powi(2) <= 1.0,
        other => {
            return Err(Error::UnknownValue {
                factor: "shape".into(),
                value: other.to_string(),
            })
        }
    };
    let s = size as f64;
    let (cx, cy) = (0.5 * s, 0.6 * s);
    let radius = 0.22 * s * scale;
    let (sin, cos) = nuisance.orientation.sin_cos();
    let coverage = rasterize(size, |x, y| {
        let (dx, dy) = ((x - cx) / radius, (y - cy) / radius);
        inside(cos * dx + sin * dy, -sin * dx + cos * dy)
    });
    let wall = hue_to_rgb(nuisance.wall_hue, 0.6, 0.85);
    let floor = hue_to_rgb(nuisance.floor_hue, 0.6, 0.7);
    let object = hue_to_rgb(hue, 0.9, 0.95);
    let mut pixels = vec![0.0f32; size * size * 3];
    for y in 0..size {
        let bg = if (y as f64) < 0.62 * s { wall } else { floor };
        for x in 0..size {
            let a = coverage[y * size + x];
            let shade = (0.8 + 0.2 * (1.0 - x as f64 / s)) as f32;
            for c in 0..3 {
                pixels[(y * size + x) * 3 + c] = (1.0 - a) * bg[c] + a * object[c] * shade;
            }
        }
    }
    Ok(ImageSample {
        pixels,
        combination: Some(combination),
        nuisance: Vec::new(),
    })
}

/// Renders a sample of `preset` from nuisance value indices (in the
/// space's nuisance-factor order).
pub(crate) fn render_preset(
    space: &FactorSpace,
    preset: Preset,
    combination: usize,
    nuisance: &[usize],
    size: usize,
) -> Result<ImageSample> {
    let mut sample = match preset {
        Preset::Dsprites => {
            let scale = 0.5 + 0.1 * nuisance[0] as f64;
            let orientation = nuisance[1] as f64 * std::f64::consts::TAU / 40.0;
            render_sprite(space, combination, SpriteNuisance { scale, orientation }, size)?
        }
        Preset::HwfLike => {
            let symbol = &space.index_to_combination(combination)?.values[0];
            let n = GlyphNuisance {
                thickness: GLYPH_THICKNESS[nuisance[0]],
                jitter_seed: nuisance[1] as u64,
            };
            let mut s = render_glyph(symbol, n, size)?;
            s.combination = Some(combination);
            s
        }
        Preset::Shapes3d => {
            let n = ObjectNuisance {
                floor_hue: nuisance[0] as f64 / 10.0,
                wall_hue: nuisance[1] as f64 / 10.0,
                orientation: (-30.0 + 60.0 * nuisance[2] as f64 / 14.0).to_radians(),
            };
            render_object(space, combination, n, size)?
        }
    };
    sample.nuisance = nuisance.to_vec();
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dsprites() -> FactorSpace {
        FactorSpace::from_preset(Preset::Dsprites)
    }

    fn centroid(pixels: &[f32], size: usize) -> (f64, f64) {
        let (mut m, mut x, mut y) = (0.0, 0.0, 0.0);
        for (i, &p) in pixels.iter().enumerate() {
            let p = p as f64;
            m += p;
            x += p * ((i % size) as f64 + 0.5);
            y += p * ((i / size) as f64 + 0.5);
        }
        (x / m, y / m)
    }

    #[test]
    fn centered_square_has_centered_mass() {
        let s = dsprites();
        let c = s.combination(&["center", "center", "square"]).unwrap().index;
        let img = render_sprite(&s, c, SpriteNuisance::default(), 64).unwrap();
        let (x, y) = centroid(&img.pixels, 64);
        assert!((x - 32.0).abs() < 1.0 && (y - 32.0).abs() < 1.0);
        assert!(img.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn left_and_right_are_mirrored() {
        let s = dsprites();
        for shape in ["ellipse", "square", "heart"] {
            let l = s.combination(&["left", "up", shape]).unwrap().index;
            let r = s.combination(&["right", "up", shape]).unwrap().index;
            let n = SpriteNuisance {
                scale: 0.8,
                orientation: 0.0,
            };
            let (lx, ly) = centroid(&render_sprite(&s, l, n, 32).unwrap().pixels, 32);
            let (rx, ry) = centroid(&render_sprite(&s, r, n, 32).unwrap().pixels, 32);
            assert!((lx + rx - 32.0).abs() < 1e-6, "{shape}: {lx} {rx}");
            assert!((ly - ry).abs() < 1e-9);
        }
    }

    #[test]
    fn sprites_are_deterministic_and_validated() {
        let s = dsprites();
        let n = SpriteNuisance {
            scale: 0.7,
            orientation: 1.3,
        };
        assert_eq!(
            render_sprite(&s, 13, n, 32).unwrap(),
            render_sprite(&s, 13, n, 32).unwrap()
        );
        let bad = SpriteNuisance { scale: 2.0, ..n };
        assert!(render_sprite(&s, 13, bad, 32).is_err());
        assert!(render_sprite(&s, 27, n, 32).is_err());
    }

    #[test]
    fn plus_glyph_crosses_center() {
        let size = 32;
        let img = render_glyph("+", GlyphNuisance::default(), size).unwrap();
        let band = |horizontal: bool, at: usize| -> f32 {
            (13..=18)
                .map(|k| {
                    if horizontal {
                        img.pixels[k * size + at]
                    } else {
                        img.pixels[at * size + k]
                    }
                })
                .fold(0.0, f32::max)
        };
        for at in [9, 12, 19, 22] {
            assert!(band(true, at) > 0.5, "horizontal stroke missing at x={at}");
            assert!(band(false, at) > 0.5, "vertical stroke missing at y={at}");
        }
        assert!(img.pixels[size / 2 * size + size / 2] > 0.5 || img.pixels[(size / 2 - 1) * size + size / 2 - 1] > 0.5);
    }

    #[test]
    fn distinct_digits_differ() {
        let a = render_glyph("0", GlyphNuisance::default(), 32).unwrap();
        let b = render_glyph("1", GlyphNuisance::default(), 32).unwrap();
        let differing = a
            .pixels
            .iter()
            .zip(&b.pixels)
            .filter(|(x, y)| (**x - **y).abs() > 0.5)
            .count();
        assert!(differing as f64 >= 0.05 * 1024.0, "{differing}");
        let space = FactorSpace::from_preset(Preset::HwfLike);
        let symbols: Vec<_> = space.generative_factors().next().unwrap().values.clone();
        let imgs: Vec<_> = symbols
            .iter()
            .map(|s| render_glyph(s, GlyphNuisance::default(), 32).unwrap().pixels)
            .collect();
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert_ne!(imgs[i], imgs[j], "{} vs {}", symbols[i], symbols[j]);
            }
        }
    }

    #[test]
    fn glyphs_are_deterministic_per_seed() {
        let n = GlyphNuisance {
            jitter_seed: 7,
            thickness: 0.05,
        };
        assert_eq!(render_glyph("7", n, 32).unwrap(), render_glyph("7", n, 32).unwrap());
        let other = GlyphNuisance { jitter_seed: 8, ..n };
        assert_ne!(render_glyph("7", n, 32).unwrap(), render_glyph("7", other, 32).unwrap());
        assert!(render_glyph("/", n, 32).is_err());
    }

    #[test]
    fn objects_are_rgb_in_range() {
        let s = FactorSpace::from_preset(Preset::Shapes3d);
        let n = ObjectNuisance {
            floor_hue: 0.3,
            wall_hue: 0.7,
            orientation: 0.2,
        };
        let img = render_object(&s, 57, n, 32).unwrap();
        assert_eq!(img.pixels.len(), 32 * 32 * 3);
        assert!(img.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_ne!(img.pixels, render_object(&s, 58, n, 32).unwrap().pixels);
    }
}
