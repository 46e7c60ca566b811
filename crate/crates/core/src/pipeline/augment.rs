use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Training-time patch augmentation. Off by default: the synthetic hand
/// texture is a one-pixel checker that rotation and resampling would erase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum relative change of saturation and exposure; hue shifts by up
    /// to this fraction of 60 degrees.
    pub color: f64,
    /// Maximum translation as a fraction of the patch side; rotation by up
    /// to this fraction of pi.
    pub geometry: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            color: 0.5,
            geometry: 0.1,
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h.rem_euclid(6.0) as usize {
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

fn bilinear(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
    let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Random color and geometric jitter; output stays in `[0, 1]`.
pub fn augment_patch<R: Rng>(patch: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    if !cfg.enabled {
        return patch.clone();
    }
    let mut out = patch.clone();
    if cfg.geometry > 0.0 {
        let side = patch.width().max(patch.height()) as f64;
        let tx = rng.random_range(-1.0..=1.0) * cfg.geometry * side;
        let ty = rng.random_range(-1.0..=1.0) * cfg.geometry * side;
        let angle = rng.random_range(-1.0..=1.0) * cfg.geometry * std::f64::consts::PI;
        let (sin, cos) = angle.sin_cos();
        let cx = (patch.width() as f64 - 1.0) / 2.0;
        let cy = (patch.height() as f64 - 1.0) / 2.0;
        for y in 0..patch.height() {
            for x in 0..patch.width() {
                let (dx, dy) = (x as f64 - cx - tx, y as f64 - cy - ty);
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                for c in 0..patch.channels() {
                    out.set(x, y, c, bilinear(patch, sx, sy, c));
                }
            }
        }
    }
    if cfg.color > 0.0 {
        let sat = 1.0 + rng.random_range(-1.0..=1.0) * cfg.color;
        let exposure = 1.0 + rng.random_range(-1.0..=1.0) * cfg.color;
        let hue = rng.random_range(-1.0..=1.0) * cfg.color;
        for y in 0..out.height() {
            for x in 0..out.width() {
                if out.channels() == 3 {
                    let p = out.pixel(x, y);
                    let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
                    let rgb = hsv_to_rgb([h + hue, (s * sat).clamp(0.0, 1.0), v * exposure]);
                    for (c, val) in rgb.into_iter().enumerate() {
                        out.set(x, y, c, val);
                    }
                } else {
                    let v = out.get(x, y, 0) * exposure;
                    out.set(x, y, 0, v);
                }
            }
        }
    }
    out.clamp01();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng;

    fn sample() -> Image {
        let data = (0..8 * 8 * 3).map(|i| (i % 17) as f64 / 16.0).collect();
        Image::new(8, 8, 3, data).unwrap()
    }

    #[test]
    fn disabled_or_zero_magnitude_is_identity() {
        let p = sample();
        let mut r = rng(1);
        assert_eq!(augment_patch(&p, &AugmentConfig::default(), &mut r), p);
        let zero = AugmentConfig {
            enabled: true,
            color: 0.0,
            geometry: 0.0,
        };
        assert_eq!(augment_patch(&p, &zero, &mut r), p);
    }

    #[test]
    fn output_stays_in_unit_range() {
        let p = sample();
        let cfg = AugmentConfig {
            enabled: true,
            ..Default::default()
        };
        let mut r = rng(2);
        for _ in 0..20 {
            let a = augment_patch(&p, &cfg, &mut r);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [0.9, 0.1, 0.3], [0.4, 0.4, 0.4], [0.0, 0.7, 0.2]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for (a, b) in rgb.iter().zip(back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
