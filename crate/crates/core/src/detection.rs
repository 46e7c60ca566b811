//! Oracle detector over manifest boxes, primary-hand resolution, patch
//! cropping, and the global scene feature.

use rand::Rng;
use thiserror::Error;

use crate::image::Image;
use crate::manifest::FrameRecord;

/// Side of the 8×8 grayscale scene thumbnail.
pub const THUMB: usize = 8;
/// Slots per box in the global feature: center x, center y, w, h, present.
pub const BOX_SLOTS: usize = 5;
/// Width of [`global_feature`].
pub const GLOBAL_WIDTH: usize = THUMB * THUMB + 3 * BOX_SLOTS;

/// Rounding slack for `x + w <= 1`.
const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("frame {episode}/{frame} has no box annotations")]
    MissingAnnotation { episode: usize, frame: usize },
    #[error("no hand detected")]
    NoHandDetected,
    #[error("invalid box {0}")]
    InvalidBox(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxClass {
    Hand,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: BoxClass,
    pub side_hint: Option<Side>,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, class: BoxClass) -> Result<Self, DetectionError> {
        let b = Self {
            x,
            y,
            w,
            h,
            class,
            side_hint: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side_hint = Some(side);
        self
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let ok = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + EDGE_TOL
            && self.y + self.h <= 1.0 + EDGE_TOL;
        if ok {
            Ok(())
        } else {
            Err(DetectionError::InvalidBox(format!("{self:?}")))
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Horizontal mirror image of the box.
    pub fn mirrored(&self) -> Self {
        Self {
            x: 1.0 - self.x - self.w,
            ..*self
        }
    }

    /// Moves each coordinate by at most `noise`, then clamps back into the image.
    pub fn jittered<R: Rng>(&self, noise: f64, rng: &mut R) -> Self {
        if noise <= 0.0 {
            return *self;
        }
        const MIN_SIDE: f64 = 1e-3;
        let mut d = || rng.random_range(-noise..=noise);
        let (dx, dy, dw, dh) = (d(), d(), d(), d());
        let w = (self.w + dw).clamp(MIN_SIDE, 1.0);
        let h = (self.h + dh).clamp(MIN_SIDE, 1.0);
        Self {
            x: (self.x + dx).clamp(0.0, 1.0 - w),
            y: (self.y + dy).clamp(0.0, 1.0 - h),
            w,
            h,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Zero, one, or two hands, in no particular order.
    pub hands: Vec<BoundingBox>,
    pub object: Option<BoundingBox>,
}

/// Returns the manifest's boxes, each coordinate jittered by at most `noise`.
pub fn oracle_detect<R: Rng>(frame: &FrameRecord, noise: f64, rng: &mut R) -> Result<DetectionResult, DetectionError> {
    let hands: Vec<BoundingBox> = [frame.hand_r, frame.hand_l].into_iter().flatten().collect();
    if hands.is_empty() && frame.object.is_none() {
        return Err(DetectionError::MissingAnnotation {
            episode: frame.episode_id,
            frame: frame.frame_idx,
        });
    }
    Ok(DetectionResult {
        hands: hands.iter().map(|b| b.jittered(noise, rng)).collect(),
        object: frame.object.map(|b| b.jittered(noise, rng)),
    })
}

/// The rightmost hand by center x; the egocentric primary hand.
/// Ties keep the lower box (larger center y) so input order never matters.
pub fn resolve_primary_hand(d: &DetectionResult) -> Result<BoundingBox, DetectionError> {
    d.hands
        .iter()
        .copied()
        .max_by(|a, b| {
            let (ax, ay) = a.center();
            let (bx, by) = b.center();
            ax.total_cmp(&bx).then(ay.total_cmp(&by))
        })
        .ok_or(DetectionError::NoHandDetected)
}

/// The hand that is not primary, if two were detected.
pub fn secondary_hand(d: &DetectionResult) -> Option<BoundingBox> {
    let primary = resolve_primary_hand(d).ok()?;
    let mut rest = d.hands.iter().filter(|&&b| b != primary);
    rest.next().copied()
}

/// Bilinear resample of `bbox` to an `out_size`² patch. Output pixel centers
/// map linearly onto the box; samples outside the image clamp to the edge.
pub fn crop_and_resize(image: &Image, bbox: &BoundingBox, out_size: usize) -> Image {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let x0 = bbox.x * w as f64;
    let y0 = bbox.y * h as f64;
    let sx = bbox.w * w as f64 / out_size as f64;
    let sy = bbox.h * h as f64 / out_size as f64;
    let axis = |start: f64, step: f64, i: usize, n: usize| -> (usize, usize, f64) {
        let s = (start + (i as f64 + 0.5) * step - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let mut data = Vec::with_capacity(out_size * out_size * ch);
    for v in 0..out_size {
        let (ya, yb, fy) = axis(y0, sy, v, h);
        for u in 0..out_size {
            let (xa, xb, fx) = axis(x0, sx, u, w);
            for c in 0..ch {
                let top = image.get(xa, ya, c) * (1.0 - fx) + image.get(xb, ya, c) * fx;
                let bottom = image.get(xa, yb, c) * (1.0 - fx) + image.get(xb, yb, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image::new(out_size, out_size, ch, data).expect("buffer sized to patch")
}

/// 8×8 area-averaged grayscale thumbnail followed by the primary hand,
/// secondary hand, and object boxes as `(cx, cy, w, h, present)`.
pub fn global_feature(image: &Image, d: &DetectionResult) -> Vec<f64> {
    let mut out = Vec::with_capacity(GLOBAL_WIDTH);
    let (w, h) = (image.width(), image.height());
    let mut sums = [0.0; THUMB * THUMB];
    let mut counts = [0usize; THUMB * THUMB];
    for y in 0..h {
        let cy = (y * THUMB) / h;
        for x in 0..w {
            let cx = (x * THUMB) / w;
            sums[cy * THUMB + cx] += image.gray(x, y);
            counts[cy * THUMB + cx] += 1;
        }
    }
    out.extend(
        sums.iter()
            .zip(&counts)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 }),
    );
    let slots = [resolve_primary_hand(d).ok(), secondary_hand(d), d.object];
    for b in slots {
        match b {
            Some(b) => {
                let (cx, cy) = b.center();
                out.extend([cx, cy, b.w, b.h, 1.0]);
            }
            None => out.extend([0.0; BOX_SLOTS]),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn hand(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.2, 0.2, 0.3, BoxClass::Hand).unwrap()
    }

    #[test]
    fn rightmost_hand_wins_regardless_of_order() {
        let a = hand(0.2);
        let b = hand(0.6);
        for hands in [vec![a, b], vec![b, a]] {
            let d = DetectionResult { hands, object: None };
            assert_eq!(resolve_primary_hand(&d).unwrap(), b);
            assert_eq!(secondary_hand(&d), Some(a));
        }
        let single = DetectionResult {
            hands: vec![a],
            object: None,
        };
        assert_eq!(resolve_primary_hand(&single).unwrap(), a);
        let none = DetectionResult {
            hands: vec![],
            object: None,
        };
        assert_eq!(resolve_primary_hand(&none), Err(DetectionError::NoHandDetected));
    }

    #[test]
    fn jitter_is_bounded_and_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = BoundingBox::new(0.0, 0.7, 0.3, 0.3, BoxClass::Object).unwrap();
        assert_eq!(b.jittered(0.0, &mut rng), b);
        for _ in 0..500 {
            let j = b.jittered(0.05, &mut rng);
            j.validate().unwrap();
            for (p, q) in [(j.x, b.x), (j.y, b.y), (j.w, b.w), (j.h, b.h)] {
                assert!((p - q).abs() <= 0.05 + 1e-12);
            }
        }
    }

    #[test]
    fn full_box_crop_is_identity() {
        let img = Image::new(4, 4, 1, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let full = BoundingBox::new(0.0, 0.0, 1.0, 1.0, BoxClass::Hand).unwrap();
        assert_eq!(crop_and_resize(&img, &full, 4), img);
        let flat = Image::filled(7, 5, &[0.2, 0.4, 0.6]);
        let p = crop_and_resize(&flat, &hand(0.3), 9);
        assert!(p.data().chunks(3).all(|px| px == [0.2, 0.4, 0.6]));
    }

    #[test]
    fn global_feature_zeroes_missing_object() {
        let img = Image::filled(16, 16, &[0.5]);
        let d = DetectionResult {
            hands: vec![hand(0.5)],
            object: None,
        };
        let f = global_feature(&img, &d);
        assert_eq!(f.len(), GLOBAL_WIDTH);
        assert!(f[..64].iter().all(|&v| v == 0.5));
        assert_eq!(&f[64 + 2 * BOX_SLOTS..], &[0.0; BOX_SLOTS]);
        assert_eq!(f[64 + 4], 1.0);
    }
}
