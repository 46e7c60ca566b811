use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detection::{BoundingBox, BoxClass, Side};
use crate::image::Image;

const BACKGROUND: [f64; 3] = [0.42, 0.44, 0.46];
const SKIN: [f64; 3] = [0.85, 0.66, 0.55];
const SKIN_DARK: [f64; 3] = [0.30, 0.20, 0.16];
const LEFT_HAND: [f64; 3] = [0.55, 0.50, 0.48];

/// Blocks of the 4×4 hand grid darkened by each bit of the grasp index.
const GRASP_REGIONS: [[(usize, usize); 2]; 6] = [
    [(0, 0), (1, 0)],
    [(2, 0), (3, 0)],
    [(0, 1), (0, 2)],
    [(3, 1), (3, 2)],
    [(1, 3), (2, 3)],
    [(1, 1), (2, 2)],
];

/// Pixel placement of the boxes in one episode; fixed across its frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub size: usize,
    pub hand: (usize, usize),
    pub object: (usize, usize),
    pub left_hand: Option<(usize, usize)>,
}

impl FrameLayout {
    pub fn hand_side(&self) -> usize {
        self.size / 2
    }

    pub fn object_side(&self) -> usize {
        self.size * 3 / 8
    }

    pub fn left_side(&self) -> usize {
        self.size / 4
    }

    /// Random placement. Hand boxes sit at even pixel offsets on the right,
    /// the object on the left, an optional left hand in the bottom-left corner.
    pub fn sample<R: Rng>(size: usize, left_hand: bool, rng: &mut R) -> Self {
        let hs = size / 2;
        let os = size * 3 / 8;
        let ls = size / 4;
        let hand_x = size / 2 - 2 * rng.random_range(0..=1usize);
        let hand_y = 2 * rng.random_range(size / 16..=(size - hs) / 2 - size / 16);
        let obj_x = rng.random_range(0..=(size / 2 - 2 - os));
        let obj_y = rng.random_range(2..=(size - os - ls - 2));
        let left = left_hand.then(|| (rng.random_range(0..=ls / 2), size - ls - 1));
        Self {
            size,
            hand: (hand_x, hand_y),
            object: (obj_x, obj_y),
            left_hand: left,
        }
    }

    fn norm_box(&self, (x, y): (usize, usize), side: usize, class: BoxClass) -> BoundingBox {
        let s = self.size as f64;
        BoundingBox::new(x as f64 / s, y as f64 / s, side as f64 / s, side as f64 / s, class)
            .expect("layout boxes lie inside the frame")
    }

    pub fn hand_box(&self) -> BoundingBox {
        self.norm_box(self.hand, self.hand_side(), BoxClass::Hand)
            .with_side(Side::Right)
    }

    pub fn object_box(&self) -> BoundingBox {
        self.norm_box(self.object, self.object_side(), BoxClass::Object)
    }

    pub fn left_hand_box(&self) -> Option<BoundingBox> {
        self.left_hand
            .map(|p| self.norm_box(p, self.left_side(), BoxClass::Hand).with_side(Side::Left))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub grasp: usize,
    pub object: usize,
    pub n_objects: usize,
    /// Amplitude of the ±1 pixel checker on the hand.
    pub checker: f64,
    pub noise: f64,
}

/// Object color on a hue circle.
pub fn object_color(object: usize, n_objects: usize) -> [f64; 3] {
    let h = object as f64 / n_objects.max(1) as f64 * 6.0;
    let f = |n: f64| {
        let k = (n + h) % 6.0;
        0.9 - 0.75 * (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Whether local offset `(u, v)` inside a `side`² box belongs to object shape `shape`.
fn in_shape(shape: usize, u: usize, v: usize, side: usize) -> bool {
    let c = (side as f64 - 1.0) / 2.0;
    let (dx, dy) = (u as f64 - c, v as f64 - c);
    let r = side as f64 / 2.0;
    match shape % 5 {
        0 => true,
        1 => dx * dx + dy * dy <= r * r,
        2 => dx.abs() + dy.abs() <= r,
        3 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.5 * r) * (0.5 * r)
        }
        _ => dx.abs() <= r / 3.0 || dy.abs() <= r / 3.0,
    }
}

fn grasp_dark(grasp: usize, u: usize, v: usize, side: usize) -> bool {
    let block = (side / 4).max(1);
    let (bx, by) = (u / block, v / block);
    GRASP_REGIONS
        .iter()
        .enumerate()
        .any(|(bit, blocks)| (grasp >> bit) & 1 == 1 && blocks.contains(&(bx, by)))
}

/// Renders one RGB frame. Noise is drawn from `rng` only when `noise > 0`.
pub fn render_frame<R: Rng>(layout: &FrameLayout, p: &RenderParams, rng: &mut R) -> Image {
    let s = layout.size;
    let mut img = Image::filled(s, s, &BACKGROUND);

    let os = layout.object_side();
    let color = object_color(p.object, p.n_objects);
    for v in 0..os {
        for u in 0..os {
            if in_shape(p.object, u, v, os) {
                for (c, &val) in color.iter().enumerate() {
                    img.set(layout.object.0 + u, layout.object.1 + v, c, val);
                }
            }
        }
    }

    if let Some((lx, ly)) = layout.left_hand {
        let ls = layout.left_side();
        for v in 0..ls {
            for u in 0..ls {
                for (c, &val) in LEFT_HAND.iter().enumerate() {
                    img.set(lx + u, ly + v, c, val);
                }
            }
        }
    }

    let hs = layout.hand_side();
    for v in 0..hs {
        for u in 0..hs {
            let (x, y) = (layout.hand.0 + u, layout.hand.1 + v);
            let base = if grasp_dark(p.grasp, u, v, hs) { SKIN_DARK } else { SKIN };
            let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            for (c, &val) in base.iter().enumerate() {
                img.set(x, y, c, val + sign * p.checker);
            }
        }
    }

    if p.noise > 0.0 {
        let normal = Normal::new(0.0, p.noise).expect("finite noise level");
        for v in img.data_mut() {
            *v += normal.sample(rng);
        }
    }
    img.clamp01();
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_boxes_do_not_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let l = FrameLayout::sample(32, true, &mut rng);
            let (h, o, lh) = (l.hand_box(), l.object_box(), l.left_hand_box().unwrap());
            assert!(o.x + o.w <= h.x);
            assert!(o.y + o.h <= lh.y);
            assert_eq!(l.hand.0 % 2 + l.hand.1 % 2, 0);
        }
    }

    #[test]
    fn checker_is_zero_mean_per_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layout = FrameLayout::sample(32, false, &mut rng);
        let params = RenderParams {
            grasp: 5,
            object: 1,
            n_objects: 5,
            checker: 0.05,
            noise: 0.0,
        };
        let plain = render_frame(&layout, &RenderParams { checker: 0.0, ..params }, &mut rng);
        let textured = render_frame(&layout, &params, &mut rng);
        let diff: f64 = plain.data().iter().zip(textured.data()).map(|(a, b)| b - a).sum();
        assert!(diff.abs() < 1e-9);
        assert_ne!(plain, textured);
    }

    #[test]
    fn grasp_patterns_are_distinct() {
        let pats: Vec<Vec<bool>> = (0..8)
            .map(|g| (0..256).map(|i| grasp_dark(g, i % 16, i / 16, 16)).collect())
            .collect();
        for a in 0..8 {
            for b in 0..a {
                assert_ne!(pats[a], pats[b]);
            }
        }
    }
}
