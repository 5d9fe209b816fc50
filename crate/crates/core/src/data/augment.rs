use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::orient::ANGLE_BINS;
use super::{Point, Sample};

/// A dihedral transform: optional flips, then `rot` quarter turns
/// counter-clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub rot: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl Transform {
    pub fn random(rng: &mut impl Rng) -> Self {
        Transform {
            rot: rng.random_range(0..4),
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rot % 4 == 0 && self.hflip == self.vflip && !self.hflip
    }

    /// Remaps an orientation class. Flips reflect `θ → 180° − θ`, which sends
    /// bin `k` to `(36 − k) mod 36`: exact for angles on bin edges (so
    /// horizontal and vertical roads keep their bins) and one bin off for
    /// angles strictly inside a bin. A quarter turn adds 90°, i.e. 18 bins.
    pub fn remap_class(&self, class: u8) -> u8 {
        if class == 0 {
            return 0;
        }
        let n = ANGLE_BINS;
        let mut k = class as usize - 1;
        if self.hflip {
            k = (n - k) % n;
        }
        if self.vflip {
            k = (n - k) % n;
        }
        k = (k + (self.rot as usize % 4) * n / 2) % n;
        (k + 1) as u8
    }

    /// Output extent of a `height×width` raster.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Destination `(x, y)` of a point in a `height×width` raster.
    fn map_xy<V>(&self, x: V, y: V, height: usize, width: usize) -> (V, V)
    where
        V: Copy + std::ops::Sub<Output = V> + From<u16>,
    {
        let (mut x, mut y) = (x, y);
        let last = |n: usize| V::from(n as u16 - 1);
        if self.hflip {
            x = last(width) - x;
        }
        if self.vflip {
            y = last(height) - y;
        }
        let (mut h, mut w) = (height, width);
        for _ in 0..self.rot % 4 {
            (x, y) = (y, last(w) - x);
            (h, w) = (w, h);
        }
        (x, y)
    }

    fn map_raster<T: Copy + Default>(&self, data: &[T], planes: usize, height: usize, width: usize) -> Vec<T> {
        let (_, ow) = self.output_dims(height, width);
        let plane = height * width;
        let mut out = vec![T::default(); data.len()];
        for p in 0..planes {
            for r in 0..height {
                for c in 0..width {
                    let (x, y) = self.map_xy(c as i64, r as i64, height, width);
                    out[p * plane + y as usize * ow + x as usize] = data[p * plane + r * width + c];
                }
            }
        }
        out
    }

    fn map_point(&self, p: Point, height: usize, width: usize) -> Point {
        self.map_xy(p.0, p.1, height, width)
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let (h, w) = (sample.height, sample.width);
        let (oh, ow) = self.output_dims(h, w);
        Sample {
            height: oh,
            width: ow,
            image: self.map_raster(&sample.image, 3, h, w),
            mask: self.map_raster(&sample.mask, 1, h, w),
            orient: self
                .map_raster(&sample.orient, 1, h, w)
                .into_iter()
                .map(|k| self.remap_class(k))
                .collect(),
            centerlines: sample
                .centerlines
                .iter()
                .map(|line| line.iter().map(|&p| self.map_point(p, h, w)).collect())
                .collect(),
        }
    }
}

/// Applies a random rotation/flip drawn from `seed`.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Transform::random(&mut rng).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{angle_class, orientation_gt};

    fn toy(h: usize, w: usize) -> Sample {
        let plane = h * w;
        Sample {
            height: h,
            width: w,
            image: (0..3 * plane).map(|i| i as f32 / (3 * plane) as f32).collect(),
            mask: (0..plane).map(|i| (i % 3 == 0) as u8).collect(),
            orient: (0..plane).map(|i| (i % 37) as u8).collect(),
            centerlines: vec![vec![(0.0, 0.0), (w as f32 - 1.0, 1.0)]],
        }
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        let s = toy(4, 6);
        assert_eq!(Transform::default().apply(&s), s);
        let double_flip = Transform {
            rot: 2,
            hflip: true,
            vflip: true,
        };
        assert!(double_flip.is_identity() || double_flip.apply(&s) == s);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        // 2×3 raster rotated CCW: the top-right pixel lands top-left.
        let s = Sample {
            height: 2,
            width: 3,
            image: vec![0.0; 18],
            mask: vec![1, 2, 3, 4, 5, 6],
            orient: vec![0; 6],
            centerlines: vec![],
        };
        let t = Transform {
            rot: 1,
            ..Default::default()
        };
        let out = t.apply(&s);
        assert_eq!((out.height, out.width), (3, 2));
        assert_eq!(out.mask, vec![3, 6, 2, 5, 1, 4]);
    }

    #[test]
    fn half_turn_keeps_classes() {
        let t = Transform {
            rot: 2,
            ..Default::default()
        };
        for k in 0..=36 {
            assert_eq!(t.remap_class(k), k);
        }
    }

    #[test]
    fn flip_keeps_vertical_and_horizontal_bins() {
        for t in [
            Transform {
                hflip: true,
                ..Default::default()
            },
            Transform {
                vflip: true,
                ..Default::default()
            },
        ] {
            assert_eq!(t.remap_class(19), 19);
            assert_eq!(t.remap_class(1), 1);
        }
    }

    #[test]
    fn quarter_turns_shift_bins_like_the_geometry() {
        for k in 0..ANGLE_BINS {
            let theta = (k as f64 * 5.0 + 2.5).to_radians();
            let d = (theta.cos() as f32 * 10.0, -theta.sin() as f32 * 10.0);
            let class = angle_class(d.0 as f64, d.1 as f64);
            for rot in 0..4 {
                let t = Transform { rot, ..Default::default() };
                let a = t.map_point((20.0, 20.0), 64, 64);
                let b = t.map_point((20.0 + d.0, 20.0 + d.1), 64, 64);
                let moved = angle_class((b.0 - a.0) as f64, (b.1 - a.1) as f64);
                assert_eq!(t.remap_class(class), moved, "k={k} rot={rot}");
            }
        }
    }

    #[test]
    fn transformed_centerlines_reproduce_transformed_orientation() {
        let lines = vec![vec![(4.0, 10.0), (28.0, 10.0)], vec![(20.0, 2.0), (20.0, 30.0)]];
        let gt = orientation_gt(&lines, 32, 32, 2.0);
        let s = Sample {
            height: 32,
            width: 32,
            image: vec![0.0; 3 * 1024],
            mask: gt.iter().map(|&k| (k > 0) as u8).collect(),
            orient: gt,
            centerlines: lines,
        };
        for rot in 0..4 {
            for hflip in [false, true] {
                let t = Transform { rot, hflip, vflip: false };
                let out = t.apply(&s);
                let expect = orientation_gt(&out.centerlines, 32, 32, 2.0);
                assert_eq!(out.orient, expect, "{t:?}");
            }
        }
    }

    #[test]
    fn augment_is_deterministic_and_preserves_road_count() {
        let s = toy(8, 5);
        for seed in 0..16 {
            let a = augment(&s, seed);
            assert_eq!(a, augment(&s, seed));
            assert_eq!(a.road_pixels(), s.road_pixels());
        }
    }
}
