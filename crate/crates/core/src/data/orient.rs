use super::Point;

/// Width of one orientation bin.
pub const BIN_DEGREES: f64 = 5.0;
/// Angle bins over `[0°, 180°)`; class 0 is background.
pub const ANGLE_BINS: usize = 36;

/// Class `1 + ⌊θ/5°⌋` of an undirected direction `(dx, dy)` in image
/// coordinates, with `θ` measured counter-clockwise from the +x axis as seen
/// on screen (so `y` is flipped).
pub fn angle_class(dx: f64, dy: f64) -> u8 {
    let mut theta = (-dy).atan2(dx).to_degrees().rem_euclid(180.0);
    if theta >= 180.0 {
        theta = 0.0;
    }
    let bin = ((theta / BIN_DEGREES).floor() as usize).min(ANGLE_BINS - 1);
    (bin + 1) as u8
}

pub(crate) fn segment_distance(p: (f64, f64), a: Point, b: Point) -> f64 {
    let (ax, ay) = (a.0 as f64, a.1 as f64);
    let (dx, dy) = (b.0 as f64 - ax, b.1 as f64 - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Orientation classes for an `height×width` raster: pixels within `radius`
/// of a centerline take the class of the nearest segment, all others are 0.
pub fn orientation_gt(centerlines: &[Vec<Point>], height: usize, width: usize, radius: f64) -> Vec<u8> {
    let segments: Vec<(Point, Point, u8)> = centerlines
        .iter()
        .flat_map(|line| line.windows(2))
        .filter(|w| w[0] != w[1])
        .map(|w| {
            let class = angle_class((w[1].0 - w[0].0) as f64, (w[1].1 - w[0].1) as f64);
            (w[0], w[1], class)
        })
        .collect();
    let mut out = vec![0u8; height * width];
    if segments.is_empty() {
        return out;
    }
    for r in 0..height {
        for c in 0..width {
            let p = (c as f64, r as f64);
            let mut best = f64::INFINITY;
            let mut class = 0;
            for &(a, b, k) in &segments {
                let d = segment_distance(p, a, b);
                if d < best {
                    best = d;
                    class = k;
                }
            }
            if best <= radius {
                out[r * width + c] = class;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_classes() {
        assert_eq!(angle_class(1.0, 0.0), 1);
        assert_eq!(angle_class(-3.0, 0.0), 1);
        assert_eq!(angle_class(0.0, 1.0), 1 + (90.0 / BIN_DEGREES) as u8);
        assert_eq!(angle_class(0.0, -2.0), 19);
    }

    #[test]
    fn horizontal_and_vertical_lines() {
        let h = orientation_gt(&[vec![(2.0, 8.0), (14.0, 8.0)]], 16, 16, 3.0);
        assert_eq!(h[8 * 16 + 8], 1);
        let v = orientation_gt(&[vec![(8.0, 2.0), (8.0, 14.0)]], 16, 16, 3.0);
        assert_eq!(v[8 * 16 + 8], 19);
        assert_eq!(v[8 * 16 + 12], 0);
        assert_eq!(v[8 * 16 + 11], 19);
    }

    #[test]
    fn fan_of_lines_hits_every_bin_once() {
        let mut seen = [0usize; ANGLE_BINS + 1];
        for k in 0..ANGLE_BINS {
            let theta = (k as f64 * BIN_DEGREES + BIN_DEGREES / 2.0).to_radians();
            let (dx, dy) = (theta.cos() * 20.0, -theta.sin() * 20.0);
            let line = vec![(32.0, 32.0), ((32.0 + dx) as f32, (32.0 + dy) as f32)];
            seen[orientation_gt(&[line], 64, 64, 0.5)[32 * 64 + 32] as usize] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1..].iter().all(|&n| n == 1), "{seen:?}");
    }

    #[test]
    fn no_centerlines_is_all_background() {
        assert!(orientation_gt(&[], 8, 8, 3.0).iter().all(|&c| c == 0));
    }

    #[test]
    fn nearest_segment_wins() {
        let lines = [vec![(0.0, 4.0), (15.0, 4.0)], vec![(4.0, 0.0), (4.0, 15.0)]];
        let gt = orientation_gt(&lines, 16, 16, 3.0);
        assert_eq!(gt[4 * 16 + 10], 1);
        assert_eq!(gt[10 * 16 + 4], 19);
    }
}
