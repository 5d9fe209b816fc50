use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::orient::{orientation_gt, segment_distance};
use super::{Point, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Draw building-like rectangles as distractors.
    pub buildings: bool,
    /// Draw canopy strips across roads in the image only.
    pub occluders: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            buildings: true,
            occluders: false,
        }
    }
}

struct Road {
    line: Vec<Point>,
    width: f32,
}

fn border_point(rng: &mut ChaCha8Rng, side: u32, size: f32) -> Point {
    let t = rng.random_range(0.1..0.9) * size;
    let max = size - 1.0;
    match side {
        0 => (t, 0.0),
        1 => (max, t),
        2 => (t, max),
        _ => (0.0, t),
    }
}

fn random_roads(rng: &mut ChaCha8Rng, size: usize) -> Vec<Road> {
    let s = size as f32;
    let scale = s / 64.0;
    let count = rng.random_range(1..=3);
    (0..count)
        .map(|_| {
            let a = rng.random_range(0..4);
            let b = (a + rng.random_range(1..4)) % 4;
            let mut line = vec![border_point(rng, a, s)];
            for _ in 0..rng.random_range(0..=2) {
                line.push((rng.random_range(0.15..0.85) * s, rng.random_range(0.15..0.85) * s));
            }
            line.push(border_point(rng, b, s));
            Road {
                line,
                width: rng.random_range(1..=4) as f32 * scale,
            }
        })
        .collect()
}

fn distance_to(line: &[Point], p: (f64, f64)) -> f64 {
    line.windows(2)
        .map(|w| segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn render_mask(roads: &[Road], size: usize) -> Vec<u8> {
    let mut mask = vec![0u8; size * size];
    for r in 0..size {
        for c in 0..size {
            let p = (c as f64, r as f64);
            if roads.iter().any(|road| distance_to(&road.line, p) <= road.width as f64 / 2.0) {
                mask[r * size + c] = 1;
            }
        }
    }
    mask
}

fn set_pixel(image: &mut [f32], plane: usize, idx: usize, rgb: [f32; 3]) {
    for (ch, v) in rgb.into_iter().enumerate() {
        image[ch * plane + idx] = v.clamp(0.0, 1.0);
    }
}

fn render_image(rng: &mut ChaCha8Rng, mask: &[u8], size: usize, opts: &SynthOptions) -> Vec<f32> {
    let plane = size * size;
    let s = size as f32;
    let mut image = vec![0.0f32; 3 * plane];
    let base = [
        rng.random_range(0.25..0.4),
        rng.random_range(0.35..0.5),
        rng.random_range(0.15..0.3),
    ];
    let waves: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) * std::f32::consts::TAU / s,
                rng.random_range(0.5..3.0) * std::f32::consts::TAU / s,
                rng.random_range(0.0..std::f32::consts::TAU),
            )
        })
        .collect();
    for idx in 0..plane {
        let (y, x) = ((idx / size) as f32, (idx % size) as f32);
        let texture: f32 = waves.iter().map(|&(fx, fy, ph)| (fx * x + fy * y + ph).sin()).sum::<f32>() * 0.04;
        let noise = rng.random_range(-0.03..0.03);
        set_pixel(&mut image, plane, idx, base.map(|b| b + texture + noise));
    }
    if opts.buildings {
        let scale = s / 64.0;
        for _ in 0..rng.random_range(3..=8) {
            let (bw, bh) = (
                (rng.random_range(4.0..12.0) * scale) as usize,
                (rng.random_range(4.0..12.0) * scale) as usize,
            );
            let (x0, y0) = (rng.random_range(0..size - bw.min(size - 1)), rng.random_range(0..size - bh.min(size - 1)));
            let roof = [
                rng.random_range(0.5..0.85),
                rng.random_range(0.3..0.6),
                rng.random_range(0.25..0.5),
            ];
            for y in y0..(y0 + bh).min(size) {
                for x in x0..(x0 + bw).min(size) {
                    set_pixel(&mut image, plane, y * size + x, roof);
                }
            }
        }
    }
    let tone = rng.random_range(0.55..0.7);
    for (idx, &m) in mask.iter().enumerate() {
        if m != 0 {
            let n = rng.random_range(-0.03..0.03);
            set_pixel(&mut image, plane, idx, [tone + n, tone + n, tone + 0.02 + n]);
        }
    }
    image
}

fn draw_occluders(rng: &mut ChaCha8Rng, image: &mut [f32], roads: &[Road], size: usize) {
    let plane = size * size;
    let scale = size as f32 / 64.0;
    for _ in 0..rng.random_range(1..=3) {
        let road = &roads[rng.random_range(0..roads.len())];
        let k = rng.random_range(0..road.line.len() - 1);
        let (a, b) = (road.line[k], road.line[k + 1]);
        let t = rng.random_range(0.2..0.8);
        let center = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-6);
        let normal = (-dy / len, dx / len);
        let half = rng.random_range(3.0..6.0) * scale + road.width / 2.0;
        let end0 = (center.0 - normal.0 * half, center.1 - normal.1 * half);
        let end1 = (center.0 + normal.0 * half, center.1 + normal.1 * half);
        let thickness = rng.random_range(1.0..2.0) * scale;
        let canopy = [0.08, rng.random_range(0.22..0.32), 0.08];
        for idx in 0..plane {
            let p = ((idx % size) as f64, (idx / size) as f64);
            if segment_distance(p, end0, end1) <= thickness as f64 {
                set_pixel(image, plane, idx, canopy);
            }
        }
    }
}

/// Procedural road scenes of `size×size` pixels, deterministic in `seed`.
///
/// Each scene has one to three roads running border to border through up to
/// two interior waypoints, 1–4 px wide at size 64 (scaled with size), over a
/// textured background with rectangular distractors. Every sample has at least
/// one road pixel and at least 30% background. Occluders change only the
/// image, and sample `i` is the same scene with or without them.
pub fn generate_synthetic(seed: u64, count: usize, size: usize, opts: &SynthOptions) -> Result<Vec<Sample>> {
    if size < 16 || size % 16 != 0 {
        return Err(Error::invalid(format!("synthetic size must be a positive multiple of 16, got {size}")));
    }
    let radius = 3.0 * size as f64 / 64.0;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2 * i as u64);
            let (roads, mask) = loop {
                let roads = random_roads(&mut rng, size);
                let mask = render_mask(&roads, size);
                let road = mask.iter().filter(|&&m| m != 0).count();
                if road >= 1 && road * 10 <= mask.len() * 7 {
                    break (roads, mask);
                }
            };
            let mut image = render_image(&mut rng, &mask, size, opts);
            if opts.occluders {
                let mut occ = ChaCha8Rng::seed_from_u64(seed);
                occ.set_stream(2 * i as u64 + 1);
                draw_occluders(&mut occ, &mut image, &roads, size);
            }
            let centerlines: Vec<Vec<Point>> = roads.into_iter().map(|r| r.line).collect();
            let orient = orientation_gt(&centerlines, size, size, radius);
            Ok(Sample {
                height: size,
                width: size,
                image,
                mask,
                orient,
                centerlines,
            })
        })
        .collect()
}
