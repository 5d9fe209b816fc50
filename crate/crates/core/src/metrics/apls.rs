use super::graph::RoadGraph;
use crate::error::{Error, Result};

pub const DEFAULT_SNAP_RADIUS: f64 = 4.0;

/// Nearest node of `to` within `radius` of each node of `from`.
fn snap(from: &RoadGraph, to: &RoadGraph, radius: f64) -> Vec<Option<usize>> {
    from.nodes
        .iter()
        .map(|&(r, c)| {
            to.nodes
                .iter()
                .enumerate()
                .map(|(j, &(r2, c2))| (j, ((r as f64 - r2 as f64).powi(2) + (c as f64 - c2 as f64).powi(2)).sqrt()))
                .filter(|&(_, d)| d <= radius)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
        })
        .collect()
}

/// One-directional path-length similarity `C(a → b)`.
///
/// Every pair of nodes connected in `a` scores
/// `1 − min(1, |L_a − L_b| / L_a)` against the path between their snapped
/// counterparts in `b`, or 0 when a snap or the path is missing. With no
/// connected pairs, the score is 1 if every node of `a` snaps and 0
/// otherwise.
pub fn apls_directional(a: &RoadGraph, b: &RoadGraph, radius: f64) -> f64 {
    let snapped = snap(a, b, radius);
    let da = a.all_pairs_shortest();
    let db = b.all_pairs_shortest();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..a.nodes.len() {
        for j in i + 1..a.nodes.len() {
            let la = da[i][j];
            if !la.is_finite() || la == 0.0 {
                continue;
            }
            pairs += 1;
            if let (Some(p), Some(q)) = (snapped[i], snapped[j]) {
                let lb = db[p][q];
                if lb.is_finite() {
                    total += 1.0 - ((la - lb).abs() / la).min(1.0);
                }
            }
        }
    }
    if pairs == 0 {
        return if snapped.iter().all(Option::is_some) { 1.0 } else { 0.0 };
    }
    total / pairs as f64
}

/// Harmonic mean of both directional scores; 1 when both graphs are empty
/// and 0 when exactly one is.
pub fn apls(gt: &RoadGraph, prop: &RoadGraph, snap_radius: f64) -> Result<f64> {
    if !(snap_radius >= 0.0) {
        return Err(Error::invalid(format!("snap radius must be non-negative, got {snap_radius}")));
    }
    match (gt.is_empty(), prop.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let c1 = apls_directional(gt, prop, snap_radius);
    let c2 = apls_directional(prop, gt, snap_radius);
    Ok(if c1 + c2 == 0.0 { 0.0 } else { 2.0 * c1 * c2 / (c1 + c2) })
}
