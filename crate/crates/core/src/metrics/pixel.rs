use crate::error::{Error, Result};

/// Confusion counts of a thresholded prediction against a binary mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_masks(pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape("pixel_metrics", &[pred.len()], &[gt.len()]));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// No road in either mask: every ratio is taken as 1.
    fn vacuous(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        if self.vacuous() {
            1.0
        } else {
            ratio(self.tp, self.tp + self.fp)
        }
    }

    pub fn recall(&self) -> f64 {
        if self.vacuous() {
            1.0
        } else {
            ratio(self.tp, self.tp + self.fn_)
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn iou(&self) -> f64 {
        if self.vacuous() {
            1.0
        } else {
            ratio(self.tp, self.tp + self.fp + self.fn_)
        }
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn threshold(probs: &[f32], threshold: f32) -> Vec<u8> {
    probs.iter().map(|&p| (p >= threshold) as u8).collect()
}

/// Precision, recall, F1 and IoU of `probs ≥ threshold` against `gt`.
pub fn pixel_metrics(probs: &[f32], gt: &[u8], thresh: f32) -> Result<Confusion> {
    Confusion::from_masks(&threshold(probs, thresh), gt)
}

/// Binary dilation by a Chebyshev disk (a `(2r+1)²` square), separably.
pub fn dilate(mask: &[u8], height: usize, width: usize, radius: usize) -> Vec<u8> {
    let mut rows = vec![0u8; mask.len()];
    for r in 0..height {
        for c in 0..width {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(width - 1);
            rows[r * width + c] = mask[r * width + lo..=r * width + hi].iter().any(|&v| v != 0) as u8;
        }
    }
    let mut out = vec![0u8; mask.len()];
    for r in 0..height {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(height - 1);
        for c in 0..width {
            out[r * width + c] = (lo..=hi).any(|y| rows[y * width + c] != 0) as u8;
        }
    }
    out
}

/// Relaxed agreement counts: predicted pixels within `buffer` of the ground
/// truth, and ground-truth pixels within `buffer` of the prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RelaxedCounts {
    pub tp_pred: u64,
    pub tp_gt: u64,
    pub pred: u64,
    pub gt: u64,
}

impl RelaxedCounts {
    pub fn new(pred: &[u8], gt: &[u8], height: usize, width: usize, buffer: usize) -> Result<Self> {
        if pred.len() != gt.len() || pred.len() != height * width {
            return Err(Error::shape("relaxed_iou", &[pred.len()], &[gt.len(), height, width]));
        }
        let gt_d = dilate(gt, height, width, buffer);
        let pred_d = dilate(pred, height, width, buffer);
        let count = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| **x != 0 && **y != 0).count() as u64;
        Ok(RelaxedCounts {
            tp_pred: count(pred, &gt_d),
            tp_gt: count(gt, &pred_d),
            pred: pred.iter().filter(|&&v| v != 0).count() as u64,
            gt: gt.iter().filter(|&&v| v != 0).count() as u64,
        })
    }

    /// `(TPₚ + TP_g) / (|pred| + |gt|)`, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let den = self.pred + self.gt;
        if den == 0 {
            1.0
        } else {
            (self.tp_pred + self.tp_gt) as f64 / den as f64
        }
    }
}

impl std::ops::AddAssign for RelaxedCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp_pred += o.tp_pred;
        self.tp_gt += o.tp_gt;
        self.pred += o.pred;
        self.gt += o.gt;
    }
}

pub fn relaxed_iou(pred: &[u8], gt: &[u8], height: usize, width: usize, buffer: usize) -> Result<f64> {
    Ok(RelaxedCounts::new(pred, gt, height, width, buffer)?.iou())
}
