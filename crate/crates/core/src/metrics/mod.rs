//! Segmentation and topology metrics.
//!
//! Pixel metrics compare a thresholded road probability map with the ground
//! truth mask. The relaxed IoU counts a pixel as matched when the other mask
//! has a road pixel within a Chebyshev buffer:
//!
//! ```text
//! IoU^r = (|pred ∩ dilate(gt, b)| + |gt ∩ dilate(pred, b)|) / (|pred| + |gt|)
//! ```
//!
//! APLS compares shortest-path lengths between snapped node pairs of the two
//! road graphs extracted from the masks.

mod apls;
mod graph;
mod pixel;

pub use apls::{apls, apls_directional, DEFAULT_SNAP_RADIUS};
pub use graph::{mask_to_graph, zhang_suen, RoadGraph};
pub use pixel::{dilate, pixel_metrics, relaxed_iou, threshold, Confusion, RelaxedCounts};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{tile, Sample, TileSpec};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Scalar;

pub const DEFAULT_BUFFER: usize = 4;
pub const CSV_HEADER: &str = "precision,recall,f1,iou_a,iou_r,apls";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou_a: f64,
    pub iou_r: f64,
    pub apls: f64,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.precision, self.recall, self.f1, self.iou_a, self.iou_r, self.apls
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "precision  {:.4}", self.precision)?;
        writeln!(f, "recall     {:.4}", self.recall)?;
        writeln!(f, "F1         {:.4}", self.f1)?;
        writeln!(f, "IoU^a      {:.4}", self.iou_a)?;
        writeln!(f, "IoU^r      {:.4}   (|P∩dil(G)| + |G∩dil(P)|) / (|P| + |G|)", self.iou_r)?;
        write!(f, "APLS       {:.4}", self.apls)
    }
}

/// Anything that maps a sample to a per-pixel road probability.
pub trait Predictor {
    fn road_probability(&self, sample: &Sample) -> Result<Vec<f32>>;
}

impl<T: Scalar> Predictor for Model<T> {
    fn road_probability(&self, sample: &Sample) -> Result<Vec<f32>> {
        Ok(self.predict_image(&sample.image, sample.height, sample.width)?.road_prob)
    }
}

/// Returns the ground truth itself.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn road_probability(&self, sample: &Sample) -> Result<Vec<f32>> {
        Ok(sample.mask.iter().map(|&m| m as f32).collect())
    }
}

/// Predicts background everywhere.
pub struct BackgroundPredictor;

impl Predictor for BackgroundPredictor {
    fn road_probability(&self, sample: &Sample) -> Result<Vec<f32>> {
        Ok(vec![0.0; sample.height * sample.width])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub threshold: f32,
    pub buffer: usize,
    pub snap_radius: f64,
    /// Cut each sample into tiles before evaluation.
    pub tile: Option<TileSpec>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            buffer: DEFAULT_BUFFER,
            snap_radius: DEFAULT_SNAP_RADIUS,
            tile: None,
        }
    }
}

fn tiles_of(sample: &Sample, spec: &TileSpec) -> Result<Vec<Sample>> {
    let (h, w) = (sample.height, sample.width);
    let images = tile(&sample.image, 3, h, w, spec)?;
    let masks = tile(&sample.mask, 1, h, w, spec)?;
    let orients = tile(&sample.orient, 1, h, w, spec)?;
    Ok(images
        .into_iter()
        .zip(masks)
        .zip(orients)
        .map(|((i, m), o)| Sample {
            height: spec.patch,
            width: spec.patch,
            image: i.data,
            mask: m.data,
            orient: o.data,
            centerlines: Vec::new(),
        })
        .collect())
}

/// Scores a predictor over samples (or their tiles): confusion and relaxed
/// counts are pooled over all tiles before taking ratios, APLS is the mean
/// of per-tile scores.
pub fn evaluate(predictor: &dyn Predictor, samples: &[Sample], opts: &EvalOptions) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let mut conf = Confusion::default();
    let mut relaxed = RelaxedCounts::default();
    let mut apls_sum = 0.0;
    let mut tiles = 0usize;
    for sample in samples {
        sample.check()?;
        let units = match &opts.tile {
            Some(spec) => tiles_of(sample, spec)?,
            None => vec![sample.clone()],
        };
        for unit in &units {
            let (h, w) = (unit.height, unit.width);
            let probs = predictor.road_probability(unit)?;
            let pred = threshold(&probs, opts.threshold);
            conf += Confusion::from_masks(&pred, &unit.mask)?;
            relaxed += RelaxedCounts::new(&pred, &unit.mask, h, w, opts.buffer)?;
            let g_gt = mask_to_graph(&unit.mask, h, w);
            let g_pred = mask_to_graph(&pred, h, w);
            apls_sum += apls(&g_gt, &g_pred, opts.snap_radius)?;
            tiles += 1;
        }
    }
    Ok(MetricsReport {
        precision: conf.precision(),
        recall: conf.recall(),
        f1: conf.f1(),
        iou_a: conf.iou(),
        iou_r: relaxed.iou(),
        apls: apls_sum / tiles as f64,
    })
}
