//! Samples, synthetic scenes, tiling, augmentation, orientation targets and
//! raster I/O.

mod augment;
mod io;
mod orient;
mod synth;
mod tiling;

pub use augment::{augment, Transform};
pub use io::{
    load_classes, load_image, load_mask, read_dataset, save_classes, save_image, save_mask, write_dataset, Split,
    MANIFEST,
};
pub use orient::{angle_class, orientation_gt, ANGLE_BINS, BIN_DEGREES};
pub use synth::{generate_synthetic, SynthOptions};
pub use tiling::{pad_to, stitch, tile, tile_positions, Tile, TileSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A point `(x, y)` in pixel coordinates: `x` grows rightwards, `y` downwards.
pub type Point = (f32, f32);

/// One training example. Rasters are row-major; the image is planar RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    /// `3×H×W` values in `[0, 1]`.
    pub image: Vec<f32>,
    /// Road support, `0` or `1`.
    pub mask: Vec<u8>,
    /// Orientation class per pixel, `0..=36` (0 is background).
    pub orient: Vec<u8>,
    /// Road centerlines as polylines, when known.
    pub centerlines: Vec<Vec<Point>>,
}

impl Sample {
    pub fn road_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn check(&self) -> Result<()> {
        let plane = self.height * self.width;
        if self.image.len() != 3 * plane || self.mask.len() != plane || self.orient.len() != plane {
            return Err(Error::Dataset(format!(
                "sample rasters disagree with {}×{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Max-pools a binary mask by `factor`, so a road pixel survives in its cell.
pub fn downscale_mask(mask: &[u8], height: usize, width: usize, factor: usize) -> Result<Vec<u8>> {
    check_factor(height, width, factor)?;
    let (oh, ow) = (height / factor, width / factor);
    Ok((0..oh * ow)
        .map(|i| {
            let (r, c) = (i / ow, i % ow);
            let any = (0..factor).any(|dy| (0..factor).any(|dx| mask[(r * factor + dy) * width + c * factor + dx] != 0));
            any as u8
        })
        .collect())
}

/// Nearest-neighbour downscale of a class map by `factor`: each cell takes
/// the pixel just below-right of its center.
pub fn downscale_classes(classes: &[u8], height: usize, width: usize, factor: usize) -> Result<Vec<u8>> {
    check_factor(height, width, factor)?;
    let (oh, ow) = (height / factor, width / factor);
    let off = factor / 2;
    Ok((0..oh * ow)
        .map(|i| classes[((i / ow) * factor + off) * width + (i % ow) * factor + off])
        .collect())
}

fn check_factor(height: usize, width: usize, factor: usize) -> Result<()> {
    for extent in [height, width] {
        if factor == 0 || extent % factor != 0 {
            return Err(Error::Indivisible {
                op: "downscale_gt",
                extent,
                divisor: factor,
            });
        }
    }
    Ok(())
}

/// Training targets of a batch at the three output scales (finest first).
#[derive(Clone, Debug)]
pub struct Targets {
    /// `B·h·w` binary masks as floats.
    pub masks: [Vec<f32>; 3],
    /// `B·h·w` orientation classes.
    pub orient: [Vec<usize>; 3],
}

/// Stacks samples into a `B×3×H×W` image tensor and multi-scale targets.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor<f32>, Targets)> {
    let first = samples.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut image = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut masks: [Vec<f32>; 3] = Default::default();
    let mut orient: [Vec<usize>; 3] = Default::default();
    for s in samples {
        s.check()?;
        if (s.height, s.width) != (h, w) {
            return Err(Error::Dataset(format!(
                "batch mixes {h}×{w} with {}×{}",
                s.height, s.width
            )));
        }
        image.extend_from_slice(&s.image);
        for (i, factor) in [1, 2, 4].into_iter().enumerate() {
            let m = downscale_mask(&s.mask, h, w, factor)?;
            let o = downscale_classes(&s.orient, h, w, factor)?;
            masks[i].extend(m.iter().map(|&v| v as f32));
            orient[i].extend(o.iter().map(|&v| v as usize));
        }
    }
    let tensor = Tensor::new(&[samples.len(), 3, h, w], image)?;
    Ok((tensor, Targets { masks, orient }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_road_mask_survives_downscaling() {
        let mask = vec![1u8; 256 * 256];
        let half = downscale_mask(&mask, 256, 256, 2).unwrap();
        let quarter = downscale_mask(&half, 128, 128, 2).unwrap();
        assert_eq!(half.len(), 128 * 128);
        assert_eq!(quarter.len(), 64 * 64);
        assert!(quarter.iter().all(|&v| v == 1));
    }

    #[test]
    fn single_road_pixel_marks_its_cell() {
        let mut mask = vec![0u8; 8 * 8];
        mask[3 * 8 + 5] = 1;
        let half = downscale_mask(&mask, 8, 8, 2).unwrap();
        assert_eq!(half.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(half[4 + 2], 1);
    }

    #[test]
    fn class_downscale_picks_nearest_pixel() {
        let classes: Vec<u8> = (0..16).collect();
        assert_eq!(downscale_classes(&classes, 4, 4, 2).unwrap(), vec![5, 7, 13, 15]);
        assert!(downscale_classes(&classes, 4, 4, 3).is_err());
    }
}
