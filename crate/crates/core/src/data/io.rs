//! PNG rasters and the on-disk dataset layout.
//!
//! A dataset directory holds
//!
//! ```text
//! images/<id>.png   8-bit RGB
//! masks/<id>.png    8-bit grayscale, road = 255
//! orient/<id>.png   8-bit grayscale, orientation class 0..=36 (optional)
//! manifest.csv      header `id,split`, split ∈ {train, val, test}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::orient::ANGLE_BINS;
use super::Sample;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open_8bit(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => Ok(img),
        other => Err(image_error(path, format!("unsupported bit depth ({:?})", other.color()))),
    }
}

fn write_png(path: &Path, img: &DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

fn dims_u32(path: &Path, height: usize, width: usize, len: usize, planes: usize) -> Result<(u32, u32)> {
    if len != planes * height * width {
        return Err(image_error(path, format!("{len} values do not fill {planes}×{height}×{width}")));
    }
    Ok((width as u32, height as u32))
}

/// Loads an image as planar RGB in `[0, 1]`: `(height, width, 3·H·W values)`.
pub fn load_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let rgb = open_8bit(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = vec![0.0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Ok((h, w, out))
}

pub fn save_image(path: &Path, image: &[f32], height: usize, width: usize) -> Result<()> {
    let (w, h) = dims_u32(path, height, width, image.len(), 3)?;
    let plane = height * width;
    let img: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
        let i = y as usize * width + x as usize;
        Rgb([0, 1, 2].map(|c| (image[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    write_png(path, &DynamicImage::ImageRgb8(img))
}

/// Loads a road mask, binarizing luminance at 128. RGB masks are reduced to
/// luminance first, so white roads on black read as road.
pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let gray = open_8bit(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((h, w, gray.into_raw().into_iter().map(|v| (v >= 128) as u8).collect()))
}

/// Writes a `{0, 1}` mask as `{0, 255}`.
pub fn save_mask(path: &Path, mask: &[u8], height: usize, width: usize) -> Result<()> {
    let (w, h) = dims_u32(path, height, width, mask.len(), 1)?;
    let raw = mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(w, h, raw).expect("length checked");
    write_png(path, &DynamicImage::ImageLuma8(img))
}

/// Loads a class-indexed raster, rejecting values above 36.
pub fn load_classes(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open_8bit(path)?;
    if !matches!(img, DynamicImage::ImageLuma8(_)) {
        return Err(image_error(path, "class maps must be 8-bit grayscale"));
    }
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let raw = gray.into_raw();
    if let Some(v) = raw.iter().find(|&&v| v as usize > ANGLE_BINS) {
        return Err(image_error(path, format!("class {v} out of range 0..={ANGLE_BINS}")));
    }
    Ok((h, w, raw))
}

pub fn save_classes(path: &Path, classes: &[u8], height: usize, width: usize) -> Result<()> {
    let (w, h) = dims_u32(path, height, width, classes.len(), 1)?;
    let img = GrayImage::from_raw(w, h, classes.to_vec()).expect("length checked");
    write_png(path, &DynamicImage::ImageLuma8(img))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    split: Split,
}

fn raster_path(dir: &Path, kind: &str, id: &str) -> PathBuf {
    dir.join(kind).join(format!("{id}.png"))
}

/// Writes samples as `images/`, `masks/`, `orient/` PNGs plus the manifest.
/// Ids are zero-padded sample indices.
pub fn write_dataset(dir: &Path, samples: &[(Split, &Sample)]) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST);
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut ids = Vec::with_capacity(samples.len());
    for (i, (split, s)) in samples.iter().enumerate() {
        s.check()?;
        let id = format!("{i:05}");
        save_image(&raster_path(dir, "images", &id), &s.image, s.height, s.width)?;
        save_mask(&raster_path(dir, "masks", &id), &s.mask, s.height, s.width)?;
        save_classes(&raster_path(dir, "orient", &id), &s.orient, s.height, s.width)?;
        writer
            .serialize(ManifestRow { id: id.clone(), split: *split })
            .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
        ids.push(id);
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(ids)
}

/// Reads the samples of a dataset directory in manifest order, optionally
/// restricted to one split. A missing orientation raster reads as all
/// background. Centerlines are not stored and come back empty.
pub fn read_dataset(dir: &Path, split: Option<Split>) -> Result<Vec<(String, Split, Sample)>> {
    let manifest = dir.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&manifest).map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
        if split.is_some_and(|s| s != row.split) {
            continue;
        }
        let (h, w, image) = load_image(&raster_path(dir, "images", &row.id))?;
        let mask_path = raster_path(dir, "masks", &row.id);
        let (mh, mw, mask) = load_mask(&mask_path)?;
        if (mh, mw) != (h, w) {
            return Err(Error::Dataset(format!(
                "{}: mask is {mh}×{mw}, image is {h}×{w}",
                mask_path.display()
            )));
        }
        let orient_path = raster_path(dir, "orient", &row.id);
        let orient = if orient_path.exists() {
            let (oh, ow, o) = load_classes(&orient_path)?;
            if (oh, ow) != (h, w) {
                return Err(Error::Dataset(format!(
                    "{}: orientation map is {oh}×{ow}, image is {h}×{w}",
                    orient_path.display()
                )));
            }
            o
        } else {
            vec![0; h * w]
        };
        let sample = Sample {
            height: h,
            width: w,
            image,
            mask,
            orient,
            centerlines: Vec::new(),
        };
        out.push((row.id, row.split, sample));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthOptions};

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask: Vec<u8> = (0..35).map(|i| (i % 4 == 1) as u8).collect();
        save_mask(&path, &mask, 5, 7).unwrap();
        assert_eq!(load_mask(&path).unwrap(), (5, 7, mask));
        let raw = image::open(&path).unwrap().to_luma8().into_raw();
        assert!(raw.iter().all(|&v| v == 0 || v == 255));
    }

    #[test]
    fn missing_path_names_the_file() {
        let err = load_mask(Path::new("/nonexistent/road-mask.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/road-mask.png"), "{err}");
    }

    #[test]
    fn rgb_white_roads_binarize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let img = RgbImage::from_fn(4, 2, |x, _| match x {
            0 => Rgb([255, 255, 255]),
            1 => Rgb([200, 200, 200]),
            2 => Rgb([100, 100, 100]),
            _ => Rgb([0, 0, 0]),
        });
        img.save(&path).unwrap();
        let (h, w, mask) = load_mask(&path).unwrap();
        assert_eq!((h, w), (2, 4));
        assert_eq!(mask, vec![1, 1, 0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn sixteen_bit_rasters_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let img: ImageBuffer<image::Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 2, vec![0, 1, 2, 65535]).unwrap();
        img.save(&path).unwrap();
        let err = load_mask(&path).unwrap_err();
        assert!(err.to_string().contains("bit depth"), "{err}");
    }

    #[test]
    fn image_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let image: Vec<f32> = (0..3 * 12).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        save_image(&path, &image, 3, 4).unwrap();
        assert_eq!(load_image(&path).unwrap(), (3, 4, image));
    }

    #[test]
    fn class_range_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        save_classes(&path, &[0, 36, 5, 19], 2, 2).unwrap();
        assert_eq!(load_classes(&path).unwrap().2, vec![0, 36, 5, 19]);
        save_classes(&path, &[0, 37, 5, 19], 2, 2).unwrap();
        assert!(load_classes(&path).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(1, 3, 32, &SynthOptions::default()).unwrap();
        let splits = [Split::Train, Split::Val, Split::Train];
        let entries: Vec<(Split, &Sample)> = splits.iter().copied().zip(&samples).collect();
        let ids = write_dataset(dir.path(), &entries).unwrap();
        assert_eq!(ids.len(), 3);
        let train = read_dataset(dir.path(), Some(Split::Train)).unwrap();
        assert_eq!(train.len(), 2);
        for ((id, split, s), orig) in train.iter().zip([&samples[0], &samples[2]]) {
            assert!(ids.contains(id));
            assert_eq!(*split, Split::Train);
            assert_eq!(s.mask, orig.mask);
            assert_eq!(s.orient, orig.orient);
            for (a, b) in s.image.iter().zip(&orig.image) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        assert_eq!(read_dataset(dir.path(), None).unwrap().len(), 3);
    }
}
