use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlapping square patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileSpec {
    pub patch: usize,
    pub overlap: usize,
    /// Rasters are zero-padded to at least this extent before tiling.
    pub pad_to: Option<usize>,
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            patch: 512,
            overlap: 256,
            pad_to: None,
        }
    }
}

impl TileSpec {
    pub fn new(patch: usize, overlap: usize) -> Result<Self> {
        let spec = TileSpec {
            patch,
            overlap,
            pad_to: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.overlap >= self.patch {
            return Err(Error::invalid(format!(
                "tile spec needs 0 ≤ overlap < patch, got patch {} overlap {}",
                self.patch, self.overlap
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.patch - self.overlap
    }

    /// Extent after padding: at least the patch and `pad_to`.
    pub fn padded_extent(&self, extent: usize) -> usize {
        extent.max(self.patch).max(self.pad_to.unwrap_or(0))
    }
}

/// Patch origins along one axis of a (padded) extent: `0, stride, …`, plus a
/// final origin flush with the far edge when the stride does not land there.
pub fn tile_positions(extent: usize, spec: &TileSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if extent < spec.patch {
        return Err(Error::invalid(format!(
            "extent {extent} is smaller than patch {}",
            spec.patch
        )));
    }
    let last = extent - spec.patch;
    let mut pos: Vec<usize> = (0..=last).step_by(spec.stride()).collect();
    if *pos.last().expect("0 is always a position") != last {
        pos.push(last);
    }
    Ok(pos)
}

/// Zero-pads a `planes×height×width` raster at the bottom and right.
pub fn pad_to<T: Copy + Default>(
    data: &[T],
    planes: usize,
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Result<Vec<T>> {
    if data.len() != planes * height * width || new_height < height || new_width < width {
        return Err(Error::invalid(format!(
            "cannot pad {planes}×{height}×{width} ({} values) to {new_height}×{new_width}",
            data.len()
        )));
    }
    let mut out = vec![T::default(); planes * new_height * new_width];
    for p in 0..planes {
        for r in 0..height {
            let src = (p * height + r) * width;
            let dst = (p * new_height + r) * new_width;
            out[dst..dst + width].copy_from_slice(&data[src..src + width]);
        }
    }
    Ok(out)
}

/// One patch cut from a padded raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile<T> {
    pub y: usize,
    pub x: usize,
    /// `planes×patch×patch`.
    pub data: Vec<T>,
}

/// Pads a `planes×height×width` raster as `spec` requires and cuts it into
/// patches, row-major by origin.
pub fn tile<T: Copy + Default>(
    data: &[T],
    planes: usize,
    height: usize,
    width: usize,
    spec: &TileSpec,
) -> Result<Vec<Tile<T>>> {
    let (ph, pw) = (spec.padded_extent(height), spec.padded_extent(width));
    let padded = pad_to(data, planes, height, width, ph, pw)?;
    let p = spec.patch;
    let rows = tile_positions(ph, spec)?;
    let cols = tile_positions(pw, spec)?;
    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &y in &rows {
        for &x in &cols {
            let mut patch = Vec::with_capacity(planes * p * p);
            for k in 0..planes {
                for r in 0..p {
                    let start = (k * ph + y + r) * pw + x;
                    patch.extend_from_slice(&padded[start..start + p]);
                }
            }
            tiles.push(Tile { y, x, data: patch });
        }
    }
    Ok(tiles)
}

/// Half-open span of the padded axis owned by each position: boundaries sit
/// at the middle of each overlap, so every tile contributes its central part.
fn ownership(positions: &[usize], patch: usize, extent: usize) -> Vec<(usize, usize)> {
    let mut bounds = vec![0];
    for pair in positions.windows(2) {
        bounds.push((pair[1] + pair[0] + patch) / 2);
    }
    bounds.push(extent);
    bounds.windows(2).map(|b| (b[0], b[1])).collect()
}

/// Reassembles patches produced by [`tile`] into a `planes×height×width`
/// raster, each output pixel taken from the tile that owns it.
pub fn stitch<T: Copy + Default>(
    tiles: &[Tile<T>],
    planes: usize,
    height: usize,
    width: usize,
    spec: &TileSpec,
) -> Result<Vec<T>> {
    let (ph, pw) = (spec.padded_extent(height), spec.padded_extent(width));
    let p = spec.patch;
    let rows = tile_positions(ph, spec)?;
    let cols = tile_positions(pw, spec)?;
    if tiles.len() != rows.len() * cols.len() || tiles.iter().any(|t| t.data.len() != planes * p * p) {
        return Err(Error::invalid(format!(
            "expected {} tiles of {planes}×{p}×{p}",
            rows.len() * cols.len()
        )));
    }
    let row_own = ownership(&rows, p, ph);
    let col_own = ownership(&cols, p, pw);
    let mut out = vec![T::default(); planes * height * width];
    for (i, &(r0, r1)) in row_own.iter().enumerate() {
        for (j, &(c0, c1)) in col_own.iter().enumerate() {
            let t = &tiles[i * cols.len() + j];
            if (t.y, t.x) != (rows[i], cols[j]) {
                return Err(Error::invalid("tiles are not in row-major origin order"));
            }
            for k in 0..planes {
                for r in r0..r1.min(height) {
                    for c in c0..c1.min(width) {
                        out[(k * height + r) * width + c] = t.data[(k * p + r - t.y) * p + c - t.x];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_grid_has_25_patches() {
        let spec = TileSpec::default();
        assert_eq!(tile_positions(1536, &spec).unwrap(), vec![0, 256, 512, 768, 1024]);
        let raster = vec![0u8; 1536 * 1536];
        assert_eq!(tile(&raster, 1, 1536, 1536, &spec).unwrap().len(), 25);
    }

    #[test]
    fn no_overlap_grid() {
        let spec = TileSpec::new(512, 0).unwrap();
        let raster = vec![0u8; 1024 * 1024];
        assert_eq!(tile(&raster, 1, 1024, 1024, &spec).unwrap().len(), 4);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        assert!(TileSpec::new(0, 0).is_err());
        assert!(TileSpec::new(64, 64).is_err());
        assert!(TileSpec::new(64, 80).is_err());
    }

    #[test]
    fn padding_band_is_zero() {
        let spec = TileSpec {
            pad_to: Some(1536),
            ..TileSpec::default()
        };
        let mask = vec![1u8; 1500 * 1500];
        let image = vec![0.5f32; 3 * 1500 * 1500];
        assert_eq!(spec.padded_extent(1500), 1536);
        let padded = pad_to(&mask, 1, 1500, 1500, 1536, 1536).unwrap();
        let padded_img = pad_to(&image, 3, 1500, 1500, 1536, 1536).unwrap();
        for r in 0..1536 {
            for c in 0..1536 {
                let inside = r < 1500 && c < 1500;
                assert_eq!(padded[r * 1536 + c], inside as u8);
                for k in 0..3 {
                    let v = padded_img[(k * 1536 + r) * 1536 + c];
                    assert_eq!(v, if inside { 0.5 } else { 0.0 });
                }
            }
        }
        assert_eq!(tile(&mask, 1, 1500, 1500, &spec).unwrap().len(), 25);
    }

    #[test]
    fn paper_grid_round_trips() {
        let spec = TileSpec {
            pad_to: Some(1536),
            ..TileSpec::default()
        };
        let (h, w) = (1500, 1400);
        let raster: Vec<u16> = (0..h * w).map(|i| (i % 65521) as u16).collect();
        let tiles = tile(&raster, 1, h, w, &spec).unwrap();
        assert_eq!(stitch(&tiles, 1, h, w, &spec).unwrap(), raster);
    }

    #[test]
    fn stitch_takes_tile_centres() {
        // Tag every tile with its index; the seam must fall mid-overlap.
        let spec = TileSpec::new(8, 4).unwrap();
        let mut tiles = tile(&[0u8; 16 * 16], 1, 16, 16, &spec).unwrap();
        for (i, t) in tiles.iter_mut().enumerate() {
            t.data.iter_mut().for_each(|v| *v = i as u8);
        }
        let out = stitch(&tiles, 1, 16, 16, &spec).unwrap();
        let row0: Vec<u8> = out[..16].to_vec();
        assert_eq!(row0, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2]);
    }

    proptest! {
        #[test]
        fn tile_then_stitch_is_exact(
            h in 1usize..70,
            w in 1usize..70,
            patch in 4usize..24,
            overlap_frac in 0.0f64..0.95,
            planes in 1usize..4,
        ) {
            let overlap = ((patch as f64) * overlap_frac) as usize;
            let spec = TileSpec::new(patch, overlap.min(patch - 1)).unwrap();
            let raster: Vec<u32> = (0..planes * h * w).map(|i| i as u32 * 7 + 1).collect();
            let tiles = tile(&raster, planes, h, w, &spec).unwrap();
            let ph = spec.padded_extent(h);
            let pw = spec.padded_extent(w);
            let covered_rows = tile_positions(ph, &spec).unwrap();
            prop_assert_eq!(*covered_rows.last().unwrap() + patch, ph);
            prop_assert_eq!(tiles.len(), covered_rows.len() * tile_positions(pw, &spec).unwrap().len());
            prop_assert_eq!(stitch(&tiles, planes, h, w, &spec).unwrap(), raster);
        }
    }
}
