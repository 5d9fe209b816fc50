use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{Aggregation, PyramidResample, SpinDims, SpinVariant};

/// 36 orientation bins plus background.
pub const ORIENTATION_CLASSES: usize = 37;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_width: usize,
    pub hourglass_depth: usize,
    pub hourglasses: usize,
    pub spin: SpinVariant,
    /// `M = C / spin_m_div`, and likewise for `N` and `S`.
    pub spin_m_div: usize,
    pub spin_n_div: usize,
    pub spin_s_div: usize,
    pub aggregation: Aggregation,
    pub resample: PyramidResample,
    /// Start every SPIN block with `φ'_I = 0`, so the interaction path
    /// contributes nothing until trained.
    pub spin_quiet_init: bool,
    /// Transpose-convolution kernel of the decoder (2 or 4).
    pub upsample_kernel: usize,
    pub input_size: usize,
    pub orientation_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_width: 64,
            hourglass_depth: 4,
            hourglasses: 2,
            spin: SpinVariant::Full,
            spin_m_div: 2,
            spin_n_div: 4,
            spin_s_div: 2,
            aggregation: Aggregation::Mean,
            resample: PyramidResample::Residual,
            spin_quiet_init: true,
            upsample_kernel: 4,
            input_size: 256,
            orientation_classes: ORIENTATION_CLASSES,
        }
    }
}

impl NetworkConfig {
    pub fn spin_dims(&self) -> SpinDims {
        SpinDims::with_divisors(self.base_width, self.spin_m_div, self.spin_n_div, self.spin_s_div)
    }

    pub fn has_spin(&self) -> bool {
        self.spin != SpinVariant::None
    }

    /// Input extents must be multiples of this: 4 for the stem, `2^depth`
    /// more for the hourglasses, and 16 overall when the pyramid runs at H/4.
    pub fn input_divisor(&self) -> usize {
        let hg = if self.hourglasses > 0 { 4 << self.hourglass_depth } else { 4 };
        let spin = if self.has_spin() { 16 } else { 4 };
        hg.max(spin)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_width < 4 || self.base_width % 4 != 0 {
            return bad(format!("base_width must be a positive multiple of 4, got {}", self.base_width));
        }
        if self.hourglass_depth == 0 || self.hourglass_depth > 8 {
            return bad(format!("hourglass_depth must be in 1..=8, got {}", self.hourglass_depth));
        }
        if ![2, 4].contains(&self.upsample_kernel) {
            return bad(format!("upsample_kernel must be 2 or 4, got {}", self.upsample_kernel));
        }
        if [self.spin_m_div, self.spin_n_div, self.spin_s_div].contains(&0) {
            return bad("spin dimension divisors must be positive".into());
        }
        if self.orientation_classes != ORIENTATION_CLASSES {
            return bad(format!(
                "orientation_classes must be {ORIENTATION_CLASSES}, got {}",
                self.orientation_classes
            ));
        }
        let div = self.input_divisor();
        if self.input_size == 0 || self.input_size % div != 0 {
            return bad(format!("input_size {} must be a positive multiple of {div}", self.input_size));
        }
        Ok(())
    }
}
