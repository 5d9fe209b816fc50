//! Spatial and interaction-space graph reasoning over feature maps.
//!
//! A feature map `X` of shape `B×C×H×W` is viewed per sample as a graph of
//! `L = H·W` pixel nodes with `C` features each.
//!
//! * Spatial reasoning builds a data-dependent row-stochastic `L×L`
//!   similarity `A_S = softmax(φ_S(X) · diag(Λ(X)) · φ_S(X)ᵀ)` and propagates
//!   features with one graph convolution `X_S = ReLU(A_S · X · W_S)`.
//! * Interaction reasoning projects pixels onto `N` latent nodes with `S`
//!   states, `V = θ(X)ᵀ φ_I(X) / L`, reasons with a learned node graph,
//!   `Z = ((I − A_I) V) W_I`, and projects back with the same `θ(X)`:
//!   `X_I = φ'_I(θ(X) Z)`.
//! * The block output fuses both with the input, `ReLU(X_S + X + X_I)`.
//!
//! Internally every per-pixel matrix is kept channel-major (`C×L` rather than
//! `L×C`), so products appear transposed relative to the formulas above.

mod block;
mod pyramid;

pub use block::{SpinBlock, SpinDims};
pub use pyramid::{Aggregation, PyramidResample, SpinPyramid};

use serde::{Deserialize, Serialize};

/// Which reasoning paths a SPIN block carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinVariant {
    /// No graph reasoning at all (plain ConvNet).
    None,
    Spatial,
    Interaction,
    /// Spatial and interaction reasoning fused.
    #[default]
    Full,
}

impl SpinVariant {
    pub const ALL: [SpinVariant; 4] = [
        SpinVariant::None,
        SpinVariant::Spatial,
        SpinVariant::Interaction,
        SpinVariant::Full,
    ];

    pub fn has_spatial(self) -> bool {
        matches!(self, SpinVariant::Spatial | SpinVariant::Full)
    }

    pub fn has_interaction(self) -> bool {
        matches!(self, SpinVariant::Interaction | SpinVariant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpinVariant::None => "none",
            SpinVariant::Spatial => "spatial",
            SpinVariant::Interaction => "interaction",
            SpinVariant::Full => "full",
        }
    }
}

impl std::str::FromStr for SpinVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpinVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| crate::Error::invalid(format!("unknown spin variant `{s}`")))
    }
}

/// Closed-form learnable-parameter count of one block.
///
/// Every 1×1 convolution carries a bias; `A_I` does not.
pub fn block_param_count(dims: SpinDims, variant: SpinVariant) -> usize {
    let SpinDims { channels: c, m, n, s } = dims;
    let spatial = (c * m + m) + (c * m + m) + (c * c + c);
    let interaction = (c * n + n) + (c * s + s) + n * n + (s * s + s) + (s * c + c);
    let mut total = 0;
    if variant.has_spatial() {
        total += spatial;
    }
    if variant.has_interaction() {
        total += interaction;
    }
    total
}

/// Closed-form count for a three-scale pyramid.
pub fn pyramid_param_count(dims: SpinDims, variant: SpinVariant) -> usize {
    3 * block_param_count(dims, variant)
}
