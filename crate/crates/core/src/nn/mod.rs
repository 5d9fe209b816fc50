//! Building blocks: parameter storage, convolutional layers, residual and
//! hourglass modules.

mod hourglass;
mod layers;
mod params;
mod residual;

pub use hourglass::Hourglass;
pub use layers::{he_normal, BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d};
pub use params::{ParamGrads, ParamId, ParamKind, ParamStore, Session};
pub use residual::ResidualBlock;

