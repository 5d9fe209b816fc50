use rand::Rng;

use super::layers::{BatchNorm2d, Conv2d};
use super::{ParamStore, Session};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Post-activation residual block: `ReLU(BN(conv(ReLU(BN(conv x)))) + skip(x))`
/// with two 3×3 convolutions and an identity skip (1×1 projection when the
/// channel count changes).
///
/// With zeroed convolution weights the residual branch is exactly zero, so on
/// non-negative input the block returns its input unchanged.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub cin: usize,
    pub cout: usize,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    skip: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            cin,
            cout,
            conv1: Conv2d::same(store, &format!("{name}.conv1"), cin, cout, 3, false, rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv2d::same(store, &format!("{name}.conv2"), cout, cout, 3, false, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
            skip: (cin != cout).then(|| Conv2d::same(store, &format!("{name}.skip"), cin, cout, 1, true, rng)),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let c = s.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.cin {
            return Err(Error::shape("residual_forward", s.tape.shape(x), &[self.cin]));
        }
        let y = self.conv1.forward(s, x)?;
        let y = self.bn1.forward(s, y)?;
        let y = s.tape.relu(y);
        let y = self.conv2.forward(s, y)?;
        let y = self.bn2.forward(s, y)?;
        let skip = match &self.skip {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        let y = s.tape.add(y, skip)?;
        Ok(s.tape.relu(y))
    }

    /// Zeroes both 3×3 convolutions.
    pub fn zero_residual<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.conv1.zero(store);
        self.conv2.zero(store);
    }
}
