use rand::Rng;

use super::residual::ResidualBlock;
use super::{ParamStore, Session};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

#[derive(Clone, Debug)]
struct Level {
    skip: ResidualBlock,
    down: ResidualBlock,
    up: ResidualBlock,
}

/// Recursive encoder–decoder: at each of `depth` levels the input is split
/// into a same-scale skip branch and a max-pooled branch that recurses, is
/// bilinearly upsampled, and is added back onto the skip.
#[derive(Clone, Debug)]
pub struct Hourglass {
    pub depth: usize,
    pub channels: usize,
    levels: Vec<Level>,
    bottom: ResidualBlock,
}

impl Hourglass {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("hourglass depth must be at least 1"));
        }
        let levels = (0..depth)
            .map(|l| Level {
                skip: ResidualBlock::new(store, &format!("{name}.l{l}.skip"), channels, channels, rng),
                down: ResidualBlock::new(store, &format!("{name}.l{l}.down"), channels, channels, rng),
                up: ResidualBlock::new(store, &format!("{name}.l{l}.up"), channels, channels, rng),
            })
            .collect();
        let bottom = ResidualBlock::new(store, &format!("{name}.bottom"), channels, channels, rng);
        Ok(Hourglass {
            depth,
            channels,
            levels,
            bottom,
        })
    }

    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        for &extent in &shape[2..] {
            if extent % self.divisor() != 0 {
                return Err(Error::Indivisible {
                    op: "hourglass_forward",
                    extent,
                    divisor: self.divisor(),
                });
            }
        }
        self.level(s, 0, x)
    }

    fn level<T: Scalar>(&self, s: &mut Session<T>, l: usize, x: Var) -> Result<Var> {
        let lv = &self.levels[l];
        let skip = lv.skip.forward(s, x)?;
        let low = s.tape.maxpool2d(x, 2)?;
        let low = lv.down.forward(s, low)?;
        let low = if l + 1 < self.depth {
            self.level(s, l + 1, low)?
        } else {
            self.bottom.forward(s, low)?
        };
        let low = lv.up.forward(s, low)?;
        let up = s.tape.bilinear_resize(low, 2.0)?;
        s.tape.add(skip, up)
    }
}
