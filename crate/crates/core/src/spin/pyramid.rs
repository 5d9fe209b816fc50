use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SpinBlock, SpinDims, SpinVariant};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::tensor::{Scalar, Var};

/// How the three scale branches are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// How a coarse branch returns to full resolution.
///
/// `Residual` upsamples only the change a block makes at its scale,
/// `X + up(spin(down X) − down X)`, so a block that leaves its input alone
/// contributes exactly `X`. `Direct` upsamples the block output itself,
/// `up(spin(down X))`, which blurs `X` through the resampling round trip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PyramidResample {
    #[default]
    Residual,
    Direct,
}

/// SPIN blocks at scales 1, 1/2 and 1/4 with independent weights.
#[derive(Clone, Debug)]
pub struct SpinPyramid {
    pub blocks: [SpinBlock; 3],
    pub aggregation: Aggregation,
    pub resample: PyramidResample,
}

const SCALES: [f64; 3] = [1.0, 0.5, 0.25];

impl SpinPyramid {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: SpinDims,
        variant: SpinVariant,
        aggregation: Aggregation,
        resample: PyramidResample,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let b1 = SpinBlock::new(store, &format!("{name}.s1"), dims, variant, rng)?;
        let b2 = SpinBlock::new(store, &format!("{name}.s2"), dims, variant, rng)?;
        let b4 = SpinBlock::new(store, &format!("{name}.s4"), dims, variant, rng)?;
        Ok(SpinPyramid {
            blocks: [b1, b2, b4],
            aggregation,
            resample,
        })
    }

    pub fn zero_output<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for b in &self.blocks {
            b.zero_output(store);
        }
    }

    pub fn zero_interaction_output<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for b in &self.blocks {
            b.zero_interaction_output(store);
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        let (h, w) = match shape[..] {
            [_, _, h, w] => (h, w),
            _ => return Err(Error::shape("spin_pyramid", &shape, &[self.blocks[0].dims.channels])),
        };
        for extent in [h, w] {
            if extent % 4 != 0 {
                return Err(Error::Indivisible {
                    op: "spin_pyramid",
                    extent,
                    divisor: 4,
                });
            }
        }
        match self.resample {
            PyramidResample::Residual => self.forward_residual(s, x, h, w),
            PyramidResample::Direct => self.forward_direct(s, x, h, w),
        }
    }

    fn forward_residual<T: Scalar>(&self, s: &mut Session<T>, x: Var, h: usize, w: usize) -> Result<Var> {
        let mut delta: Option<Var> = None;
        for (block, scale) in self.blocks.iter().zip(SCALES) {
            let d = if scale == 1.0 {
                let y = block.forward(s, x)?;
                s.tape.sub(y, x)?
            } else {
                let xd = s.tape.bilinear_resize(x, scale)?;
                let y = block.forward(s, xd)?;
                let d = s.tape.sub(y, xd)?;
                s.tape.resize_to(d, h, w)?
            };
            delta = Some(match delta {
                Some(acc) => s.tape.add(acc, d)?,
                None => d,
            });
        }
        let delta = delta.expect("three branches");
        let out = match self.aggregation {
            Aggregation::Mean => {
                let d = s.tape.scale(delta, T::lit(1.0 / 3.0));
                s.tape.add(x, d)?
            }
            Aggregation::Sum => {
                let x3 = s.tape.scale(x, T::lit(3.0));
                s.tape.add(x3, delta)?
            }
        };
        Ok(s.tape.relu(out))
    }

    fn forward_direct<T: Scalar>(&self, s: &mut Session<T>, x: Var, h: usize, w: usize) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (block, scale) in self.blocks.iter().zip(SCALES) {
            let y = if scale == 1.0 {
                block.forward(s, x)?
            } else {
                let xd = s.tape.bilinear_resize(x, scale)?;
                let y = block.forward(s, xd)?;
                s.tape.resize_to(y, h, w)?
            };
            acc = Some(match acc {
                Some(a) => s.tape.add(a, y)?,
                None => y,
            });
        }
        let mut out = acc.expect("three branches");
        if self.aggregation == Aggregation::Mean {
            out = s.tape.scale(out, T::lit(1.0 / 3.0));
        }
        Ok(s.tape.relu(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{NormMode, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pyramid(c: usize, aggregation: Aggregation, resample: PyramidResample) -> (ParamStore<f64>, SpinPyramid) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SpinPyramid::new(
            &mut store,
            "pyr",
            SpinDims::for_channels(c),
            SpinVariant::Full,
            aggregation,
            resample,
            &mut rng,
        )
        .unwrap();
        (store, p)
    }

    fn non_negative(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 37) % 11) as f64 * 0.13).collect()).unwrap()
    }

    fn run(store: &ParamStore<f64>, p: &SpinPyramid, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut s = Session::new(store, NormMode::Eval);
        let xv = s.tape.constant(x.clone());
        let y = p.forward(&mut s, xv)?;
        Ok(s.tape.value(y).clone())
    }

    #[test]
    fn zero_output_mean_pyramid_is_identity() {
        let (mut store, p) = pyramid(4, Aggregation::Mean, PyramidResample::Residual);
        p.zero_output(&mut store);
        let x = non_negative(&[2, 4, 8, 8]);
        assert_eq!(run(&store, &p, &x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_output_sum_pyramid_triples() {
        let (mut store, p) = pyramid(4, Aggregation::Sum, PyramidResample::Residual);
        p.zero_output(&mut store);
        let x = non_negative(&[1, 4, 8, 8]);
        let y = run(&store, &p, &x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 3.0 * b);
        }
    }

    #[test]
    fn direct_resampling_keeps_constant_maps() {
        let (mut store, p) = pyramid(4, Aggregation::Mean, PyramidResample::Direct);
        p.zero_output(&mut store);
        let x = Tensor::full(&[1, 4, 8, 8], 0.75);
        for v in run(&store, &p, &x).unwrap().data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let (store, p) = pyramid(4, Aggregation::Mean, PyramidResample::Residual);
        let err = run(&store, &p, &non_negative(&[1, 4, 6, 8])).unwrap_err();
        assert!(matches!(err, Error::Indivisible { divisor: 4, .. }), "{err}");
    }

    #[test]
    fn pyramid_preserves_shape() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = SpinPyramid::new(
            &mut store,
            "pyr",
            SpinDims::for_channels(64),
            SpinVariant::Full,
            Aggregation::Mean,
            PyramidResample::Residual,
            &mut rng,
        )
        .unwrap();
        let mut s = Session::new(&store, NormMode::Eval);
        let x = s.tape.constant(Tensor::full(&[1, 64, 64, 64], 0.5f32));
        let y = p.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(y), &[1, 64, 64, 64]);
    }
}
