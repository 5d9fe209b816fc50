use super::tape::{accumulate, Op};
use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub(crate) struct BnSaved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Scalar> Tape<T> {
    /// Per-channel normalization of `x[N×C×H×W]`.
    ///
    /// In train mode the batch statistics are used and the updated running
    /// statistics are returned; eval mode normalizes with `stats`.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchNormStats<T>,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchNormStats<T>>)> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::invalid(format!("batchnorm2d: expected N×C×H×W, got {shape:?}")));
        };
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape("batchnorm2d affine", &shape, self.shape(gamma)));
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape("batchnorm2d stats", &shape, &[stats.mean.len(), stats.var.len()]));
        }
        let plane = h * w;
        let count = n * plane;
        let xd = self.data(x);
        let eps = T::lit(BN_EPS);
        let (mean, var) = match mode {
            NormMode::Eval => (stats.mean.clone(), stats.var.clone()),
            NormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for (i, chunk) in xd.chunks(plane).enumerate() {
                    mean[i % c] += chunk.iter().copied().sum::<T>();
                }
                mean.iter_mut().for_each(|m| *m /= T::lit(count as f64));
                for (i, chunk) in xd.chunks(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                var.iter_mut().for_each(|v| *v /= T::lit(count as f64));
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for (i, chunk) in xd.chunks(plane).enumerate() {
            let ch = i % c;
            for &v in chunk {
                let xh = (v - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(gd[ch] * xh + bd[ch]);
            }
        }
        let updated = (mode == NormMode::Train).then(|| {
            let mom = T::lit(BN_MOMENTUM);
            let unbias = if count > 1 {
                T::lit(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            BatchNormStats {
                mean: stats
                    .mean
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &m)| (T::one() - mom) * r + mom * m)
                    .collect(),
                var: stats
                    .var
                    .iter()
                    .zip(&var)
                    .map(|(&r, &v)| (T::one() - mom) * r + mom * v * unbias)
                    .collect(),
            }
        });
        let saved = BnSaved {
            xhat,
            inv_std,
            train: mode == NormMode::Train,
        };
        let y = self.push(
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        );
        Ok((y, updated))
    }
}

pub(crate) fn batchnorm_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    saved: &BnSaved<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let shape = tape.shape(x);
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let count = T::lit((shape[0] * plane) as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (gc, xc)) in g.chunks(plane).zip(saved.xhat.chunks(plane)).enumerate() {
        sum_g[i % c] += gc.iter().copied().sum::<T>();
        sum_gx[i % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
    }
    if tape.value(gamma).requires_grad {
        accumulate(grads, gamma, c, |d| d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s));
    }
    if tape.value(beta).requires_grad {
        accumulate(grads, beta, c, |d| d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s));
    }
    if tape.value(x).requires_grad {
        let gd = tape.data(gamma);
        accumulate(grads, x, g.len(), |d| {
            for (i, ((dc, gc), xc)) in d
                .chunks_mut(plane)
                .zip(g.chunks(plane))
                .zip(saved.xhat.chunks(plane))
                .enumerate()
            {
                let ch = i % c;
                let k = gd[ch] * saved.inv_std[ch];
                if saved.train {
                    let (mg, mgx) = (sum_g[ch] / count, sum_gx[ch] / count);
                    for ((d, &gv), &xh) in dc.iter_mut().zip(gc).zip(xc) {
                        *d += k * (gv - mg - xh * mgx);
                    }
                } else {
                    for (d, &gv) in dc.iter_mut().zip(gc) {
                        *d += k * gv;
                    }
                }
            }
        });
    }
}
