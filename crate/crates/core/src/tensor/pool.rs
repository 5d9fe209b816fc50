use super::tape::{accumulate, Op};
use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// Non-overlapping max pooling with window and stride `k`.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::invalid(format!("maxpool2d: expected N×C×H×W, got {shape:?}")));
        };
        for extent in [h, w] {
            if k == 0 || extent % k != 0 {
                return Err(Error::Indivisible {
                    op: "maxpool2d",
                    extent,
                    divisor: k,
                });
            }
        }
        let (oh, ow) = (h / k, w / k);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = base + (oy * k + dy) * w + ox * k + dx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(vec![n, c, oh, ow], out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Spatial mean per channel: `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::invalid(format!(
                "global_avg_pool: expected N×C×H×W, got {shape:?}"
            )));
        };
        let plane = h * w;
        let inv = T::lit(1.0 / plane as f64);
        let out = self
            .data(x)
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(vec![n, c], out, Op::GlobalAvgPool(x), &[x]))
    }
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(tape: &Tape<T>, x: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let shape = tape.shape(x);
    let plane = shape[2] * shape[3];
    let inv = T::lit(1.0 / plane as f64);
    accumulate(grads, x, tape.value(x).numel(), |d| {
        for (chunk, &gv) in d.chunks_mut(plane).zip(g) {
            chunk.iter_mut().for_each(|v| *v += gv * inv);
        }
    });
}
