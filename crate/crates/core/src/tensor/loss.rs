use super::tape::{softmax_in_place, Op};
use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// Per-sample soft intersection-over-union `Σpg / (Σp + Σg − Σpg)` of
    /// probabilities `probs[B×…]` against a binary target of equal size.
    /// Returns a length-`B` vector; an empty target with an all-zero
    /// prediction scores 1.
    pub fn soft_iou(&mut self, probs: Var, gt: &[T]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        let p = self.data(probs);
        if gt.len() != p.len() {
            return Err(Error::shape("soft_iou", &shape, &[gt.len()]));
        }
        if let Some(bad) = p.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::invalid(format!(
                "soft_iou: prediction {bad} lies outside [0, 1]"
            )));
        }
        let batch = shape[0];
        let per = p.len() / batch;
        let mut sums = Vec::with_capacity(batch);
        let mut out = Vec::with_capacity(batch);
        for (pc, gc) in p.chunks(per).zip(gt.chunks(per)) {
            let inter: T = pc.iter().zip(gc).map(|(&a, &b)| a * b).sum();
            let union = pc.iter().copied().sum::<T>() + gc.iter().copied().sum::<T>() - inter;
            out.push(if union > T::zero() { inter / union } else { T::one() });
            sums.push((inter, union));
        }
        Ok(self.push(
            vec![batch],
            out,
            Op::SoftIou {
                probs,
                gt: gt.to_vec(),
                sums,
            },
            &[probs],
        ))
    }

    /// Mean categorical cross-entropy of `logits[B×K×H×W]` (softmax over `K`)
    /// against per-pixel class indices, optionally weighted per pixel.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[T]>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [b, k, h, w] = shape[..] else {
            return Err(Error::invalid(format!("cross_entropy: expected B×K×H×W, got {shape:?}")));
        };
        let plane = h * w;
        if targets.len() != b * plane {
            return Err(Error::shape("cross_entropy targets", &shape, &[targets.len()]));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!(
                "cross_entropy: class index {bad} out of range for {k} classes"
            )));
        }
        if let Some(wt) = weights {
            if wt.len() != targets.len() {
                return Err(Error::shape("cross_entropy weights", &shape, &[wt.len()]));
            }
        }
        let ld = self.data(logits);
        let mut probs = vec![T::zero(); ld.len()];
        let mut row = vec![T::zero(); k];
        let mut total = T::zero();
        let mut mass = T::zero();
        for n in 0..b {
            for pix in 0..plane {
                for (c, r) in row.iter_mut().enumerate() {
                    *r = ld[(n * k + c) * plane + pix];
                }
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                let t = targets[n * plane + pix];
                let wv = weights.map_or(T::one(), |wt| wt[n * plane + pix]);
                total += wv * (lse - row[t]);
                mass += wv;
                softmax_in_place(&mut row);
                for (c, &r) in row.iter().enumerate() {
                    probs[(n * k + c) * plane + pix] = r;
                }
            }
        }
        let value = if mass > T::zero() { total / mass } else { T::zero() };
        Ok(self.push(
            vec![1],
            vec![value],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[T]>::to_vec),
                probs,
            },
            &[logits],
        ))
    }
}

pub(crate) fn soft_iou_backward<T: Scalar>(p: &[T], gt: &[T], sums: &[(T, T)], g: &[T], d: &mut [T]) {
    let per = p.len() / sums.len();
    for (n, &(inter, union)) in sums.iter().enumerate() {
        if union <= T::zero() {
            continue;
        }
        let scale = g[n] / (union * union);
        let range = n * per..(n + 1) * per;
        for ((dv, &gv), _) in d[range.clone()].iter_mut().zip(&gt[range.clone()]).zip(&p[range]) {
            // d(I/U)/dp = (g·U − I·(1−g)) / U²
            *dv += scale * (gv * union - inter * (T::one() - gv));
        }
    }
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    shape: &[usize],
    targets: &[usize],
    weights: Option<&[T]>,
    probs: &[T],
    g: T,
    d: &mut [T],
) {
    let (b, k, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mass: T = weights.map_or(T::lit((b * plane) as f64), |w| w.iter().copied().sum());
    if mass <= T::zero() {
        return;
    }
    for n in 0..b {
        for pix in 0..plane {
            let idx = n * plane + pix;
            let wv = weights.map_or(T::one(), |w| w[idx]) * g / mass;
            for c in 0..k {
                let at = (n * k + c) * plane + pix;
                let onehot = if targets[idx] == c { T::one() } else { T::zero() };
                d[at] += wv * (probs[at] - onehot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn soft_iou_examples() {
        let mut tape = Tape::<f64>::new();
        let gt = [1.0, 0.0, 1.0, 1.0];
        let p = tape.constant(Tensor::from_f64(&[1, 4], &gt).unwrap());
        let iou = tape.soft_iou(p, &gt).unwrap();
        assert_eq!(tape.data(iou), &[1.0]);

        let p = tape.constant(Tensor::full(&[1, 7], 0.5));
        let iou = tape.soft_iou(p, &[1.0; 7]).unwrap();
        assert_eq!(tape.data(iou), &[0.5]);

        let p = tape.constant(Tensor::zeros(&[1, 5]));
        let iou = tape.soft_iou(p, &[0.0; 5]).unwrap();
        assert_eq!(tape.data(iou), &[1.0]);
    }

    #[test]
    fn soft_iou_rejects_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_f64(&[1, 2], &[1.5, 0.0]).unwrap());
        assert!(tape.soft_iou(p, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[2, 37, 3, 3]));
        let targets: Vec<usize> = (0..18).map(|i| (i * 5) % 37).collect();
        let ce = tape.cross_entropy(l, &targets, None).unwrap();
        assert!((tape.data(ce)[0] - 37f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn class_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(tape.cross_entropy(l, &[3], None).is_err());
    }
}
