use super::tape::Op;
use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// Precomputed bilinear sampling taps (half-pixel centres, edges clamped).
#[derive(Clone, Debug)]
pub(crate) struct ResizePlan {
    planes: usize,
    in_h: usize,
    in_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, w1 }
        })
        .collect()
}

/// Target extent of resizing `extent` by `scale`.
pub fn resize_extent(extent: usize, scale: f64) -> Result<usize> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("bilinear_resize: invalid scale {scale}")));
    }
    let target = (extent as f64 * scale).floor() as usize;
    if target == 0 {
        return Err(Error::invalid(format!(
            "bilinear_resize: scale {scale} maps extent {extent} to zero"
        )));
    }
    Ok(target)
}

impl<T: Scalar> Tape<T> {
    /// Bilinear resampling of an `N×C×H×W` tensor by one of the pyramid
    /// factors `{1/4, 1/2, 1, 2, 4}`.
    pub fn bilinear_resize(&mut self, x: Var, scale: f64) -> Result<Var> {
        if ![0.25, 0.5, 1.0, 2.0, 4.0].contains(&scale) {
            return Err(Error::invalid(format!(
                "bilinear_resize: unsupported scale {scale}"
            )));
        }
        let shape = self.shape(x);
        if shape.len() != 4 {
            return Err(Error::invalid(format!(
                "bilinear_resize: expected N×C×H×W, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        let (oh, ow) = (resize_extent(h, scale)?, resize_extent(w, scale)?);
        self.resize_to(x, oh, ow)
    }

    /// Bilinear resampling to an explicit `out_h×out_w`.
    pub fn resize_to(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::invalid(format!(
                "bilinear_resize: expected N×C×H×W, got {shape:?}"
            )));
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize: zero target extent"));
        }
        let plan = ResizePlan {
            planes: n * c,
            in_h: h,
            in_w: w,
            rows: taps(h, out_h),
            cols: taps(w, out_w),
        };
        let xd = self.data(x);
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for p in 0..plan.planes {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for r in &plan.rows {
                let (a, b) = (&src[r.i0 * w..(r.i0 + 1) * w], &src[r.i1 * w..(r.i1 + 1) * w]);
                let (ry0, ry1) = (T::lit(1.0 - r.w1), T::lit(r.w1));
                for cl in &plan.cols {
                    let (cx0, cx1) = (T::lit(1.0 - cl.w1), T::lit(cl.w1));
                    let top = a[cl.i0] * cx0 + a[cl.i1] * cx1;
                    let bottom = b[cl.i0] * cx0 + b[cl.i1] * cx1;
                    out.push(top * ry0 + bottom * ry1);
                }
            }
        }
        Ok(self.push(vec![n, c, out_h, out_w], out, Op::Resize { x, plan }, &[x]))
    }
}

pub(crate) fn backward<T: Scalar>(plan: &ResizePlan, g: &[T], d: &mut [T]) {
    let (h, w) = (plan.in_h, plan.in_w);
    let out_plane = plan.rows.len() * plan.cols.len();
    for p in 0..plan.planes {
        let gp = &g[p * out_plane..(p + 1) * out_plane];
        let dp = &mut d[p * h * w..(p + 1) * h * w];
        for (oy, r) in plan.rows.iter().enumerate() {
            let (ry0, ry1) = (T::lit(1.0 - r.w1), T::lit(r.w1));
            for (ox, cl) in plan.cols.iter().enumerate() {
                let gv = gp[oy * plan.cols.len() + ox];
                let (cx0, cx1) = (T::lit(1.0 - cl.w1), T::lit(cl.w1));
                dp[r.i0 * w + cl.i0] += gv * ry0 * cx0;
                dp[r.i0 * w + cl.i1] += gv * ry0 * cx1;
                dp[r.i1 * w + cl.i0] += gv * ry1 * cx0;
                dp[r.i1 * w + cl.i1] += gv * ry1 * cx1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_map_stays_constant_at_every_scale() {
        for scale in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::full(&[1, 2, 8, 8], 0.75));
            let y = tape.bilinear_resize(x, scale).unwrap();
            let e = (8.0 * scale) as usize;
            assert_eq!(tape.shape(y), &[1, 2, e, e]);
            assert!(tape.data(y).iter().all(|&v| (v - 0.75).abs() < 1e-15));
        }
    }

    #[test]
    fn single_pixel_upscales_to_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1], 3.0));
        let y = tape.bilinear_resize(x, 2.0).unwrap();
        assert_eq!(tape.data(y), &[3.0; 4]);
    }

    #[test]
    fn zero_target_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.bilinear_resize(x, 0.25).is_err());
        assert!(tape.bilinear_resize(x, 3.0).is_err());
    }

    #[test]
    fn half_scale_averages_pairs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]).unwrap());
        let y = tape.bilinear_resize(x, 0.5).unwrap();
        assert_eq!(tape.data(y), &[4.0]);
    }
}
