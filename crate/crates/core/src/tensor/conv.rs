use super::tape::{accumulate, Op};
use super::{gemm, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Geometry of a 2-D cross-correlation from an `in_h×in_w` image to an
/// `out_h×out_w` one. Transposed convolution reuses it with the roles of the
/// two images swapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let span_h = in_h + 2 * padding;
        let span_w = in_w + 2 * padding;
        if stride == 0 || span_h < kernel || span_w < kernel {
            return Err(Error::invalid(format!(
                "conv2d: kernel {kernel} with stride {stride} and padding {padding} does not fit a {in_h}×{in_w} input"
            )));
        }
        Ok(ConvGeom {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            padding,
            out_h: (span_h - kernel) / stride + 1,
            out_w: (span_w - kernel) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_h * self.in_w
    }

    /// Unfolds one `channels×in_h×in_w` image into a `(C·k·k)×(out_h·out_w)` matrix.
    pub(crate) fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ol = self.out_len();
        for c in 0..self.channels {
            let plane = &img[c * self.in_len()..(c + 1) * self.in_len()];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ol..(row + 1) * ol];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters columns back onto the image, accumulating.
    pub(crate) fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ol = self.out_len();
        for c in 0..self.channels {
            let plane = &mut img[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ol..(row + 1) * ol];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * s + kj) as isize - p;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn nchw(tape_shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *tape_shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::invalid(format!(
            "{op}: expected an N×C×H×W tensor, got shape {tape_shape:?}"
        ))),
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[c % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(g: &[T], channels: usize, plane: usize, d: &mut [T]) {
    for (i, chunk) in g.chunks(plane).enumerate() {
        d[i % channels] += chunk.iter().copied().sum::<T>();
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x[N×Cin×H×W]` with `w[Cout×Cin×k×k]`, `k ∈ {1,3,7}`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = nchw(self.shape(x), "conv2d")?;
        let (cout, wcin, kh, kw) = nchw(self.shape(w), "conv2d weight")?;
        if kh != kw || ![1, 3, 7].contains(&kh) || !(stride == 1 || stride == 2) {
            return Err(Error::invalid(format!(
                "conv2d: unsupported kernel {kh}×{kw} with stride {stride}"
            )));
        }
        if wcin != cin {
            return Err(Error::shape("conv2d", self.shape(x), self.shape(w)));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(Error::shape("conv2d bias", self.shape(w), self.shape(b)));
            }
        }
        let geom = ConvGeom::new(cin, h, wd, kh, stride, padding)?;
        let (rows, ol) = (geom.col_rows(), geom.out_len());
        let xd = self.data(x);
        let wdat = self.data(w);
        let mut out = vec![T::zero(); n * cout * ol];
        let mut saved = Vec::new();
        for (i, o) in out.chunks_mut(cout * ol).enumerate() {
            let img = &xd[i * cin * h * wd..(i + 1) * cin * h * wd];
            if geom.is_pointwise() {
                gemm(cout, cin, ol, wdat, false, img, false, o, false);
            } else {
                let mut cols = vec![T::zero(); rows * ol];
                geom.im2col(img, &mut cols);
                gemm(cout, rows, ol, wdat, false, &cols, false, o, false);
                saved.push(cols);
            }
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.data(b), ol);
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            vec![n, cout, geom.out_h, geom.out_w],
            out,
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols: saved,
            },
            &inputs,
        ))
    }

    /// Stride-2 transposed convolution doubling the spatial extent;
    /// `w[Cin×Cout×k×k]` with `k ∈ {2,4}` (padding `(k-2)/2`).
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        if stride != 2 {
            return Err(Error::invalid(format!(
                "conv_transpose2d: unsupported stride {stride} (only 2)"
            )));
        }
        let (n, cin, h, wd) = nchw(self.shape(x), "conv_transpose2d")?;
        let (wcin, cout, kh, kw) = nchw(self.shape(w), "conv_transpose2d weight")?;
        if kh != kw || !(kh == 2 || kh == 4) {
            return Err(Error::invalid(format!(
                "conv_transpose2d: unsupported kernel {kh}×{kw} (2 or 4)"
            )));
        }
        if wcin != cin {
            return Err(Error::shape("conv_transpose2d", self.shape(x), self.shape(w)));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(Error::shape("conv_transpose2d bias", self.shape(w), self.shape(b)));
            }
        }
        // Geometry of the adjoint convolution, from the 2H×2W output down to H×W.
        let geom = ConvGeom::new(cout, 2 * h, 2 * wd, kh, 2, (kh - 2) / 2)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        let (rows, il) = (geom.col_rows(), h * wd);
        let xd = self.data(x);
        let wdat = self.data(w);
        let plane = 4 * h * wd;
        let mut out = vec![T::zero(); n * cout * plane];
        let mut cols = vec![T::zero(); rows * il];
        for (i, o) in out.chunks_mut(cout * plane).enumerate() {
            let img = &xd[i * cin * il..(i + 1) * cin * il];
            gemm(rows, cin, il, wdat, true, img, false, &mut cols, false);
            geom.col2im(&cols, o);
        }
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.data(b), plane);
        }
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            vec![n, cout, 2 * h, 2 * wd],
            out,
            Op::ConvTranspose2d { x, w, bias, geom },
            &inputs,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    geom: &ConvGeom,
    cols: &[Vec<T>],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (cin, cout) = (geom.channels, tape.shape(w)[0]);
    let (rows, ol, il) = (geom.col_rows(), geom.out_len(), geom.in_len());
    let n = tape.shape(x)[0];
    let xd = tape.data(x);
    if let Some(b) = bias.filter(|b| tape.value(*b).requires_grad) {
        accumulate(grads, b, cout, |d| bias_grad(g, cout, ol, d));
    }
    if tape.value(w).requires_grad {
        accumulate(grads, w, cout * rows, |dw| {
            for i in 0..n {
                let go = &g[i * cout * ol..(i + 1) * cout * ol];
                let c = if geom.is_pointwise() {
                    &xd[i * cin * il..(i + 1) * cin * il]
                } else {
                    &cols[i][..]
                };
                gemm(cout, ol, rows, go, false, c, true, dw, true);
            }
        });
    }
    if tape.value(x).requires_grad {
        let wd = tape.data(w);
        accumulate(grads, x, n * cin * il, |dx| {
            let mut dcols = vec![T::zero(); rows * ol];
            for i in 0..n {
                let go = &g[i * cout * ol..(i + 1) * cout * ol];
                let dst = &mut dx[i * cin * il..(i + 1) * cin * il];
                if geom.is_pointwise() {
                    gemm(rows, cout, ol, wd, true, go, false, dst, true);
                } else {
                    gemm(rows, cout, ol, wd, true, go, false, &mut dcols, false);
                    geom.col2im(&dcols, dst);
                }
            }
        });
    }
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    geom: &ConvGeom,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (n, cin) = (tape.shape(x)[0], tape.shape(x)[1]);
    let cout = geom.channels;
    let (rows, il, plane) = (geom.col_rows(), geom.out_len(), geom.in_len());
    let xd = tape.data(x);
    if let Some(b) = bias.filter(|b| tape.value(*b).requires_grad) {
        accumulate(grads, b, cout, |d| bias_grad(g, cout, plane, d));
    }
    let need_w = tape.value(w).requires_grad;
    let need_x = tape.value(x).requires_grad;
    if !need_w && !need_x {
        return;
    }
    // The adjoint of col2im is im2col: the forward pattern of an ordinary convolution.
    let gcols: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut c = vec![T::zero(); rows * il];
            geom.im2col(&g[i * cout * plane..(i + 1) * cout * plane], &mut c);
            c
        })
        .collect();
    if need_w {
        accumulate(grads, w, cin * rows, |dw| {
            for (i, gc) in gcols.iter().enumerate() {
                let img = &xd[i * cin * il..(i + 1) * cin * il];
                gemm(cin, il, rows, img, false, gc, true, dw, true);
            }
        });
    }
    if need_x {
        let wd = tape.data(w);
        accumulate(grads, x, n * cin * il, |dx| {
            for (i, gc) in gcols.iter().enumerate() {
                let dst = &mut dx[i * cin * il..(i + 1) * cin * il];
                gemm(cin, rows, il, wd, false, gc, false, dst, true);
            }
        });
    }
}
