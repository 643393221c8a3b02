use rayon::prelude::*;

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::{image_shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 kernels at stride 1 without padding read the input as-is.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    let dst = &mut cols[row..row + p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.w..(y as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            *v = if xx < 0 || xx >= self.w as isize {
                                0.0
                            } else {
                                src[xx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    let src = &cols[row..row + p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let base = y as usize * self.w;
                        for ox in 0..self.ow {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            if xx >= 0 && xx < self.w as isize {
                                plane[base + xx as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, ConvGeometry)> {
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "conv2d stride must be positive".into(),
        ));
    }
    let (n, c_in, h, w) = input.image_dims("conv2d")?;
    let &[c_out, kc, kh, kw] = kernel.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel must be [C_out,C_in,kH,kW], got {:?}",
                kernel.shape()
            ),
        ));
    };
    if kc != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("C_in: input has {c_in} channels, kernel expects {kc}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("C_out: bias shape {:?}, expected [{c_out}]", bias.shape()),
        ));
    }
    if kh > h + 2 * pad {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kH: kernel height {kh} exceeds padded height {}",
                h + 2 * pad
            ),
        ));
    }
    if kw > w + 2 * pad {
        return Err(Error::shape(
            "conv2d",
            format!("kW: kernel width {kw} exceeds padded width {}", w + 2 * pad),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok((
        n,
        ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

/// 2-D cross-correlation with zero padding, plus a per-channel bias.
///
/// Accepts `[C,H,W]` or `[N,C,H,W]` input and returns the same form.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, g) = geometry(input, kernel, bias, stride, pad)?;
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.positions();
    let mut out = vec![0.0; n * out_len];
    let (x, k, b) = (input.data(), kernel.data(), bias.data());

    out.par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(s, dst)| {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let p = g.positions();
            for (co, row) in dst.chunks_mut(p).enumerate() {
                row.fill(b[co]);
            }
            if g.is_pointwise() {
                gemm(g.c_out, g.rows(), p, k, (g.rows(), 1), xs, (p, 1), 1.0, dst);
            } else {
                let mut cols = vec![0.0; g.rows() * p];
                g.im2col(xs, &mut cols);
                gemm(
                    g.c_out,
                    g.rows(),
                    p,
                    k,
                    (g.rows(), 1),
                    &cols,
                    (p, 1),
                    1.0,
                    dst,
                );
            }
        });
    Tensor::new(image_shape(input, n, g.c_out, g.oh, g.ow), out)
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of `conv2d` given the upstream gradient of its output.
///
/// Kernel and bias gradients accumulate over the batch in sample order.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &[f64],
    need_input: bool,
) -> Result<ConvGrads> {
    let (n, g) = geometry(input, kernel, bias, stride, pad)?;
    let p = g.positions();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    debug_assert_eq!(grad_out.len(), n * out_len);
    let (x, k) = (input.data(), kernel.data());
    let rows = g.rows();

    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; g.c_out];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; rows * p]
    };
    let mut dcols = vec![0.0; rows * p];

    for s in 0..n {
        let go = &grad_out[s * out_len..(s + 1) * out_len];
        for (co, row) in go.chunks(p).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        let xs = &x[s * in_len..(s + 1) * in_len];
        let src: &[f64] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        // dK += dOut * cols^T
        gemm(g.c_out, p, rows, go, (p, 1), src, (1, p), 1.0, &mut dk);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                gemm(rows, g.c_out, p, k, (1, rows), go, (p, 1), 0.0, dxs);
            } else {
                gemm(rows, g.c_out, p, k, (1, rows), go, (p, 1), 0.0, &mut dcols);
                g.col2im(&dcols, dxs);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}
