use crate::error::{Error, Result};
use crate::tensor::{image_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PoolGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeometry {
    pub(crate) fn new(
        op: &'static str,
        input: &Tensor,
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "{op}: window and stride must be positive"
            )));
        }
        if pad >= window {
            return Err(Error::InvalidArgument(format!(
                "{op}: padding {pad} must be smaller than the window {window}"
            )));
        }
        let (n, c, h, w) = input.image_dims(op)?;
        if window > h + 2 * pad || window > w + 2 * pad {
            return Err(Error::shape(
                op,
                format!(
                    "window {window} exceeds padded input extent {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            window,
            stride,
            pad,
            oh: (h + 2 * pad - window) / stride + 1,
            ow: (w + 2 * pad - window) / stride + 1,
        })
    }

    /// Clipped input ranges `(y0..y1, x0..x1)` covered by output cell `(oy, ox)`.
    fn window_at(&self, oy: usize, ox: usize) -> (usize, usize, usize, usize) {
        let y = (oy * self.stride) as isize - self.pad as isize;
        let x = (ox * self.stride) as isize - self.pad as isize;
        let y0 = y.max(0) as usize;
        let x0 = x.max(0) as usize;
        let y1 = ((y + self.window as isize) as usize).min(self.h);
        let x1 = ((x + self.window as isize) as usize).min(self.w);
        (y0, y1, x0, x1)
    }

    /// Row-major position of the first maximal element in the window.
    fn argmax(&self, plane: &[f64], oy: usize, ox: usize) -> usize {
        let (y0, y1, x0, x1) = self.window_at(oy, ox);
        let mut best = y0 * self.w + x0;
        for y in y0..y1 {
            for x in x0..x1 {
                if plane[y * self.w + x] > plane[best] {
                    best = y * self.w + x;
                }
            }
        }
        best
    }

    fn out_shape(&self, like: &Tensor) -> Vec<usize> {
        image_shape(like, self.n, self.c, self.oh, self.ow)
    }
}

/// Max pooling without padding.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_padded(input, window, stride, 0)
}

/// Max pooling; padded positions never win the max.
pub fn maxpool2d_padded(
    input: &Tensor,
    window: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = PoolGeometry::new("maxpool2d", input, window, stride, pad)?;
    let mut out = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    for plane in input.data().chunks(g.h * g.w) {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                out.push(plane[g.argmax(plane, oy, ox)]);
            }
        }
    }
    Tensor::new(g.out_shape(input), out)
}

pub(crate) fn maxpool2d_backward(g: &PoolGeometry, input: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; input.len()];
    let plane_len = g.h * g.w;
    let out_plane = g.oh * g.ow;
    for (p, plane) in input.data().chunks(plane_len).enumerate() {
        let dplane = &mut dx[p * plane_len..(p + 1) * plane_len];
        let go = &grad_out[p * out_plane..(p + 1) * out_plane];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                dplane[g.argmax(plane, oy, ox)] += go[oy * g.ow + ox];
            }
        }
    }
    dx
}

/// Average pooling over unpadded `window x window` cells.
pub fn avgpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let g = PoolGeometry::new("avgpool2d", input, window, stride, 0)?;
    let area = (window * window) as f64;
    let mut out = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    for plane in input.data().chunks(g.h * g.w) {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let (y0, y1, x0, x1) = g.window_at(oy, ox);
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += plane[y * g.w + x0..y * g.w + x1].iter().sum::<f64>();
                }
                out.push(acc / area);
            }
        }
    }
    Tensor::new(g.out_shape(input), out)
}

pub(crate) fn avgpool2d_backward(g: &PoolGeometry, input_len: usize, grad_out: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    let area = (g.window * g.window) as f64;
    let plane_len = g.h * g.w;
    let out_plane = g.oh * g.ow;
    for (p, dplane) in dx.chunks_mut(plane_len).enumerate() {
        let go = &grad_out[p * out_plane..(p + 1) * out_plane];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let share = go[oy * g.ow + ox] / area;
                let (y0, y1, x0, x1) = g.window_at(oy, ox);
                for y in y0..y1 {
                    for v in &mut dplane[y * g.w + x0..y * g.w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}
