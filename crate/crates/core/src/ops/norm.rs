use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Gradient is zero for `x <= 0`.
pub(crate) fn relu_backward(input: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Across-channel local response normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            local_size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.local_size == 0 || self.local_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "lrn local_size must be odd and positive, got {}",
                self.local_size
            )));
        }
        Ok(())
    }
}

/// `scale[c] = k + alpha/n * sum of squares over the channel window around c`.
fn lrn_scales(x: &[f64], c: usize, plane: usize, p: &LrnParams) -> Result<Vec<f64>> {
    let half = p.local_size / 2;
    let coeff = p.alpha / p.local_size as f64;
    let mut scale = vec![0.0; c * plane];
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        let dst = &mut scale[ch * plane..(ch + 1) * plane];
        for src in lo..=hi {
            for (s, &v) in dst.iter_mut().zip(&x[src * plane..(src + 1) * plane]) {
                *s += v * v;
            }
        }
        for s in dst.iter_mut() {
            *s = p.k + coeff * *s;
            if *s <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "lrn normalizer k + sum = {s} is not positive"
                )));
            }
        }
    }
    Ok(scale)
}

/// `out_c = in_c / (k + alpha/n * sum_{c' near c} in_c'^2)^beta`, window
/// truncated at the channel boundaries.
pub fn lrn(input: &Tensor, params: &LrnParams) -> Result<Tensor> {
    params.validate()?;
    let (_, c, h, w) = input.image_dims("lrn")?;
    let plane = h * w;
    let mut out = Vec::with_capacity(input.len());
    for sample in input.data().chunks(c * plane) {
        let scale = lrn_scales(sample, c, plane, params)?;
        out.extend(
            sample
                .iter()
                .zip(&scale)
                .map(|(&x, &s)| x * s.powf(-params.beta)),
        );
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub(crate) fn lrn_backward(
    input: &Tensor,
    params: &LrnParams,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let (_, c, h, w) = input.image_dims("lrn")?;
    let plane = h * w;
    let half = params.local_size / 2;
    let coeff = 2.0 * params.alpha * params.beta / params.local_size as f64;
    let mut dx = Vec::with_capacity(input.len());
    for (sample, go) in input
        .data()
        .chunks(c * plane)
        .zip(grad_out.chunks(c * plane))
    {
        let scale = lrn_scales(sample, c, plane, params)?;
        // t_c = g_c * x_c * s_c^(-beta-1)
        let t: Vec<f64> = go
            .iter()
            .zip(sample)
            .zip(&scale)
            .map(|((&g, &x), &s)| g * x * s.powf(-params.beta - 1.0))
            .collect();
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for i in 0..plane {
                let j = ch * plane + i;
                let mut acc = 0.0;
                for src in lo..=hi {
                    acc += t[src * plane + i];
                }
                dx.push(go[j] * scale[j].powf(-params.beta) - coeff * sample[j] * acc);
            }
        }
    }
    Ok(dx)
}
