use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gemm::gemm;

/// Norms at or below this value get a zero gradient.
pub const NORM_STABILIZER: f64 = 1e-12;

/// `out = input * weight^T + bias` for `input: [N, D_in]`, `weight: [D_out, D_in]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d_in, d_out) = linear_dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(
        n,
        d_in,
        d_out,
        input.data(),
        (d_in, 1),
        weight.data(),
        (1, d_in),
        1.0,
        &mut out,
    );
    Tensor::new(vec![n, d_out], out)
}

fn linear_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let &[n, d_in] = input.shape() else {
        return Err(Error::shape(
            "linear",
            format!("input must be [N, D_in], got {:?}", input.shape()),
        ));
    };
    let &[d_out, wd] = weight.shape() else {
        return Err(Error::shape(
            "linear",
            format!("weight must be [D_out, D_in], got {:?}", weight.shape()),
        ));
    };
    if wd != d_in {
        return Err(Error::shape(
            "linear",
            format!("D_in: input has {d_in} features, weight expects {wd}"),
        ));
    }
    if bias.shape() != [d_out] {
        return Err(Error::shape(
            "linear",
            format!("D_out: bias shape {:?}, expected [{d_out}]", bias.shape()),
        ));
    }
    Ok((n, d_in, d_out))
}

pub(crate) struct LinearGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &[f64],
) -> Result<LinearGrads> {
    let (n, d_in, d_out) = linear_dims(input, weight, bias)?;
    let mut dx = vec![0.0; n * d_in];
    gemm(
        n,
        d_out,
        d_in,
        grad_out,
        (d_out, 1),
        weight.data(),
        (d_in, 1),
        0.0,
        &mut dx,
    );
    let mut dw = vec![0.0; d_out * d_in];
    gemm(
        d_out,
        n,
        d_in,
        grad_out,
        (1, d_out),
        input.data(),
        (d_in, 1),
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; d_out];
    for row in grad_out.chunks(d_out) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Euclidean norm of all elements.
pub fn l2_norm(input: &Tensor) -> f64 {
    input.data().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x / |x|`, or zero when the norm is within the stabilizer of the origin.
pub fn l2_norm_grad(x: &[f64], stabilizer: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= stabilizer {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| v / norm).collect()
    }
}

/// Concatenates `[C_i,H,W]` (or `[N,C_i,H,W]`) tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_channels needs at least one input".into()))?;
    let (n, _, h, w) = first.image_dims("concat_channels")?;
    let mut channels = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let (tn, tc, th, tw) = t.image_dims("concat_channels")?;
        if t.rank() != first.rank() || (tn, th, tw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "input {i} has shape {:?}, expected spatial/batch dims matching {:?}",
                    t.shape(),
                    first.shape()
                ),
            ));
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for s in 0..n {
        for (t, &c) in inputs.iter().zip(&channels) {
            out.extend_from_slice(&t.data()[s * c * plane..(s + 1) * c * plane]);
        }
    }
    let shape = if first.rank() == 3 {
        vec![total, h, w]
    } else {
        vec![n, total, h, w]
    };
    Tensor::new(shape, out)
}

/// Channels `start..start + count` of an image tensor.
pub fn slice_channels(input: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.image_dims("slice_channels")?;
    if count == 0 || start + count > c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} out of range for {c}", start + count),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * count * plane);
    for s in 0..n {
        let base = (s * c + start) * plane;
        out.extend_from_slice(&input.data()[base..base + count * plane]);
    }
    let shape = if input.rank() == 3 {
        vec![count, h, w]
    } else {
        vec![n, count, h, w]
    };
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_cases() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let y = linear(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[3.0]);

        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            linear(&x, &eye, &Tensor::zeros(&[2])).unwrap().data(),
            x.data()
        );

        let xs = Tensor::new(vec![3, 2], vec![1.0, -2.0, 3.0, 4.0, 0.5, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![7.0, -1.0]);
        let y = linear(&xs, &Tensor::zeros(&[2, 2]), &b).unwrap();
        assert_eq!(y.data(), &[7.0, -1.0, 7.0, -1.0, 7.0, -1.0]);
    }

    #[test]
    fn linear_dimension_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let err = linear(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("D_in"), "{err}");
    }

    #[test]
    fn norm_cases() {
        assert_eq!(l2_norm(&Tensor::from_vec(vec![3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&Tensor::from_vec(vec![1.0; 4])), 2.0);
        assert_eq!(l2_norm(&Tensor::zeros(&[3])), 0.0);
        assert_eq!(l2_norm_grad(&[0.0; 3], NORM_STABILIZER), vec![0.0; 3]);
        assert_eq!(l2_norm_grad(&[3.0, 4.0], NORM_STABILIZER), vec![0.6, 0.8]);
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::zeros(&[8, 3, 3]);
        let b = Tensor::zeros(&[4, 3, 3]);
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), &[12, 3, 3]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let branches = [64, 128, 32, 32].map(|c| Tensor::zeros(&[c, 16, 16]));
        let refs: Vec<&Tensor> = branches.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap().shape(), &[256, 16, 16]);
    }

    #[test]
    fn concat_names_offending_input() {
        let a = Tensor::zeros(&[1, 3, 3]);
        let b = Tensor::zeros(&[1, 3, 3]);
        let c = Tensor::zeros(&[1, 2, 3]);
        let err = concat_channels(&[&a, &b, &c]).unwrap_err();
        assert!(err.to_string().contains("input 2"), "{err}");
    }
}
