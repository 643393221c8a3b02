//! Finite-difference verification of every differentiable operator.
//!
//! Each instance draws random shapes and inputs, feeds the operator output
//! through a dot product with a fixed random tensor, and compares the
//! reverse-mode gradient of every input against central differences. Inputs
//! are kept at least [`KINK_MARGIN`] away from points where an operator is
//! not differentiable.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{ComputeGraph, NodeId, Op};
use crate::loss::PoseLossSpec;
use crate::ops::LrnParams;
use crate::tensor::Tensor;

/// Central-difference step.
pub const EPSILON: f64 = 1e-5;
/// Minimum distance of inputs from non-differentiable points.
pub const KINK_MARGIN: f64 = 0.01;
/// Error bound for operators that are smooth everywhere they are evaluated.
pub const SMOOTH_THRESHOLD: f64 = 1e-6;
/// Error bound for piecewise operators.
pub const PIECEWISE_THRESHOLD: f64 = 1e-4;
/// Instances per operator in the default suite.
pub const DEFAULT_INSTANCES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Conv2d,
    MaxPool2d,
    AvgPool2d,
    Relu,
    Lrn,
    ConcatChannels,
    Linear,
    L2Norm,
    PoseLoss,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Self::Conv2d,
        Self::MaxPool2d,
        Self::AvgPool2d,
        Self::Relu,
        Self::Lrn,
        Self::ConcatChannels,
        Self::Linear,
        Self::L2Norm,
        Self::PoseLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Conv2d => "conv2d",
            Self::MaxPool2d => "maxpool2d",
            Self::AvgPool2d => "avgpool2d",
            Self::Relu => "relu",
            Self::Lrn => "lrn",
            Self::ConcatChannels => "concat_channels",
            Self::Linear => "linear",
            Self::L2Norm => "l2_norm",
            Self::PoseLoss => "pose_loss",
        }
    }

    /// Whether the operator is differentiable everywhere it is sampled.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Self::MaxPool2d | Self::Relu)
    }

    pub fn threshold(self) -> f64 {
        if self.is_smooth() {
            SMOOTH_THRESHOLD
        } else {
            PIECEWISE_THRESHOLD
        }
    }
}

/// Worst error of one operator over all of its instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorReport {
    pub operator: Operator,
    pub instances: usize,
    /// Largest relative error of any input gradient.
    pub max_relative_error: f64,
}

impl OperatorReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.operator.threshold()
    }
}

/// Relative error between two gradient tensors,
/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares analytic and central-difference gradients of every parameter
/// of `graph` with respect to the scalar `loss`. Returns the worst relative
/// error.
pub fn check_graph(graph: &mut ComputeGraph, loss: NodeId, epsilon: f64) -> Result<f64> {
    graph.forward_to(loss)?;
    let grads = graph.backward(loss)?;
    let mut worst: f64 = 0.0;
    for p in 0..graph.params().len() {
        let name = graph.params()[p].name.clone();
        let mut numeric = vec![0.0; graph.params()[p].value.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let original = graph.params()[p].value.data()[e];
            graph.params_mut()[p].value.data_mut()[e] = original + epsilon;
            let up = graph.forward_to(loss)?.item();
            graph.params_mut()[p].value.data_mut()[e] = original - epsilon;
            let down = graph.forward_to(loss)?.item();
            graph.params_mut()[p].value.data_mut()[e] = original;
            *slot = (up - down) / (2.0 * epsilon);
        }
        worst = worst.max(relative_error(grads[&name].data(), &numeric));
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Values whose magnitude is at least `KINK_MARGIN` plus the step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(2.0 * KINK_MARGIN..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Distinct values at least `2 * KINK_MARGIN` apart, so every pooling window
/// has a unique maximum with room to spare.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut levels: Vec<usize> = (0..n).collect();
    levels.shuffle(rng);
    let data = levels
        .into_iter()
        .map(|l| (l as f64 - n as f64 / 2.0) * 2.0 * KINK_MARGIN + rng.random_range(-0.002..0.002))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Builds one random instance: the operator applied to parameter inputs,
/// reduced to a scalar by a dot product with a random tensor.
fn instance(op: Operator, rng: &mut ChaCha8Rng) -> Result<(ComputeGraph, NodeId)> {
    let mut g = ComputeGraph::new();
    let n = rng.random_range(1..=2);
    let out = match op {
        Operator::Conv2d => {
            let (c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let k = *[1usize, 2, 3].choose(rng).expect("non-empty");
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..k);
            let (h, w) = (rng.random_range(k..=6), rng.random_range(k..=6));
            let x = g.parameter("input", uniform(rng, &[n, c_in, h, w], -1.0, 1.0), 1.0)?;
            let kernel =
                g.parameter("kernel", uniform(rng, &[c_out, c_in, k, k], -1.0, 1.0), 1.0)?;
            let bias = g.parameter("bias", uniform(rng, &[c_out], -1.0, 1.0), 1.0)?;
            g.add(Op::Conv2d { stride, pad }, &[x, kernel, bias])?
        }
        Operator::MaxPool2d => {
            let window = rng.random_range(2..=3);
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..window);
            let (h, w) = (rng.random_range(window..=6), rng.random_range(window..=6));
            let c = rng.random_range(1..=3);
            let x = g.parameter("input", well_separated(rng, &[n, c, h, w]), 1.0)?;
            g.add(
                Op::MaxPool2d {
                    window,
                    stride,
                    pad,
                },
                &[x],
            )?
        }
        Operator::AvgPool2d => {
            let window = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            let (h, w) = (rng.random_range(window..=6), rng.random_range(window..=6));
            let c = rng.random_range(1..=3);
            let x = g.parameter("input", uniform(rng, &[n, c, h, w], -1.0, 1.0), 1.0)?;
            g.add(Op::AvgPool2d { window, stride }, &[x])?
        }
        Operator::Relu => {
            let len = rng.random_range(1..=40);
            let x = g.parameter("input", away_from_zero(rng, &[n, len]), 1.0)?;
            g.add(Op::Relu, &[x])?
        }
        Operator::Lrn => {
            let params = LrnParams {
                local_size: *[1usize, 3, 5].choose(rng).expect("non-empty"),
                alpha: if rng.random_bool(0.5) {
                    1e-4
                } else {
                    rng.random_range(0.05..1.0)
                },
                beta: rng.random_range(0.5..1.0),
                k: rng.random_range(0.5..2.0),
            };
            let c = rng.random_range(1..=7);
            let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let x = g.parameter("input", uniform(rng, &[n, c, h, w], -2.0, 2.0), 1.0)?;
            g.add(Op::Lrn(params), &[x])?
        }
        Operator::ConcatChannels => {
            let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let parts = rng.random_range(2..=4);
            let mut ids = Vec::with_capacity(parts);
            for i in 0..parts {
                let c = rng.random_range(1..=3);
                ids.push(g.parameter(
                    &format!("input{i}"),
                    uniform(rng, &[n, c, h, w], -1.0, 1.0),
                    1.0,
                )?);
            }
            g.add(Op::Concat, &ids)?
        }
        Operator::Linear => {
            let (fan_in, fan_out) = (rng.random_range(1..=12), rng.random_range(1..=8));
            let x = g.parameter("input", uniform(rng, &[n, fan_in], -1.0, 1.0), 1.0)?;
            let weight = g.parameter("weight", uniform(rng, &[fan_out, fan_in], -1.0, 1.0), 1.0)?;
            let bias = g.parameter("bias", uniform(rng, &[fan_out], -1.0, 1.0), 1.0)?;
            g.add(Op::Linear, &[x, weight, bias])?
        }
        Operator::L2Norm => {
            let len = rng.random_range(1..=20);
            let x = g.parameter("input", away_from_zero(rng, &[len]), 1.0)?;
            g.add(Op::L2Norm, &[x])?
        }
        Operator::PoseLoss => {
            let mut raw = Vec::with_capacity(n * 7);
            let mut target = Vec::with_capacity(n * 7);
            for _ in 0..n {
                let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
                let mut q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                // keep the scalar part clear of the sign flip at w = 0
                q[0] = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let dt: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.5));
                let mut tq: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                tq[0] = rng.random_range(0.2..1.0);
                let norm = tq.iter().map(|v| v * v).sum::<f64>().sqrt();
                raw.extend_from_slice(&t);
                raw.extend_from_slice(&q);
                target.extend((0..3).map(|a| t[a] + dt[a]));
                target.extend(tq.iter().map(|v| v / norm));
            }
            let pred = g.parameter("raw", Tensor::new(vec![n, 7], raw)?, 1.0)?;
            let targets = g.input("targets");
            g.set_input(targets, Tensor::new(vec![n, 7], target)?)?;
            let beta = rng.random_range(0.5..300.0);
            g.add(Op::PoseLoss(PoseLossSpec::new(beta)?), &[pred, targets])?
        }
    };
    let shape = g.forward_to(out)?.shape().to_vec();
    let projection = g.input("projection");
    let r = if shape.is_empty() {
        Tensor::scalar(rng.random_range(0.5..1.5))
    } else {
        uniform(rng, &shape, -1.0, 1.0)
    };
    g.set_input(projection, r)?;
    let loss = g.add(Op::Dot, &[out, projection])?;
    Ok((g, loss))
}

/// Checks `instances` random instances of `op`.
pub fn check_operator(op: Operator, instances: usize, seed: u64) -> Result<OperatorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(op as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (mut graph, loss) = instance(op, &mut rng)?;
        worst = worst.max(check_graph(&mut graph, loss, EPSILON)?);
    }
    Ok(OperatorReport {
        operator: op,
        instances,
        max_relative_error: worst,
    })
}

/// Runs the check for every operator.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<OperatorReport>> {
    Operator::ALL
        .iter()
        .map(|&op| check_operator(op, instances, seed))
        .collect()
}
