//! Pose regression loss, weighted loss aggregation and the loss balance rule.

use crate::error::{Error, Result};
use crate::ops::{l2_norm_grad, NORM_STABILIZER};
use crate::pose::Pose;
use crate::tensor::Tensor;

/// Balance between the translation and rotation terms of the pose loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLossSpec {
    /// Weight on the rotation residual. Unrelated to Adam's moment decay rates.
    pub beta: f64,
    pub norm_stabilizer: f64,
}

/// Used when no pilot run picks the balance.
pub const DEFAULT_BETA: f64 = 250.0;

impl Default for PoseLossSpec {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            norm_stabilizer: NORM_STABILIZER,
        }
    }
}

impl PoseLossSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            ..Self::default()
        })
    }
}

/// The two residual norms of the pose loss before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PoseResiduals {
    pub translation: f64,
    pub rotation: f64,
}

impl PoseResiduals {
    pub fn total(&self, beta: f64) -> f64 {
        self.translation + beta * self.rotation
    }
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn pose_residuals(pred: &Pose, target: &Pose) -> PoseResiduals {
    PoseResiduals {
        translation: norm((0..3).map(|i| pred.translation[i] - target.translation[i])),
        rotation: norm((0..4).map(|i| pred.rotation[i] - target.rotation[i])),
    }
}

/// `|t_pred - t| + beta * |q_pred - q|` with plain (not squared) norms.
pub fn pose_loss(pred: &Pose, target: &Pose, spec: &PoseLossSpec) -> f64 {
    pose_residuals(pred, target).total(spec.beta)
}

/// Normalized and sign-flipped quaternion from raw outputs, with the flip sign
/// and the pre-normalization norm. Raw norms inside the stabilizer map to the
/// identity.
fn normalize_raw_quaternion(raw: &[f64], stabilizer: f64) -> ([f64; 4], f64, f64) {
    let n = norm(raw.iter().copied());
    if n <= stabilizer {
        return ([1.0, 0.0, 0.0, 0.0], 1.0, n);
    }
    let sign = if raw[0] < 0.0 { -1.0 } else { 1.0 };
    ([0, 1, 2, 3].map(|i| sign * raw[i] / n), sign, n)
}

/// Residuals between a raw 7-value network output and a canonical target.
pub(crate) fn raw_residuals(raw: &[f64], target: &[f64], stabilizer: f64) -> PoseResiduals {
    let (q, _, _) = normalize_raw_quaternion(&raw[3..7], stabilizer);
    PoseResiduals {
        translation: norm((0..3).map(|i| raw[i] - target[i])),
        rotation: norm((0..4).map(|i| q[i] - target[3 + i])),
    }
}

/// Gradient of the pose loss w.r.t. the raw 7 outputs, through the
/// quaternion normalization and sign canonicalization.
pub(crate) fn raw_loss_grad(raw: &[f64], target: &[f64], spec: &PoseLossSpec) -> [f64; 7] {
    let mut g = [0.0; 7];
    let dt: Vec<f64> = (0..3).map(|i| raw[i] - target[i]).collect();
    g[..3].copy_from_slice(&l2_norm_grad(&dt, spec.norm_stabilizer));

    let (q, sign, n) = normalize_raw_quaternion(&raw[3..7], spec.norm_stabilizer);
    if n <= spec.norm_stabilizer {
        return g;
    }
    let dq: Vec<f64> = (0..4).map(|i| q[i] - target[3 + i]).collect();
    let gq: Vec<f64> = l2_norm_grad(&dq, spec.norm_stabilizer)
        .into_iter()
        .map(|v| spec.beta * v)
        .collect();
    // q = sign * u, u = raw / n, du/draw = (I - u u^T) / n
    let u: Vec<f64> = q.iter().map(|v| sign * v).collect();
    let proj: f64 = u.iter().zip(&gq).map(|(a, b)| a * b).sum();
    for i in 0..4 {
        g[3 + i] = sign * (gq[i] - u[i] * proj) / n;
    }
    g
}

/// Sums `loss_weight * sum(top)` over every loss top.
pub fn aggregate_weighted_loss(loss_tops: &[(&Tensor, f64)]) -> f64 {
    let mut loss = 0.0;
    for (top, weight) in loss_tops {
        loss += weight * top.data().iter().sum::<f64>();
    }
    loss
}

/// Loss balance from the expected end-of-training error scales: the ratio of
/// translation error to rotation error.
pub fn select_beta(expected_translation_error: f64, expected_rotation_error: f64) -> Result<f64> {
    for (name, v) in [
        ("translation", expected_translation_error),
        ("rotation", expected_rotation_error),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "expected {name} error must be positive, got {v}"
            )));
        }
    }
    Ok(expected_translation_error / expected_rotation_error)
}
