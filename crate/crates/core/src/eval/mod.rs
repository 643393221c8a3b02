//! Trajectory metrics and export.

mod export;

pub use export::{
    export_comparison_svg, export_trajectory, loss_curve_svg, parse_trajectory_csv, trajectory_csv,
    trajectory_svg, ExportFormat, CSV_HEADER,
};

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::posenet::PoseNet;

/// Poses keyed by strictly increasing frame indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    frames: Vec<(u64, Pose)>,
}

impl Trajectory {
    pub fn new(frames: Vec<(u64, Pose)>) -> Result<Self> {
        if let Some(w) = frames.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::FrameMismatch(format!(
                "frame indices must increase, found {} after {}",
                w[1].0, w[0].0
            )));
        }
        Ok(Self { frames })
    }

    /// Ground-truth trajectory of a dataset.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::new(ds.samples.iter().map(|s| (s.frame_index, s.pose)).collect())
    }

    pub fn frames(&self) -> &[(u64, Pose)] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|(_, p)| p)
    }

    /// Per-axis `(min, max)` of the translations, `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.frames.first()?.1.translation;
        Some(self.poses().fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p.translation[a]);
                hi[a] = hi[a].max(p.translation[a]);
            }
            (lo, hi)
        }))
    }

    /// Diagonal of the translation bounding box.
    pub fn bounding_box_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| {
            (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
        })
    }
}

/// Runs `net` over every frame of `ds`.
pub fn predict_trajectory(net: &PoseNet, ds: &Dataset) -> Result<Trajectory> {
    let mut frames = Vec::with_capacity(ds.len());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(64) {
        let (images, _) = ds.batch(chunk)?;
        for (&i, pose) in chunk.iter().zip(net.forward_pose(&images)?) {
            frames.push((ds.samples[i].frame_index, pose));
        }
    }
    Trajectory::new(frames)
}

fn check_pairing(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::FrameMismatch(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(((a, _), (b, _))) = pred.frames.iter().zip(&gt.frames).find(|(p, g)| p.0 != g.0) {
        return Err(Error::FrameMismatch(format!(
            "prediction frame {a} paired with ground-truth frame {b}"
        )));
    }
    Ok(())
}

/// Error along one axis: mean absolute error normalized by the ground-truth
/// range of that axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisError {
    /// Mean absolute error, in centimetres or radians.
    pub mae: f64,
    /// `max - min` of the ground truth along the axis.
    pub range: f64,
    /// `100 * mae / range`; equals `mae` when the range is zero.
    pub percent: f64,
    /// Set when the ground truth does not move along the axis.
    pub degenerate: bool,
}

impl AxisError {
    fn new(abs_errors: impl Iterator<Item = f64>, gt_values: &[f64]) -> Self {
        let n = gt_values.len().max(1) as f64;
        let mae = abs_errors.sum::<f64>() / n;
        let lo = gt_values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gt_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if gt_values.is_empty() { 0.0 } else { hi - lo };
        let degenerate = range == 0.0;
        let percent = if degenerate { mae } else { 100.0 * mae / range };
        Self {
            mae,
            range,
            percent,
            degenerate,
        }
    }
}

/// Translation and intrinsic XYZ Euler-angle errors per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerAxisErrors {
    pub tx: AxisError,
    pub ty: AxisError,
    pub tz: AxisError,
    pub rx: AxisError,
    pub ry: AxisError,
    pub rz: AxisError,
}

impl PerAxisErrors {
    pub fn axes(&self) -> [(&'static str, AxisError); 6] {
        [
            ("tx", self.tx),
            ("ty", self.ty),
            ("tz", self.tz),
            ("rx", self.rx),
            ("ry", self.ry),
            ("rz", self.rz),
        ]
    }

    /// Mean percentage over the translation axes and over the rotation axes.
    pub fn averages(&self) -> (f64, f64) {
        (
            (self.tx.percent + self.ty.percent + self.tz.percent) / 3.0,
            (self.rx.percent + self.ry.percent + self.rz.percent) / 3.0,
        )
    }
}

/// Angle difference wrapped into `(-pi, pi]`.
fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

pub fn per_axis_errors(pred: &Trajectory, gt: &Trajectory) -> Result<PerAxisErrors> {
    check_pairing(pred, gt)?;
    let pairs: Vec<(&Pose, &Pose)> = pred.poses().zip(gt.poses()).collect();
    let translation = |a: usize| {
        let gt_values: Vec<f64> = pairs.iter().map(|(_, g)| g.translation[a]).collect();
        AxisError::new(
            pairs
                .iter()
                .map(|(p, g)| (p.translation[a] - g.translation[a]).abs()),
            &gt_values,
        )
    };
    let angles: Vec<([f64; 3], [f64; 3])> = pairs
        .iter()
        .map(|(p, g)| (p.euler_xyz(), g.euler_xyz()))
        .collect();
    let rotation = |a: usize| {
        let gt_values: Vec<f64> = angles.iter().map(|(_, g)| g[a]).collect();
        AxisError::new(
            angles
                .iter()
                .map(|(p, g)| angle_difference(p[a], g[a]).abs()),
            &gt_values,
        )
    };
    Ok(PerAxisErrors {
        tx: translation(0),
        ty: translation(1),
        tz: translation(2),
        rx: rotation(0),
        ry: rotation(1),
        rz: rotation(2),
    })
}

/// Root-mean-square Euclidean translation error over paired frames.
pub fn trajectory_rmse(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_pairing(pred, gt)?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .poses()
        .zip(gt.poses())
        .map(|(p, g)| {
            (0..3)
                .map(|a| (p.translation[a] - g.translation[a]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// Rigid transform `(R, t)` minimizing the squared distance from
/// `R * src + t` to `dst` (least-squares fit via SVD, no scaling).
pub fn rigid_alignment(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<([[f64; 3]; 3], [f64; 3])> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "alignment needs equally many points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let centroid = |pts: &[[f64; 3]]| {
        pts.iter()
            .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
            / n
    };
    let (mu_s, mu_d) = (centroid(src), centroid(dst));
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (Vector3::from(*d) - mu_d) * (Vector3::from(*s) - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    let t = mu_d - r * mu_s;
    let rows = std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]));
    Ok((rows, [t[0], t[1], t[2]]))
}

/// RMSE after rigidly aligning the predicted positions onto the ground truth,
/// for trajectories expressed in unregistered frames.
pub fn trajectory_rmse_aligned(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_pairing(pred, gt)?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    let src: Vec<[f64; 3]> = pred.poses().map(|p| p.translation).collect();
    let dst: Vec<[f64; 3]> = gt.poses().map(|p| p.translation).collect();
    let (r, t) = rigid_alignment(&src, &dst)?;
    let sum: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| {
            (0..3)
                .map(|i| {
                    let moved = r[i][0] * s[0] + r[i][1] * s[1] + r[i][2] * s[2] + t[i];
                    (moved - d[i]).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}
