//! Procedural stand-in for endoscopic recordings.
//!
//! A pinhole camera with a co-located light moves inside a closed cavity: an
//! ellipsoid whose inner wall carries bump-mapped folds, a smooth colour field
//! and thin vessel-like lines. Every frame is a pure function of its pose, so
//! the pose can be regressed from pixels. Lengths are in centimetres.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{quantize, Dataset, DatasetMeta, Image, PoseSample};
use crate::error::{Error, Result};
use crate::pose::{rotate, Pose};

/// Shape of the generated camera path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Several laps of a closed 6-DoF loop; the last pose equals the first.
    SmoothLoop,
    /// Moderate translation with fast, wide rotations.
    FastRotation,
    /// Wide translation sweeps with mild rotation.
    LargeTranslation,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SmoothLoop => "smooth_loop",
            Self::FastRotation => "fast_rotation",
            Self::LargeTranslation => "large_translation",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth_loop" => Ok(Self::SmoothLoop),
            "fast_rotation" => Ok(Self::FastRotation),
            "large_translation" => Ok(Self::LargeTranslation),
            other => Err(Error::InvalidArgument(format!(
                "unknown trajectory `{other}` (expected smooth_loop, fast_rotation or large_translation)"
            ))),
        }
    }
}

/// Frames per lap of the smooth loop; longer sequences revisit the same
/// region of the cavity several times.
const FRAMES_PER_LAP: usize = 400;

/// Semi-axes of the cavity.
const CAVITY: [f64; 3] = [9.0, 7.5, 10.5];

/// Horizontal field of view of the camera.
const FIELD_OF_VIEW: f64 = PI / 2.0;

/// Per-sequence motion parameters, all derived from the seed.
struct Motion {
    laps: f64,
    phases: [f64; 8],
}

impl Motion {
    fn new(seed: u64, n_frames: usize, kind: TrajectoryKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        let laps = match kind {
            TrajectoryKind::SmoothLoop => (n_frames / FRAMES_PER_LAP).max(1) as f64,
            _ => 1.0,
        };
        Self { laps, phases }
    }

    /// Pose at normalized time `s` in `[0, 1]`.
    fn pose(&self, kind: TrajectoryKind, s: f64) -> Pose {
        let p = &self.phases;
        let th = TAU * self.laps * s;
        let slow = TAU * s;
        let (translation, angles) = match kind {
            TrajectoryKind::SmoothLoop => (
                [
                    2.5 * (th + p[0]).sin() + 0.3 * (slow + p[6]).sin(),
                    2.0 * (2.0 * th + p[1]).sin(),
                    1.5 * (th + p[2]).sin() + 0.3 * (slow + p[7]).cos(),
                ],
                [
                    0.35 * (th + p[3]).sin(),
                    0.30 * (th + p[4]).sin() + 0.05 * (slow + p[6]).cos(),
                    0.45 * (2.0 * th + p[5]).sin(),
                ],
            ),
            TrajectoryKind::FastRotation => (
                [
                    1.5 * (th + p[0]).sin(),
                    1.0 * (th + p[1]).sin(),
                    1.0 * (th + p[2]).sin(),
                ],
                [
                    0.9 * (3.0 * th + p[3]).sin(),
                    0.8 * (4.0 * th + p[4]).sin(),
                    1.2 * (5.0 * th + p[5]).sin(),
                ],
            ),
            TrajectoryKind::LargeTranslation => (
                [
                    5.0 * (th + p[0]).sin(),
                    4.0 * (2.0 * th + p[1]).sin(),
                    5.5 * (th + p[2]).sin(),
                ],
                [
                    0.15 * (th + p[3]).sin(),
                    0.15 * (th + p[4]).sin(),
                    0.20 * (th + p[5]).sin(),
                ],
            ),
        };
        Pose::from_euler_xyz(translation, angles)
    }
}

/// Ground-truth camera poses of a generated sequence.
pub fn trajectory_poses(seed: u64, n_frames: usize, kind: TrajectoryKind) -> Result<Vec<Pose>> {
    if n_frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "a trajectory needs at least 2 frames, got {n_frames}"
        )));
    }
    let motion = Motion::new(seed, n_frames, kind);
    let last = (n_frames - 1) as f64;
    Ok((0..n_frames)
        .map(|i| motion.pose(kind, i as f64 / last))
        .collect())
}

/// Renders a `[3, H, W]` RGB view from `pose` (camera-to-world; the camera
/// looks along its local +z with image rows along +y).
pub fn render_view(pose: &Pose, (height, width): (usize, usize)) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "image size {height}x{width} is empty"
        )));
    }
    let focal = 0.5 * width as f64 / (0.5 * FIELD_OF_VIEW).tan();
    let (cy, cx) = (0.5 * height as f64, 0.5 * width as f64);
    let half_diag2 = cx * cx + cy * cy;
    let plane = height * width;
    let mut data = vec![0u8; 3 * plane];
    for row in 0..height {
        for col in 0..width {
            let u = col as f64 + 0.5 - cx;
            let v = row as f64 + 0.5 - cy;
            let dir = normalize(rotate(pose.rotation, [u, v, focal]));
            let rgb = shade(pose.translation, dir);
            let vignette = 1.0 - 0.35 * (u * u + v * v) / half_diag2;
            for (c, value) in rgb.iter().enumerate() {
                data[c * plane + row * width + col] = quantize(value * vignette);
            }
        }
    }
    Image::new(3, height, width, data)
}

/// Renders one synthetic sequence. Frames are rendered in parallel; the
/// output does not depend on the thread count.
pub fn generate_synthetic_dataset(
    seed: u64,
    n_frames: usize,
    image_size: (usize, usize),
    kind: TrajectoryKind,
) -> Result<Dataset> {
    let poses = trajectory_poses(seed, n_frames, kind)?;
    let samples = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            Ok(PoseSample {
                image: render_view(pose, image_size)?,
                pose: *pose,
                frame_index: i as u64,
                camera_tag: Some("synthetic".into()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(
        samples,
        DatasetMeta {
            source: format!("synthetic:{kind}"),
            seed: Some(seed),
            lineage: Vec::new(),
        },
    ))
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Distance along `dir` from an interior point to the cavity wall.
fn wall_distance(origin: [f64; 3], dir: [f64; 3]) -> f64 {
    let o = [
        origin[0] / CAVITY[0],
        origin[1] / CAVITY[1],
        origin[2] / CAVITY[2],
    ];
    let d = [dir[0] / CAVITY[0], dir[1] / CAVITY[1], dir[2] / CAVITY[2]];
    let a = dot(d, d);
    let b = dot(o, d);
    let c = dot(o, o) - 1.0;
    // c < 0 inside the cavity, so the discriminant is positive
    (-b + (b * b - a * c).max(0.0).sqrt()) / a
}

/// Fold relief: wave vectors, amplitudes and phases of the height field.
const FOLDS: [([f64; 3], f64, f64); 4] = [
    ([0.35, 1.10, 0.25], 0.10, 0.3),
    ([1.20, -0.20, 0.55], 0.06, 1.7),
    ([-0.30, 0.45, 1.60], 0.05, 4.1),
    ([2.30, 1.90, -1.40], 0.02, 2.2),
];

fn shade(eye: [f64; 3], dir: [f64; 3]) -> [f64; 3] {
    let dist = wall_distance(eye, dir);
    let x = [
        eye[0] + dist * dir[0],
        eye[1] + dist * dir[1],
        eye[2] + dist * dir[2],
    ];
    let inward = normalize([
        -x[0] / (CAVITY[0] * CAVITY[0]),
        -x[1] / (CAVITY[1] * CAVITY[1]),
        -x[2] / (CAVITY[2] * CAVITY[2]),
    ]);
    // bump mapping: tilt the normal against the tangential height gradient
    let mut grad = [0.0; 3];
    for (k, amp, phase) in FOLDS {
        let slope = amp * (dot(k, x) + phase).cos();
        for (g, kc) in grad.iter_mut().zip(k) {
            *g += slope * kc;
        }
    }
    let gn = dot(grad, inward);
    let normal = normalize([
        inward[0] - (grad[0] - gn * inward[0]),
        inward[1] - (grad[1] - gn * inward[1]),
        inward[2] - (grad[2] - gn * inward[2]),
    ]);
    let albedo = albedo(x);
    let to_eye = [-dir[0], -dir[1], -dir[2]];
    let lambert = dot(normal, to_eye).max(0.0);
    let falloff = 1.0 / (1.0 + (dist / 6.0).powi(2));
    let specular = 0.6 * lambert.powi(30);
    let light = 0.08 + 1.6 * lambert * falloff;
    albedo.map(|a| a * light + specular * falloff)
}

fn albedo(x: [f64; 3]) -> [f64; 3] {
    let u = normalize(x);
    let h1 = 0.5 + 0.5 * (1.7 * u[0] + 2.3 * u[1] - 1.1 * u[2] + 0.4).sin();
    let h2 = 0.5 + 0.5 * (-2.1 * u[0] + 0.9 * u[1] + 1.9 * u[2] + 1.2).sin();
    const PINK: [f64; 3] = [0.85, 0.50, 0.45];
    const AMBER: [f64; 3] = [0.92, 0.68, 0.38];
    const CRIMSON: [f64; 3] = [0.60, 0.22, 0.25];
    let mut c = [0.0; 3];
    for i in 0..3 {
        c[i] = PINK[i] * (1.0 - h1) + AMBER[i] * h1;
        c[i] = c[i] * (1.0 - 0.6 * h2) + CRIMSON[i] * 0.6 * h2;
    }
    let vessel = (1.3 * x[0] + 0.8 * (0.7 * x[2]).sin() + 0.5 * x[1])
        .sin()
        .abs();
    let vessel2 = (0.9 * x[2] - 0.6 * (0.8 * x[0]).cos() + 0.4 * x[1])
        .sin()
        .abs();
    let darken = smoothstep(0.0, 0.12, vessel.min(vessel2));
    let shade = 0.55 + 0.45 * darken;
    [
        c[0] * shade,
        c[1] * (0.7 + 0.3 * darken) * shade,
        c[2] * shade,
    ]
}

fn smoothstep(lo: f64, hi: f64, v: f64) -> f64 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
