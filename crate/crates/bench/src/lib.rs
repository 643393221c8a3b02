//! Shared fixtures for the criterion benchmarks.

use capsule_pose::data::{render_view, trajectory_poses, TrajectoryKind};
use capsule_pose::{NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rendered views along a smooth loop, each shaped `[1, 3, h, w]`.
pub fn sample_frames(count: usize, (h, w): (usize, usize)) -> Vec<Tensor> {
    trajectory_poses(0, count.max(2), TrajectoryKind::SmoothLoop)
        .expect("valid trajectory")
        .iter()
        .take(count)
        .map(|pose| {
            render_view(pose, (h, w))
                .expect("valid image size")
                .to_tensor()
                .reshape(&[1, 3, h, w])
                .expect("matching element count")
        })
        .collect()
}

/// Stacks frames from [`sample_frames`] into one `[n, 3, h, w]` batch.
pub fn sample_batch(count: usize, size: (usize, usize)) -> Tensor {
    let frames = sample_frames(count, size);
    let data = frames
        .iter()
        .flat_map(|f| f.data().iter().copied())
        .collect();
    Tensor::new(vec![count, 3, size.0, size.1], data).expect("matching element count")
}

/// A tensor of the given shape with entries uniform in [-1, 1).
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("matching element count")
}

/// The desk-scale network spec with its default 64x64 input.
pub fn desk_spec() -> NetworkSpec {
    NetworkSpec::desk()
}
