//! Per-frame inference latency measurement.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::posenet::PoseNet;
use crate::tensor::Tensor;
use crate::threads::with_threads;

/// Forward passes run before timing starts.
pub const WARMUP_FRAMES: usize = 5;

/// Summary statistics of single-frame forward passes, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub frames: usize,
    pub threads: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Standard deviation divided by the mean.
    pub coefficient_of_variation: f64,
}

impl LatencyReport {
    pub fn from_samples(samples: &[Duration], threads: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no latency samples".into()));
        }
        let mut secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        secs.sort_by(f64::total_cmp);
        let n = secs.len();
        let mean = secs.iter().sum::<f64>() / n as f64;
        let var = secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            secs[n / 2]
        } else {
            0.5 * (secs[n / 2 - 1] + secs[n / 2])
        };
        Ok(Self {
            frames: n,
            threads,
            mean,
            median,
            min: secs[0],
            max: secs[n - 1],
            coefficient_of_variation: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        })
    }
}

/// Times `frames` single-image forward passes on a dedicated pool of
/// `threads` workers, cycling through `images` (each `[1, C, H, W]`).
pub fn measure_forward_latency(
    net: &PoseNet,
    images: &[Tensor],
    frames: usize,
    threads: usize,
) -> Result<LatencyReport> {
    if images.is_empty() || frames == 0 || threads == 0 {
        return Err(Error::InvalidArgument(
            "latency measurement needs images, at least one frame and one thread".into(),
        ));
    }
    with_threads(threads, || {
        for image in images.iter().cycle().take(WARMUP_FRAMES) {
            net.forward_pose(image)?;
        }
        let mut samples = Vec::with_capacity(frames);
        for image in images.iter().cycle().take(frames) {
            let start = Instant::now();
            let poses = net.forward_pose(image)?;
            samples.push(start.elapsed());
            std::hint::black_box(poses);
        }
        LatencyReport::from_samples(&samples, threads)
    })?
}
