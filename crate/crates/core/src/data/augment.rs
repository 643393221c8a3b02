//! Photometric distortions used to enlarge training sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{quantize, Dataset, Image, PoseSample};
use crate::error::{Error, Result};

/// Ranges the distortion parameters are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    /// Gaussian blur standard deviation in pixels, `(lo, hi)`.
    pub gaussian_sigma_range: (f64, f64),
    /// Odd median filter window sizes, drawn uniformly.
    pub median_window_choices: Vec<usize>,
    /// Additive brightness offset on the `[0, 1]` scale, `(lo, hi)`.
    pub brightness_delta_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            gaussian_sigma_range: (0.5, 2.0),
            median_window_choices: vec![3, 5],
            brightness_delta_range: (-0.2, 0.2),
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.gaussian_sigma_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma range ({slo}, {shi}) must be positive and ordered"
            )));
        }
        let (blo, bhi) = self.brightness_delta_range;
        if !(blo <= bhi && blo.is_finite() && bhi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "brightness range ({blo}, {bhi}) must be finite and ordered"
            )));
        }
        if self.median_window_choices.is_empty() {
            return Err(Error::InvalidArgument(
                "no median window sizes given".into(),
            ));
        }
        if let Some(w) = self.median_window_choices.iter().find(|&&w| w % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "median window {w} is not odd"
            )));
        }
        Ok(())
    }
}

/// One concrete distortion with its drawn parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    GaussianBlur { sigma: f64 },
    MedianBlur { window: usize },
    Brightness { delta: f64 },
}

fn draw_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws the distortion for `draw_index`. Each index reads its own stream of
/// the seeded generator, so draws are independent of call order.
pub fn draw_distortion(spec: &AugmentationSpec, draw_index: u64) -> Distortion {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index);
    match rng.random_range(0..3u8) {
        0 => Distortion::GaussianBlur {
            sigma: draw_in(&mut rng, spec.gaussian_sigma_range),
        },
        1 => {
            let choices = &spec.median_window_choices;
            Distortion::MedianBlur {
                window: choices[rng.random_range(0..choices.len())],
            }
        }
        _ => Distortion::Brightness {
            delta: draw_in(&mut rng, spec.brightness_delta_range),
        },
    }
}

/// Applies `distortion` channel by channel. Borders replicate the edge pixel,
/// so a constant image stays constant under both blurs.
pub fn apply_distortion(image: &Image, distortion: Distortion) -> Image {
    let [c, h, w] = image.shape();
    let src = image.to_tensor();
    let src = src.data();
    let out: Vec<f64> = match distortion {
        Distortion::Brightness { delta } => src.iter().map(|v| v + delta).collect(),
        Distortion::GaussianBlur { sigma } => {
            let radius = (3.0 * sigma).ceil() as isize;
            let taps: Vec<f64> = (-radius..=radius)
                .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = taps.iter().sum();
            let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
            let mut tmp = vec![0.0; src.len()];
            let mut out = vec![0.0; src.len()];
            for plane in 0..c {
                let base = plane * h * w;
                for y in 0..h {
                    for x in 0..w {
                        tmp[base + y * w + x] = taps
                            .iter()
                            .enumerate()
                            .map(|(k, t)| {
                                t * src[base + y * w + clamp_index(x, k as isize - radius, w)]
                            })
                            .sum();
                    }
                }
                for y in 0..h {
                    for x in 0..w {
                        out[base + y * w + x] = taps
                            .iter()
                            .enumerate()
                            .map(|(k, t)| {
                                t * tmp[base + clamp_index(y, k as isize - radius, h) * w + x]
                            })
                            .sum();
                    }
                }
            }
            out
        }
        Distortion::MedianBlur { window } => {
            let r = (window / 2) as isize;
            let mut out = vec![0.0; src.len()];
            let mut patch = Vec::with_capacity(window * window);
            for plane in 0..c {
                let base = plane * h * w;
                for y in 0..h {
                    for x in 0..w {
                        patch.clear();
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let (yy, xx) = (clamp_index(y, dy, h), clamp_index(x, dx, w));
                                patch.push(src[base + yy * w + xx]);
                            }
                        }
                        patch.sort_by(f64::total_cmp);
                        out[base + y * w + x] = patch[patch.len() / 2];
                    }
                }
            }
            out
        }
    };
    let data = out.into_iter().map(quantize).collect();
    Image::new(c, h, w, data).expect("shape preserved")
}

fn clamp_index(i: usize, offset: isize, len: usize) -> usize {
    (i as isize + offset).clamp(0, len as isize - 1) as usize
}

/// Applies one randomly drawn distortion; the pose label is untouched.
pub fn augment(sample: &PoseSample, spec: &AugmentationSpec, draw_index: u64) -> PoseSample {
    PoseSample {
        image: apply_distortion(&sample.image, draw_distortion(spec, draw_index)),
        ..sample.clone()
    }
}

/// Follows every frame with `copies` distorted versions of it. Frame indices
/// are renumbered to the position in the new sequence.
pub fn augment_dataset(ds: &Dataset, spec: &AugmentationSpec, copies: usize) -> Result<Dataset> {
    spec.validate()?;
    let stride = copies as u64 + 1;
    let mut samples = Vec::with_capacity(ds.len() * (copies + 1));
    for (i, sample) in ds.samples.iter().enumerate() {
        let base = i as u64 * stride;
        samples.push(PoseSample {
            frame_index: base,
            ..sample.clone()
        });
        for j in 0..copies as u64 {
            let mut aug = augment(sample, spec, i as u64 * copies as u64 + j);
            aug.frame_index = base + j + 1;
            samples.push(aug);
        }
    }
    let mut meta = ds.meta.clone();
    meta.lineage
        .push(format!("augment:seed={}:copies={copies}", spec.seed));
    Ok(Dataset::new(samples, meta))
}
