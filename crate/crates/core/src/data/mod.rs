//! Pose-labelled image datasets.

mod augment;
mod io;
mod synth;

pub use augment::{
    apply_distortion, augment, augment_dataset, draw_distortion, AugmentationSpec, Distortion,
};
pub use io::{load_dataset, read_ppm, save_dataset, write_ppm, MANIFEST_FILE};
pub use synth::{generate_synthetic_dataset, render_view, trajectory_poses, TrajectoryKind};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::tensor::Tensor;

/// 8-bit image in channel-major `[C, H, W]` order. Pixel value `v` stands for
/// the intensity `v / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if channels * height * width != data.len() || data.is_empty() {
            return Err(Error::shape(
                "image",
                format!(
                    "{channels}x{height}x{width} needs {} bytes, got {}",
                    channels * height * width,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Quantizes a `[C, H, W]` tensor, clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::shape(
                "image",
                format!("expected [C,H,W], got {:?}", t.shape()),
            ));
        };
        let data = t.data().iter().map(|&v| quantize(v)).collect();
        Self::new(c, h, w, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| f64::from(v) / 255.0).collect();
        Tensor::new(vec![self.channels, self.height, self.width], data).expect("valid image dims")
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub image: Image,
    pub pose: Pose,
    pub frame_index: u64,
    /// Recording camera, kept as metadata only.
    pub camera_tag: Option<String>,
}

/// Provenance of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
    /// Processing steps applied after generation, oldest first.
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PoseSample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<PoseSample>, meta: DatasetMeta) -> Self {
        Self { samples, meta }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Images `[N, C, H, W]` and canonical pose targets `[N, 7]` for the given samples.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let Some(&first) = indices.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let [c, h, w] = self.samples[first].image.shape();
        let mut images = Vec::with_capacity(indices.len() * c * h * w);
        let mut targets = Vec::with_capacity(indices.len() * 7);
        for &i in indices {
            let s = &self.samples[i];
            if s.image.shape() != [c, h, w] {
                return Err(Error::shape(
                    "batch",
                    format!("frame {} has shape {:?}", s.frame_index, s.image.shape()),
                ));
            }
            images.extend(s.image.bytes().iter().map(|&v| f64::from(v) / 255.0));
            targets.extend_from_slice(&s.pose.to_raw());
        }
        Ok((
            Tensor::new(vec![indices.len(), c, h, w], images)?,
            Tensor::new(vec![indices.len(), 7], targets)?,
        ))
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.samples.iter().map(|s| s.pose).collect()
    }
}

/// Contiguous split by frame order: the first `floor(n * train_fraction)`
/// samples train, the rest validate.
pub fn split_dataset(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    // the epsilon absorbs representation error such as 0.7 * 10000 = 6999.999...
    let n_train = (ds.len() as f64 * train_fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= ds.len() {
        return Err(Error::InvalidArgument(format!(
            "splitting {} samples at {train_fraction} leaves one side empty",
            ds.len()
        )));
    }
    let part = |samples: &[PoseSample], tag: &str| {
        let mut meta = ds.meta.clone();
        meta.lineage.push(format!("split:{tag}:{train_fraction}"));
        Dataset::new(samples.to_vec(), meta)
    };
    Ok((
        part(&ds.samples[..n_train], "train"),
        part(&ds.samples[n_train..], "val"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| PoseSample {
                image: Image::new(3, 1, 1, vec![i as u8; 3]).unwrap(),
                pose: Pose::new([i as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
                frame_index: i as u64,
                camera_tag: None,
            })
            .collect();
        Dataset::new(samples, DatasetMeta::default())
    }

    #[test]
    fn split_sizes() {
        let sizes = |n: usize, f: f64| {
            let (a, b) = split_dataset(&dummy(n), f).unwrap();
            (a.len(), b.len())
        };
        assert_eq!(sizes(10000, 0.7), (7000, 3000));
        assert_eq!(sizes(10, 0.5), (5, 5));
        assert_eq!(sizes(3, 0.34), (1, 2));
    }

    #[test]
    fn split_rejects_empty_sides() {
        assert!(split_dataset(&dummy(3), 0.1).is_err());
        assert!(split_dataset(&dummy(3), 0.0).is_err());
        assert!(split_dataset(&dummy(3), 1.0).is_err());
        assert!(split_dataset(&dummy(1), 0.5).is_err());
    }

    #[test]
    fn split_preserves_order() {
        let ds = dummy(17);
        let (a, b) = split_dataset(&ds, 0.6).unwrap();
        let joined: Vec<_> = a.samples.iter().chain(&b.samples).cloned().collect();
        assert_eq!(joined, ds.samples);
    }

    #[test]
    fn batch_layout() {
        let ds = dummy(4);
        let (images, targets) = ds.batch(&[2, 0]).unwrap();
        assert_eq!(images.shape(), &[2, 3, 1, 1]);
        assert_eq!(images.data()[0], 2.0 / 255.0);
        assert_eq!(&targets.data()[..4], &[2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn quantization_clamps() {
        let t = Tensor::new(vec![1, 1, 3], vec![-0.5, 0.5, 1.7]).unwrap();
        assert_eq!(Image::from_tensor(&t).unwrap().bytes(), &[0, 128, 255]);
    }
}
