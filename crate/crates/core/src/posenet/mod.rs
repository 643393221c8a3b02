//! The inception pose-regression network.
//!
//! GoogLeNet's feature extractor with the classifier removed and a
//! fully-connected layer plus an affine 7-output regressor on top
//! (translation `x, y, z` followed by quaternion `w, x, y, z`).
//!
//! Reference layer table, counting layers with parameters along the deepest
//! path (each inception module is two layers deep):
//!
//! | #     | layer                       | output (224 input) |
//! |-------|-----------------------------|--------------------|
//! | 1     | conv1 7x7/2                 | 64 x 112 x 112     |
//! |       | maxpool 3x3/2, LRN          | 64 x 56 x 56       |
//! | 2     | conv2_reduce 1x1            | 64 x 56 x 56       |
//! | 3     | conv2 3x3                   | 192 x 56 x 56      |
//! |       | LRN, maxpool 3x3/2          | 192 x 28 x 28      |
//! | 4-7   | inception 3a, 3b            | 480 x 28 x 28      |
//! |       | maxpool 3x3/2               | 480 x 14 x 14      |
//! | 8-17  | inception 4a-4e             | 832 x 14 x 14      |
//! |       | maxpool 3x3/2               | 832 x 7 x 7        |
//! | 18-21 | inception 5a, 5b            | 1024 x 7 x 7       |
//! |       | avgpool 7x7                 | 1024               |
//! | 22    | fc + relu                   | 2048               |
//! | 23    | regressor                   | 7                  |

mod build;
mod weights;

use std::collections::BTreeMap;

pub use build::{build_inception, build_pose_network, ParamInit, PoseNet};
pub use weights::{
    load_tensors, read_tensors, save_tensors, write_tensors, LoadReport, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};

use crate::error::{Error, Result};
use crate::ops::LrnParams;

/// Channel counts of one inception module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionSpec {
    pub c1x1: usize,
    pub c3x3_reduce: usize,
    pub c3x3: usize,
    pub c5x5_reduce: usize,
    pub c5x5: usize,
    pub pool_proj: usize,
}

impl InceptionSpec {
    pub const fn new(
        c1x1: usize,
        c3x3_reduce: usize,
        c3x3: usize,
        c5x5_reduce: usize,
        c5x5: usize,
        pool_proj: usize,
    ) -> Self {
        Self {
            c1x1,
            c3x3_reduce,
            c3x3,
            c5x5_reduce,
            c5x5,
            pool_proj,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.c1x1 + self.c3x3 + self.c5x5 + self.pool_proj
    }

    fn counts(&self) -> [usize; 6] {
        [
            self.c1x1,
            self.c3x3_reduce,
            self.c3x3,
            self.c5x5_reduce,
            self.c5x5,
            self.pool_proj,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts().contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "inception channel counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn scaled(&self, divisor: usize) -> Self {
        let [a, b, c, d, e, f] = self.counts().map(|v| (v / divisor).max(1));
        Self::new(a, b, c, d, e, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// One stem layer. Every convolution is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub enum StemLayer {
    Conv(ConvLayer),
    MaxPool {
        window: usize,
        stride: usize,
        pad: usize,
    },
    Lrn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionLayer {
    pub name: String,
    pub spec: InceptionSpec,
}

/// Declarative description of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `(channels, height, width)` of one input image.
    pub input_shape: [usize; 3],
    pub stem: Vec<StemLayer>,
    /// Groups of inception modules; a 3x3/2 max pool separates consecutive groups.
    pub inception_stages: Vec<Vec<InceptionLayer>>,
    pub fc_width: usize,
    pub output_dim: usize,
    pub lrn: LrnParams,
    /// Learning-rate multiplier per layer name; absent layers use 1.
    pub lr_multipliers: BTreeMap<String, f64>,
    /// Weight of the pose loss top in the aggregated training loss.
    pub loss_weight: f64,
    pub init_seed: u64,
}

const GOOGLENET_STAGES: [&[(&str, InceptionSpec)]; 3] = [
    &[
        ("3a", InceptionSpec::new(64, 96, 128, 16, 32, 32)),
        ("3b", InceptionSpec::new(128, 128, 192, 32, 96, 64)),
    ],
    &[
        ("4a", InceptionSpec::new(192, 96, 208, 16, 48, 64)),
        ("4b", InceptionSpec::new(160, 112, 224, 24, 64, 64)),
        ("4c", InceptionSpec::new(128, 128, 256, 24, 64, 64)),
        ("4d", InceptionSpec::new(112, 144, 288, 32, 64, 64)),
        ("4e", InceptionSpec::new(256, 160, 320, 32, 128, 128)),
    ],
    &[
        ("5a", InceptionSpec::new(256, 160, 320, 32, 128, 128)),
        ("5b", InceptionSpec::new(384, 192, 384, 48, 128, 128)),
    ],
];

pub const POSE_OUTPUTS: usize = 7;

/// Default seed for weight initialization.
pub const DEFAULT_INIT_SEED: u64 = 0x5eed;

impl NetworkSpec {
    /// Full-size network on 224x224 RGB input.
    pub fn reference() -> Self {
        Self::googlenet([3, 224, 224], 1, 2048)
    }

    /// Same topology on 64x64 input with every channel count divided by 4.
    pub fn desk() -> Self {
        Self::googlenet([3, 64, 64], 4, 512)
    }

    fn googlenet(input_shape: [usize; 3], divisor: usize, fc_width: usize) -> Self {
        let conv = |name: &str, out: usize, kernel: usize, stride: usize, pad: usize| {
            StemLayer::Conv(ConvLayer {
                name: name.to_string(),
                out_channels: out / divisor,
                kernel,
                stride,
                pad,
            })
        };
        let pool = StemLayer::MaxPool {
            window: 3,
            stride: 2,
            pad: 1,
        };
        let stem = vec![
            conv("conv1", 64, 7, 2, 3),
            pool.clone(),
            StemLayer::Lrn,
            conv("conv2_reduce", 64, 1, 1, 0),
            conv("conv2", 192, 3, 1, 1),
            StemLayer::Lrn,
            pool,
        ];
        let inception_stages = GOOGLENET_STAGES
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|(name, spec)| InceptionLayer {
                        name: format!("inception_{name}"),
                        spec: spec.scaled(divisor),
                    })
                    .collect()
            })
            .collect();
        Self {
            input_shape,
            stem,
            inception_stages,
            fc_width,
            output_dim: POSE_OUTPUTS,
            lrn: LrnParams::default(),
            lr_multipliers: BTreeMap::new(),
            loss_weight: 1.0,
            init_seed: DEFAULT_INIT_SEED,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    /// Names of the stem convolutions.
    pub fn stem_layer_names(&self) -> Vec<String> {
        self.stem
            .iter()
            .filter_map(|l| match l {
                StemLayer::Conv(c) => Some(c.name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Every layer with parameters, in build order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = self.stem_layer_names();
        for layer in self.inception_stages.iter().flatten() {
            for branch in INCEPTION_BRANCHES {
                names.push(format!("{}/{branch}", layer.name));
            }
        }
        names.push("fc".into());
        names.push("regressor".into());
        names
    }

    /// Depth in layers with parameters; inception modules count two.
    pub fn counted_layers(&self) -> usize {
        self.stem_layer_names().len() + 2 * self.inception_stages.iter().flatten().count() + 2
    }

    pub fn lr_multiplier(&self, layer: &str) -> f64 {
        self.lr_multipliers.get(layer).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "input shape must be positive: {:?}",
                self.input_shape
            )));
        }
        if self.output_dim != POSE_OUTPUTS {
            return Err(Error::InvalidArgument(format!(
                "regressor must emit {POSE_OUTPUTS} values, spec says {}",
                self.output_dim
            )));
        }
        if self.fc_width == 0 {
            return Err(Error::InvalidArgument("fc width must be positive".into()));
        }
        for layer in &self.stem {
            if let StemLayer::Conv(c) = layer {
                if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "degenerate conv layer {c:?}"
                    )));
                }
            }
        }
        for layer in self.inception_stages.iter().flatten() {
            layer.spec.validate()?;
        }
        if let Some((name, m)) = self
            .lr_multipliers
            .iter()
            .find(|(_, &m)| m.is_nan() || m < 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "learning-rate multiplier for `{name}` must be >= 0, got {m}"
            )));
        }
        self.lrn.validate()
    }
}

pub(crate) const INCEPTION_BRANCHES: [&str; 6] =
    ["1x1", "3x3_reduce", "3x3", "5x5_reduce", "5x5", "pool_proj"];

/// Glob match supporting `*` (any run of characters, including `/`).
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !name.starts_with(first) || name.len() < first.len() + last.len() || !name.ends_with(last) {
        return false;
    }
    let mut rest = &name[first.len()..name.len() - last.len()];
    for part in &parts[1..parts.len() - 1] {
        match rest.find(part) {
            Some(i) => rest = &rest[i + part.len()..],
            None => return false,
        }
    }
    true
}

/// Sets per-layer learning-rate multipliers from `(pattern, multiplier)`
/// rules. Later rules win where patterns overlap.
pub fn apply_lr_multipliers(spec: &NetworkSpec, schedule: &[(&str, f64)]) -> Result<NetworkSpec> {
    if let Some((p, m)) = schedule.iter().find(|(_, m)| m.is_nan() || *m < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning-rate multiplier for `{p}` must be >= 0, got {m}"
        )));
    }
    let mut out = spec.clone();
    for layer in spec.layer_names() {
        for (pattern, mult) in schedule {
            if glob_match(pattern, &layer) {
                out.lr_multipliers.insert(layer.clone(), *mult);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_has_23_layers() {
        assert_eq!(NetworkSpec::reference().counted_layers(), 23);
        assert_eq!(NetworkSpec::desk().counted_layers(), 23);
    }

    #[test]
    fn inception_output_channels() {
        assert_eq!(
            InceptionSpec::new(64, 96, 128, 16, 32, 32).output_channels(),
            256
        );
        assert_eq!(InceptionSpec::new(1, 1, 1, 1, 1, 1).output_channels(), 4);
        assert!(InceptionSpec::new(1, 0, 1, 1, 1, 1).validate().is_err());
    }

    #[test]
    fn glob_patterns() {
        assert!(glob_match("conv*", "conv2_reduce"));
        assert!(glob_match("inception_4*", "inception_4e/5x5"));
        assert!(glob_match("*/pool_proj", "inception_3a/pool_proj"));
        assert!(glob_match("fc", "fc"));
        assert!(!glob_match("fc", "fc2"));
        assert!(!glob_match("conv*", "inception_3a/1x1"));
        assert!(glob_match("*", "anything"));
        assert!(glob_match("a*b*c", "axxbyyc"));
        assert!(!glob_match("a*b*c", "axxc"));
    }

    #[test]
    fn multiplier_schedule() {
        let spec = NetworkSpec::desk();
        let s =
            apply_lr_multipliers(&spec, &[("*", 1.0), ("conv*", 0.1), ("regressor", 2.0)]).unwrap();
        assert_eq!(s.lr_multiplier("conv1"), 0.1);
        assert_eq!(s.lr_multiplier("conv2"), 0.1);
        assert_eq!(s.lr_multiplier("inception_3a/1x1"), 1.0);
        assert_eq!(s.lr_multiplier("regressor"), 2.0);
        assert!(apply_lr_multipliers(&spec, &[("fc", -0.5)]).is_err());
    }
}
