use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::weights::{load_tensors, save_tensors, LoadReport};
use super::{apply_lr_multipliers, InceptionSpec, NetworkSpec, StemLayer};
use crate::error::{Error, Result};
use crate::graph::{ComputeGraph, Gradients, NodeId, Op};
use crate::loss::PoseLossSpec;
use crate::pose::Pose;
use crate::tensor::Tensor;

/// He-normal weight initialization with zero biases, drawn in build order
/// from a single seeded stream.
pub struct ParamInit<'a> {
    rng: ChaCha8Rng,
    spec: Option<&'a NetworkSpec>,
}

impl<'a> ParamInit<'a> {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spec: None,
        }
    }

    fn for_spec(spec: &'a NetworkSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.init_seed),
            spec: Some(spec),
        }
    }

    fn multiplier(&self, layer: &str) -> f64 {
        self.spec.map_or(1.0, |s| s.lr_multiplier(layer))
    }

    fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("consistent shape")
    }

    /// Registers `{layer}.weight` and `{layer}.bias`.
    fn weights(
        &mut self,
        graph: &mut ComputeGraph,
        layer: &str,
        shape: &[usize],
        fan_in: usize,
    ) -> Result<(NodeId, NodeId)> {
        let mult = self.multiplier(layer);
        let w = self.he(shape, fan_in);
        let w = graph.parameter(&format!("{layer}.weight"), w, mult)?;
        let b = graph.parameter(&format!("{layer}.bias"), Tensor::zeros(&[shape[0]]), mult)?;
        Ok((w, b))
    }
}

/// Tracks the `(C, H, W)` of the activation being built on.
#[derive(Debug, Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn window(self, what: &str, window: usize, stride: usize, pad: usize) -> Result<Dims> {
        if window > self.h + 2 * pad || window > self.w + 2 * pad {
            return Err(Error::InvalidArgument(format!(
                "{what}: spatial size {}x{} collapses to zero under a {window}x{window} window",
                self.h, self.w
            )));
        }
        Ok(Dims {
            c: self.c,
            h: (self.h + 2 * pad - window) / stride + 1,
            w: (self.w + 2 * pad - window) / stride + 1,
        })
    }
}

/// conv followed by relu.
#[allow(clippy::too_many_arguments)]
fn conv_relu(
    graph: &mut ComputeGraph,
    init: &mut ParamInit,
    x: NodeId,
    dims: Dims,
    layer: &str,
    out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(NodeId, Dims)> {
    let next = dims.window(layer, kernel, stride, pad)?;
    let (w, b) = init.weights(
        graph,
        layer,
        &[out, dims.c, kernel, kernel],
        dims.c * kernel * kernel,
    )?;
    let conv = graph.add(Op::Conv2d { stride, pad }, &[x, w, b])?;
    let relu = graph.add(Op::Relu, &[conv])?;
    Ok((relu, Dims { c: out, ..next }))
}

/// Appends one inception module: 1x1; 1x1 then 3x3; 1x1 then 5x5; 3x3 max
/// pool then 1x1 projection. Each branch ends in a ReLU and the branches are
/// concatenated in that order. Spatial size is preserved.
pub fn build_inception(
    graph: &mut ComputeGraph,
    init: &mut ParamInit,
    input: NodeId,
    in_channels: usize,
    (h, w): (usize, usize),
    spec: &InceptionSpec,
    name: &str,
) -> Result<NodeId> {
    spec.validate()?;
    let dims = Dims {
        c: in_channels,
        h,
        w,
    };
    let (b1, _) = conv_relu(
        graph,
        init,
        input,
        dims,
        &format!("{name}/1x1"),
        spec.c1x1,
        1,
        1,
        0,
    )?;
    let (r3, d3) = conv_relu(
        graph,
        init,
        input,
        dims,
        &format!("{name}/3x3_reduce"),
        spec.c3x3_reduce,
        1,
        1,
        0,
    )?;
    let (b3, _) = conv_relu(
        graph,
        init,
        r3,
        d3,
        &format!("{name}/3x3"),
        spec.c3x3,
        3,
        1,
        1,
    )?;
    let (r5, d5) = conv_relu(
        graph,
        init,
        input,
        dims,
        &format!("{name}/5x5_reduce"),
        spec.c5x5_reduce,
        1,
        1,
        0,
    )?;
    let (b5, _) = conv_relu(
        graph,
        init,
        r5,
        d5,
        &format!("{name}/5x5"),
        spec.c5x5,
        5,
        1,
        2,
    )?;
    let pool = graph.add(
        Op::MaxPool2d {
            window: 3,
            stride: 1,
            pad: 1,
        },
        &[input],
    )?;
    let (bp, _) = conv_relu(
        graph,
        init,
        pool,
        dims,
        &format!("{name}/pool_proj"),
        spec.pool_proj,
        1,
        1,
        0,
    )?;
    graph.add(Op::Concat, &[b1, b3, b5, bp])
}

/// The pose network plus the loss nodes used for training.
#[derive(Debug, Clone)]
pub struct PoseNet {
    spec: NetworkSpec,
    graph: ComputeGraph,
    images: NodeId,
    head: NodeId,
    targets: NodeId,
    pose_loss: NodeId,
    loss: NodeId,
}

/// Builds the network described by `spec` with freshly initialized weights.
pub fn build_pose_network(spec: &NetworkSpec) -> Result<PoseNet> {
    spec.validate()?;
    let mut graph = ComputeGraph::new();
    let mut init = ParamInit::for_spec(spec);
    let [c, h, w] = spec.input_shape;
    let mut dims = Dims { c, h, w };
    let images = graph.input("images");
    let mut x = images;

    for layer in &spec.stem {
        match layer {
            StemLayer::Conv(conv) => {
                (x, dims) = conv_relu(
                    &mut graph,
                    &mut init,
                    x,
                    dims,
                    &conv.name,
                    conv.out_channels,
                    conv.kernel,
                    conv.stride,
                    conv.pad,
                )?;
            }
            &StemLayer::MaxPool {
                window,
                stride,
                pad,
            } => {
                dims = dims.window("stem maxpool", window, stride, pad)?;
                x = graph.add(
                    Op::MaxPool2d {
                        window,
                        stride,
                        pad,
                    },
                    &[x],
                )?;
            }
            StemLayer::Lrn => {
                x = graph.add(Op::Lrn(spec.lrn), &[x])?;
            }
        }
    }

    for (g, group) in spec.inception_stages.iter().enumerate() {
        if g > 0 {
            dims = dims.window("inter-stage maxpool", 3, 2, 1)?;
            x = graph.add(
                Op::MaxPool2d {
                    window: 3,
                    stride: 2,
                    pad: 1,
                },
                &[x],
            )?;
        }
        for layer in group {
            x = build_inception(
                &mut graph,
                &mut init,
                x,
                dims.c,
                (dims.h, dims.w),
                &layer.spec,
                &layer.name,
            )?;
            dims.c = layer.spec.output_channels();
        }
    }

    let window = dims.h.min(dims.w);
    dims = dims.window("average pool", window, 1, 0)?;
    x = graph.add(Op::AvgPool2d { window, stride: 1 }, &[x])?;
    x = graph.add(Op::Flatten, &[x])?;
    let features = dims.c * dims.h * dims.w;

    let (fw, fb) = init.weights(&mut graph, "fc", &[spec.fc_width, features], features)?;
    x = graph.add(Op::Linear, &[x, fw, fb])?;
    x = graph.add(Op::Relu, &[x])?;
    let (rw, rb) = init.weights(
        &mut graph,
        "regressor",
        &[spec.output_dim, spec.fc_width],
        spec.fc_width,
    )?;
    let head = graph.add(Op::Linear, &[x, rw, rb])?;

    let targets = graph.input("targets");
    let pose_loss = graph.add(Op::PoseLoss(PoseLossSpec::default()), &[head, targets])?;
    let loss = graph.add(Op::WeightedLoss(vec![spec.loss_weight]), &[pose_loss])?;

    Ok(PoseNet {
        spec: spec.clone(),
        graph,
        images,
        head,
        targets,
        pose_loss,
        loss,
    })
}

impl PoseNet {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        build_pose_network(spec)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn graph(&self) -> &ComputeGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ComputeGraph {
        &mut self.graph
    }

    pub fn head_node(&self) -> NodeId {
        self.head
    }

    /// Operator kinds of the network proper (no parameters, inputs or loss nodes).
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        let kinds = self.graph.op_kinds();
        kinds[..=self.head.index()]
            .iter()
            .copied()
            .filter(|k| !matches!(*k, "param" | "input"))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.parameter_count()
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let [c, h, w] = self.spec.input_shape;
        match images.shape() {
            [_, ic, ih, iw] if [*ic, *ih, *iw] == [c, h, w] => Ok(()),
            other => Err(Error::shape(
                "forward_pose",
                format!("expected images [N,{c},{h},{w}], got {other:?}"),
            )),
        }
    }

    /// Raw `[N, 7]` regressor output. Pure; safe to call concurrently.
    pub fn forward_raw(&self, images: &Tensor) -> Result<Tensor> {
        self.check_images(images)?;
        self.graph.evaluate(&[(self.images, images)], self.head)
    }

    /// One pose per image, with normalized and sign-canonicalized rotation.
    pub fn forward_pose(&self, images: &Tensor) -> Result<Vec<Pose>> {
        let raw = self.forward_raw(images)?;
        Ok(raw.data().chunks(7).map(Pose::from_raw).collect())
    }

    pub fn beta(&self) -> f64 {
        match self.graph.op(self.pose_loss) {
            Op::PoseLoss(spec) => spec.beta,
            _ => unreachable!("pose loss node"),
        }
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        let spec = PoseLossSpec::new(beta)?;
        self.graph.replace_op(self.pose_loss, Op::PoseLoss(spec))
    }

    /// Forward and backward pass over one batch.
    ///
    /// `targets` is `[N, 7]` of canonical poses. Returns the raw head output,
    /// the aggregated loss and the parameter gradients.
    pub fn loss_and_gradients(
        &mut self,
        images: Tensor,
        targets: Tensor,
    ) -> Result<(Tensor, f64, Gradients)> {
        self.check_images(&images)?;
        self.graph.set_input(self.images, images)?;
        self.graph.set_input(self.targets, targets)?;
        let loss = self.graph.forward_to(self.loss)?.item();
        let raw = self
            .graph
            .value(self.head)
            .cloned()
            .expect("head evaluated");
        let grads = self.graph.backward(self.loss)?;
        Ok((raw, loss, grads))
    }

    /// Applies `(layer pattern, multiplier)` rules to the network spec and to every
    /// registered parameter. Later rules win where patterns overlap.
    pub fn set_lr_multipliers(&mut self, schedule: &[(&str, f64)]) -> Result<()> {
        self.spec = apply_lr_multipliers(&self.spec, schedule)?;
        for p in self.graph.params_mut() {
            let layer = p
                .name
                .rsplit_once('.')
                .map_or(p.name.as_str(), |(layer, _)| layer);
            p.lr_multiplier = self.spec.lr_multiplier(layer);
        }
        Ok(())
    }

    /// Copies of all parameter values in registration order, without
    /// gradient buffers or flags.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.graph
            .params()
            .iter()
            .map(|p| {
                Tensor::new(p.value.shape().to_vec(), p.value.data().to_vec())
                    .expect("parameter shape")
            })
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let params = self.graph.params_mut();
        if snapshot.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "snapshot has {} tensors, network has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(snapshot) {
            if p.value.shape() != s.shape() {
                return Err(Error::ParameterShapes(vec![p.name.clone()]));
            }
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            p.value.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let named: Vec<(&str, &Tensor)> = self
            .graph
            .params()
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        save_tensors(path, &named)
    }

    /// Loads parameters by name. Parameters absent from the file keep their
    /// current values and are listed in the report. Any shape mismatch fails
    /// the whole load without modifying the network.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<LoadReport> {
        let tensors = load_tensors(path)?;
        let mut mismatched = Vec::new();
        for (name, t) in &tensors {
            if let Some(p) = self.graph.param(name) {
                if p.value.shape() != t.shape() {
                    mismatched.push(format!(
                        "{name} (expected {:?}, file has {:?})",
                        p.value.shape(),
                        t.shape()
                    ));
                }
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::ParameterShapes(mismatched));
        }
        let mut report = LoadReport::default();
        for (name, t) in tensors {
            match self.graph.param_mut(&name) {
                Some(p) => {
                    p.value.data_mut().copy_from_slice(t.data());
                    report.loaded.push(name);
                }
                None => report.ignored.push(name),
            }
        }
        report.untouched = self
            .graph
            .params()
            .iter()
            .filter(|p| !report.loaded.contains(&p.name))
            .map(|p| p.name.clone())
            .collect();
        Ok(report)
    }
}
