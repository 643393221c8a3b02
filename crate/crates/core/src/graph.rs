//! Static compute graph with reverse-mode differentiation.
//!
//! Nodes are appended in topological order: a node may only reference nodes
//! created before it, so the graph is acyclic by construction. Learnable
//! tensors live in the graph as named [`Parameter`]s.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::loss::{raw_loss_grad, raw_residuals, PoseLossSpec};
use crate::ops::{self, LrnParams, PoolGeometry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Externally fed tensor.
    Input(String),
    Param(ParamId),
    /// Inputs: image, kernel, bias.
    Conv2d {
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Lrn(LrnParams),
    Concat,
    /// `[N,C,H,W]` to `[N, C*H*W]`.
    Flatten,
    /// Inputs: features, weight, bias.
    Linear,
    /// Euclidean norm of the whole input.
    L2Norm,
    /// `sum(a * b)` over two equally shaped inputs.
    Dot,
    Sum,
    /// Inputs: raw `[N,7]` outputs, target `[N,7]` poses. Output `[N]`.
    PoseLoss(PoseLossSpec),
    /// `sum_i weight_i * sum(top_i)` over all inputs.
    WeightedLoss(Vec<f64>),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::AvgPool2d { .. } => "avgpool2d",
            Op::Relu => "relu",
            Op::Lrn(_) => "lrn",
            Op::Concat => "concat",
            Op::Flatten => "flatten",
            Op::Linear => "linear",
            Op::L2Norm => "l2_norm",
            Op::Dot => "dot",
            Op::Sum => "sum",
            Op::PoseLoss(_) => "pose_loss",
            Op::WeightedLoss(_) => "weighted_loss",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Input(_) | Op::Param(_) => Some(0),
            Op::Conv2d { .. } | Op::Linear => Some(3),
            Op::PoseLoss(_) | Op::Dot => Some(2),
            Op::Concat => None,
            Op::WeightedLoss(w) => Some(w.len()),
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
}

/// A named learnable tensor with its learning-rate multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub lr_multiplier: f64,
}

/// Parameter gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    params: Vec<Parameter>,
    values: Vec<Option<Tensor>>,
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Swaps a node's operator hyperparameters; the kind must not change.
    pub(crate) fn replace_op(&mut self, id: NodeId, op: Op) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if node.op.kind() != op.kind() || node.op.arity() != op.arity() {
            return Err(Error::Graph(format!(
                "cannot replace {} with {}",
                node.op.kind(),
                op.kind()
            )));
        }
        node.op = op;
        self.values[id.0] = None;
        Ok(())
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Operator kinds in topological order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn add(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(arity) = op.arity() {
            if arity != inputs.len() {
                return Err(Error::Graph(format!(
                    "{} takes {arity} inputs, got {}",
                    op.kind(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Graph(format!(
                "{} needs at least one input",
                op.kind()
            )));
        }
        let id = NodeId(self.nodes.len());
        if let Some(bad) = inputs.iter().find(|i| i.0 >= id.0) {
            return Err(Error::Graph(format!(
                "node {} would reference later node {}",
                id.0, bad.0
            )));
        }
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
        });
        self.values.push(None);
        Ok(id)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.add(Op::Input(name.to_string()), &[])
            .expect("leaf node")
    }

    /// Registers a learnable tensor. Names must be unique.
    pub fn parameter(
        &mut self,
        name: &str,
        mut value: Tensor,
        lr_multiplier: f64,
    ) -> Result<NodeId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Graph(format!("duplicate parameter name `{name}`")));
        }
        if lr_multiplier.is_nan() || lr_multiplier < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning-rate multiplier for `{name}` must be >= 0, got {lr_multiplier}"
            )));
        }
        value.set_requires_grad(true);
        let pid = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            lr_multiplier,
        });
        self.add(Op::Param(pid), &[])
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Feeds an input node. Invalidates every cached forward value.
    pub fn set_input(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        if !matches!(self.nodes.get(id.0).map(|n| &n.op), Some(Op::Input(_))) {
            return Err(Error::Graph(format!("node {} is not an input", id.0)));
        }
        for (i, v) in self.values.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Input(_)) {
                *v = None;
            }
        }
        self.values[id.0] = Some(value);
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        match self.nodes.get(id.0)?.op {
            Op::Param(p) => Some(&self.params[p.0].value),
            _ => self.values[id.0].as_ref(),
        }
    }

    fn get(&self, id: NodeId) -> Result<&Tensor> {
        self.value(id).ok_or_else(|| {
            Error::Graph(format!(
                "node {} ({}) has no value",
                id.0,
                self.nodes[id.0].op.kind()
            ))
        })
    }

    /// Evaluates every node up to and including `target`, caching values for
    /// [`ComputeGraph::backward`].
    pub fn forward_to(&mut self, target: NodeId) -> Result<&Tensor> {
        for i in 0..=target.0 {
            if matches!(self.nodes[i].op, Op::Input(_) | Op::Param(_)) {
                continue;
            }
            let out = {
                let args = self.nodes[i]
                    .inputs
                    .iter()
                    .map(|&n| self.get(n))
                    .collect::<Result<Vec<_>>>()?;
                eval_op(&self.nodes[i].op, &args)?
            };
            self.values[i] = Some(out);
        }
        self.get(target)
    }

    /// Evaluates the whole graph.
    pub fn forward(&mut self) -> Result<()> {
        if let Some(last) = self.nodes.len().checked_sub(1) {
            self.forward_to(NodeId(last))?;
        }
        Ok(())
    }

    /// Side-effect free evaluation of `target` from explicit input feeds.
    ///
    /// Intermediate values are dropped once no later node needs them.
    pub fn evaluate(&self, feeds: &[(NodeId, &Tensor)], target: NodeId) -> Result<Tensor> {
        let mut last_use = vec![0usize; target.0 + 1];
        for i in 0..=target.0 {
            for inp in &self.nodes[i].inputs {
                last_use[inp.0] = i;
            }
        }
        let mut local: Vec<Option<Tensor>> = vec![None; target.0 + 1];
        for i in 0..=target.0 {
            let node = &self.nodes[i];
            let out = match node.op {
                Op::Param(_) => continue,
                Op::Input(_) => match feeds.iter().find(|(id, _)| id.0 == i) {
                    Some((_, t)) => (*t).clone(),
                    None => continue,
                },
                _ => {
                    let args = node
                        .inputs
                        .iter()
                        .map(|&n| match self.nodes[n.0].op {
                            Op::Param(p) => Ok(&self.params[p.0].value),
                            _ => local[n.0].as_ref().ok_or_else(|| {
                                Error::Graph(format!(
                                    "node {} ({}) has no value",
                                    n.0,
                                    self.nodes[n.0].op.kind()
                                ))
                            }),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    eval_op(&node.op, &args)?
                }
            };
            local[i] = Some(out);
            for inp in &node.inputs {
                if last_use[inp.0] == i {
                    local[inp.0] = None;
                }
            }
        }
        local[target.0]
            .take()
            .ok_or_else(|| Error::Graph(format!("target node {} has no value", target.0)))
    }

    /// Nodes whose value depends on a parameter that requires a gradient.
    fn grad_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            mask[i] = match node.op {
                Op::Param(p) => self.params[p.0].value.requires_grad(),
                Op::Input(_) => false,
                _ => node.inputs.iter().any(|n| mask[n.0]),
            };
        }
        mask
    }

    /// Reverse-mode gradients of the scalar `loss` w.r.t. every parameter.
    ///
    /// Also stores each gradient on its parameter tensor. Parameters that do
    /// not influence `loss` get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.get(loss)?;
        if !loss_value.is_scalar() {
            return Err(Error::Graph(format!(
                "loss node must be scalar, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mask = self.grad_mask();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !mask[i] {
                continue;
            }
            if let Op::Param(p) = self.nodes[i].op {
                param_grads[p.0] = Some(g);
                continue;
            }
            let contributions = self.backward_node(i, &g, &mask)?;
            for (input, dg) in self.nodes[i].inputs.iter().zip(contributions) {
                let Some(dg) = dg else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(dg),
                }
            }
        }

        let mut out = Gradients::new();
        for (p, g) in self.params.iter_mut().zip(param_grads) {
            let g = g.unwrap_or_else(|| vec![0.0; p.value.len()]);
            if p.value.requires_grad() {
                p.value.set_grad(g.clone())?;
            }
            out.insert(p.name.clone(), Tensor::new(p.value.shape().to_vec(), g)?);
        }
        Ok(out)
    }

    /// Gradient contributions to each input of node `i` (None where not needed).
    fn backward_node(&self, i: usize, g: &[f64], mask: &[bool]) -> Result<Vec<Option<Vec<f64>>>> {
        let node = &self.nodes[i];
        let need = |k: usize| mask[node.inputs[k].0];
        let arg = |k: usize| self.get(node.inputs[k]);
        Ok(match &node.op {
            Op::Input(_) | Op::Param(_) => Vec::new(),
            Op::Conv2d { stride, pad } => {
                let r = ops::conv2d_backward(arg(0)?, arg(1)?, arg(2)?, *stride, *pad, g, need(0))?;
                vec![r.input, Some(r.kernel), Some(r.bias)]
            }
            Op::MaxPool2d {
                window,
                stride,
                pad,
            } => {
                let x = arg(0)?;
                let geo = PoolGeometry::new("maxpool2d", x, *window, *stride, *pad)?;
                vec![Some(ops::maxpool2d_backward(&geo, x, g))]
            }
            Op::AvgPool2d { window, stride } => {
                let x = arg(0)?;
                let geo = PoolGeometry::new("avgpool2d", x, *window, *stride, 0)?;
                vec![Some(ops::avgpool2d_backward(&geo, x.len(), g))]
            }
            Op::Relu => vec![Some(ops::relu_backward(arg(0)?, g))],
            Op::Lrn(p) => vec![Some(ops::lrn_backward(arg(0)?, p, g)?)],
            Op::Concat => {
                let out = self.get(NodeId(i))?;
                let (n, total, h, w) = out.image_dims("concat")?;
                let plane = h * w;
                let mut offset = 0;
                let mut parts = Vec::with_capacity(node.inputs.len());
                for (k, &input) in node.inputs.iter().enumerate() {
                    let (_, c, _, _) = self.get(input)?.image_dims("concat")?;
                    if need(k) {
                        let mut d = Vec::with_capacity(n * c * plane);
                        for s in 0..n {
                            let base = (s * total + offset) * plane;
                            d.extend_from_slice(&g[base..base + c * plane]);
                        }
                        parts.push(Some(d));
                    } else {
                        parts.push(None);
                    }
                    offset += c;
                }
                parts
            }
            Op::Flatten => vec![Some(g.to_vec())],
            Op::Linear => {
                let r = ops::linear_backward(arg(0)?, arg(1)?, arg(2)?, g)?;
                vec![Some(r.input), Some(r.weight), Some(r.bias)]
            }
            Op::L2Norm => {
                let x = arg(0)?;
                let d = ops::l2_norm_grad(x.data(), ops::NORM_STABILIZER);
                vec![Some(d.into_iter().map(|v| v * g[0]).collect())]
            }
            Op::Dot => {
                let (a, b) = (arg(0)?, arg(1)?);
                vec![
                    need(0).then(|| b.data().iter().map(|v| v * g[0]).collect()),
                    need(1).then(|| a.data().iter().map(|v| v * g[0]).collect()),
                ]
            }
            Op::Sum => vec![Some(vec![g[0]; arg(0)?.len()])],
            Op::PoseLoss(spec) => {
                let (raw, target) = (arg(0)?, arg(1)?);
                let n = pose_rows(raw, target)?;
                let mut d = Vec::with_capacity(n * 7);
                let rows = raw.data().chunks(7).zip(target.data().chunks(7));
                for ((raw_row, target_row), scale) in rows.zip(&g[..n]) {
                    let row = raw_loss_grad(raw_row, target_row, spec);
                    d.extend(row.iter().map(|v| v * scale));
                }
                vec![Some(d), None]
            }
            Op::WeightedLoss(weights) => weights
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    Ok(need(k).then(|| {
                        vec![w * g[0]; self.get(node.inputs[k]).map(|t| t.len()).unwrap_or(0)]
                    }))
                })
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

fn eval_op(op: &Op, args: &[&Tensor]) -> Result<Tensor> {
    Ok(match op {
        Op::Input(_) | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::Conv2d { stride, pad } => ops::conv2d(args[0], args[1], args[2], *stride, *pad)?,
        Op::MaxPool2d {
            window,
            stride,
            pad,
        } => ops::maxpool2d_padded(args[0], *window, *stride, *pad)?,
        Op::AvgPool2d { window, stride } => ops::avgpool2d(args[0], *window, *stride)?,
        Op::Relu => ops::relu(args[0]),
        Op::Lrn(p) => ops::lrn(args[0], p)?,
        Op::Concat => ops::concat_channels(args)?,
        Op::Flatten => {
            let x = args[0];
            let (n, c, h, w) = x.image_dims("flatten")?;
            x.clone().reshape(&[n, c * h * w])?
        }
        Op::Linear => ops::linear(args[0], args[1], args[2])?,
        Op::L2Norm => Tensor::scalar(ops::l2_norm(args[0])),
        Op::Dot => {
            let (a, b) = (args[0], args[1]);
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    "dot",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        }
        Op::Sum => Tensor::scalar(args[0].data().iter().sum()),
        Op::PoseLoss(spec) => {
            let (raw, target) = (args[0], args[1]);
            let n = pose_rows(raw, target)?;
            let losses = (0..n)
                .map(|r| {
                    raw_residuals(
                        &raw.data()[r * 7..r * 7 + 7],
                        &target.data()[r * 7..r * 7 + 7],
                        spec.norm_stabilizer,
                    )
                    .total(spec.beta)
                })
                .collect();
            Tensor::new(vec![n], losses)?
        }
        Op::WeightedLoss(weights) => {
            let mut total = 0.0;
            for (k, w) in weights.iter().enumerate() {
                total += w * args[k].data().iter().sum::<f64>();
            }
            Tensor::scalar(total)
        }
    })
}

fn pose_rows(raw: &Tensor, target: &Tensor) -> Result<usize> {
    match (raw.shape(), target.shape()) {
        ([n, 7], [m, 7]) if n == m => Ok(*n),
        (a, b) => Err(Error::shape(
            "pose_loss",
            format!("expected [N,7] pairs, got {a:?} and {b:?}"),
        )),
    }
}

/// Central-difference check of one parameter's gradient.
///
/// Returns the maximum over elements of `|a - b| / max(|a|, |b|, 1e-8)`
/// between the analytic and numeric gradients. Inputs must already be fed;
/// the parameter is restored exactly afterwards.
pub fn finite_diff_check(
    graph: &mut ComputeGraph,
    loss: NodeId,
    parameter: &str,
    epsilon: f64,
) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let pidx = graph
        .params
        .iter()
        .position(|p| p.name == parameter)
        .ok_or_else(|| Error::Graph(format!("unknown parameter `{parameter}`")))?;
    graph.forward_to(loss)?;
    let analytic = graph
        .backward(loss)?
        .remove(parameter)
        .expect("gradient for every parameter");

    let mut worst: f64 = 0.0;
    for e in 0..analytic.len() {
        let original = graph.params[pidx].value.data()[e];
        graph.params[pidx].value.data_mut()[e] = original + epsilon;
        let up = graph.forward_to(loss)?.item();
        graph.params[pidx].value.data_mut()[e] = original - epsilon;
        let down = graph.forward_to(loss)?.item();
        graph.params[pidx].value.data_mut()[e] = original;

        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.data()[e];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    graph.forward_to(loss)?;
    Ok(worst)
}

/// [`finite_diff_check`] over every parameter; zero for a graph without parameters.
pub fn finite_diff_check_all(graph: &mut ComputeGraph, loss: NodeId, epsilon: f64) -> Result<f64> {
    let names: Vec<String> = graph.params.iter().map(|p| p.name.clone()).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        worst = worst.max(finite_diff_check(graph, loss, &name, epsilon)?);
    }
    Ok(worst)
}

/// Names of parameters feeding `node`, in registration order.
pub fn parameters_upstream(graph: &ComputeGraph, node: NodeId) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        if seen.insert(n) {
            stack.extend_from_slice(graph.node_inputs(n));
        }
    }
    let mut names = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if let Op::Param(p) = node.op {
            if seen.contains(&NodeId(i)) {
                names.push(graph.params[p.0].name.clone());
            }
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_gradient_is_unit_vector() {
        let mut g = ComputeGraph::new();
        let w = g
            .parameter("w", Tensor::from_vec(vec![3.0, 4.0]), 1.0)
            .unwrap();
        let loss = g.add(Op::L2Norm, &[w]).unwrap();
        assert_eq!(g.forward_to(loss).unwrap().item(), 5.0);
        let grads = g.backward(loss).unwrap();
        let gw = grads["w"].data();
        assert!((gw[0] - 0.6).abs() < 1e-15 && (gw[1] - 0.8).abs() < 1e-15);
        assert_eq!(g.param("w").unwrap().value.grad().unwrap(), gw);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = ComputeGraph::new();
        let w = g
            .parameter("w", Tensor::from_vec(vec![1.0, 2.0]), 1.0)
            .unwrap();
        g.parameter("unused", Tensor::from_vec(vec![5.0; 3]), 1.0)
            .unwrap();
        let loss = g.add(Op::Sum, &[w]).unwrap();
        g.forward_to(loss).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["unused"].data(), &[0.0; 3]);
        assert_eq!(grads["w"].data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_missing_values() {
        let mut g = ComputeGraph::new();
        let w = g
            .parameter("w", Tensor::from_vec(vec![1.0, 2.0]), 1.0)
            .unwrap();
        let r = g.add(Op::Relu, &[w]).unwrap();
        let s = g.add(Op::Sum, &[r]).unwrap();
        assert!(g.backward(s).is_err(), "no forward values yet");
        g.forward_to(s).unwrap();
        assert!(g.backward(r).is_err(), "relu output is not scalar");
        assert!(g.backward(s).is_ok());
    }

    #[test]
    fn rejects_duplicates_and_forward_references() {
        let mut g = ComputeGraph::new();
        g.parameter("a", Tensor::scalar(1.0), 1.0).unwrap();
        assert!(g.parameter("a", Tensor::scalar(1.0), 1.0).is_err());
        assert!(g.add(Op::Relu, &[NodeId(5)]).is_err());
        assert!(g
            .add(Op::Conv2d { stride: 1, pad: 0 }, &[NodeId(0)])
            .is_err());
    }

    #[test]
    fn zero_parameter_graph_checks_clean() {
        let mut g = ComputeGraph::new();
        let x = g.input("x");
        let loss = g.add(Op::Sum, &[x]).unwrap();
        g.set_input(x, Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(finite_diff_check_all(&mut g, loss, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn conv_relu_sum_matches_finite_differences() {
        let mut g = ComputeGraph::new();
        let x = g.input("x");
        let data: Vec<f64> = (0..2 * 5 * 5)
            .map(|i| (i as f64 * 0.7).sin() + 0.2)
            .collect();
        let k: Vec<f64> = (0..3 * 2 * 3 * 3)
            .map(|i| (i as f64 * 0.7).cos() * 0.5)
            .collect();
        let w = g
            .parameter("k", Tensor::new(vec![3, 2, 3, 3], k).unwrap(), 1.0)
            .unwrap();
        let b = g
            .parameter("b", Tensor::from_vec(vec![0.3, -0.2, 0.1]), 1.0)
            .unwrap();
        let c = g.add(Op::Conv2d { stride: 1, pad: 1 }, &[x, w, b]).unwrap();
        let r = g.add(Op::Relu, &[c]).unwrap();
        let loss = g.add(Op::Sum, &[r]).unwrap();
        g.set_input(x, Tensor::new(vec![2, 5, 5], data).unwrap())
            .unwrap();
        g.forward_to(c).unwrap();
        // keep relu away from its kink so the central difference is exact
        let min_abs = g
            .value(c)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::MAX, f64::min);
        assert!(min_abs > 0.05, "{min_abs}");
        assert!(finite_diff_check_all(&mut g, loss, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn finite_diff_restores_parameters() {
        let mut g = ComputeGraph::new();
        let w = g
            .parameter("w", Tensor::from_vec(vec![0.1, 0.7, -0.3]), 1.0)
            .unwrap();
        let loss = g.add(Op::L2Norm, &[w]).unwrap();
        let before = g.param("w").unwrap().value.data().to_vec();
        finite_diff_check(&mut g, loss, "w", 1e-5).unwrap();
        assert_eq!(g.param("w").unwrap().value.data(), before.as_slice());
    }

    #[test]
    fn upstream_parameters() {
        let mut g = ComputeGraph::new();
        let a = g.parameter("a", Tensor::scalar(1.0), 1.0).unwrap();
        let b = g.parameter("b", Tensor::scalar(1.0), 1.0).unwrap();
        let s = g.add(Op::Sum, &[a]).unwrap();
        let _t = g.add(Op::Sum, &[b]).unwrap();
        assert_eq!(parameters_upstream(&g, s), vec!["a".to_string()]);
    }
}
