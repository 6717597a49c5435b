//! The operation tape and reverse-mode sweep.

use super::ops::{
    axis_geometry, conv3d_backward_input, conv3d_backward_weight, reduce_to_shape, softmax_axis,
    Conv3dDims,
};
use super::{numel_of, Tensor, TensorId};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// One differentiable operation, with whatever context its backward needs.
pub(crate) enum OpKind {
    Add,
    Sub,
    Mul,
    Matmul,
    Conv3d { dims: Conv3dDims },
    Relu,
    MeanAxis { axis: usize },
    SumAxis { axis: usize },
    Reshape,
    Concat { axis: usize },
    Softmax { axis: usize },
    Log,
    L2Norm,
    Dot,
    MaxPool3d { dims: Conv3dDims, argmax: Vec<u32> },
    GlobalAvgPool,
    Affine { scale: f32 },
    Recip,
    CrossEntropy { target: usize },
}

struct Node {
    op: OpKind,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Ordered record of executed differentiable operations.
///
/// Operations are appended in execution order, which is a topological order
/// of the dataflow by construction: an operation's inputs always exist before
/// it runs. [`GradGraph::backward`] visits each recorded operation exactly
/// once, in reverse.
#[derive(Default)]
pub struct GradGraph {
    nodes: Vec<Node>,
}

impl GradGraph {
    pub fn new() -> Self {
        GradGraph::default()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all recorded operations. Accumulated leaf gradients are kept.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub(crate) fn record(
        &mut self,
        op: OpKind,
        inputs: &[&Tensor],
        out_shape: Vec<usize>,
        out_data: Vec<f32>,
    ) -> Tensor {
        let requires = inputs.iter().any(|t| t.requires_grad());
        let output = Tensor::from_op_output(out_shape, out_data, requires);
        if requires {
            self.nodes.push(Node {
                op,
                inputs: inputs.iter().map(|&t| t.clone()).collect(),
                output: output.clone(),
            });
        }
        output
    }

    pub(crate) fn record_multi(
        &mut self,
        op: OpKind,
        inputs: &[&Tensor],
        out_shape: Vec<usize>,
        out_data: Vec<f32>,
    ) -> Tensor {
        self.record(op, inputs, out_shape, out_data)
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Populates (accumulates into) the `grad` of every `requires_grad` leaf
    /// reachable from `loss`. Calling backward again without `zero_grad`
    /// accumulates on top of the existing gradients.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if loss.shape() != [1] {
            return Err(Error::NonScalarLoss { shape: loss.shape() });
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut flowing: HashMap<TensorId, Vec<f32>> = HashMap::new();
        flowing.insert(loss.id(), vec![1.0]);

        for node in self.nodes.iter().rev() {
            let Some(gout) = flowing.remove(&node.output.id()) else {
                continue;
            };
            let contributions = node_backward(node, &gout);
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                if input.is_from_op() {
                    match flowing.get_mut(&input.id()) {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contribution) {
                                *a += c;
                            }
                        }
                        None => {
                            flowing.insert(input.id(), contribution);
                        }
                    }
                } else if input.requires_grad() {
                    input.accumulate_grad(&contribution);
                }
            }
        }
        Ok(())
    }
}

/// Per-input gradient contributions of one node; `None` for inputs that do
/// not require gradient.
fn node_backward(node: &Node, gout: &[f32]) -> Vec<Option<Vec<f32>>> {
    let needs: Vec<bool> = node.inputs.iter().map(|t| t.requires_grad()).collect();
    let out_shape = node.output.shape();
    match &node.op {
        OpKind::Add => {
            let mut out = Vec::with_capacity(2);
            for (i, input) in node.inputs.iter().enumerate() {
                out.push(needs[i].then(|| reduce_to_shape(gout, &out_shape, &input.shape())));
            }
            out
        }
        OpKind::Sub => {
            let a = needs[0].then(|| reduce_to_shape(gout, &out_shape, &node.inputs[0].shape()));
            let b = needs[1].then(|| {
                let neg: Vec<f32> = gout.iter().map(|&g| -g).collect();
                reduce_to_shape(&neg, &out_shape, &node.inputs[1].shape())
            });
            vec![a, b]
        }
        OpKind::Mul => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            let ga = needs[0].then(|| {
                let full = broadcast_product(gout, &out_shape, &b.data(), &b.shape());
                reduce_to_shape(&full, &out_shape, &a.shape())
            });
            let gb = needs[1].then(|| {
                let full = broadcast_product(gout, &out_shape, &a.data(), &a.shape());
                reduce_to_shape(&full, &out_shape, &b.shape())
            });
            vec![ga, gb]
        }
        OpKind::Matmul => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            let (sa, sb) = (a.shape(), b.shape());
            let (m, k) = (sa[0], sa[1]);
            if sb.len() == 2 {
                let n = sb[1];
                let ga = needs[0].then(|| {
                    let (bd, mut out) = (b.data(), vec![0.0f32; m * k]);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0f32;
                            for j in 0..n {
                                acc += gout[i * n + j] * bd[p * n + j];
                            }
                            out[i * k + p] = acc;
                        }
                    }
                    out
                });
                let gb = needs[1].then(|| {
                    let (ad, mut out) = (a.data(), vec![0.0f32; k * n]);
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            let dst = &mut out[p * n..(p + 1) * n];
                            for (o, &g) in dst.iter_mut().zip(grow) {
                                *o += aip * g;
                            }
                        }
                    }
                    out
                });
                vec![ga, gb]
            } else {
                // a: [m,k], b: [k] -> out [m]
                let ga = needs[0].then(|| {
                    let (bd, mut out) = (b.data(), vec![0.0f32; m * k]);
                    for i in 0..m {
                        let g = gout[i];
                        for p in 0..k {
                            out[i * k + p] = g * bd[p];
                        }
                    }
                    out
                });
                let gb = needs[1].then(|| {
                    let (ad, mut out) = (a.data(), vec![0.0f32; k]);
                    for i in 0..m {
                        let g = gout[i];
                        let row = &ad[i * k..(i + 1) * k];
                        for (o, &av) in out.iter_mut().zip(row) {
                            *o += g * av;
                        }
                    }
                    out
                });
                vec![ga, gb]
            }
        }
        OpKind::Conv3d { dims } => {
            let (x, w) = (&node.inputs[0], &node.inputs[1]);
            let gx = needs[0].then(|| conv3d_backward_input(gout, &w.data(), dims));
            let gw = needs[1].then(|| conv3d_backward_weight(gout, &x.data(), dims));
            vec![gx, gw]
        }
        OpKind::Relu => {
            let g = needs[0].then(|| {
                node.inputs[0]
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect()
            });
            vec![g]
        }
        OpKind::MeanAxis { axis } | OpKind::SumAxis { axis } => {
            let mean = matches!(node.op, OpKind::MeanAxis { .. });
            let g = needs[0].then(|| {
                let in_shape = node.inputs[0].shape();
                let (outer, len, inner) = axis_geometry(&in_shape, *axis);
                let scale = if mean { 1.0 / len as f32 } else { 1.0 };
                let mut out = vec![0.0f32; numel_of(&in_shape)];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        let src = o * inner;
                        for i in 0..inner {
                            out[base + i] = gout[src + i] * scale;
                        }
                    }
                }
                out
            });
            vec![g]
        }
        OpKind::Reshape => {
            vec![needs[0].then(|| gout.to_vec())]
        }
        OpKind::Concat { axis } => {
            let shapes: Vec<Vec<usize>> = node.inputs.iter().map(|t| t.shape()).collect();
            let inner: usize = shapes[0][axis + 1..].iter().product();
            let outer: usize = shapes[0][..*axis].iter().product();
            let total_axis = out_shape[*axis];
            let mut outs: Vec<Option<Vec<f32>>> = needs
                .iter()
                .zip(&shapes)
                .map(|(&n, s)| n.then(|| vec![0.0f32; numel_of(s)]))
                .collect();
            for o in 0..outer {
                let mut offset = 0usize;
                for (idx, s) in shapes.iter().enumerate() {
                    let block = s[*axis] * inner;
                    if let Some(out) = &mut outs[idx] {
                        let src = o * total_axis * inner + offset;
                        out[o * block..(o + 1) * block].copy_from_slice(&gout[src..src + block]);
                    }
                    offset += block;
                }
            }
            outs
        }
        OpKind::Softmax { axis } => {
            let g = needs[0].then(|| {
                let y = node.output.data();
                let (outer, len, inner) = axis_geometry(&out_shape, *axis);
                let mut out = vec![0.0f32; gout.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0f32;
                        for j in 0..len {
                            let idx = base + j * inner;
                            dot += gout[idx] * y[idx];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            out[idx] = y[idx] * (gout[idx] - dot);
                        }
                    }
                }
                out
            });
            vec![g]
        }
        OpKind::Log => {
            let g = needs[0].then(|| {
                node.inputs[0]
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| g / x)
                    .collect()
            });
            vec![g]
        }
        OpKind::L2Norm => {
            let g = needs[0].then(|| {
                let norm = node.output.item();
                let x = node.inputs[0].data();
                if norm == 0.0 {
                    // Subgradient at the origin: zero, so zero-norm features
                    // never produce NaN gradients.
                    vec![0.0f32; x.len()]
                } else {
                    let scale = gout[0] / norm;
                    x.iter().map(|&v| v * scale).collect()
                }
            });
            vec![g]
        }
        OpKind::Dot => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            let g = gout[0];
            let ga = needs[0].then(|| b.data().iter().map(|&v| g * v).collect());
            let gb = needs[1].then(|| a.data().iter().map(|&v| g * v).collect());
            vec![ga, gb]
        }
        OpKind::MaxPool3d { argmax, .. } => {
            let g = needs[0].then(|| {
                let mut out = vec![0.0f32; node.inputs[0].numel()];
                for (&idx, &g) in argmax.iter().zip(gout) {
                    out[idx as usize] += g;
                }
                out
            });
            vec![g]
        }
        OpKind::GlobalAvgPool => {
            let g = needs[0].then(|| {
                let in_shape = node.inputs[0].shape();
                let per_ch: usize = in_shape[1..].iter().product();
                let inv = 1.0 / per_ch as f32;
                let mut out = vec![0.0f32; numel_of(&in_shape)];
                for c in 0..in_shape[0] {
                    let gv = gout[c] * inv;
                    for v in &mut out[c * per_ch..(c + 1) * per_ch] {
                        *v = gv;
                    }
                }
                out
            });
            vec![g]
        }
        OpKind::Affine { scale } => {
            vec![needs[0].then(|| gout.iter().map(|&g| g * scale).collect())]
        }
        OpKind::Recip => {
            let g = needs[0].then(|| {
                let y = node.output.data();
                y.iter().zip(gout).map(|(&y, &g)| -g * y * y).collect()
            });
            vec![g]
        }
        OpKind::CrossEntropy { target } => {
            let g = needs[0].then(|| {
                let x = node.inputs[0].data();
                let shape = node.inputs[0].shape();
                let mut sm = softmax_axis(&x, &shape, 0);
                sm[*target] -= 1.0;
                for v in &mut sm {
                    *v *= gout[0];
                }
                sm
            });
            vec![g]
        }
    }
}

/// Elementwise `g * other` where `other` broadcasts to the output shape.
fn broadcast_product(g: &[f32], out_shape: &[usize], other: &[f32], other_shape: &[usize]) -> Vec<f32> {
    if out_shape == other_shape {
        return g.iter().zip(other).map(|(&a, &b)| a * b).collect();
    }
    let rank = out_shape.len();
    let strides = super::ops::broadcast_strides_for(other_shape, rank);
    let mut out = vec![0.0f32; g.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut io = 0;
        for d in (0..rank).rev() {
            let c = rem % out_shape[d];
            rem /= out_shape[d];
            io += c * strides[d];
        }
        *slot = g[flat] * other[io];
    }
    out
}
