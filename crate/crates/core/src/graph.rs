//! Reverse-mode automatic differentiation over a static operation graph.
//!
//! A [`Graph`] is built once (nodes are appended in topological order by
//! construction, with shapes inferred and validated at build time), then
//! run repeatedly: [`Graph::forward`] caches every intermediate value,
//! [`Graph::backward`] walks the tape in reverse and accumulates one
//! gradient per trainable leaf. Gradients reset on every backward call.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Scalar, Shape, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Input { name: String },
    Param { name: String },
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Square(NodeId),
    Abs(NodeId),
    Relu(NodeId),
    Log(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Clamp(NodeId, f64, f64),
    MeanAll(NodeId),
    SumAll(NodeId),
    Conv2d { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    DepthwiseConv2d { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    DeformConv2d { x: NodeId, w: NodeId, offsets: NodeId, b: Option<NodeId>, spec: ConvSpec },
    PixelShuffle { x: NodeId, r: usize },
    PixelUnshuffle { x: NodeId, r: usize },
    Concat(Vec<NodeId>),
}

struct Node {
    op: Op,
    shape: Shape,
}

/// Static computation graph with retained forward values.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node>,
    /// Leaf values for Param and Const nodes.
    leaf_values: HashMap<NodeId, Tensor<T>>,
    params: Vec<NodeId>,
    outputs: Vec<(String, NodeId)>,
    values: Vec<Option<Tensor<T>>>,
    forward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            leaf_values: HashMap::new(),
            params: Vec::new(),
            outputs: Vec::new(),
            values: Vec::new(),
            forward_done: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape_of(&self, id: NodeId) -> Shape {
        self.nodes[id].shape
    }

    /// Trainable leaves in creation order.
    pub fn param_ids(&self) -> &[NodeId] {
        &self.params
    }

    pub fn param_name(&self, id: NodeId) -> &str {
        match &self.nodes[id].op {
            Op::Param { name } => name,
            _ => panic!("node {id} is not a parameter"),
        }
    }

    pub fn param_value(&self, id: NodeId) -> &Tensor<T> {
        &self.leaf_values[&id]
    }

    pub fn set_param_value(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let shape = self.nodes[id].shape;
        if value.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: format!("parameter '{}'", self.param_name(id)),
                expected: shape,
                actual: value.shape(),
            });
        }
        self.leaf_values.insert(id, value);
        self.forward_done = false;
        Ok(())
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, shape });
        self.values.push(None);
        id
    }

    // ---- leaves -------------------------------------------------------

    pub fn input(&mut self, name: &str, shape: Shape) -> NodeId {
        self.push(Op::Input { name: name.to_string() }, shape)
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        let id = self.push(Op::Param { name: name.to_string() }, shape);
        self.leaf_values.insert(id, value);
        self.params.push(id);
        id
    }

    /// Fixed, non-trainable value (e.g. the SSIM Gaussian window).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape();
        let id = self.push(Op::Const, shape);
        self.leaf_values.insert(id, value);
        id
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    // ---- elementwise --------------------------------------------------

    fn binary_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<Shape> {
        let (sa, sb) = (self.nodes[a].shape, self.nodes[b].shape);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context: format!("{what}(node {a}, node {b})"),
                expected: sa,
                actual: sb,
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.binary_shape(a, b, "div")?;
        Ok(self.push(Op::Div(a, b), s))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Square(x), s)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Abs(x), s)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Relu(x), s)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Log(x), s)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Scale(x, factor), s)
    }

    pub fn add_scalar(&mut self, x: NodeId, offset: f64) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::AddScalar(x, offset), s)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let s = self.nodes[x].shape;
        self.push(Op::Clamp(x, lo, hi), s)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::MeanAll(x), [1, 1, 1, 1])
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumAll(x), [1, 1, 1, 1])
    }

    // ---- structured ops ------------------------------------------------

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let xs = self.nodes[x].shape;
        let (oh, ow) = spec.output_hw(xs[2], xs[3])?;
        if xs[1] != spec.in_channels {
            return Err(Error::ShapeMismatch {
                context: format!("conv2d input (node {x})"),
                expected: [xs[0], spec.in_channels, xs[2], xs[3]],
                actual: xs,
            });
        }
        Ok(self.push(Op::Conv2d { x, w, b, spec }, [xs[0], spec.out_channels, oh, ow]))
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let xs = self.nodes[x].shape;
        let (oh, ow) = spec.output_hw(xs[2], xs[3])?;
        Ok(self.push(
            Op::DepthwiseConv2d { x, w, b, spec },
            [xs[0], spec.out_channels, oh, ow],
        ))
    }

    pub fn deform_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        offsets: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let xs = self.nodes[x].shape;
        let (oh, ow) = spec.output_hw(xs[2], xs[3])?;
        let os = self.nodes[offsets].shape;
        let expected = [xs[0], 2 * spec.kernel.0 * spec.kernel.1, oh, ow];
        if os != expected {
            return Err(Error::ShapeMismatch {
                context: format!("deform_conv2d offsets (node {offsets})"),
                expected,
                actual: os,
            });
        }
        Ok(self.push(
            Op::DeformConv2d { x, w, offsets, b, spec },
            [xs[0], spec.out_channels, oh, ow],
        ))
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let [n, c, h, w] = self.nodes[x].shape;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::Config(format!(
                "pixel_shuffle at node {x}: {c} channels not divisible by {}",
                r * r
            )));
        }
        Ok(self.push(Op::PixelShuffle { x, r }, [n, c / (r * r), h * r, w * r]))
    }

    pub fn pixel_unshuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let [n, c, h, w] = self.nodes[x].shape;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::Config(format!(
                "pixel_unshuffle at node {x}: extent {h}x{w} not divisible by {r}"
            )));
        }
        Ok(self.push(Op::PixelUnshuffle { x, r }, [n, c * r * r, h / r, w / r]))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self.nodes[xs[0]].shape;
        let mut total_c = 0;
        for &x in xs {
            let s = self.nodes[x].shape;
            if [s[0], s[2], s[3]] != [first[0], first[2], first[3]] {
                return Err(Error::ShapeMismatch {
                    context: format!("concat (node {x})"),
                    expected: first,
                    actual: s,
                });
            }
            total_c += s[1];
        }
        Ok(self.push(Op::Concat(xs.to_vec()), [first[0], total_c, first[2], first[3]]))
    }

    // ---- execution ------------------------------------------------------

    /// Run the graph on the named inputs, retaining all intermediates.
    pub fn forward(&mut self, inputs: &[(&str, Tensor<T>)]) -> Result<HashMap<String, Tensor<T>>> {
        let provided: HashMap<&str, &Tensor<T>> = inputs.iter().map(|(n, t)| (*n, t)).collect();
        for i in 0..self.nodes.len() {
            let shape = self.nodes[i].shape;
            let value = match &self.nodes[i].op {
                Op::Input { name } => {
                    let t = provided.get(name.as_str()).ok_or_else(|| {
                        Error::GraphState(format!("missing input '{name}'"))
                    })?;
                    if t.shape() != shape {
                        return Err(Error::ShapeMismatch {
                            context: format!("input '{name}' (node {i})"),
                            expected: shape,
                            actual: t.shape(),
                        });
                    }
                    (*t).clone()
                }
                Op::Param { .. } | Op::Const => self.leaf_values[&i].clone(),
                Op::Add(a, b) => self.val(*a).zip(self.val(*b), "add", |x, y| x + y)?,
                Op::Sub(a, b) => self.val(*a).zip(self.val(*b), "sub", |x, y| x - y)?,
                Op::Mul(a, b) => self.val(*a).zip(self.val(*b), "mul", |x, y| x * y)?,
                Op::Div(a, b) => self.val(*a).zip(self.val(*b), "div", |x, y| x / y)?,
                Op::Square(x) => self.val(*x).map(|v| v * v),
                Op::Abs(x) => self.val(*x).map(|v| v.abs()),
                Op::Relu(x) => ops::relu(self.val(*x)),
                Op::Log(x) => self.val(*x).map(|v| v.ln()),
                Op::Scale(x, f) => {
                    let f = T::from_f64(*f);
                    self.val(*x).map(|v| v * f)
                }
                Op::AddScalar(x, o) => {
                    let o = T::from_f64(*o);
                    self.val(*x).map(|v| v + o)
                }
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
                    self.val(*x).map(|v| {
                        if v < lo {
                            lo
                        } else if v > hi {
                            hi
                        } else {
                            v
                        }
                    })
                }
                Op::MeanAll(x) => {
                    let v = self.val(*x);
                    let n = T::from_f64(v.numel() as f64);
                    Tensor::scalar(v.sum() / n)
                }
                Op::SumAll(x) => Tensor::scalar(self.val(*x).sum()),
                Op::Conv2d { x, w, b, spec } => {
                    ops::conv2d(self.val(*x), self.val(*w), b.map(|b| self.val(b)), spec)?
                }
                Op::DepthwiseConv2d { x, w, b, spec } => ops::depthwise_conv2d(
                    self.val(*x),
                    self.val(*w),
                    b.map(|b| self.val(b)),
                    spec,
                )?,
                Op::DeformConv2d { x, w, offsets, b, spec } => ops::deform_conv2d(
                    self.val(*x),
                    self.val(*w),
                    self.val(*offsets),
                    b.map(|b| self.val(b)),
                    spec,
                )?,
                Op::PixelShuffle { x, r } => ops::pixel_shuffle(self.val(*x), *r)?,
                Op::PixelUnshuffle { x, r } => ops::pixel_unshuffle(self.val(*x), *r)?,
                Op::Concat(xs) => {
                    let tensors: Vec<&Tensor<T>> = xs.iter().map(|&x| self.val(x)).collect();
                    ops::concat(&tensors)?
                }
            };
            self.values[i] = Some(value);
        }
        self.forward_done = true;
        let mut out = HashMap::new();
        for (name, id) in &self.outputs {
            out.insert(name.clone(), self.val(*id).clone());
        }
        Ok(out)
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.values[id]
            .as_ref()
            .expect("forward value missing; nodes are evaluated in order")
    }

    /// Forward value of an arbitrary node (after forward).
    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        if !self.forward_done {
            return Err(Error::GraphState("backward/value access before forward".into()));
        }
        Ok(self.val(id))
    }

    /// Reverse pass from a named output. Returns gradients keyed by
    /// parameter node id. Gradients from any previous call are discarded.
    pub fn backward(&mut self, output: &str, output_gradient: &Tensor<T>) -> Result<HashMap<NodeId, Tensor<T>>> {
        let (_, root) = self
            .outputs
            .iter()
            .find(|(n, _)| n == output)
            .ok_or_else(|| Error::GraphState(format!("unknown output '{output}'")))?;
        self.backward_from(*root, output_gradient)
    }

    /// Reverse pass from an arbitrary node.
    pub fn backward_from(
        &mut self,
        root: NodeId,
        output_gradient: &Tensor<T>,
    ) -> Result<HashMap<NodeId, Tensor<T>>> {
        if !self.forward_done {
            return Err(Error::GraphState("backward called before forward".into()));
        }
        if output_gradient.shape() != self.nodes[root].shape {
            return Err(Error::ShapeMismatch {
                context: format!("output gradient (node {root})"),
                expected: self.nodes[root].shape,
                actual: output_gradient.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root] = Some(output_gradient.clone());

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match self.nodes[i].op.clone() {
                Op::Input { .. } | Op::Param { .. } | Op::Const => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a], g.clone());
                    accumulate(&mut grads[b], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a], g.clone());
                    accumulate(&mut grads[b], g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip(self.val(b), "mul backward", |gv, bv| gv * bv)?;
                    let gb = g.zip(self.val(a), "mul backward", |gv, av| gv * av)?;
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Div(a, b) => {
                    let av = self.val(a).clone();
                    let bv = self.val(b).clone();
                    let ga = g.zip(&bv, "div backward", |gv, b| gv / b)?;
                    let mut gb = g.zip(&av, "div backward", |gv, a| gv * a)?;
                    for (x, b) in gb.data_mut().iter_mut().zip(bv.data()) {
                        *x = -*x / (*b * *b);
                    }
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Square(x) => {
                    let two = T::from_f64(2.0);
                    let gx = g.zip(self.val(x), "square backward", |gv, xv| gv * two * xv)?;
                    accumulate(&mut grads[x], gx);
                }
                Op::Abs(x) => {
                    let gx = g.zip(self.val(x), "abs backward", |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads[x], gx);
                }
                Op::Relu(x) => {
                    let gx = ops::relu_backward(self.val(x), &g)?;
                    accumulate(&mut grads[x], gx);
                }
                Op::Log(x) => {
                    // g == 0 short-circuits so a saturated downstream clamp
                    // cannot turn log(0) into NaN gradients.
                    let gx = g.zip(self.val(x), "log backward", |gv, xv| {
                        if gv == T::zero() {
                            T::zero()
                        } else {
                            gv / xv
                        }
                    })?;
                    accumulate(&mut grads[x], gx);
                }
                Op::Scale(x, f) => {
                    let f = T::from_f64(f);
                    accumulate(&mut grads[x], g.map(|v| v * f));
                }
                Op::AddScalar(x, _) => accumulate(&mut grads[x], g),
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
                    let gx = g.zip(self.val(x), "clamp backward", |gv, xv| {
                        if xv >= lo && xv <= hi {
                            gv
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads[x], gx);
                }
                Op::MeanAll(x) => {
                    let xv = self.val(x);
                    let scale = g.scalar_value()? / T::from_f64(xv.numel() as f64);
                    accumulate(&mut grads[x], Tensor::full(xv.shape(), scale));
                }
                Op::SumAll(x) => {
                    let xv = self.val(x);
                    accumulate(&mut grads[x], Tensor::full(xv.shape(), g.scalar_value()?));
                }
                Op::Conv2d { x, w, b, spec } => {
                    let cg = ops::conv2d_backward(self.val(x), self.val(w), &spec, &g)?;
                    accumulate(&mut grads[x], cg.dx);
                    accumulate(&mut grads[w], cg.dw);
                    if let (Some(b), Some(db)) = (b, cg.db) {
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::DepthwiseConv2d { x, w, b, spec } => {
                    let cg = ops::depthwise_conv2d_backward(self.val(x), self.val(w), &spec, &g)?;
                    accumulate(&mut grads[x], cg.dx);
                    accumulate(&mut grads[w], cg.dw);
                    if let (Some(b), Some(db)) = (b, cg.db) {
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::DeformConv2d { x, w, offsets, b, spec } => {
                    let dg = ops::deform_conv2d_backward(
                        self.val(x),
                        self.val(w),
                        self.val(offsets),
                        &spec,
                        &g,
                    )?;
                    accumulate(&mut grads[x], dg.dx);
                    accumulate(&mut grads[w], dg.dw);
                    accumulate(&mut grads[offsets], dg.doffsets);
                    if let (Some(b), Some(db)) = (b, dg.db) {
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::PixelShuffle { x, r } => {
                    accumulate(&mut grads[x], ops::pixel_unshuffle(&g, r)?);
                }
                Op::PixelUnshuffle { x, r } => {
                    accumulate(&mut grads[x], ops::pixel_shuffle(&g, r)?);
                }
                Op::Concat(xs) => {
                    let channels: Vec<usize> = xs.iter().map(|&x| self.nodes[x].shape[1]).collect();
                    let parts = ops::concat_backward(&channels, &g)?;
                    for (x, part) in xs.into_iter().zip(parts) {
                        accumulate(&mut grads[x], part);
                    }
                }
            }
        }

        let mut out = HashMap::new();
        for &p in &self.params {
            let g = grads[p]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[p].shape));
            out.insert(p, g);
        }
        Ok(out)
    }
}
