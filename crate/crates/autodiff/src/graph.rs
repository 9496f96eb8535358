//! Static computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built once from op records, then evaluated with
//! [`Graph::forward`] as many times as needed; [`Graph::backward`] walks the
//! recorded values from the last forward pass in reverse insertion order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, gemm, ConvGeom};
use crate::params::ModelParams;
use crate::tensor::Tensor;

/// Lower bound added to squared GDN offsets so denominators stay positive.
pub const GDN_BETA_MIN: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside this crate. `backward` returns one entry per
/// input; `None` marks an input that receives no gradient.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    /// Inputs: x `[n,h,w,ci]`, kernel `[kh,kw,ci,co]`, optional bias `[co]`.
    Conv2d { stride: usize, pad: usize },
    /// Inputs: x `[n,h,w,ci]`, kernel `[kh,kw,co,ci]`, optional bias `[co]`.
    ConvTranspose2d { stride: usize, pad: usize, output_pad: usize },
    /// Inputs: x `[n,in]`, weight `[in,out]`, optional bias `[out]`.
    Dense,
    Flatten,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Scale(f32),
    Offset(f32),
    Clamp { lo: f32, hi: f32 },
    /// `max(x, bound)`; gradients still pass below the bound when they push upward.
    LowerBound(f32),
    Add,
    Sub,
    Mul,
    /// Inputs: x `[.., c]`, raw offsets `u` `[c]`, raw weights `v` `[c,c]`,
    /// with `beta = GDN_BETA_MIN + u^2` and `gamma = v^2`.
    Gdn { inverse: bool },
    Softmax,
    /// Inputs: logits `[n,k]`, integer labels `[n]`. Output: mean cross-entropy.
    SoftmaxCrossEntropy,
    Sum,
    Mean,
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    pub fn name(&self) -> String {
        match self {
            Op::Input(n) => format!("input:{n}"),
            Op::Param(n) => format!("param:{n}"),
            Op::Custom(c) => c.name().to_string(),
            Op::Conv2d { .. } => "conv2d".into(),
            Op::ConvTranspose2d { .. } => "conv_transpose2d".into(),
            Op::Gdn { inverse: false } => "gdn".into(),
            Op::Gdn { inverse: true } => "igdn".into(),
            other => format!("{other:?}").to_lowercase(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
}

/// Gradients produced by [`Graph::backward`]. Every parameter node in the
/// graph gets an entry; frozen or unreachable parameters get zeros.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub inputs: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn input(&self, name: &str) -> Option<&Tensor> {
        self.inputs.get(name)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    trainable: Vec<bool>,
    grad_inputs: Vec<String>,
    outputs: BTreeMap<String, NodeId>,
    by_name: HashMap<String, NodeId>,
}

impl Graph {
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

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs });
        NodeId(self.nodes.len() - 1)
    }

    /// Named external input. Repeated names return the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        let key = format!("input:{name}");
        if let Some(&id) = self.by_name.get(&key) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()), vec![]);
        self.by_name.insert(key, id);
        id
    }

    /// Like [`Graph::input`], but `backward` also reports the gradient
    /// with respect to this input.
    pub fn input_with_grad(&mut self, name: &str) -> NodeId {
        let id = self.input(name);
        if !self.grad_inputs.iter().any(|n| n == name) {
            self.grad_inputs.push(name.to_string());
        }
        id
    }

    /// Reference to a parameter in the [`ModelParams`] table passed to `forward`.
    pub fn param(&mut self, name: &str) -> NodeId {
        let key = format!("param:{name}");
        if let Some(&id) = self.by_name.get(&key) {
            return id;
        }
        let id = self.push(Op::Param(name.to_string()), vec![]);
        self.by_name.insert(key, id);
        id
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: Option<NodeId>, stride: usize, pad: usize) -> NodeId {
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(Op::Conv2d { stride, pad }, inputs)
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> NodeId {
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(Op::ConvTranspose2d { stride, pad, output_pad }, inputs)
    }

    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> NodeId {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(Op::Dense, inputs)
    }

    pub fn gdn(&mut self, x: NodeId, beta_raw: NodeId, gamma_raw: NodeId) -> NodeId {
        self.push(Op::Gdn { inverse: false }, vec![x, beta_raw, gamma_raw])
    }

    pub fn igdn(&mut self, x: NodeId, beta_raw: NodeId, gamma_raw: NodeId) -> NodeId {
        self.push(Op::Gdn { inverse: true }, vec![x, beta_raw, gamma_raw])
    }

    /// Appends an arbitrary op; `inputs` must already exist in the graph.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> NodeId {
        assert!(
            !matches!(op, Op::Input(_) | Op::Param(_)),
            "leaf nodes are created with `input` and `param`"
        );
        self.push(op, inputs.to_vec())
    }

    pub fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        self.push(op, vec![x])
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Flatten, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Relu, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Softplus, x)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Log, x)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Square, x)
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        self.unary(Op::Scale(factor), x)
    }

    pub fn offset(&mut self, x: NodeId, value: f32) -> NodeId {
        self.unary(Op::Offset(value), x)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f32, hi: f32) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, x)
    }

    pub fn lower_bound(&mut self, x: NodeId, bound: f32) -> NodeId {
        self.unary(Op::LowerBound(bound), x)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn softmax(&mut self, logits: NodeId) -> NodeId {
        self.unary(Op::Softmax, logits)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy, vec![logits, labels])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sum, x)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Mean, x)
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> NodeId {
        self.push(Op::Custom(op), inputs.to_vec())
    }

    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    /// Value of a node from the most recent forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    pub fn output(&self, name: &str) -> Option<&Tensor> {
        self.output_id(name).and_then(|id| self.value(id))
    }

    /// Evaluates every node in insertion order and returns the named outputs.
    pub fn forward(&mut self, params: &ModelParams, inputs: &HashMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        let mut trainable = vec![false; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let out = match &node.op {
                Op::Input(name) => inputs
                    .get(name)
                    .cloned()
                    .ok_or_else(|| AutodiffError::UnboundInput(name.clone()))?,
                Op::Param(name) => {
                    let p = params.param(name).ok_or_else(|| AutodiffError::UnknownParam(name.clone()))?;
                    trainable[idx] = !p.frozen;
                    p.value.clone()
                }
                op => {
                    let args: Vec<&Tensor> = node
                        .inputs
                        .iter()
                        .map(|i| values[i.0].as_ref().expect("inputs precede their consumers"))
                        .collect();
                    eval(op, &args)?
                }
            };
            if !out.all_finite() {
                return Err(AutodiffError::NonFinite { node: idx, op: node.op.name() });
            }
            values.push(Some(out));
        }
        self.values = values;
        self.trainable = trainable;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.values[id.0].clone().expect("evaluated")))
            .collect())
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.values.len() != self.nodes.len() || loss.0 >= self.values.len() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        let loss_value = self.values[loss.0].as_ref().ok_or(AutodiffError::BackwardBeforeForward)?;
        if !loss_value.is_scalar() {
            return Err(AutodiffError::LossNotScalar(loss_value.shape().to_vec()));
        }

        // A node needs a gradient if it is a trainable parameter, a tracked
        // input, or depends on one.
        let mut needs = vec![false; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            needs[idx] = match &node.op {
                Op::Param(_) => self.trainable[idx],
                Op::Input(name) => self.grad_inputs.contains(name),
                _ => node.inputs.iter().any(|i| needs[i.0]),
            };
        }

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.inputs.is_empty() {
                grads[idx] = Some(g);
                continue;
            }
            let out = self.values[idx].as_ref().expect("forward ran");
            let grad_out = Tensor::new(out.shape().to_vec(), g).expect("gradient matches output");
            let args: Vec<&Tensor> = node.inputs.iter().map(|i| self.values[i.0].as_ref().expect("forward ran")).collect();
            let mask: Vec<bool> = node.inputs.iter().map(|i| needs[i.0]).collect();
            let input_grads = eval_backward(&node.op, &args, out, &grad_out, &mask)?;
            for ((input, gi), want) in node.inputs.iter().zip(input_grads).zip(mask) {
                let (Some(gi), true) = (gi, want) else { continue };
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(gi.data()) {
                            *a += *v;
                        }
                    }
                    slot @ None => *slot = Some(gi.into_data()),
                }
            }
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            let shape = self.values[idx].as_ref().expect("forward ran").shape();
            match &node.op {
                Op::Param(name) => {
                    let t = match grads[idx].take() {
                        Some(g) if self.trainable[idx] => Tensor::new(shape.to_vec(), g)?,
                        _ => Tensor::zeros(shape),
                    };
                    out.params.insert(name.clone(), t);
                }
                Op::Input(name) if self.grad_inputs.contains(name) => {
                    let t = match grads[idx].take() {
                        Some(g) => Tensor::new(shape.to_vec(), g)?,
                        None => Tensor::zeros(shape),
                    };
                    out.inputs.insert(name.clone(), t);
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(AutodiffError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn binary(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let (da, db) = (a.data(), b.data());
    let ia = |i: usize| if da.len() == 1 { 0 } else { i };
    let ib = |i: usize| if db.len() == 1 { 0 } else { i };
    Tensor::new(shape, (0..n).map(|i| f(da[ia(i)], db[ib(i)])).collect())
}

/// Reduces a broadcast gradient back to the operand's shape.
fn unbroadcast(grad: Vec<f32>, like: &Tensor) -> Result<Tensor> {
    if like.len() == grad.len() {
        Tensor::new(like.shape().to_vec(), grad)
    } else {
        let s: f64 = grad.iter().map(|&v| v as f64).sum();
        Tensor::new(like.shape().to_vec(), vec![s as f32])
    }
}

fn conv_geom(x: &Tensor, kernel: &Tensor, stride: usize, pad: usize, transposed: bool) -> Result<(ConvGeom, usize)> {
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs.len() != 4 || ks.len() != 4 {
        return Err(AutodiffError::shape("conv", format!("x {xs:?}, kernel {ks:?}")));
    }
    let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
    let (kh, kw, k_a, k_b) = (ks[0], ks[1], ks[2], ks[3]);
    if !transposed {
        if k_a != c {
            return Err(AutodiffError::shape("conv2d", format!("x {xs:?}, kernel {ks:?}")));
        }
        let g = ConvGeom::new(n, h, w, c, kh, kw, stride, pad)
            .ok_or_else(|| AutodiffError::shape("conv2d", format!("kernel {ks:?} larger than padded input {xs:?}")))?;
        Ok((g, k_b))
    } else {
        if k_b != c {
            return Err(AutodiffError::shape("conv_transpose2d", format!("x {xs:?}, kernel {ks:?}")));
        }
        Ok((
            ConvGeom { n, h: 0, w: 0, c: k_a, kh, kw, oh: h, ow: w, stride, pad },
            k_a,
        ))
    }
}

fn transposed_geom(x: &Tensor, kernel: &Tensor, stride: usize, pad: usize, output_pad: usize) -> Result<ConvGeom> {
    let (mut g, _) = conv_geom(x, kernel, stride, pad, true)?;
    if stride == 0 || output_pad >= stride {
        return Err(AutodiffError::shape("conv_transpose2d", format!("output_pad {output_pad} with stride {stride}")));
    }
    let full_h = (g.oh - 1) * stride + g.kh + output_pad;
    let full_w = (g.ow - 1) * stride + g.kw + output_pad;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(AutodiffError::shape("conv_transpose2d", "padding removes the whole output".into()));
    }
    g.h = full_h - 2 * pad;
    g.w = full_w - 2 * pad;
    Ok(g)
}

fn check_bias(op: &'static str, bias: Option<&&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(AutodiffError::shape(op, format!("bias {:?} for {channels} channels", b.shape())));
        }
    }
    Ok(())
}

fn gdn_params(x: &Tensor, u: &Tensor, v: &Tensor) -> Result<(usize, Vec<f32>, Vec<f32>)> {
    let c = *x.shape().last().ok_or_else(|| AutodiffError::shape("gdn", "scalar input".into()))?;
    if u.len() != c || v.shape() != [c, c] {
        return Err(AutodiffError::shape(
            "gdn",
            format!("x {:?}, beta {:?}, gamma {:?}", x.shape(), u.shape(), v.shape()),
        ));
    }
    let beta = u.data().iter().map(|r| GDN_BETA_MIN + r * r).collect();
    let gamma = v.data().iter().map(|r| r * r).collect();
    Ok((c, beta, gamma))
}

fn labels_of(labels: &Tensor, n: usize, k: usize) -> Result<Vec<usize>> {
    if labels.len() != n {
        return Err(AutodiffError::shape("softmax_cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    labels
        .data()
        .iter()
        .map(|&l| {
            let i = l as usize;
            if l < 0.0 || l.fract() != 0.0 || i >= k {
                Err(AutodiffError::shape("softmax_cross_entropy", format!("label {l} outside 0..{k}")))
            } else {
                Ok(i)
            }
        })
        .collect()
}

fn softmax_rows(logits: &[f32], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

fn rows_and_classes(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, k] => Ok((*n, *k)),
        s => Err(AutodiffError::shape(op, format!("expected [n, k], got {s:?}"))),
    }
}

fn eval(op: &Op, args: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Input(_) | Op::Param(_) => unreachable!("leaf nodes are bound directly"),
        Op::Conv2d { stride, pad } => {
            let (x, k) = (args[0], args[1]);
            let (g, co) = conv_geom(x, k, *stride, *pad, false)?;
            check_bias("conv2d", args.get(2), co)?;
            let cols = kernels::im2col(x.data(), &g);
            let mut out = vec![0.0f32; g.rows() * co];
            gemm(g.rows(), g.patch(), co, &cols, false, k.data(), false, &mut out, 0.0);
            if let Some(b) = args.get(2) {
                kernels::add_bias(&mut out, b.data());
            }
            Tensor::new(vec![g.n, g.oh, g.ow, co], out)
        }
        Op::ConvTranspose2d { stride, pad, output_pad } => {
            let (x, k) = (args[0], args[1]);
            let g = transposed_geom(x, k, *stride, *pad, *output_pad)?;
            check_bias("conv_transpose2d", args.get(2), g.c)?;
            let ci = x.shape()[3];
            let mut cols = vec![0.0f32; g.rows() * g.patch()];
            gemm(g.rows(), ci, g.patch(), x.data(), false, k.data(), true, &mut cols, 0.0);
            let mut out = vec![0.0f32; g.n * g.h * g.w * g.c];
            kernels::col2im(&cols, &g, &mut out);
            if let Some(b) = args.get(2) {
                kernels::add_bias(&mut out, b.data());
            }
            Tensor::new(vec![g.n, g.h, g.w, g.c], out)
        }
        Op::Dense => {
            let (x, w) = (args[0], args[1]);
            let (n, din) = rows_and_classes("dense", x)?;
            let (win, dout) = rows_and_classes("dense", w)?;
            if win != din {
                return Err(AutodiffError::shape("dense", format!("x {:?}, w {:?}", x.shape(), w.shape())));
            }
            check_bias("dense", args.get(2), dout)?;
            let mut out = vec![0.0f32; n * dout];
            gemm(n, din, dout, x.data(), false, w.data(), false, &mut out, 0.0);
            if let Some(b) = args.get(2) {
                kernels::add_bias(&mut out, b.data());
            }
            Tensor::new(vec![n, dout], out)
        }
        Op::Flatten => {
            let x = args[0];
            let n = *x.shape().first().ok_or_else(|| AutodiffError::shape("flatten", "scalar".into()))?;
            x.clone().reshape(&[n, x.len() / n])
        }
        Op::Relu => Ok(args[0].map(|v| v.max(0.0))),
        Op::Softplus => Ok(args[0].map(kernels::softplus)),
        Op::Exp => Ok(args[0].map(f32::exp)),
        Op::Log => Ok(args[0].map(f32::ln)),
        Op::Square => Ok(args[0].map(|v| v * v)),
        Op::Scale(f) => Ok(args[0].map(|v| v * f)),
        Op::Offset(c) => Ok(args[0].map(|v| v + c)),
        Op::Clamp { lo, hi } => Ok(args[0].map(|v| v.clamp(*lo, *hi))),
        Op::LowerBound(b) => Ok(args[0].map(|v| v.max(*b))),
        Op::Add => binary(args[0], args[1], same_or_scalar("add", args[0], args[1])?, |a, b| a + b),
        Op::Sub => binary(args[0], args[1], same_or_scalar("sub", args[0], args[1])?, |a, b| a - b),
        Op::Mul => binary(args[0], args[1], same_or_scalar("mul", args[0], args[1])?, |a, b| a * b),
        Op::Gdn { inverse } => {
            let x = args[0];
            let (c, beta, gamma) = gdn_params(x, args[1], args[2])?;
            let norm = kernels::gdn_norm(x.data(), &beta, &gamma, c);
            let data = x
                .data()
                .iter()
                .zip(&norm)
                .map(|(v, n)| if *inverse { v * n.sqrt() } else { v / n.sqrt() })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Op::Softmax => {
            let (_, k) = rows_and_classes("softmax", args[0])?;
            let p = softmax_rows(args[0].data(), k);
            Tensor::new(args[0].shape().to_vec(), p.into_iter().map(|v| v as f32).collect())
        }
        Op::SoftmaxCrossEntropy => {
            let (n, k) = rows_and_classes("softmax_cross_entropy", args[0])?;
            let labels = labels_of(args[1], n, k)?;
            let mut total = 0.0f64;
            for (row, &l) in args[0].data().chunks_exact(k).zip(&labels) {
                let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
                let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
                total += lse - row[l] as f64;
            }
            Ok(Tensor::scalar((total / n as f64) as f32))
        }
        Op::Sum => Ok(Tensor::scalar(args[0].sum_f64() as f32)),
        Op::Mean => Ok(Tensor::scalar((args[0].sum_f64() / args[0].len() as f64) as f32)),
        Op::Custom(c) => c.forward(args),
    }
}

fn eval_backward(op: &Op, args: &[&Tensor], out: &Tensor, g: &Tensor, mask: &[bool]) -> Result<Vec<Option<Tensor>>> {
    let elementwise = |f: &dyn Fn(usize) -> f32| -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::new(args[0].shape().to_vec(), (0..g.len()).map(f).collect())?)])
    };
    let gd = g.data();
    match op {
        Op::Input(_) | Op::Param(_) => Ok(vec![]),
        Op::Conv2d { stride, pad } => {
            let (x, k) = (args[0], args[1]);
            let (geom, co) = conv_geom(x, k, *stride, *pad, false)?;
            let mut res = vec![None, None, None];
            if mask[1] {
                let cols = kernels::im2col(x.data(), &geom);
                let mut dk = vec![0.0f32; geom.patch() * co];
                gemm(geom.patch(), geom.rows(), co, &cols, true, gd, false, &mut dk, 0.0);
                res[1] = Some(Tensor::new(k.shape().to_vec(), dk)?);
            }
            if mask[0] {
                let mut dcols = vec![0.0f32; geom.rows() * geom.patch()];
                gemm(geom.rows(), co, geom.patch(), gd, false, k.data(), true, &mut dcols, 0.0);
                let mut dx = vec![0.0f32; x.len()];
                kernels::col2im(&dcols, &geom, &mut dx);
                res[0] = Some(Tensor::new(x.shape().to_vec(), dx)?);
            }
            if args.len() > 2 && mask[2] {
                res[2] = Some(Tensor::new(vec![co], kernels::column_sums(gd, co))?);
            }
            res.truncate(args.len());
            Ok(res)
        }
        Op::ConvTranspose2d { stride, pad, output_pad } => {
            let (x, k) = (args[0], args[1]);
            let geom = transposed_geom(x, k, *stride, *pad, *output_pad)?;
            let ci = x.shape()[3];
            let dcols = kernels::im2col(gd, &geom);
            let mut res = vec![None, None, None];
            if mask[0] {
                let mut dx = vec![0.0f32; x.len()];
                gemm(geom.rows(), geom.patch(), ci, &dcols, false, k.data(), false, &mut dx, 0.0);
                res[0] = Some(Tensor::new(x.shape().to_vec(), dx)?);
            }
            if mask[1] {
                let mut dk = vec![0.0f32; geom.patch() * ci];
                gemm(geom.patch(), geom.rows(), ci, &dcols, true, x.data(), false, &mut dk, 0.0);
                res[1] = Some(Tensor::new(k.shape().to_vec(), dk)?);
            }
            if args.len() > 2 && mask[2] {
                res[2] = Some(Tensor::new(vec![geom.c], kernels::column_sums(gd, geom.c))?);
            }
            res.truncate(args.len());
            Ok(res)
        }
        Op::Dense => {
            let (x, w) = (args[0], args[1]);
            let (n, din) = rows_and_classes("dense", x)?;
            let dout = w.shape()[1];
            let mut res = vec![None, None, None];
            if mask[0] {
                let mut dx = vec![0.0f32; n * din];
                gemm(n, dout, din, gd, false, w.data(), true, &mut dx, 0.0);
                res[0] = Some(Tensor::new(x.shape().to_vec(), dx)?);
            }
            if mask[1] {
                let mut dw = vec![0.0f32; din * dout];
                gemm(din, n, dout, x.data(), true, gd, false, &mut dw, 0.0);
                res[1] = Some(Tensor::new(w.shape().to_vec(), dw)?);
            }
            if args.len() > 2 && mask[2] {
                res[2] = Some(Tensor::new(vec![dout], kernels::column_sums(gd, dout))?);
            }
            res.truncate(args.len());
            Ok(res)
        }
        Op::Flatten => Ok(vec![Some(g.clone().reshape(args[0].shape())?)]),
        Op::Relu => {
            let x = args[0].data();
            elementwise(&|i| if x[i] > 0.0 { gd[i] } else { 0.0 })
        }
        Op::Softplus => {
            let x = args[0].data();
            elementwise(&|i| gd[i] * kernels::sigmoid(x[i]))
        }
        Op::Exp => {
            let y = out.data();
            elementwise(&|i| gd[i] * y[i])
        }
        Op::Log => {
            let x = args[0].data();
            elementwise(&|i| gd[i] / x[i])
        }
        Op::Square => {
            let x = args[0].data();
            elementwise(&|i| 2.0 * x[i] * gd[i])
        }
        Op::Scale(f) => elementwise(&|i| gd[i] * f),
        Op::Offset(_) => elementwise(&|i| gd[i]),
        Op::Clamp { lo, hi } => {
            let x = args[0].data();
            elementwise(&|i| if x[i] >= *lo && x[i] <= *hi { gd[i] } else { 0.0 })
        }
        Op::LowerBound(b) => {
            let x = args[0].data();
            elementwise(&|i| if x[i] >= *b || gd[i] < 0.0 { gd[i] } else { 0.0 })
        }
        Op::Add | Op::Sub => {
            let sign = if matches!(op, Op::Sub) { -1.0 } else { 1.0 };
            Ok(vec![
                Some(unbroadcast(gd.to_vec(), args[0])?),
                Some(unbroadcast(gd.iter().map(|v| v * sign).collect(), args[1])?),
            ])
        }
        Op::Mul => {
            let (a, b) = (args[0].data(), args[1].data());
            let at = |i: usize| if a.len() == 1 { a[0] } else { a[i] };
            let bt = |i: usize| if b.len() == 1 { b[0] } else { b[i] };
            Ok(vec![
                Some(unbroadcast((0..gd.len()).map(|i| gd[i] * bt(i)).collect(), args[0])?),
                Some(unbroadcast((0..gd.len()).map(|i| gd[i] * at(i)).collect(), args[1])?),
            ])
        }
        Op::Gdn { inverse } => gdn_backward(*inverse, args, gd),
        Op::Softmax => {
            let (_, k) = rows_and_classes("softmax", args[0])?;
            let y = out.data();
            let mut dx = vec![0.0f32; y.len()];
            for ((dr, yr), gr) in dx.chunks_exact_mut(k).zip(y.chunks_exact(k)).zip(gd.chunks_exact(k)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                for j in 0..k {
                    dr[j] = (yr[j] as f64 * (gr[j] as f64 - dot)) as f32;
                }
            }
            Ok(vec![Some(Tensor::new(args[0].shape().to_vec(), dx)?)])
        }
        Op::SoftmaxCrossEntropy => {
            let (n, k) = rows_and_classes("softmax_cross_entropy", args[0])?;
            let labels = labels_of(args[1], n, k)?;
            let p = softmax_rows(args[0].data(), k);
            let scale = gd[0] as f64 / n as f64;
            let mut dx: Vec<f32> = p.iter().map(|v| (v * scale) as f32).collect();
            for (r, &l) in labels.iter().enumerate() {
                dx[r * k + l] = ((p[r * k + l] - 1.0) * scale) as f32;
            }
            Ok(vec![Some(Tensor::new(args[0].shape().to_vec(), dx)?), None])
        }
        Op::Sum => Ok(vec![Some(Tensor::full(args[0].shape(), gd[0]))]),
        Op::Mean => Ok(vec![Some(Tensor::full(args[0].shape(), gd[0] / args[0].len() as f32))]),
        Op::Custom(c) => c.backward(args, out, g),
    }
}

fn gdn_backward(inverse: bool, args: &[&Tensor], gd: &[f32]) -> Result<Vec<Option<Tensor>>> {
    let (x, u, v) = (args[0], args[1], args[2]);
    let (c, beta, gamma) = gdn_params(x, u, v)?;
    let xd = x.data();
    let norm = kernels::gdn_norm(xd, &beta, &gamma, c);
    // dL/dnorm_i = -x g / (2 n^{3/2}) for gdn, x g / (2 sqrt n) for igdn.
    let dnorm: Vec<f32> = (0..xd.len())
        .map(|i| {
            let s = norm[i].sqrt();
            if inverse {
                0.5 * xd[i] * gd[i] / s
            } else {
                -0.5 * xd[i] * gd[i] / (norm[i] * s)
            }
        })
        .collect();
    let sites = xd.len() / c;

    // dx_k = g_k n_k^{+-1/2} + 2 x_k sum_i dnorm_i gamma_ik
    let mut back = vec![0.0f32; xd.len()];
    gemm(sites, c, c, &dnorm, false, &gamma, false, &mut back, 0.0);
    let dx: Vec<f32> = (0..xd.len())
        .map(|i| {
            let s = norm[i].sqrt();
            let direct = if inverse { gd[i] * s } else { gd[i] / s };
            direct + 2.0 * xd[i] * back[i]
        })
        .collect();

    let dbeta = kernels::column_sums(&dnorm, c);
    let du: Vec<f32> = dbeta.iter().zip(u.data()).map(|(d, r)| 2.0 * r * d).collect();

    // dgamma_ij = sum_sites dnorm_i x_j^2
    let sq: Vec<f32> = xd.iter().map(|a| a * a).collect();
    let mut dgamma = vec![0.0f32; c * c];
    gemm(c, sites, c, &dnorm, true, &sq, false, &mut dgamma, 0.0);
    let dv: Vec<f32> = dgamma.iter().zip(v.data()).map(|(d, r)| 2.0 * r * d).collect();

    Ok(vec![
        Some(Tensor::new(x.shape().to_vec(), dx)?),
        Some(Tensor::new(u.shape().to_vec(), du)?),
        Some(Tensor::new(v.shape().to_vec(), dv)?),
    ])
}
