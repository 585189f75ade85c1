//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation is recorded as a node holding its forward value. A
//! backward sweep visits nodes once, in reverse recording order, and pushes
//! adjoints into the node's inputs. Coarse operations (the renderer, the
//! proxies, Sinkhorn) implement [`CustomOp`] and bring their own adjoint.

use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Built-in primitive operations.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Offset(f64),
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Sin,
    Cos,
    Sum,
    Mean,
    /// Matrix product of two rank-2 tensors.
    MatMul,
    /// `(x - min) / (max - min + 1e-12)` over the whole tensor.
    MinMaxNormalize,
    /// Select flat indices into a vector.
    Gather(Vec<usize>),
    Reshape(Vec<usize>),
    /// Sum over the last axis.
    SumLast,
    /// Euclidean norm over the last axis.
    NormLast,
    /// Average pooling of an `[H, W, C]` tensor by an integer factor.
    AvgPool2d(usize),
    /// Concatenate flattened inputs into one vector.
    Stack,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Sqrt => "sqrt",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::MatMul => "matmul",
            OpKind::MinMaxNormalize => "minmax_normalize",
            OpKind::Gather(_) => "gather",
            OpKind::Reshape(_) => "reshape",
            OpKind::SumLast => "sum_last",
            OpKind::NormLast => "norm_last",
            OpKind::AvgPool2d(_) => "avg_pool2d",
            OpKind::Stack => "stack",
        }
    }
}

/// Counters gathered during one backward sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Pixels of registered pixel nodes that carried a nonzero adjoint.
    pub active_pixels: usize,
    /// Per-pixel subgraphs re-evaluated by custom adjoints.
    pub evaluated_pixels: usize,
}

/// An operation with a hand-written adjoint.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Adjoints for each input given the output adjoint. `None` means no
    /// contribution.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        adjoint: &Tensor,
        stats: &mut BackwardStats,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Builtin(OpKind),
    Custom(Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Builtin(k) => k.name(),
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
}

#[derive(Debug, Clone)]
struct PixelLayout {
    height: usize,
    width: usize,
}

#[derive(Debug, Clone)]
struct PixelMask {
    keep: Vec<bool>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pixel_nodes: HashMap<usize, PixelLayout>,
    masks: HashMap<usize, PixelMask>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input (parameter or constant) node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        self.nodes.push(Node { op, inputs, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, inputs: &[Var]) -> Result<()> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(v.0));
            }
        }
        Ok(())
    }

    /// Records a built-in operation and computes its value.
    pub fn record(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        self.check(inputs)?;
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward_builtin(&kind, &values)?;
        Ok(self.push(Op::Builtin(kind), inputs.iter().map(|v| v.0).collect(), out))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        self.check(inputs)?;
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = op.forward(&values)?;
        Ok(self.push(Op::Custom(op), inputs.iter().map(|v| v.0).collect(), out))
    }

    // Convenience wrappers; shape errors surface from `record`.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(OpKind::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.record(OpKind::Scale(k), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(OpKind::Mean, &[a])
    }
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        self.record(OpKind::Stack, xs)
    }

    /// Declares `v` as an image-shaped node (`[H, W, ...]`) whose per-pixel
    /// adjoints may be masked.
    pub fn register_pixel_node(&mut self, v: Var, height: usize, width: usize) -> Result<()> {
        self.check(&[v])?;
        let shape = self.nodes[v.0].value.shape();
        if shape.len() < 2 || shape[0] != height || shape[1] != width {
            return Err(Error::Shape { op: "register_pixel_node", shapes: vec![shape.to_vec(), vec![height, width]] });
        }
        self.pixel_nodes.insert(v.0, PixelLayout { height, width });
        Ok(())
    }

    /// Zeroes, during backward, the adjoints of every pixel of `nodes` not in
    /// `sampled` (flat `row * W + col` indices). Forward values are untouched.
    pub fn apply_gradient_mask(&mut self, nodes: &[Var], sampled: &[usize]) -> Result<()> {
        for v in nodes {
            let layout = self.pixel_nodes.get(&v.0).ok_or(Error::UnknownNode(v.0))?;
            let n = layout.height * layout.width;
            let mut keep = vec![false; n];
            for &p in sampled {
                if p >= n {
                    return Err(Error::OutOfRange { what: "pixel index", value: p as f64, lo: 0.0, hi: (n - 1) as f64 });
                }
                keep[p] = true;
            }
            self.masks.insert(v.0, PixelMask { keep });
        }
        Ok(())
    }

    pub fn clear_gradient_masks(&mut self) {
        self.masks.clear();
    }

    /// Gradient of a scalar `output` with respect to each of `params`.
    pub fn grad(&self, output: Var, params: &[Var]) -> Result<Vec<Tensor>> {
        Ok(self.grad_with_stats(output, params)?.0)
    }

    pub fn grad_with_stats(&self, output: Var, params: &[Var]) -> Result<(Vec<Tensor>, BackwardStats)> {
        self.check(&[output])?;
        self.check(params)?;
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::NotScalar(out.shape().to_vec()));
        }
        let mut stats = BackwardStats::default();
        let mut adj: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for i in (0..=output.0).rev() {
            let Some(mut a) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(mask) = self.masks.get(&i) {
                apply_mask(&mut a, &mask.keep);
            }
            if let Some(layout) = self.pixel_nodes.get(&i) {
                stats.active_pixels += count_active(&a, layout.height * layout.width);
            }
            if !a.all_finite() {
                return Err(Error::NonFiniteAdjoint { node: i, op: node.op.name() });
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let contribs = match &node.op {
                Op::Leaf => {
                    adj[i] = Some(a);
                    continue;
                }
                Op::Builtin(kind) => backward_builtin(kind, &inputs, &node.value, &a)?,
                Op::Custom(op) => op.backward(&inputs, &node.value, &a, &mut stats)?,
            };
            for (&j, c) in node.inputs.iter().zip(contribs) {
                if let Some(c) = c {
                    match &mut adj[j] {
                        Some(existing) => existing.add_assign(&c),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            // Keep the adjoint around only if the node is itself a requested parameter.
            if params.iter().any(|p| p.0 == i) {
                adj[i] = Some(a);
            }
        }

        let grads = params
            .iter()
            .map(|p| {
                adj.get(p.0)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[p.0].value.shape()))
            })
            .collect();
        Ok((grads, stats))
    }

    /// Recomputes every non-leaf node from its inputs.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Builtin(kind) => forward_builtin(kind, &inputs)?,
                Op::Custom(op) => op.forward(&inputs)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when replaying the tape reproduces every recorded value bit-for-bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape() && r.data().iter().zip(n.value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }
}

fn apply_mask(a: &mut Tensor, keep: &[bool]) {
    let block = a.len() / keep.len();
    for (p, chunk) in a.data_mut().chunks_mut(block).enumerate() {
        if !keep[p] {
            chunk.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

fn count_active(a: &Tensor, pixels: usize) -> usize {
    let block = a.len() / pixels;
    a.data().chunks(block).filter(|c| c.iter().any(|&x| x != 0.0)).count()
}

fn shape_err(kind: &OpKind, inputs: &[&Tensor]) -> Error {
    Error::Shape { op: kind.name(), shapes: inputs.iter().map(|t| t.shape().to_vec()).collect() }
}

fn arity(kind: &OpKind, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(shape_err(kind, inputs));
    }
    Ok(())
}

fn min_max_index(x: &[f64]) -> (usize, usize) {
    // Ties resolve toward the lowest index.
    let mut lo = 0;
    let mut hi = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[lo] {
            lo = i;
        }
        if v > x[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

const MINMAX_GUARD: f64 = 1e-12;

fn forward_builtin(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    use OpKind::*;
    let unary = |f: fn(f64) -> f64| -> Result<Tensor> {
        arity(kind, inputs, 1)?;
        Ok(inputs[0].map(f))
    };
    match kind {
        Add | Sub | Mul | Div => {
            arity(kind, inputs, 2)?;
            let f: fn(f64, f64) -> f64 = match kind {
                Add => |a, b| a + b,
                Sub => |a, b| a - b,
                Mul => |a, b| a * b,
                _ => |a, b| a / b,
            };
            inputs[0].zip_map(inputs[1], kind.name(), f)
        }
        Neg => unary(|x| -x),
        Scale(k) => {
            arity(kind, inputs, 1)?;
            let k = *k;
            Ok(inputs[0].map(|x| k * x))
        }
        Offset(c) => {
            arity(kind, inputs, 1)?;
            let c = *c;
            Ok(inputs[0].map(|x| x + c))
        }
        Exp => unary(f64::exp),
        Ln => unary(f64::ln),
        Sqrt => unary(f64::sqrt),
        Abs => unary(f64::abs),
        Square => unary(|x| x * x),
        Sin => unary(f64::sin),
        Cos => unary(f64::cos),
        Sum => {
            arity(kind, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].sum()))
        }
        Mean => {
            arity(kind, inputs, 1)?;
            if inputs[0].is_empty() {
                return Err(shape_err(kind, inputs));
            }
            Ok(Tensor::scalar(inputs[0].sum() / inputs[0].len() as f64))
        }
        MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(kind, inputs));
            }
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for p in 0..k {
                    let aip = a.data()[i * k + p];
                    for j in 0..m {
                        out[i * m + j] += aip * b.data()[p * m + j];
                    }
                }
            }
            Tensor::new(vec![n, m], out)
        }
        MinMaxNormalize => {
            arity(kind, inputs, 1)?;
            let x = inputs[0].data();
            if x.is_empty() {
                return Err(shape_err(kind, inputs));
            }
            let (lo, hi) = min_max_index(x);
            let (mn, d) = (x[lo], x[hi] - x[lo] + MINMAX_GUARD);
            Ok(inputs[0].map(|v| (v - mn) / d))
        }
        Gather(idx) => {
            arity(kind, inputs, 1)?;
            let x = inputs[0].data();
            if idx.iter().any(|&i| i >= x.len()) {
                return Err(shape_err(kind, inputs));
            }
            Ok(Tensor::vector(idx.iter().map(|&i| x[i]).collect()))
        }
        Reshape(shape) => {
            arity(kind, inputs, 1)?;
            inputs[0].clone().reshaped(shape.clone())
        }
        SumLast | NormLast => {
            arity(kind, inputs, 1)?;
            let shape = inputs[0].shape();
            let Some((&c, lead)) = shape.split_last() else { return Err(shape_err(kind, inputs)) };
            if c == 0 {
                return Err(shape_err(kind, inputs));
            }
            let data = inputs[0]
                .data()
                .chunks(c)
                .map(|ch| match kind {
                    SumLast => ch.iter().sum(),
                    _ => ch.iter().map(|v| v * v).sum::<f64>().sqrt(),
                })
                .collect();
            Tensor::new(lead.to_vec(), data)
        }
        AvgPool2d(f) => {
            arity(kind, inputs, 1)?;
            let s = inputs[0].shape();
            let f = *f;
            if s.len() != 3 || f == 0 || s[0] % f != 0 || s[1] % f != 0 {
                return Err(shape_err(kind, inputs));
            }
            let (h, w, c) = (s[0], s[1], s[2]);
            let (gh, gw) = (h / f, w / f);
            let mut out = vec![0.0; gh * gw * c];
            let x = inputs[0].data();
            let inv = 1.0 / (f * f) as f64;
            for r in 0..h {
                for col in 0..w {
                    let o = ((r / f) * gw + col / f) * c;
                    let i = (r * w + col) * c;
                    for k in 0..c {
                        out[o + k] += x[i + k] * inv;
                    }
                }
            }
            Tensor::new(vec![gh, gw, c], out)
        }
        Stack => Ok(Tensor::vector(inputs.iter().flat_map(|t| t.data().iter().copied()).collect())),
    }
}

fn backward_builtin(kind: &OpKind, inputs: &[&Tensor], out: &Tensor, adj: &Tensor) -> Result<Vec<Option<Tensor>>> {
    use OpKind::*;
    let x = inputs.first().copied();
    let elementwise = |f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<Option<Tensor>> {
        // f(x, y, adjoint)
        let x = inputs[0];
        let data = x.data().iter().zip(out.data()).zip(adj.data()).map(|((&xv, &yv), &a)| f(xv, yv, a)).collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).expect("same shape"))]
    };
    Ok(match kind {
        Add => vec![Some(adj.clone()), Some(adj.clone())],
        Sub => vec![Some(adj.clone()), Some(adj.map(|a| -a))],
        Mul => vec![Some(adj.zip_map(inputs[1], "mul", |a, b| a * b)?), Some(adj.zip_map(inputs[0], "mul", |a, b| a * b)?)],
        Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = adj.zip_map(b, "div", |g, bv| g / bv)?;
            let db = Tensor::new(
                b.shape().to_vec(),
                adj.data().iter().zip(a.data()).zip(b.data()).map(|((&g, &av), &bv)| -g * av / (bv * bv)).collect(),
            )?;
            vec![Some(da), Some(db)]
        }
        Neg => vec![Some(adj.map(|a| -a))],
        Scale(k) => {
            let k = *k;
            vec![Some(adj.map(|a| k * a))]
        }
        Offset(_) => vec![Some(adj.clone())],
        Exp => elementwise(&|_, y, a| a * y),
        Ln => elementwise(&|x, _, a| a / x),
        Sqrt => elementwise(&|_, y, a| if y == 0.0 { 0.0 } else { a * 0.5 / y }),
        Abs => elementwise(&|x, _, a| if x > 0.0 { a } else if x < 0.0 { -a } else { 0.0 }),
        Square => elementwise(&|x, _, a| 2.0 * x * a),
        Sin => elementwise(&|x, _, a| a * x.cos()),
        Cos => elementwise(&|x, _, a| -a * x.sin()),
        Sum => {
            let g = adj.item();
            vec![Some(x.unwrap().map(|_| g))]
        }
        Mean => {
            let x = x.unwrap();
            let g = adj.item() / x.len() as f64;
            vec![Some(x.map(|_| g))]
        }
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let g = adj.data();
            let mut da = vec![0.0; n * k];
            let mut db = vec![0.0; k * m];
            for i in 0..n {
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += g[i * m + j] * b.data()[p * m + j];
                        db[p * m + j] += a.data()[i * k + p] * g[i * m + j];
                    }
                    da[i * k + p] = acc;
                }
            }
            vec![Some(Tensor::new(vec![n, k], da)?), Some(Tensor::new(vec![k, m], db)?)]
        }
        MinMaxNormalize => {
            let xs = x.unwrap().data();
            let (lo, hi) = min_max_index(xs);
            let d = xs[hi] - xs[lo] + MINMAX_GUARD;
            let g = adj.data();
            let mut dx: Vec<f64> = g.iter().map(|&a| a / d).collect();
            // y_i = (x_i - x_lo) / (x_hi - x_lo + c)
            let mut d_lo = 0.0;
            let mut d_hi = 0.0;
            for (i, &a) in g.iter().enumerate() {
                let yi = (xs[i] - xs[lo]) / d;
                d_lo += a * (-1.0 / d + yi / d);
                d_hi += a * (-yi / d);
            }
            dx[lo] += d_lo;
            dx[hi] += d_hi;
            vec![Some(Tensor::new(x.unwrap().shape().to_vec(), dx)?)]
        }
        Gather(idx) => {
            let mut dx = Tensor::zeros(x.unwrap().shape());
            for (&i, &a) in idx.iter().zip(adj.data()) {
                dx.data_mut()[i] += a;
            }
            vec![Some(dx)]
        }
        Reshape(_) => vec![Some(adj.clone().reshaped(x.unwrap().shape().to_vec())?)],
        SumLast => {
            let x = x.unwrap();
            let c = *x.shape().last().unwrap();
            let data = adj.data().iter().flat_map(|&a| std::iter::repeat_n(a, c)).collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
        }
        NormLast => {
            let x = x.unwrap();
            let c = *x.shape().last().unwrap();
            let mut data = Vec::with_capacity(x.len());
            for ((ch, &n), &a) in x.data().chunks(c).zip(out.data()).zip(adj.data()) {
                for &v in ch {
                    data.push(if n == 0.0 { 0.0 } else { a * v / n });
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
        }
        AvgPool2d(f) => {
            let x = x.unwrap();
            let f = *f;
            let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let gw = w / f;
            let inv = 1.0 / (f * f) as f64;
            let g = adj.data();
            let mut data = vec![0.0; h * w * c];
            for r in 0..h {
                for col in 0..w {
                    let o = ((r / f) * gw + col / f) * c;
                    let i = (r * w + col) * c;
                    for k in 0..c {
                        data[i + k] = g[o + k] * inv;
                    }
                }
            }
            vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
        }
        Stack => {
            let mut off = 0;
            let mut res = Vec::with_capacity(inputs.len());
            for t in inputs {
                let n = t.len();
                res.push(Some(Tensor::new(t.shape().to_vec(), adj.data()[off..off + n].to_vec())?));
                off += n;
            }
            res
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Tensor {
        Tensor::vector(xs.to_vec())
    }

    #[test]
    fn elementwise_and_reduce_values() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[1.0, 2.0]));
        let b = t.leaf(v(&[3.0, 4.0]));
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);
        let c = t.leaf(v(&[1.0, 2.0, 3.0]));
        let total = t.sum(c).unwrap();
        assert_eq!(t.value(total).item(), 6.0);
        let z = t.leaf(v(&[0.0]));
        let e = t.record(OpKind::Exp, &[z]).unwrap();
        assert_eq!(t.value(e).data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[1.0, 2.0]));
        let b = t.leaf(v(&[1.0, 2.0, 3.0]));
        match t.add(a, b) {
            Err(Error::Shape { op, shapes }) => {
                assert_eq!(op, "add");
                assert_eq!(shapes, vec![vec![2], vec![3]]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn square_and_product_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.grad(y, &[x]).unwrap()[0].item(), 6.0);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.leaf(Tensor::scalar(5.0));
        let f = t.mul(x, y).unwrap();
        let g = t.grad(f, &[x, y]).unwrap();
        assert_eq!((g[0].item(), g[1].item()), (5.0, 2.0));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let unused = t.leaf(v(&[1.0, 1.0]));
        let y = t.mul(x, x).unwrap();
        let g = t.grad(y, &[x, unused]).unwrap();
        assert_eq!(g[1].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 2.0]));
        assert!(matches!(t.grad(x, &[x]), Err(Error::NotScalar(_))));
    }

    #[test]
    fn nan_adjoint_reports_node() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let l = t.record(OpKind::Ln, &[x]).unwrap(); // -inf
        let y = t.record(OpKind::Exp, &[l]).unwrap(); // 0, adjoint into ln is 0 * ... fine
        let z = t.mul(l, y).unwrap(); // -inf * 0 = NaN value, adjoint into l is y + ...
        match t.grad(z, &[x]) {
            Err(Error::NonFiniteAdjoint { .. }) => {}
            other => panic!("expected non-finite adjoint, got {other:?}"),
        }
    }

    #[test]
    fn abs_subgradient_is_zero_at_origin() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.0, -2.0, 3.0]));
        let a = t.record(OpKind::Abs, &[x]).unwrap();
        let s = t.sum(a).unwrap();
        assert_eq!(t.grad(s, &[x]).unwrap()[0].data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn minmax_ties_resolve_to_lowest_index() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[1.0, 1.0, 3.0, 3.0]));
        let n = t.record(OpKind::MinMaxNormalize, &[x]).unwrap();
        assert_eq!(t.value(n).data()[0], 0.0);
        let w = t.leaf(v(&[0.0, 1.0, 0.0, 0.0]));
        let p = t.mul(n, w).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.grad(s, &[x]).unwrap()[0].clone();
        // y_1 = (x_1 - x_0) / (x_2 - x_0 + c): only indices 0, 1, 2 move it.
        assert!(g.data()[3] == 0.0);
        assert!(g.data()[1] > 0.0 && g.data()[0] < 0.0);
    }

    #[test]
    fn mask_zeroes_unsampled_pixels() {
        let mut t = Tape::new();
        let img = t.leaf(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let sq = t.record(OpKind::Square, &[img]).unwrap();
        t.register_pixel_node(sq, 2, 2).unwrap();
        let s = t.sum(sq).unwrap();
        let full = t.grad(s, &[img]).unwrap()[0].clone();
        t.apply_gradient_mask(&[sq], &[1, 3]).unwrap();
        let (g, stats) = t.grad_with_stats(s, &[img]).unwrap();
        assert_eq!(g[0].data(), &[0.0, full.data()[1], 0.0, full.data()[3]]);
        assert_eq!(stats.active_pixels, 2);
        // forward values untouched
        assert_eq!(t.value(s).item(), 30.0);
        assert!(matches!(t.apply_gradient_mask(&[img], &[0]), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut t = Tape::new();
        let x = t.leaf(v(&[0.3, -1.7, 2.2]));
        let e = t.record(OpKind::Exp, &[x]).unwrap();
        let s = t.record(OpKind::Sin, &[e]).unwrap();
        let n = t.record(OpKind::MinMaxNormalize, &[s]).unwrap();
        let _ = t.sum(n).unwrap();
        assert!(t.replay_matches().unwrap());
    }

    #[test]
    fn avg_pool_and_norm_last() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let p = t.record(OpKind::AvgPool2d(2), &[x]).unwrap();
        assert_eq!(t.value(p).data(), &[3.0]);
        let f = t.leaf(Tensor::new(vec![1, 2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap());
        let n = t.record(OpKind::NormLast, &[f]).unwrap();
        assert_eq!(t.value(n).data(), &[5.0, 0.0]);
        let s = t.sum(n).unwrap();
        let g = t.grad(s, &[f]).unwrap();
        assert_eq!(g[0].data(), &[0.6, 0.8, 0.0, 0.0]);
    }
}
