//! Tape-based reverse-mode differentiation over small dense arrays.
//!
//! Forward values are computed eagerly when an operation is recorded; the
//! tape only remembers enough to run the chain rule backwards. Arrays are
//! row-major `f64` buffers with an explicit shape. There is no general
//! broadcasting: binary elementwise operators accept equal shapes, or one
//! operand holding a single element.
//!
//! ```
//! use head::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(vec![3.0], vec![1]);
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x), vec![6.0]);
//! ```

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// The operator set understood by [`Tape::record`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `[m, n] x [n]` or `[m, n] x [n, p]`.
    MatMul,
    /// Inputs `x: [T, C]`, `kernel: [O, W, C]` and optionally `bias: [O]`;
    /// stride one, no padding, output `[T - W + 1, O]`.
    Conv1d,
    /// `[T, C] -> [C]`; ties resolve to the lowest time index.
    MaxPoolTime,
    /// Flattening concatenation of any number of inputs.
    Concat,
    Mean,
    Sum,
    Tanh,
    Sigmoid,
    Relu,
    Cosh,
    Sinh,
    /// Euclidean norm of the whole array.
    Norm2,
    /// Array divided by a single-element input.
    DivScalar,
    Log,
    Square,
    /// `max(x, 0)`; the corner at zero takes the zero branch.
    MaxZero,
    /// Gradient reversal: identity forward, negated gradient backward.
    Grl,
    /// Multiplication by a constant.
    Scale(f64),
    /// Addition of a constant.
    AddScalar(f64),
    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    Clamp { lo: f64, hi: f64 },
    /// Elementwise power with a constant exponent.
    Powf(f64),
    /// `arcosh(max(x, 1))`.
    Arcosh,
    /// Row `index` of a `[N, D]` matrix.
    Row(usize),
}

#[derive(Debug, Clone)]
enum Source {
    Leaf,
    Constant,
    Op(OpKind),
}

#[derive(Debug, Clone)]
struct Node {
    source: Source,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<f64>,
    /// Arg-max positions for max pooling.
    aux: Vec<usize>,
    requires_grad: bool,
}

/// An append-only record of operations.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grl_sign: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not influence
    /// the root.
    pub fn get(&self, var: Var) -> Vec<f64> {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[var.id]],
        }
    }

    /// Borrowing variant of [`Gradients::get`]; `None` means all zeros.
    pub fn get_ref(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.id].as_deref()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn usage<T>(msg: String) -> Result<T> {
    Err(Error::Usage(msg))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grl_sign: -1.0,
        }
    }

    /// Test hook: makes every gradient-reversal node pass gradients through
    /// unchanged, emulating a sign bug.
    #[doc(hidden)]
    pub fn inject_faulty_grl(&mut self) {
        self.grl_sign = 1.0;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            id: self.nodes.len() - 1,
        }
    }

    fn input(&mut self, shape: Vec<usize>, value: Vec<f64>, source: Source, grad: bool) -> Var {
        assert_eq!(
            numel(&shape),
            value.len(),
            "shape {shape:?} does not match {} values",
            value.len()
        );
        self.push(Node {
            source,
            inputs: Vec::new(),
            shape,
            value,
            aux: Vec::new(),
            requires_grad: grad,
        })
    }

    /// A differentiable input.
    ///
    /// # Panics
    /// If `values.len()` disagrees with `shape`.
    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Var {
        self.input(shape, values, Source::Leaf, true)
    }

    /// A non-differentiable input; backward never descends into it.
    pub fn constant(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Var {
        self.input(shape, values, Source::Constant, false)
    }

    pub fn vector_constant(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.constant(values, vec![n])
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(vec![value], vec![1])
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.id].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.id].shape
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = &self.nodes[var.id].value;
        debug_assert_eq!(v.len(), 1, "scalar() on a non-scalar node");
        v[0]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.id].requires_grad
    }

    /// Records `op` applied to `inputs`, computing its value eagerly.
    pub fn record(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.id >= self.nodes.len() {
                return usage(format!("var {} does not belong to this tape", v.id));
            }
        }
        let (shape, value, aux) = self.forward(&op, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.id].requires_grad);
        Ok(self.push(Node {
            source: Source::Op(op),
            inputs: inputs.iter().map(|v| v.id).collect(),
            shape,
            value,
            aux,
            requires_grad,
        }))
    }

    fn arity(op: &OpKind, n: usize) -> Result<()> {
        let ok = match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul | OpKind::DivScalar => n == 2,
            OpKind::Conv1d => n == 2 || n == 3,
            OpKind::Concat => n >= 1,
            _ => n == 1,
        };
        if ok {
            Ok(())
        } else {
            usage(format!("{op:?} does not take {n} inputs"))
        }
    }

    fn forward(&self, op: &OpKind, inputs: &[Var]) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
        Self::arity(op, inputs.len())?;
        let node = |i: usize| &self.nodes[inputs[i].id];
        let unary = |f: &dyn Fn(f64) -> f64| {
            let a = node(0);
            (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect(), Vec::new())
        };
        Ok(match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (node(0), node(1));
                let f = |x: f64, y: f64| match op {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                };
                let (shape, value) = if a.shape == b.shape {
                    (
                        a.shape.clone(),
                        a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect(),
                    )
                } else if b.value.len() == 1 {
                    let y = b.value[0];
                    (a.shape.clone(), a.value.iter().map(|&x| f(x, y)).collect())
                } else if a.value.len() == 1 {
                    let x = a.value[0];
                    (b.shape.clone(), b.value.iter().map(|&y| f(x, y)).collect())
                } else {
                    return usage(format!(
                        "{op:?}: shapes {:?} and {:?} are incompatible",
                        a.shape, b.shape
                    ));
                };
                (shape, value, Vec::new())
            }
            OpKind::MatMul => {
                let (a, b) = (node(0), node(1));
                if a.shape.len() != 2 || b.shape.is_empty() || b.shape.len() > 2 {
                    return usage(format!("matmul of {:?} and {:?}", a.shape, b.shape));
                }
                let (m, n) = (a.shape[0], a.shape[1]);
                let p = if b.shape.len() == 2 { b.shape[1] } else { 1 };
                if b.shape[0] != n {
                    return usage(format!("matmul of {:?} and {:?}", a.shape, b.shape));
                }
                let mut out = vec![0.0; m * p];
                for i in 0..m {
                    let row = &a.value[i * n..(i + 1) * n];
                    for j in 0..p {
                        let mut acc = 0.0;
                        for (k, &r) in row.iter().enumerate() {
                            acc += r * b.value[k * p + j];
                        }
                        out[i * p + j] = acc;
                    }
                }
                let shape = if b.shape.len() == 2 { vec![m, p] } else { vec![m] };
                (shape, out, Vec::new())
            }
            OpKind::Conv1d => {
                let (x, k) = (node(0), node(1));
                if x.shape.len() != 2 || k.shape.len() != 3 || k.shape[2] != x.shape[1] {
                    return usage(format!("conv1d of {:?} with kernel {:?}", x.shape, k.shape));
                }
                let (t, c) = (x.shape[0], x.shape[1]);
                let (o, w) = (k.shape[0], k.shape[1]);
                if w == 0 || t < w {
                    return usage(format!("conv1d: sequence length {t} shorter than width {w}"));
                }
                let bias = if inputs.len() == 3 {
                    let b = node(2);
                    if b.value.len() != o {
                        return usage(format!("conv1d bias {:?} for {o} filters", b.shape));
                    }
                    Some(&b.value)
                } else {
                    None
                };
                let steps = t - w + 1;
                let span = w * c;
                let mut out = vec![0.0; steps * o];
                for s in 0..steps {
                    let window = &x.value[s * c..s * c + span];
                    // windows of pure zero padding reduce to the bias
                    let padding = window.iter().all(|&v| v == 0.0);
                    for f in 0..o {
                        let filt = &k.value[f * span..(f + 1) * span];
                        let b = bias.map_or(0.0, |b| b[f]);
                        out[s * o + f] = if padding { b } else { b + dot4(window, filt) };
                    }
                }
                (vec![steps, o], out, Vec::new())
            }
            OpKind::MaxPoolTime => {
                let x = node(0);
                if x.shape.len() != 2 || x.shape[0] == 0 {
                    return usage(format!("max-pool over time of {:?}", x.shape));
                }
                let (t, c) = (x.shape[0], x.shape[1]);
                let mut out = x.value[..c].to_vec();
                let mut arg = vec![0usize; c];
                for s in 1..t {
                    for ch in 0..c {
                        let v = x.value[s * c + ch];
                        if v > out[ch] {
                            out[ch] = v;
                            arg[ch] = s;
                        }
                    }
                }
                (vec![c], out, arg)
            }
            OpKind::Concat => {
                let mut out = Vec::new();
                for i in 0..inputs.len() {
                    out.extend_from_slice(&node(i).value);
                }
                (vec![out.len()], out, Vec::new())
            }
            OpKind::Mean | OpKind::Sum => {
                let a = node(0);
                if a.value.is_empty() {
                    return usage(format!("{op:?} of an empty array"));
                }
                let s: f64 = a.value.iter().sum();
                let v = if matches!(op, OpKind::Mean) {
                    s / a.value.len() as f64
                } else {
                    s
                };
                (vec![1], vec![v], Vec::new())
            }
            OpKind::Norm2 => {
                let a = node(0);
                let v = a.value.iter().map(|x| x * x).sum::<f64>().sqrt();
                (vec![1], vec![v], Vec::new())
            }
            OpKind::DivScalar => {
                let (a, s) = (node(0), node(1));
                if s.value.len() != 1 {
                    return usage(format!("divisor must hold one element, got {:?}", s.shape));
                }
                let d = s.value[0];
                (a.shape.clone(), a.value.iter().map(|x| x / d).collect(), Vec::new())
            }
            OpKind::Row(index) => {
                let m = node(0);
                if m.shape.len() != 2 || *index >= m.shape[0] {
                    return usage(format!("row {index} of {:?}", m.shape));
                }
                let d = m.shape[1];
                (vec![d], m.value[index * d..(index + 1) * d].to_vec(), Vec::new())
            }
            OpKind::Tanh => unary(&f64::tanh),
            OpKind::Sigmoid => unary(&sigmoid),
            OpKind::Relu | OpKind::MaxZero => unary(&|x| if x > 0.0 { x } else { 0.0 }),
            OpKind::Cosh => unary(&f64::cosh),
            OpKind::Sinh => unary(&f64::sinh),
            OpKind::Log => unary(&f64::ln),
            OpKind::Square => unary(&|x| x * x),
            OpKind::Grl => unary(&|x| x),
            OpKind::Scale(c) => unary(&|x| x * c),
            OpKind::AddScalar(c) => unary(&|x| x + c),
            OpKind::Clamp { lo, hi } => {
                if lo > hi {
                    return usage(format!("clamp bounds {lo} > {hi}"));
                }
                unary(&|x| x.clamp(*lo, *hi))
            }
            OpKind::Powf(p) => unary(&|x| x.powf(*p)),
            OpKind::Arcosh => unary(&|x| x.max(1.0).acosh()),
        })
    }

    /// Runs the chain rule from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self
            .nodes
            .get(root.id)
            .ok_or_else(|| Error::Usage(format!("var {} is not on this tape", root.id)))?;
        if root_node.value.len() != 1 {
            return usage(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                if let Source::Op(op) = &node.source {
                    self.propagate(op, node, &g, &mut grads);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        })
    }

    fn propagate(&self, op: &OpKind, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let inp = |i: usize| &nodes[node.inputs[i]];
        let y = &node.value;
        // Accumulation buffer for input `i`, or None if it needs no gradient.
        fn slot<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            nodes: &[Node],
            id: usize,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[id].requires_grad {
                return None;
            }
            Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
        }
        let ids = &node.inputs;
        let unary = |grads: &mut [Option<Vec<f64>>], f: &dyn Fn(usize) -> f64| {
            if let Some(buf) = slot(grads, nodes, ids[0]) {
                // Reductions carry a single upstream value.
                let reduce = g.len() == 1;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b += g[if reduce { 0 } else { i }] * f(i);
                }
            }
        };
        match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (inp(0), inp(1));
                let sign_b = if matches!(op, OpKind::Sub) { -1.0 } else { 1.0 };
                let is_mul = matches!(op, OpKind::Mul);
                for (which, other, sign) in [(0usize, b, 1.0), (1usize, a, sign_b)] {
                    let me = inp(which);
                    let Some(buf) = slot(grads, nodes, ids[which]) else { continue };
                    let broadcast = me.value.len() == 1 && y.len() != 1;
                    for (i, gi) in g.iter().enumerate() {
                        let factor = if is_mul {
                            if other.value.len() == 1 { other.value[0] } else { other.value[i] }
                        } else {
                            sign
                        };
                        if broadcast {
                            buf[0] += gi * factor;
                        } else {
                            buf[i] += gi * factor;
                        }
                    }
                }
            }
            OpKind::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, n) = (a.shape[0], a.shape[1]);
                let p = if b.shape.len() == 2 { b.shape[1] } else { 1 };
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    for i in 0..m {
                        for k in 0..n {
                            let mut acc = 0.0;
                            for j in 0..p {
                                acc += g[i * p + j] * b.value[k * p + j];
                            }
                            buf[i * n + k] += acc;
                        }
                    }
                }
                if let Some(buf) = slot(grads, nodes, ids[1]) {
                    for k in 0..n {
                        for j in 0..p {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += a.value[i * n + k] * g[i * p + j];
                            }
                            buf[k * p + j] += acc;
                        }
                    }
                }
            }
            OpKind::Conv1d => {
                let (x, k) = (inp(0), inp(1));
                let c = x.shape[1];
                let (o, w) = (k.shape[0], k.shape[1]);
                let steps = node.shape[0];
                let span = w * c;
                if let Some(buf) = slot(grads, nodes, ids[1]) {
                    for s in 0..steps {
                        let window = &x.value[s * c..s * c + span];
                        for f in 0..o {
                            let gv = g[s * o + f];
                            if gv == 0.0 {
                                continue;
                            }
                            for (dst, xv) in buf[f * span..(f + 1) * span].iter_mut().zip(window) {
                                *dst += gv * xv;
                            }
                        }
                    }
                }
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    for s in 0..steps {
                        for f in 0..o {
                            let gv = g[s * o + f];
                            if gv == 0.0 {
                                continue;
                            }
                            let filt = &k.value[f * span..(f + 1) * span];
                            for (dst, kv) in buf[s * c..s * c + span].iter_mut().zip(filt) {
                                *dst += gv * kv;
                            }
                        }
                    }
                }
                if ids.len() == 3 {
                    if let Some(buf) = slot(grads, nodes, ids[2]) {
                        for s in 0..steps {
                            for f in 0..o {
                                buf[f] += g[s * o + f];
                            }
                        }
                    }
                }
            }
            OpKind::MaxPoolTime => {
                let c = node.shape[0];
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    for ch in 0..c {
                        buf[node.aux[ch] * c + ch] += g[ch];
                    }
                }
            }
            OpKind::Concat => {
                let mut offset = 0;
                for (i, &id) in ids.iter().enumerate() {
                    let len = inp(i).value.len();
                    if let Some(buf) = slot(grads, nodes, id) {
                        for (b, gv) in buf.iter_mut().zip(&g[offset..offset + len]) {
                            *b += gv;
                        }
                    }
                    offset += len;
                }
            }
            OpKind::Mean => {
                let n = inp(0).value.len() as f64;
                unary(grads, &|_| 1.0 / n);
            }
            OpKind::Sum => unary(grads, &|_| 1.0),
            OpKind::Norm2 => {
                let a = inp(0);
                let norm = y[0];
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    if norm > 0.0 {
                        for (b, x) in buf.iter_mut().zip(&a.value) {
                            *b += g[0] * x / norm;
                        }
                    }
                }
            }
            OpKind::DivScalar => {
                let (a, s) = (inp(0), inp(1));
                let d = s.value[0];
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    for (b, gi) in buf.iter_mut().zip(g) {
                        *b += gi / d;
                    }
                }
                if let Some(buf) = slot(grads, nodes, ids[1]) {
                    let acc: f64 = g.iter().zip(&a.value).map(|(gi, x)| gi * x).sum();
                    buf[0] -= acc / (d * d);
                }
            }
            OpKind::Row(index) => {
                let d = node.shape[0];
                if let Some(buf) = slot(grads, nodes, ids[0]) {
                    for (b, gi) in buf[index * d..(index + 1) * d].iter_mut().zip(g) {
                        *b += gi;
                    }
                }
            }
            OpKind::Tanh => unary(grads, &|i| 1.0 - y[i] * y[i]),
            OpKind::Sigmoid => unary(grads, &|i| y[i] * (1.0 - y[i])),
            OpKind::Relu | OpKind::MaxZero => {
                let x = &inp(0).value;
                unary(grads, &|i| if x[i] > 0.0 { 1.0 } else { 0.0 })
            }
            OpKind::Cosh => {
                let x = &inp(0).value;
                unary(grads, &|i| x[i].sinh())
            }
            OpKind::Sinh => {
                let x = &inp(0).value;
                unary(grads, &|i| x[i].cosh())
            }
            OpKind::Log => {
                let x = &inp(0).value;
                unary(grads, &|i| 1.0 / x[i])
            }
            OpKind::Square => {
                let x = &inp(0).value;
                unary(grads, &|i| 2.0 * x[i])
            }
            OpKind::Grl => {
                let sign = self.grl_sign;
                unary(grads, &|_| sign)
            }
            OpKind::Scale(c) => unary(grads, &|_| *c),
            OpKind::AddScalar(_) => unary(grads, &|_| 1.0),
            OpKind::Clamp { lo, hi } => {
                let x = &inp(0).value;
                unary(grads, &|i| if x[i] >= *lo && x[i] <= *hi { 1.0 } else { 0.0 })
            }
            OpKind::Powf(p) => {
                let x = &inp(0).value;
                unary(grads, &|i| p * x[i].powf(p - 1.0))
            }
            OpKind::Arcosh => {
                let x = &inp(0).value;
                unary(grads, &|i| {
                    if x[i] <= 1.0 {
                        0.0
                    } else {
                        1.0 / (x[i] * x[i] - 1.0).max(ARCOSH_GRAD_FLOOR).sqrt()
                    }
                })
            }
        }
    }
}

/// Lower bound on `x^2 - 1` inside the arcosh derivative.
const ARCOSH_GRAD_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four interleaved accumulators.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

macro_rules! unary_ops {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                #[doc = concat!("Records `", stringify!($name), "`; panics on invalid input.")]
                pub fn $name(&mut self, x: Var) -> Var {
                    self.record($kind, &[x]).expect(stringify!($name))
                }
            )*
        }
    };
}

macro_rules! binary_ops {
    ($($name:ident => $kind:expr),* $(,)?) => {
        impl Tape {
            $(
                #[doc = concat!("Records `", stringify!($name), "`; panics on shape mismatch.")]
                pub fn $name(&mut self, a: Var, b: Var) -> Var {
                    match self.record($kind, &[a, b]) {
                        Ok(v) => v,
                        Err(e) => panic!("{}: {e}", stringify!($name)),
                    }
                }
            )*
        }
    };
}

unary_ops! {
    max_pool_time => OpKind::MaxPoolTime,
    mean => OpKind::Mean,
    sum => OpKind::Sum,
    tanh => OpKind::Tanh,
    sigmoid => OpKind::Sigmoid,
    relu => OpKind::Relu,
    max_zero => OpKind::MaxZero,
    cosh => OpKind::Cosh,
    sinh => OpKind::Sinh,
    norm2 => OpKind::Norm2,
    log => OpKind::Log,
    square => OpKind::Square,
    grl => OpKind::Grl,
    arcosh => OpKind::Arcosh,
}

binary_ops! {
    add => OpKind::Add,
    sub => OpKind::Sub,
    mul => OpKind::Mul,
    matmul => OpKind::MatMul,
    div_scalar => OpKind::DivScalar,
}

impl Tape {
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.record(OpKind::Scale(c), &[x]).expect("scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.record(OpKind::AddScalar(c), &[x]).expect("add_scalar")
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.record(OpKind::Clamp { lo, hi }, &[x]).expect("clamp")
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.record(OpKind::Powf(p), &[x]).expect("powf")
    }

    pub fn row(&mut self, matrix: Var, index: usize) -> Var {
        match self.record(OpKind::Row(index), &[matrix]) {
            Ok(v) => v,
            Err(e) => panic!("row: {e}"),
        }
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.record(OpKind::Concat, parts).expect("concat")
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Var {
        let r = match bias {
            Some(b) => self.record(OpKind::Conv1d, &[x, kernel, b]),
            None => self.record(OpKind::Conv1d, &[x, kernel]),
        };
        match r {
            Ok(v) => v,
            Err(e) => panic!("conv1d: {e}"),
        }
    }

    /// `sum(a * b)`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }
}
