//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable operation appends one node to a [`Tape`] holding its
//! forward value and the handles of its inputs. [`Tape::backward`] walks the
//! nodes in reverse and writes adjoints into the gradient slot of each node
//! that requires a gradient. Leaves used several times accumulate one
//! contribution per use.
//!
//! A tape is a single-threaded unit of work; run independent samples or folds
//! on separate tapes.

use crate::attention::OuterOpKind;
use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Coarse operation classes, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpClass {
    Leaf,
    MatMul,
    Elementwise,
    Scale,
    Reshape,
    SoftmaxRows,
    Outer,
    Relu,
    Sum,
    MeanRows,
    Conv2d,
    AvgPool2,
    CrossEntropy,
}

impl OpClass {
    pub fn name(self) -> &'static str {
        match self {
            OpClass::Leaf => "leaf",
            OpClass::MatMul => "matmul",
            OpClass::Elementwise => "elementwise",
            OpClass::Scale => "scale",
            OpClass::Reshape => "reshape",
            OpClass::SoftmaxRows => "softmax_rows",
            OpClass::Outer => "outer_op",
            OpClass::Relu => "relu",
            OpClass::Sum => "sum",
            OpClass::MeanRows => "mean_rows",
            OpClass::Conv2d => "conv2d",
            OpClass::AvgPool2 => "avg_pool2",
            OpClass::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(name: &str) -> Option<OpClass> {
        const ALL: [OpClass; 13] = [
            OpClass::Leaf,
            OpClass::MatMul,
            OpClass::Elementwise,
            OpClass::Scale,
            OpClass::Reshape,
            OpClass::SoftmaxRows,
            OpClass::Outer,
            OpClass::Relu,
            OpClass::Sum,
            OpClass::MeanRows,
            OpClass::Conv2d,
            OpClass::AvgPool2,
            OpClass::CrossEntropy,
        ];
        ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Elementwise(ElementwiseOp, Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    SoftmaxRows(Var),
    Outer {
        kind: OuterOpKind,
        q: Var,
        k: Var,
        eps: f64,
    },
    Relu(Var),
    Sum(Var),
    MeanRows(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    AvgPool2(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
    },
}

impl Op {
    fn class(&self) -> OpClass {
        match self {
            Op::Leaf => OpClass::Leaf,
            Op::MatMul(..) => OpClass::MatMul,
            Op::Elementwise(..) => OpClass::Elementwise,
            Op::Scale(..) => OpClass::Scale,
            Op::Reshape(..) => OpClass::Reshape,
            Op::SoftmaxRows(..) => OpClass::SoftmaxRows,
            Op::Outer { .. } => OpClass::Outer,
            Op::Relu(..) => OpClass::Relu,
            Op::Sum(..) => OpClass::Sum,
            Op::MeanRows(..) => OpClass::MeanRows,
            Op::Conv2d { .. } => OpClass::Conv2d,
            Op::AvgPool2(..) => OpClass::AvgPool2,
            Op::CrossEntropy { .. } => OpClass::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Guarded denominator for outer division: `|x| >= eps` passes through,
/// smaller magnitudes are clamped to `eps` with the sign kept (`sign(0) = +1`).
pub fn div_guard(x: f64, eps: f64) -> f64 {
    if x.abs() >= eps {
        x
    } else if x < 0.0 {
        -eps
    } else {
        eps
    }
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    fault: Option<OpClass>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Builds a tape whose adjoint for `class` is deliberately wrong.
    ///
    /// Only meant for exercising gradient checks.
    pub fn with_corrupted_adjoint(class: OpClass) -> Self {
        Tape {
            fault: Some(class),
            ..Tape::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn result(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.needs_grad(v));
        let value = Tensor::new(shape, data)
            .expect("operation produced inconsistent shape")
            .with_requires_grad(requires_grad);
        self.push(value, op)
    }

    /// Records a leaf holding a copy of `value`.
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        let mut t = value.clone();
        t.zero_grad();
        self.push(t, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf)
    }

    /// Records a parameter leaf and remembers it by name.
    pub fn param(&mut self, p: &Parameter) -> Var {
        let v = self.leaf(p.value());
        self.params.push((p.name().to_string(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// First node whose value contains NaN or an infinity, with its op class.
    pub fn first_non_finite(&self) -> Option<(Var, OpClass)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (Var(i), n.op.class()))
    }

    fn as_matrix(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        match s.len() {
            0 => (1, 1),
            1 => (1, s[0]),
            _ => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        Ok(self.result(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `w·x` for a matrix `w[m×k]` and vector `x[k]`, returning an `m`-vector.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let k = match self.shape(x) {
            [k] => *k,
            other => return Err(Error::dim("matvec", self.shape(w), other)),
        };
        let col = self.reshape(x, &[k, 1])?;
        let prod = self.matmul(w, col)?;
        let m = self.shape(prod)[0];
        self.reshape(prod, &[m])
    }

    /// `xᵀ·w` for a vector `x[k]` and matrix `w[k×n]`, returning an `n`-vector.
    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        let k = match self.shape(x) {
            [k] => *k,
            other => return Err(Error::dim("vecmat", other, self.shape(w))),
        };
        let row = self.reshape(x, &[1, k])?;
        let prod = self.matmul(row, w)?;
        let n = self.shape(prod)[1];
        self.reshape(prod, &[n])
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("elementwise", self.shape(a), self.shape(b)));
        }
        let f = match op {
            ElementwiseOp::Add => |x: f64, y: f64| x + y,
            ElementwiseOp::Sub => |x: f64, y: f64| x - y,
            ElementwiseOp::Mul => |x: f64, y: f64| x * y,
        };
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.result(shape, out, Op::Elementwise(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    /// Element-wise sum of a non-empty list of same-shaped tensors.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all needs at least one term".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.result(shape, out, Op::Scale(x, c), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        Ok(self.result(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Softmax over the last axis; a 1-D input is treated as one row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = self.as_matrix(x);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let shape = self.shape(x).to_vec();
        self.result(shape, out, Op::SoftmaxRows(x), &[x])
    }

    /// Outer arithmetic of two vectors: entry `(i, j)` is `q_i ∘ k_j`.
    pub fn outer(&mut self, kind: OuterOpKind, q: Var, k: Var, eps: f64) -> Result<Var> {
        let (m, n) = match (self.shape(q), self.shape(k)) {
            ([m], [n]) if m == n => (*m, *n),
            (a, b) => return Err(Error::dim("outer_op", a, b)),
        };
        if kind == OuterOpKind::Div && eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config(format!("division guard must be positive, got {eps}")));
        }
        let out = outer_raw(kind, self.data(q), self.data(k), eps);
        Ok(self.result(vec![m, n], out, Op::Outer { kind, q, k, eps }, &[q, k]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.result(shape, out, Op::Relu(x), &[x])
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.result(Vec::new(), vec![total], Op::Sum(x), &[x])
    }

    /// Mean of all entries as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reduces each row of a 2-D tensor to its mean.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(x) {
            [r, c] => (*r, *c),
            other => return Err(Error::dim("mean_rows", other, &[0, 0])),
        };
        let src = self.data(x);
        let out = (0..rows)
            .map(|r| src[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64)
            .collect();
        Ok(self.result(vec![rows], out, Op::MeanRows(x), &[x]))
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    ///
    /// `input` is `[c, h, w]`, `weight` is `[o, c, 3, 3]`, `bias` is `[o]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            other => return Err(Error::dim("conv2d", other, self.shape(weight))),
        };
        let o = match self.shape(weight) {
            [o, wc, 3, 3] if *wc == c => *o,
            other => return Err(Error::dim("conv2d", self.shape(input), other)),
        };
        if self.shape(bias) != [o] {
            return Err(Error::dim("conv2d", self.shape(weight), self.shape(bias)));
        }
        let (x, wt, b) = (self.data(input), self.data(weight), self.data(bias));
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            let plane = &mut out[oc * h * w..(oc + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = b[oc]);
            for ic in 0..c {
                let src = &x[ic * h * w..(ic + 1) * h * w];
                let kern = &wt[(oc * c + ic) * 9..(oc * c + ic + 1) * 9];
                for_each_tap(h, w, |dst, s, t| plane[dst] += kern[t] * src[s]);
            }
        }
        Ok(self.result(vec![o, h, w], out, Op::Conv2d { input, weight, bias }, &[input, weight, bias]))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] if *h >= 2 && *w >= 2 => (*c, *h, *w),
            other => return Err(Error::dim("avg_pool2", other, &[2, 2])),
        };
        let (ho, wo) = (h / 2, w / 2);
        let src = self.data(x);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[(ch * ho + y) * wo + xx] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        Ok(self.result(vec![c, ho, wo], out, Op::AvgPool2(x), &[x]))
    }

    /// `-log softmax(logits)[label]`, stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = match self.shape(logits) {
            [_] => self.data(logits),
            other => return Err(Error::dim("cross_entropy", other, &[label])),
        };
        if label >= z.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let loss = log_sum_exp(z) - z[label];
        Ok(self.result(Vec::new(), vec![loss], Op::CrossEntropy { logits, label }, &[logits]))
    }

    /// Propagates adjoints from the scalar `loss` into every node that
    /// requires a gradient. Previous gradients on this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            let contribs = self.adjoints(idx, &g);
            self.nodes[idx].value.accumulate_grad(&g)?;
            for (input, mut delta) in contribs {
                if !self.needs_grad(input) {
                    continue;
                }
                if self.fault == Some(self.nodes[idx].op.class()) {
                    delta.iter_mut().for_each(|d| *d *= 1.5);
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn adjoints(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(a), self.data(b));
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * db[p * n + j];
                            gb[p * n + j] += da[i * k + p] * gij;
                        }
                    }
                }
                vec![(a, ga), (b, gb)]
            }
            Op::Elementwise(op, a, b) => match op {
                ElementwiseOp::Add => vec![(a, g.to_vec()), (b, g.to_vec())],
                ElementwiseOp::Sub => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
                ElementwiseOp::Mul => {
                    let (da, db) = (self.data(a), self.data(b));
                    vec![
                        (a, g.iter().zip(db).map(|(g, y)| g * y).collect()),
                        (b, g.iter().zip(da).map(|(g, x)| g * x).collect()),
                    ]
                }
            },
            Op::Scale(x, c) => vec![(x, g.iter().map(|v| v * c).collect())],
            Op::Reshape(x) => vec![(x, g.to_vec())],
            Op::SoftmaxRows(x) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; g.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), gv) in dxr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (gv - dot);
                    }
                }
                vec![(x, dx)]
            }
            Op::Outer { kind, q, k, eps } => {
                let (qd, kd) = (self.data(q), self.data(k));
                let n = kd.len();
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; n];
                for (i, row) in g.chunks(n).enumerate() {
                    for (j, &gij) in row.iter().enumerate() {
                        match kind {
                            OuterOpKind::Add => {
                                gq[i] += gij;
                                gk[j] += gij;
                            }
                            OuterOpKind::Sub => {
                                gq[i] += gij;
                                gk[j] -= gij;
                            }
                            OuterOpKind::Mul => {
                                gq[i] += gij * kd[j];
                                gk[j] += gij * qd[i];
                            }
                            OuterOpKind::Div => {
                                let den = div_guard(kd[j], eps);
                                gq[i] += gij / den;
                                if kd[j].abs() >= eps {
                                    gk[j] -= gij * qd[i] / (den * den);
                                }
                            }
                        }
                    }
                }
                vec![(q, gq), (k, gk)]
            }
            Op::Relu(x) => {
                let src = self.data(x);
                vec![(x, g.iter().zip(src).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Sum(x) => vec![(x, vec![g[0]; self.value(x).numel()])],
            Op::MeanRows(x) => {
                let cols = self.shape(x)[1];
                let dx = g
                    .iter()
                    .flat_map(|&gr| std::iter::repeat_n(gr / cols as f64, cols))
                    .collect();
                vec![(x, dx)]
            }
            Op::Conv2d { input, weight, bias } => {
                let (c, h, w) = match self.shape(input) {
                    [c, h, w] => (*c, *h, *w),
                    _ => unreachable!("validated in forward"),
                };
                let o = self.shape(weight)[0];
                let (x, wt) = (self.data(input), self.data(weight));
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; wt.len()];
                let mut gb = vec![0.0; o];
                for oc in 0..o {
                    let gplane = &g[oc * h * w..(oc + 1) * h * w];
                    gb[oc] = gplane.iter().sum();
                    for ic in 0..c {
                        let src = &x[ic * h * w..(ic + 1) * h * w];
                        let kbase = (oc * c + ic) * 9;
                        let gsrc = &mut gx[ic * h * w..(ic + 1) * h * w];
                        for_each_tap(h, w, |dst, s, t| {
                            gw[kbase + t] += gplane[dst] * src[s];
                            gsrc[s] += gplane[dst] * wt[kbase + t];
                        });
                    }
                }
                vec![(input, gx), (weight, gw), (bias, gb)]
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = match self.shape(x) {
                    [c, h, w] => (*c, *h, *w),
                    _ => unreachable!("validated in forward"),
                };
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let gv = 0.25 * g[(ch * ho + y) * wo + xx];
                            let base = ch * h * w + 2 * y * w + 2 * xx;
                            for off in [0, 1, w, w + 1] {
                                dx[base + off] += gv;
                            }
                        }
                    }
                }
                vec![(x, dx)]
            }
            Op::CrossEntropy { logits, label } => {
                let z = self.data(logits);
                let lse = log_sum_exp(z);
                let dz = z
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| g[0] * ((v - lse).exp() - if i == label { 1.0 } else { 0.0 }))
                    .collect();
                vec![(logits, dz)]
            }
        }
    }

    /// Gradient of every recorded parameter, keyed by parameter name.
    pub fn param_grads(&self) -> Vec<(&str, &[f64])> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.grad(*v).map(|g| (name.as_str(), g)))
            .collect()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn outer_raw(kind: OuterOpKind, q: &[f64], k: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() * k.len());
    match kind {
        OuterOpKind::Add => q.iter().for_each(|&a| out.extend(k.iter().map(|&b| a + b))),
        OuterOpKind::Sub => q.iter().for_each(|&a| out.extend(k.iter().map(|&b| a - b))),
        OuterOpKind::Mul => q.iter().for_each(|&a| out.extend(k.iter().map(|&b| a * b))),
        OuterOpKind::Div => {
            let den: Vec<f64> = k.iter().map(|&b| div_guard(b, eps)).collect();
            q.iter().for_each(|&a| out.extend(den.iter().map(|&d| a / d)));
        }
    }
    out
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Visits every (output, input, tap) triple of a padded 3×3 stencil on an
/// `h×w` plane. Tap index `t` is `3*dy + dx` in kernel layout.
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for y in 0..h {
        for x in 0..w {
            for dy in 0..3 {
                let sy = y + dy;
                if sy < 1 || sy > h {
                    continue;
                }
                for dx in 0..3 {
                    let sx = x + dx;
                    if sx < 1 || sx > w {
                        continue;
                    }
                    f(y * w + x, (sy - 1) * w + (sx - 1), dy * 3 + dx);
                }
            }
        }
    }
}
