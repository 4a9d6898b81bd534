//! Flattened outer arithmetic attention.
//!
//! Inputs are single flattened `m`-vectors. A head projects query, key and
//! value sources with its own `m×m` matrices, combines the projected query
//! and key through an outer operator into an `m×m` score matrix, scales it by
//! `1/√m`, normalizes each row with a softmax over the key index and applies
//! the result to the projected value vector.
//!
//! For vector inputs the scaled-dot-product baseline builds its score matrix
//! as `q·kᵀ`, which is exactly the outer product. [`sdp_attention`] and
//! [`attention_score`] with [`OuterOpKind::Mul`] therefore coincide whenever
//! they share projections.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Bindings, Module, Parameter};
use crate::tape::{Tape, Var};

pub const DEFAULT_DIV_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterOpKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl OuterOpKind {
    pub const ALL: [OuterOpKind; 4] = [
        OuterOpKind::Add,
        OuterOpKind::Sub,
        OuterOpKind::Mul,
        OuterOpKind::Div,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OuterOpKind::Add => "add",
            OuterOpKind::Sub => "sub",
            OuterOpKind::Mul => "mul",
            OuterOpKind::Div => "div",
        }
    }

    /// Conventional abbreviation: OA, OS, OP, OD.
    pub fn short(self) -> &'static str {
        match self {
            OuterOpKind::Add => "OA",
            OuterOpKind::Sub => "OS",
            OuterOpKind::Mul => "OP",
            OuterOpKind::Div => "OD",
        }
    }
}

impl fmt::Display for OuterOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OuterOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OuterOpKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown outer operator '{s}'")))
    }
}

/// Outer arithmetic of `q` and `k`: entry `(i, j)` is `q_i ∘ k_j`. Division
/// uses the guarded denominator from [`crate::tape::div_guard`].
pub fn outer_op(tape: &mut Tape, kind: OuterOpKind, q: Var, k: Var, eps: f64) -> Result<Var> {
    tape.outer(kind, q, k, eps)
}

/// Query, key and value projections of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct FoaaHeadParams {
    pub w_q: Parameter,
    pub w_k: Parameter,
    pub w_v: Parameter,
}

impl FoaaHeadParams {
    pub fn new<R: Rng + ?Sized>(prefix: &str, m: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        FoaaHeadParams {
            w_q: Parameter::uniform(format!("{prefix}.w_q"), &[m, m], bound, rng),
            w_k: Parameter::uniform(format!("{prefix}.w_k"), &[m, m], bound, rng),
            w_v: Parameter::uniform(format!("{prefix}.w_v"), &[m, m], bound, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    fn check(&self) -> Result<usize> {
        let m = self.dim();
        for p in [&self.w_q, &self.w_k, &self.w_v] {
            if p.shape() != [m, m] {
                return Err(Error::dim("attention head", &[m, m], p.shape()));
            }
        }
        Ok(m)
    }

    /// Row-softmaxed, `1/√m`-scaled outer score matrix.
    pub fn attention_matrix(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        kind: OuterOpKind,
        eps: f64,
        x_q: Var,
        x_k: Var,
    ) -> Result<Var> {
        let m = self.check()?;
        let q = tape.matvec(b.var(&self.w_q), x_q)?;
        let k = tape.matvec(b.var(&self.w_k), x_k)?;
        scaled_softmax(tape, kind, q, k, eps, m)
    }
}

impl Module for FoaaHeadParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w_q, &self.w_k, &self.w_v]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v]
    }
}

fn scaled_softmax(tape: &mut Tape, kind: OuterOpKind, q: Var, k: Var, eps: f64, m: usize) -> Result<Var> {
    let scores = tape.outer(kind, q, k, eps)?;
    let scaled = tape.scale(scores, 1.0 / (m as f64).sqrt());
    Ok(tape.softmax_rows(scaled))
}

/// One outer-arithmetic attention head applied to flattened vectors.
#[allow(clippy::too_many_arguments)]
pub fn attention_score(
    tape: &mut Tape,
    b: &Bindings,
    kind: OuterOpKind,
    head: &FoaaHeadParams,
    eps: f64,
    x_q: Var,
    x_k: Var,
    x_v: Var,
) -> Result<Var> {
    let attn = head.attention_matrix(tape, b, kind, eps, x_q, x_k)?;
    let v = tape.matvec(b.var(&head.w_v), x_v)?;
    tape.matvec(attn, v)
}

/// Scaled dot-product baseline on flattened vectors: `softmax(q·kᵀ/√m)·v`.
pub fn sdp_attention(
    tape: &mut Tape,
    b: &Bindings,
    head: &FoaaHeadParams,
    x_q: Var,
    x_k: Var,
    x_v: Var,
) -> Result<Var> {
    let m = head.check()?;
    let q = tape.matvec(b.var(&head.w_q), x_q)?;
    let k = tape.matvec(b.var(&head.w_k), x_k)?;
    let q_col = tape.reshape(q, &[m, 1])?;
    let k_row = tape.reshape(k, &[1, m])?;
    let scores = tape.matmul(q_col, k_row)?;
    let scaled = tape.scale(scores, 1.0 / (m as f64).sqrt());
    let attn = tape.softmax_rows(scaled);
    let v = tape.matvec(b.var(&head.w_v), x_v)?;
    tape.matvec(attn, v)
}

/// One set of per-operator heads for a single attention direction.
#[derive(Clone, Debug, PartialEq)]
pub struct FoaaBlockParams {
    heads: Vec<(OuterOpKind, FoaaHeadParams)>,
    dim: usize,
    div_epsilon: f64,
}

impl FoaaBlockParams {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        m: usize,
        ops: &[OuterOpKind],
        div_epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(div_epsilon > 0.0) {
            return Err(Error::Config(format!("div_epsilon must be positive, got {div_epsilon}")));
        }
        let mut enabled: Vec<OuterOpKind> = ops.to_vec();
        enabled.sort();
        enabled.dedup();
        let heads = enabled
            .into_iter()
            .map(|k| (k, FoaaHeadParams::new(&format!("{prefix}.{}", k.name()), m, rng)))
            .collect();
        Ok(FoaaBlockParams {
            heads,
            dim: m,
            div_epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn div_epsilon(&self) -> f64 {
        self.div_epsilon
    }

    pub fn enabled_ops(&self) -> Vec<OuterOpKind> {
        self.heads.iter().map(|(k, _)| *k).collect()
    }

    pub fn head(&self, kind: OuterOpKind) -> Option<&FoaaHeadParams> {
        self.heads.iter().find(|(k, _)| *k == kind).map(|(_, h)| h)
    }

    pub fn head_mut(&mut self, kind: OuterOpKind) -> Option<&mut FoaaHeadParams> {
        self.heads.iter_mut().find(|(k, _)| *k == kind).map(|(_, h)| h)
    }

    pub fn heads(&self) -> impl Iterator<Item = (OuterOpKind, &FoaaHeadParams)> {
        self.heads.iter().map(|(k, h)| (*k, h))
    }

    /// Attended vectors of every enabled operator, queries from `x_q`,
    /// keys and values from `x_kv`.
    pub fn attend(&self, tape: &mut Tape, b: &Bindings, x_q: Var, x_kv: Var) -> Result<Vec<Var>> {
        self.heads
            .iter()
            .map(|(kind, head)| attention_score(tape, b, *kind, head, self.div_epsilon, x_q, x_kv, x_kv))
            .collect()
    }
}

impl Module for FoaaBlockParams {
    fn params(&self) -> Vec<&Parameter> {
        self.heads.iter().flat_map(|(_, h)| h.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.heads.iter_mut().flat_map(|(_, h)| h.params_mut()).collect()
    }
}

fn check_vec(tape: &Tape, op: &'static str, x: Var, m: usize) -> Result<()> {
    if tape.shape(x) != [m] {
        return Err(Error::dim(op, &[m], tape.shape(x)));
    }
    Ok(())
}

/// Self-attention: every enabled operator attends `x` over itself and the
/// results are summed with `x`.
pub fn foaa_self_attention(tape: &mut Tape, b: &Bindings, block: &FoaaBlockParams, x: Var) -> Result<Var> {
    if block.heads.is_empty() {
        return Err(Error::Config("self-attention block has no enabled operators".into()));
    }
    check_vec(tape, "foaa_self_attention", x, block.dim)?;
    let mut terms = block.attend(tape, b, x, x)?;
    terms.push(x);
    tape.add_all(&terms)
}

/// Bidirectional cross-attention. `block_ab` takes queries from `x_a` and
/// keys/values from `x_b`; `block_ba` the reverse. Either direction may be
/// omitted. All attended vectors and both inputs are summed.
pub fn foaa_cross_attention(
    tape: &mut Tape,
    b: &Bindings,
    block_ab: Option<&FoaaBlockParams>,
    block_ba: Option<&FoaaBlockParams>,
    x_a: Var,
    x_b: Var,
) -> Result<Var> {
    if tape.shape(x_a) != tape.shape(x_b) {
        return Err(Error::dim("foaa_cross_attention", tape.shape(x_a), tape.shape(x_b)));
    }
    let mut terms = Vec::new();
    if let Some(block) = block_ab {
        check_vec(tape, "foaa_cross_attention", x_a, block.dim)?;
        terms.extend(block.attend(tape, b, x_a, x_b)?);
    }
    if let Some(block) = block_ba {
        check_vec(tape, "foaa_cross_attention", x_b, block.dim)?;
        terms.extend(block.attend(tape, b, x_b, x_a)?);
    }
    if terms.is_empty() {
        return Err(Error::Config("cross-attention has no enabled operators".into()));
    }
    terms.push(x_a);
    terms.push(x_b);
    tape.add_all(&terms)
}

/// Bidirectional cross-attention parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttentionParams {
    pub ab: Option<FoaaBlockParams>,
    pub ba: Option<FoaaBlockParams>,
}

impl CrossAttentionParams {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        m: usize,
        ops: &[OuterOpKind],
        bidirectional: bool,
        div_epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let ab = FoaaBlockParams::new(&format!("{prefix}.ab"), m, ops, div_epsilon, rng)?;
        let ba = if bidirectional {
            Some(FoaaBlockParams::new(&format!("{prefix}.ba"), m, ops, div_epsilon, rng)?)
        } else {
            None
        };
        Ok(CrossAttentionParams { ab: Some(ab), ba })
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, x_a: Var, x_b: Var) -> Result<Var> {
        foaa_cross_attention(tape, b, self.ab.as_ref(), self.ba.as_ref(), x_a, x_b)
    }
}

impl Module for CrossAttentionParams {
    fn params(&self) -> Vec<&Parameter> {
        self.ab.iter().chain(self.ba.iter()).flat_map(|blk| blk.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.ab
            .iter_mut()
            .chain(self.ba.iter_mut())
            .flat_map(|blk| blk.params_mut())
            .collect()
    }
}

/// FC layer, ReLU, then a linear classifier with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHeadParams {
    pub fc: Parameter,
    pub classifier: Parameter,
    pub bias: Parameter,
}

impl FusionHeadParams {
    pub fn new<R: Rng + ?Sized>(prefix: &str, m: usize, num_classes: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (m as f64).sqrt();
        FusionHeadParams {
            fc: Parameter::uniform(format!("{prefix}.fc"), &[m, m], bound, rng),
            classifier: Parameter::uniform(format!("{prefix}.classifier"), &[m, num_classes], bound, rng),
            bias: Parameter::zeros(format!("{prefix}.bias"), &[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.shape()[1]
    }

    /// Post-activation hidden vector `relu(fc·fused)`.
    pub fn hidden(&self, tape: &mut Tape, b: &Bindings, fused: Var) -> Result<Var> {
        let m = self.classifier.shape()[0];
        check_vec(tape, "fusion_head", fused, m)?;
        let h = tape.matvec(b.var(&self.fc), fused)?;
        Ok(tape.relu(h))
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, fused: Var) -> Result<Var> {
        let h = self.hidden(tape, b, fused)?;
        let z = tape.vecmat(h, b.var(&self.classifier))?;
        tape.add(z, b.var(&self.bias))
    }
}

impl Module for FusionHeadParams {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.fc, &self.classifier, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.fc, &mut self.classifier, &mut self.bias]
    }
}

/// Free-function form of [`FusionHeadParams::forward`].
pub fn fusion_head(tape: &mut Tape, b: &Bindings, params: &FusionHeadParams, fused: Var) -> Result<Var> {
    params.forward(tape, b, fused)
}

/// Simplified outer-fusion baseline without attention: each operator's
/// outer matrix of `x_a` and `x_b` is reduced by row means, and the
/// resulting vectors are summed. This is a stand-in, not a replication of
/// any published outer-arithmetic fusion network.
pub fn direct_outer_fusion(
    tape: &mut Tape,
    ops: &[OuterOpKind],
    eps: f64,
    x_a: Var,
    x_b: Var,
) -> Result<Var> {
    if tape.shape(x_a) != tape.shape(x_b) {
        return Err(Error::dim("direct_outer_fusion", tape.shape(x_a), tape.shape(x_b)));
    }
    if ops.is_empty() {
        return Err(Error::Config("direct outer fusion needs at least one operator".into()));
    }
    let mut terms = Vec::with_capacity(ops.len());
    for &kind in ops {
        let outer = tape.outer(kind, x_a, x_b, eps)?;
        terms.push(tape.mean_rows(outer)?);
    }
    tape.add_all(&terms)
}
