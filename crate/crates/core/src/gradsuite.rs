//! Finite-difference checks over every layer type, shared by the test suite
//! and the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attention_score, direct_outer_fusion, foaa_self_attention, fusion_head, outer_op, sdp_attention,
    CrossAttentionParams, FoaaBlockParams, FoaaHeadParams, FusionHeadParams, OuterOpKind,
};
use crate::encoders::{ImageEncoderConfig, ImageEncoderParams, TabularEncoderConfig, TabularEncoderParams};
use crate::error::Result;
use crate::gradcheck::{finite_diff_check_with, DEFAULT_STEP};
use crate::param::{Bindings, Module, ParamSet, Parameter};
use crate::tape::{OpClass, Tape, Var};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 10;

const M: usize = 6;
const EPS: f64 = 1e-6;
/// Smallest key magnitude admitted into a division instance, keeping the
/// guard's kink and the pole far from the difference stencil.
const MIN_KEY: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteLine {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

impl SuiteLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

/// Names of the checked layer types, in report order.
pub fn layer_names() -> Vec<String> {
    let mut names: Vec<String> = OuterOpKind::ALL.iter().map(|k| format!("outer_op/{}", k.name())).collect();
    names.extend(OuterOpKind::ALL.iter().map(|k| format!("attention_score/{}", k.name())));
    for n in [
        "sdp_attention",
        "foaa_self_attention",
        "foaa_cross_attention",
        "direct_outer_fusion",
        "image_encoder",
        "tabular_encoder",
        "fusion_head",
        "cross_entropy",
    ] {
        names.push(n.to_string());
    }
    names
}

/// Model parameters plus differentiable inputs, so input gradients are
/// checked too.
struct WithInputs<M> {
    inner: M,
    inputs: ParamSet,
}

impl<T: Module> Module for WithInputs<T> {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.inner.params();
        v.extend(self.inputs.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.inner.params_mut();
        v.extend(self.inputs.params_mut());
        v
    }
}

impl<T> WithInputs<T> {
    fn input(&self, b: &Bindings, i: usize) -> Var {
        b.var(&self.inputs.0[i])
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Magnitudes in `[MIN_KEY, MIN_KEY + 1)` with random signs.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(MIN_KEY..MIN_KEY + 1.0);
            if rng.random::<bool>() { mag } else { -mag }
        })
        .collect()
}

fn input(name: &str, data: Vec<f64>) -> Parameter {
    Parameter::new(name, Tensor::vector(data))
}

/// Contracts an output with fixed random weights into a scalar objective.
fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn weights_like(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, -1.0, 1.0)).expect("shape matches data")
}

fn keys(head: &FoaaHeadParams, x: &[f64]) -> Vec<f64> {
    let w = head.w_k.value().data();
    let m = head.dim();
    (0..m).map(|i| (0..m).map(|j| w[i * m + j] * x[j]).sum()).collect()
}

fn keys_ok(head: &FoaaHeadParams, x: &[f64]) -> bool {
    keys(head, x).iter().all(|k| k.abs() >= MIN_KEY)
}

fn block_keys_ok(block: &FoaaBlockParams, x_kv: &[f64]) -> bool {
    block.head(OuterOpKind::Div).is_none_or(|h| keys_ok(h, x_kv))
}

struct Accumulator {
    line: SuiteLine,
}

impl Accumulator {
    fn new(name: String) -> Self {
        Accumulator {
            line: SuiteLine {
                name,
                instances: 0,
                coordinates: 0,
                max_rel_error: 0.0,
            },
        }
    }

    fn push<T, F>(&mut self, module: &mut T, fault: Option<OpClass>, f: F) -> Result<()>
    where
        T: Module,
        F: Fn(&T, &mut Tape, &Bindings) -> Result<Var>,
    {
        let r = finite_diff_check_with(module, DEFAULT_STEP, fault, f)?;
        self.line.instances += 1;
        self.line.coordinates += r.coordinates;
        if r.max_rel_error > self.line.max_rel_error || r.max_rel_error.is_nan() {
            self.line.max_rel_error = r.max_rel_error;
        }
        Ok(())
    }
}

fn check_outer(kind: OuterOpKind, rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let q = uniform_vec(rng, M, -1.5, 1.5);
    let k = if kind == OuterOpKind::Div {
        away_from_zero(rng, M)
    } else {
        uniform_vec(rng, M, -1.5, 1.5)
    };
    let w = weights_like(rng, &[M, M]);
    let mut set = ParamSet(vec![input("q", q), input("k", k)]);
    acc.push(&mut set, fault, |s, tape, b| {
        let out = outer_op(tape, kind, b.var(&s.0[0]), b.var(&s.0[1]), EPS)?;
        project(tape, out, &w)
    })
}

fn check_attention(kind: OuterOpKind, rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let (head, xs) = loop {
        let head = FoaaHeadParams::new("head", M, rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| uniform_vec(rng, M, -1.5, 1.5)).collect();
        if kind != OuterOpKind::Div || keys_ok(&head, &xs[1]) {
            break (head, xs);
        }
    };
    let w = weights_like(rng, &[M]);
    let mut module = WithInputs {
        inner: head,
        inputs: ParamSet(vec![input("x_q", xs[0].clone()), input("x_k", xs[1].clone()), input("x_v", xs[2].clone())]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let (xq, xk, xv) = (s.input(b, 0), s.input(b, 1), s.input(b, 2));
        let out = attention_score(tape, b, kind, &s.inner, EPS, xq, xk, xv)?;
        project(tape, out, &w)
    })
}

fn check_sdp(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let head = FoaaHeadParams::new("head", M, rng);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| uniform_vec(rng, M, -1.5, 1.5)).collect();
    let w = weights_like(rng, &[M]);
    let mut module = WithInputs {
        inner: head,
        inputs: ParamSet(vec![input("x_q", xs[0].clone()), input("x_k", xs[1].clone()), input("x_v", xs[2].clone())]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let (xq, xk, xv) = (s.input(b, 0), s.input(b, 1), s.input(b, 2));
        let out = sdp_attention(tape, b, &s.inner, xq, xk, xv)?;
        project(tape, out, &w)
    })
}

fn check_self(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let (block, x) = loop {
        let block = FoaaBlockParams::new("self", M, &OuterOpKind::ALL, EPS, rng)?;
        let x = uniform_vec(rng, M, -1.5, 1.5);
        if block_keys_ok(&block, &x) {
            break (block, x);
        }
    };
    let w = weights_like(rng, &[M]);
    let mut module = WithInputs {
        inner: block,
        inputs: ParamSet(vec![input("x", x)]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let out = foaa_self_attention(tape, b, &s.inner, s.input(b, 0))?;
        project(tape, out, &w)
    })
}

fn check_cross(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let (cross, xa, xb) = loop {
        let cross = CrossAttentionParams::new("cross", M, &OuterOpKind::ALL, true, EPS, rng)?;
        let xa = uniform_vec(rng, M, -1.5, 1.5);
        let xb = uniform_vec(rng, M, -1.5, 1.5);
        let ok = cross.ab.as_ref().is_none_or(|blk| block_keys_ok(blk, &xb))
            && cross.ba.as_ref().is_none_or(|blk| block_keys_ok(blk, &xa));
        if ok {
            break (cross, xa, xb);
        }
    };
    let w = weights_like(rng, &[M]);
    let mut module = WithInputs {
        inner: cross,
        inputs: ParamSet(vec![input("x_a", xa), input("x_b", xb)]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let out = s.inner.forward(tape, b, s.input(b, 0), s.input(b, 1))?;
        project(tape, out, &w)
    })
}

fn check_direct(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let xa = uniform_vec(rng, M, -1.5, 1.5);
    let xb = away_from_zero(rng, M);
    let w = weights_like(rng, &[M]);
    let mut set = ParamSet(vec![input("x_a", xa), input("x_b", xb)]);
    acc.push(&mut set, fault, |s, tape, b| {
        let out = direct_outer_fusion(tape, &OuterOpKind::ALL, EPS, b.var(&s.0[0]), b.var(&s.0[1]))?;
        project(tape, out, &w)
    })
}

fn check_image(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let cfg = ImageEncoderConfig {
        input_shape: [2, 8, 8],
        channels: [2, 3],
        m: M,
    };
    let enc = ImageEncoderParams::new("image", &cfg, rng)?;
    let img = uniform_vec(rng, 2 * 8 * 8, -1.0, 1.0);
    let w = weights_like(rng, &[M]);
    let mut module = WithInputs {
        inner: enc,
        inputs: ParamSet(vec![Parameter::new("img", Tensor::new(vec![2, 8, 8], img)?)]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let out = s.inner.forward(tape, b, s.input(b, 0))?;
        project(tape, out, &w)
    })
}

fn check_tabular(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let cfg = TabularEncoderConfig {
        d_in: 5,
        hidden: 7,
        m: M,
        dropout: 0.25,
    };
    let enc = TabularEncoderParams::new("tabular", &cfg, rng)?;
    let row = uniform_vec(rng, 5, -1.5, 1.5);
    let w = weights_like(rng, &[M]);
    let mask_seed: u64 = rng.random();
    let mut module = WithInputs {
        inner: enc,
        inputs: ParamSet(vec![input("row", row)]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        // same dropout mask on every evaluation
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let out = s.inner.forward(tape, b, s.input(b, 0), Some(&mut mask_rng))?;
        project(tape, out, &w)
    })
}

fn check_head(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let head = FusionHeadParams::new("head", M, 3, rng);
    let fused = uniform_vec(rng, M, -1.5, 1.5);
    let w = weights_like(rng, &[3]);
    let mut module = WithInputs {
        inner: head,
        inputs: ParamSet(vec![input("fused", fused)]),
    };
    acc.push(&mut module, fault, |s, tape, b| {
        let out = fusion_head(tape, b, &s.inner, s.input(b, 0))?;
        project(tape, out, &w)
    })
}

fn check_cross_entropy(rng: &mut ChaCha8Rng, acc: &mut Accumulator, fault: Option<OpClass>) -> Result<()> {
    let classes = rng.random_range(2..6);
    let label = rng.random_range(0..classes);
    let mut set = ParamSet(vec![input("logits", uniform_vec(rng, classes, -3.0, 3.0))]);
    acc.push(&mut set, fault, |s, tape, b| tape.cross_entropy(b.var(&s.0[0]), label))
}

/// Runs `instances` random checks per layer type. With `fault` set, the
/// analytic pass scales that op class's adjoints, which the report must
/// expose.
pub fn run_suite(instances: usize, seed: u64, fault: Option<OpClass>) -> Result<Vec<SuiteLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    let names = layer_names();
    let mut names = names.into_iter();
    let mut run = |rng: &mut ChaCha8Rng,
                   check: &mut dyn FnMut(&mut ChaCha8Rng, &mut Accumulator) -> Result<()>|
     -> Result<()> {
        let mut acc = Accumulator::new(names.next().expect("one name per check"));
        for _ in 0..instances {
            check(rng, &mut acc)?;
        }
        lines.push(acc.line);
        Ok(())
    };
    for kind in OuterOpKind::ALL {
        run(&mut rng, &mut |r, a| check_outer(kind, r, a, fault))?;
    }
    for kind in OuterOpKind::ALL {
        run(&mut rng, &mut |r, a| check_attention(kind, r, a, fault))?;
    }
    run(&mut rng, &mut |r, a| check_sdp(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_self(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_cross(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_direct(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_image(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_tabular(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_head(r, a, fault))?;
    run(&mut rng, &mut |r, a| check_cross_entropy(r, a, fault))?;
    Ok(lines)
}
