use foaa_core::attention::{
    attention_score, direct_outer_fusion, outer_op, sdp_attention, FoaaHeadParams, OuterOpKind,
};
use foaa_core::param::{Bindings, Parameter};
use foaa_core::tape::{div_guard, Tape};
use foaa_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_outer(kind: OuterOpKind, q: &[f64], k: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() * k.len());
    for &a in q {
        for &b in k {
            out.push(match kind {
                OuterOpKind::Add => a + b,
                OuterOpKind::Sub => a - b,
                OuterOpKind::Mul => a * b,
                OuterOpKind::Div => {
                    let d = if b.abs() >= eps { b } else if b < 0.0 { -eps } else { eps };
                    a / d
                }
            });
        }
    }
    out
}

fn run_outer(kind: OuterOpKind, q: &[f64], k: &[f64], eps: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.to_vec()));
    let kv = tape.constant(Tensor::vector(k.to_vec()));
    let s = outer_op(&mut tape, kind, qv, kv, eps).unwrap();
    tape.data(s).to_vec()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[test]
fn outer_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let q: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        for kind in OuterOpKind::ALL {
            let got = run_outer(kind, &q, &k, 1e-6);
            let want = naive_outer(kind, &q, &k, 1e-6);
            let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "{kind}: {diff}");
        }
    }
}

#[test]
fn transpose_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 9;
    let q: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let k: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let t = |v: &[f64]| -> Vec<f64> { (0..m * m).map(|i| v[(i % m) * m + i / m]).collect() };
    let add_qk = run_outer(OuterOpKind::Add, &q, &k, 1e-6);
    let add_kq = run_outer(OuterOpKind::Add, &k, &q, 1e-6);
    assert_eq!(add_qk, t(&add_kq));
    let mul_qk = run_outer(OuterOpKind::Mul, &q, &k, 1e-6);
    let mul_kq = run_outer(OuterOpKind::Mul, &k, &q, 1e-6);
    assert_eq!(mul_qk, t(&mul_kq));
    let sub_qk = run_outer(OuterOpKind::Sub, &q, &k, 1e-6);
    let sub_kq = run_outer(OuterOpKind::Sub, &k, &q, 1e-6);
    let neg: Vec<f64> = t(&sub_kq).into_iter().map(|x| -x).collect();
    assert_eq!(sub_qk, neg);
}

#[test]
fn div_guard_cases() {
    assert_eq!(div_guard(0.5, 1e-6), 0.5);
    assert_eq!(div_guard(0.0, 1e-6), 1e-6);
    assert_eq!(div_guard(-1e-9, 1e-6), -1e-6);
    assert_eq!(div_guard(1e-9, 1e-6), 1e-6);
}

fn identity_head(m: usize) -> FoaaHeadParams {
    FoaaHeadParams {
        w_q: Parameter::new("h.w_q", Tensor::identity(m)),
        w_k: Parameter::new("h.w_k", Tensor::identity(m)),
        w_v: Parameter::new("h.w_v", Tensor::identity(m)),
    }
}

fn score_by_hand(kind: OuterOpKind, q: &[f64], k: &[f64], v: &[f64]) -> Vec<f64> {
    let m = q.len();
    let s = naive_outer(kind, q, k, 1e-6);
    (0..m)
        .map(|i| {
            let row: Vec<f64> = s[i * m..(i + 1) * m].iter().map(|x| x / (m as f64).sqrt()).collect();
            softmax(&row).iter().zip(v).map(|(a, b)| a * b).sum()
        })
        .collect()
}

#[test]
fn two_dimensional_scores_by_hand() {
    let (q, k, v) = (vec![0.3, -1.2], vec![2.0, 0.5], vec![1.0, -4.0]);
    let head = identity_head(2);
    for kind in OuterOpKind::ALL {
        let mut tape = Tape::new();
        let b = Bindings::bind(&head, &mut tape).unwrap();
        let xq = tape.constant(Tensor::vector(q.clone()));
        let xk = tape.constant(Tensor::vector(k.clone()));
        let xv = tape.constant(Tensor::vector(v.clone()));
        let out = attention_score(&mut tape, &b, kind, &head, 1e-6, xq, xk, xv).unwrap();
        let want = score_by_hand(kind, &q, &k, &v);
        for (a, w) in tape.data(out).iter().zip(&want) {
            assert!((a - w).abs() < 1e-12, "{kind}: {a} vs {w}");
        }
    }
    // first row of the product head written out: softmax([0.6, 0.15] / √2)
    let e0 = (0.6f64 / 2f64.sqrt()).exp();
    let e1 = (0.15f64 / 2f64.sqrt()).exp();
    let first = (e0 * 1.0 + e1 * -4.0) / (e0 + e1);
    assert!((score_by_hand(OuterOpKind::Mul, &q, &k, &v)[0] - first).abs() < 1e-12);
}

#[test]
fn sdp_by_hand() {
    let (q, k, v) = (vec![1.0, 2.0], vec![-0.5, 0.25], vec![3.0, 1.0]);
    let head = identity_head(2);
    let mut tape = Tape::new();
    let b = Bindings::bind(&head, &mut tape).unwrap();
    let xq = tape.constant(Tensor::vector(q.clone()));
    let xk = tape.constant(Tensor::vector(k.clone()));
    let xv = tape.constant(Tensor::vector(v.clone()));
    let out = sdp_attention(&mut tape, &b, &head, xq, xk, xv).unwrap();
    let mut want = Vec::new();
    for qi in &q {
        let row: Vec<f64> = k.iter().map(|kj| qi * kj / 2f64.sqrt()).collect();
        want.push(softmax(&row).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>());
    }
    for (a, w) in tape.data(out).iter().zip(&want) {
        assert!((a - w).abs() < 1e-12);
    }
}

#[test]
fn direct_outer_by_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 7;
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut tape = Tape::new();
    let va = tape.constant(Tensor::vector(a.clone()));
    let vb = tape.constant(Tensor::vector(b.clone()));
    let out = direct_outer_fusion(&mut tape, &OuterOpKind::ALL, 1e-6, va, vb).unwrap();
    for i in 0..m {
        let mut want = 0.0;
        for kind in OuterOpKind::ALL {
            let s = naive_outer(kind, &a, &b, 1e-6);
            want += s[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64;
        }
        assert!((tape.data(out)[i] - want).abs() < 1e-12);
    }
}

fn random_head(m: usize, seed: u64) -> FoaaHeadParams {
    FoaaHeadParams::new("h", m, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, m in 1usize..12, scale in 0.1f64..20.0) {
        let head = random_head(m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
        for kind in OuterOpKind::ALL {
            let mut tape = Tape::new();
            let b = Bindings::bind(&head, &mut tape).unwrap();
            let xv = tape.constant(Tensor::vector(x.clone()));
            let a = head.attention_matrix(&mut tape, &b, kind, 1e-6, xv, xv).unwrap();
            prop_assert_eq!(tape.shape(a), &[m, m]);
            for row in tape.data(a).chunks(m) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
            }
        }
    }

    #[test]
    fn add_kind_ignores_key_shift(seed in 0u64..1000, m in 1usize..12, c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = k.iter().map(|x| x + c).collect();
        let attn = |keys: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let qv = tape.constant(Tensor::vector(q.clone()));
            let kv = tape.constant(Tensor::vector(keys.to_vec()));
            let s = outer_op(&mut tape, OuterOpKind::Add, qv, kv, 1e-6).unwrap();
            let a = tape.softmax_rows(s);
            tape.data(a).to_vec()
        };
        let (a, b) = (attn(&k), attn(&shifted));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn outputs_close_over_m(seed in 0u64..1000, m in 1usize..10) {
        let head = random_head(m, seed);
        let x = Tensor::from_fn(&[m], |i| (i as f64 * 0.37).sin());
        for kind in OuterOpKind::ALL {
            let mut tape = Tape::new();
            let b = Bindings::bind(&head, &mut tape).unwrap();
            let xv = tape.constant(x.clone());
            let out = attention_score(&mut tape, &b, kind, &head, 1e-6, xv, xv, xv).unwrap();
            prop_assert_eq!(tape.shape(out), &[m]);
        }
        let mut tape = Tape::new();
        let b = Bindings::bind(&head, &mut tape).unwrap();
        let xv = tape.constant(x.clone());
        let out = sdp_attention(&mut tape, &b, &head, xv, xv, xv).unwrap();
        prop_assert_eq!(tape.shape(out), &[m]);
    }

    #[test]
    fn sdp_equals_product_head(seed in 0u64..1000, m in 1usize..10) {
        let head = random_head(m, seed);
        let x = Tensor::from_fn(&[m], |i| ((i + 1) as f64 * 0.61).cos());
        let mut tape = Tape::new();
        let b = Bindings::bind(&head, &mut tape).unwrap();
        let xv = tape.constant(x);
        let s = sdp_attention(&mut tape, &b, &head, xv, xv, xv).unwrap();
        let p = attention_score(&mut tape, &b, OuterOpKind::Mul, &head, 1e-6, xv, xv, xv).unwrap();
        for (a, c) in tape.data(s).iter().zip(tape.data(p)) {
            prop_assert!((a - c).abs() <= 1e-12);
        }
    }
}
