//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Hyperparameters for the training criteria are sized for a single CPU
//! core: m = 16, tabular hidden width 32, no dropout, batch 16, lr 1e-3.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use foaa_core::attention::{outer_op, FoaaHeadParams, OuterOpKind};
use foaa_core::data::{
    gen_imbalanced_dataset, gen_interaction_dataset, weighted_draws, Dataset, GeneratorConfig, SamplerWeights,
};
use foaa_core::exec::Executor;
use foaa_core::experiment::{run_cross_validation, CvConfig};
use foaa_core::gradsuite::{run_suite, DEFAULT_INSTANCES, TOLERANCE};
use foaa_core::metrics::{auc, MetricsReport};
use foaa_core::model::{Arch, ModelConfig};
use foaa_core::param::Bindings;
use foaa_core::tape::Tape;
use foaa_core::tensor::Tensor;
use foaa_core::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn model_cfg() -> ModelConfig {
    ModelConfig {
        m: 16,
        tabular_hidden: 32,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn train_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.001,
        batch_size: 16,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn interaction(n: usize, noise: f64, seed: u64) -> Dataset {
    gen_interaction_dataset(&GeneratorConfig {
        n,
        noise,
        seed,
        ..GeneratorConfig::default()
    })
    .expect("valid generator config")
    .dataset
}

/// One held-out fold per seed; the seed drives data, split and training.
fn seed_reports(archs: &[Arch], data_for: impl Fn(u64) -> Dataset + Sync, train: impl Fn(u64) -> TrainConfig + Sync) -> Vec<Vec<MetricsReport>> {
    let per_seed = Executor::default().map(&SEEDS, |&seed| {
        let data = data_for(seed);
        let cv = CvConfig {
            folds: 1,
            test_frac: 0.2,
            split_seed: seed,
        };
        run_cross_validation(archs, &model_cfg(), &train(seed), &cv, &data, Executor::Sequential)
            .expect("training run")
            .into_iter()
            .map(|r| r.folds[0].report.clone())
            .collect::<Vec<_>>()
    });
    (0..archs.len()).map(|a| per_seed.iter().map(|s| s[a].clone()).collect()).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn naive_outer(kind: OuterOpKind, q: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len() * k.len());
    for &a in q {
        for &b in k {
            out.push(match kind {
                OuterOpKind::Add => a + b,
                OuterOpKind::Sub => a - b,
                OuterOpKind::Mul => a * b,
                OuterOpKind::Div => {
                    let d = if b.abs() >= 1e-6 { b } else if b < 0.0 { -1e-6 } else { 1e-6 };
                    a / d
                }
            });
        }
    }
    out
}

fn outer(kind: OuterOpKind, q: &[f64], k: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.to_vec()));
    let kv = tape.constant(Tensor::vector(k.to_vec()));
    let s = outer_op(&mut tape, kind, qv, kv, 1e-6).expect("equal lengths");
    tape.data(s).to_vec()
}

fn c1_outer_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let m = 64;
    let mut worst: f64 = 0.0;
    let mut transpose_ok = true;
    let tr = |v: &[f64]| -> Vec<f64> { (0..m * m).map(|i| v[(i % m) * m + i / m]).collect() };
    for _ in 0..1000 {
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let k: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut got = Vec::new();
        for kind in OuterOpKind::ALL {
            let g = outer(kind, &q, &k);
            for (a, b) in g.iter().zip(naive_outer(kind, &q, &k)) {
                worst = worst.max((a - b).abs());
            }
            got.push(g);
        }
        let add_kq = outer(OuterOpKind::Add, &k, &q);
        let mul_kq = outer(OuterOpKind::Mul, &k, &q);
        let sub_kq: Vec<f64> = tr(&outer(OuterOpKind::Sub, &k, &q)).into_iter().map(|x| -x).collect();
        transpose_ok &= got[0] == tr(&add_kq) && got[2] == tr(&mul_kq) && got[1] == sub_kq;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && transpose_ok && secs < 10.0,
        format!("max |diff| {worst:.1e}, transposes exact: {transpose_ok}, {secs:.2}s"),
    )
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    match run_suite(DEFAULT_INSTANCES, 2024, None) {
        Ok(lines) => {
            let secs = t.elapsed().as_secs_f64();
            let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
            let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
            let all_ten = lines.iter().all(|l| l.instances == DEFAULT_INSTANCES);
            outcome(
                failed.is_empty() && all_ten && secs < 120.0,
                format!(
                    "{} layer types x {DEFAULT_INSTANCES}, worst rel err {worst:.1e} (tol {TOLERANCE:e}), failed {failed:?}, {secs:.1}s",
                    lines.len()
                ),
            )
        }
        Err(e) => outcome(false, format!("suite error: {e}")),
    }
}

fn c3_softmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut row_err, mut shift_err): (f64, f64) = (0.0, 0.0);
    for trial in 0..200 {
        let m = rng.random_range(1..40);
        let head = FoaaHeadParams::new("h", m, &mut rng);
        let scale = rng.random_range(0.1..30.0);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
        for kind in OuterOpKind::ALL {
            let mut tape = Tape::new();
            let b = Bindings::bind(&head, &mut tape).expect("unique names");
            let xv = tape.constant(Tensor::vector(x.clone()));
            let a = head.attention_matrix(&mut tape, &b, kind, 1e-6, xv, xv).expect("shapes");
            for row in tape.data(a).chunks(m) {
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = if trial % 2 == 0 { rng.random_range(-100.0..100.0) } else { rng.random_range(-1.0..1.0) };
        let k_shift: Vec<f64> = k.iter().map(|v| v + c).collect();
        let soft = |keys: &[f64]| {
            let mut tape = Tape::new();
            let qv = tape.constant(Tensor::vector(q.clone()));
            let kv = tape.constant(Tensor::vector(keys.to_vec()));
            let s = outer_op(&mut tape, OuterOpKind::Add, qv, kv, 1e-6).expect("shapes");
            let a = tape.softmax_rows(s);
            tape.data(a).to_vec()
        };
        for (p, r) in soft(&k).iter().zip(soft(&k_shift)) {
            shift_err = shift_err.max((p - r).abs());
        }
    }
    outcome(
        row_err <= 1e-9 && shift_err <= 1e-9,
        format!("max row-sum err {row_err:.1e}, max shift diff {shift_err:.1e}"),
    )
}

fn c4_complementarity() -> Outcome {
    let t = Instant::now();
    let archs = [Arch::Foaa, Arch::Mlp, Arch::Cnn];
    let reports = seed_reports(&archs, |s| interaction(2000, 0.1, s), |s| train_cfg(30, s));
    let secs = t.elapsed().as_secs_f64();
    let acc: Vec<f64> = reports.iter().map(|r| mean(r.iter().map(|x| x.accuracy))).collect();
    outcome(
        acc[0] >= 0.95 && acc[1] <= 0.55 && acc[2] <= 0.55 && secs <= 300.0,
        format!(
            "mean test acc foaa {:.4}, mlp {:.4}, cnn {:.4} over {} seeds, {secs:.0}s",
            acc[0],
            acc[1],
            acc[2],
            SEEDS.len()
        ),
    )
}

fn c5_ablation_trend() -> Outcome {
    let archs = [
        Arch::Foaa,
        Arch::CrossOa,
        Arch::CrossOp,
        Arch::CrossOs,
        Arch::CrossOd,
        Arch::CrossOaOp,
        Arch::CrossOaOpOs,
    ];
    let reports = seed_reports(&archs, |s| interaction(1000, 0.1, s), |s| train_cfg(20, s));
    let aucs: Vec<f64> = reports
        .iter()
        .map(|r| mean(r.iter().map(|x| x.auc.expect("both classes in test set"))))
        .collect();
    let foaa = aucs[0];
    let singles_ok = aucs[1..5].iter().all(|&a| foaa >= a - 0.02);
    let combo_ok = aucs[6] >= aucs[5] - 0.02;
    let table: Vec<String> = archs.iter().zip(&aucs).map(|(a, v)| format!("{} {v:.4}", a.name())).collect();
    outcome(singles_ok && combo_ok, format!("mean AUC: {}", table.join(", ")))
}

fn pair_count_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn c6_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    let mut f1_identity = true;
    for _ in 0..100 {
        let n = rng.random_range(2..80);
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        positive[0] = true;
        positive[1] = false;
        // coarse grid to force ties
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..12) as f64) / 11.0).collect();
        let got = auc(&scores, &positive).expect("both classes");
        worst = worst.max((got - pair_count_auc(&scores, &positive)).abs());

        let classes = rng.random_range(2..5);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / s).collect()
            })
            .collect();
        let rep = MetricsReport::from_probabilities(&probs, &truth, classes);
        f1_identity &= rep.f1_micro == rep.accuracy;
    }
    let worked = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
    let worked_ok = worked.is_some_and(|a| (a - 0.75).abs() <= 1e-12);
    outcome(
        worst <= 1e-12 && worked_ok && f1_identity,
        format!("max |rank - pairs| {worst:.1e}, worked example {worked:?}, f1_micro == acc: {f1_identity}"),
    )
}

fn c7_imbalance() -> Outcome {
    let gen = |seed| GeneratorConfig {
        n: 1000,
        noise: 0.5,
        seed,
        ..GeneratorConfig::default()
    };
    let probe = gen_imbalanced_dataset(&gen(0), 0.8).expect("valid config").dataset;
    let labels = probe.labels();
    let w = SamplerWeights::inverse_frequency(&labels, 2).expect("two classes present");
    let draws = weighted_draws(&w, 10_000, &mut ChaCha8Rng::seed_from_u64(707));
    let freq1 = draws.iter().filter(|&&i| labels[i] == 1).count() as f64 / draws.len() as f64;
    let freq_ok = (0.48..=0.52).contains(&freq1) && (0.48..=0.52).contains(&(1.0 - freq1));
    let data = |s| gen_imbalanced_dataset(&gen(s), 0.8).expect("valid config").dataset;
    let plain = seed_reports(&[Arch::Foaa], data, |s| train_cfg(10, s));
    let sampled = seed_reports(&[Arch::Foaa], data, |s| TrainConfig {
        weighted_sampler: true,
        ..train_cfg(10, s)
    });
    // class 1 is the 20% minority, so sensitivity is its recall
    let without = mean(plain[0].iter().map(|r| r.sensitivity));
    let with = mean(sampled[0].iter().map(|r| r.sensitivity));
    outcome(
        freq_ok && with >= without,
        format!(
            "draw freq {:.4}/{:.4}; minority sensitivity with sampler {with:.4} vs without {without:.4}",
            1.0 - freq1,
            freq1
        ),
    )
}

fn foaa(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_foaa"))
        .args(args)
        .current_dir(cwd)
        .env("FOAA_THREADS", "2")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let d = tmp.path();
    let mut checks = Vec::new();
    let ok = foaa(&["gen-data", "--out", "data", "--n", "200", "--seed", "5"], d)
        && foaa(&["gen-data", "--config", "data/manifest.json", "--out", "data2"], d);
    checks.push((
        "gen-data",
        ok && ["tabular.csv", "labels.csv", "images.foat"]
            .iter()
            .all(|f| same_file(&d.join("data").join(f), &d.join("data2").join(f))),
    ));
    let ok = foaa(
        &["train", "--data", "data", "--out", "t1", "--arch", "foaa", "--folds", "2", "--epochs", "2", "--m", "8"],
        d,
    ) && foaa(&["train", "--config", "t1/manifest.json", "--out", "t2"], d);
    checks.push(("train", ok && same_file(&d.join("t1/results.csv"), &d.join("t2/results.csv"))));
    let ok = foaa(
        &["ablate", "--data", "data", "--out", "a1", "--arch", "mlp,cross_od,direct_outer", "--folds", "2", "--epochs", "1", "--m", "8"],
        d,
    ) && foaa(&["ablate", "--config", "a1/manifest.json", "--out", "a2"], d);
    checks.push(("ablate", ok && same_file(&d.join("a1/results.csv"), &d.join("a2/results.csv"))));
    let ok = foaa(&["gradcheck", "--out", "g1", "--instances", "1"], d)
        && foaa(&["gradcheck", "--config", "g1/manifest.json", "--out", "g2", "--instances", "1"], d);
    checks.push(("gradcheck", ok && same_file(&d.join("g1/gradcheck.csv"), &d.join("g2/gradcheck.csv"))));
    let ok = foaa(&["export-embeddings", "--params", "t1/params/foaa/fold_0", "--data", "data", "--out", "e1"], d)
        && foaa(&["export-embeddings", "--config", "e1/manifest.json", "--out", "e2"], d);
    checks.push(("export-embeddings", ok && same_file(&d.join("e1/embeddings.csv"), &d.join("e2/embeddings.csv"))));
    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail = checks
        .iter()
        .map(|(name, ok)| format!("{name} {}", if *ok { "identical" } else { "DIFFERS" }))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 outer-op oracle", c1_outer_oracle),
        ("2 gradient suite", c2_gradients),
        ("3 softmax contracts", c3_softmax),
        ("4 complementarity", c4_complementarity),
        ("5 ablation trend", c5_ablation_trend),
        ("6 metrics oracle", c6_metrics),
        ("7 imbalance handling", c7_imbalance),
        ("8 determinism", c8_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("acceptance {name:<22} {tag}  {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        failures += usize::from(!o.pass);
    }
    if failures > 0 {
        println!("acceptance: {failures} criteria failed");
        std::process::exit(1);
    }
}
