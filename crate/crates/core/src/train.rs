//! Adam with coupled L2 weight decay, the mini-batch training loop and
//! held-out evaluation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, weighted_draws, Dataset, DatasetSplit, SamplerWeights};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::metrics::{roc_points, MetricsReport};
use crate::model::{Arch, Model, ModelConfig};
use crate::param::{Bindings, Module, Parameter};
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Draw each epoch from inverse-class-frequency weights instead of a shuffle.
    pub weighted_sampler: bool,
    /// Random horizontal flip probability; 0 disables.
    pub flip_p: f64,
    /// Random erasing probability; 0 disables.
    pub erase_p: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.00016,
            weight_decay: 0.005,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weighted_sampler: false,
            flip_p: 0.0,
            erase_p: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr == 0 is accepted as a frozen-training diagnostic
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and epsilon > 0".into()));
        }
        for p in [self.flip_p, self.erase_p] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam state keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    step: u64,
    moments: HashMap<String, Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. The weight decay term `λ·w` is added to each gradient
    /// before the moment updates. Frozen parameters and parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, params: Vec<&mut Parameter>, grads: &HashMap<&str, &[f64]>, cfg: &TrainConfig) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in params {
            if p.is_frozen() {
                continue;
            }
            let Some(g) = grads.get(p.name()) else { continue };
            let n = p.value().numel();
            if g.len() != n {
                return Err(Error::Contract(format!(
                    "gradient for {} has {} entries, parameter has {n}",
                    p.name(),
                    g.len()
                )));
            }
            let state = self.moments.entry(p.name().to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if state.m.len() != n {
                return Err(Error::Contract(format!("optimizer state for {} has the wrong shape", p.name())));
            }
            let w = p.value_mut().data_mut();
            for i in 0..n {
                let gi = g[i] + cfg.weight_decay * w[i];
                state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
                state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`] driven by a finished tape.
pub fn adam_step(params: Vec<&mut Parameter>, tape: &Tape, cfg: &TrainConfig, state: &mut Adam) -> Result<()> {
    let grads: HashMap<&str, &[f64]> = tape.param_grads().into_iter().collect();
    state.step(params, &grads, cfg)
}

/// Per-sample loss against `label`.
pub fn cross_entropy(tape: &mut Tape, logits: crate::tape::Var, label: usize) -> Result<crate::tape::Var> {
    tape.cross_entropy(logits, label)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

fn non_finite(tape: &Tape, epoch: usize) -> Error {
    let op = tape
        .first_non_finite()
        .map_or_else(|| "unknown".to_string(), |(v, class)| format!("{} (node {})", class.name(), v.index()));
    Error::NonFinite {
        op: format!("{op} during epoch {epoch}"),
    }
}

/// Trains a fresh model on `split.train`. Parameters are seeded from
/// `cfg.seed`, batches from a separate stream, so the run is a pure function
/// of its inputs.
pub fn train_model(
    arch: Arch,
    model_cfg: &ModelConfig,
    data: &Dataset,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let model_cfg = ModelConfig {
        num_classes: data.num_classes.max(2),
        ..model_cfg.clone()
    };
    let mut model = Model::new(arch, &model_cfg, data.image_shape(), data.tabular_width(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let weights = if cfg.weighted_sampler {
        let labels: Vec<usize> = split.train.iter().map(|&i| data.samples[i].label).collect();
        Some(SamplerWeights::inverse_frequency(&labels, data.num_classes)?)
    } else {
        None
    };
    let mut adam = Adam::new();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order: Vec<usize> = match &weights {
            Some(w) => weighted_draws(w, split.train.len(), &mut rng)
                .into_iter()
                .map(|k| split.train[k])
                .collect(),
            None => {
                let mut o = split.train.clone();
                o.shuffle(&mut rng);
                o
            }
        };
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let b = Bindings::bind(&model, &mut tape)?;
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let sample = &data.samples[i];
                let augmented;
                let sample = if cfg.flip_p > 0.0 || cfg.erase_p > 0.0 {
                    augmented = crate::data::MultimodalSample {
                        image: augment(&sample.image, cfg.flip_p, cfg.erase_p, &mut rng),
                        ..sample.clone()
                    };
                    &augmented
                } else {
                    sample
                };
                let out = model.forward(&mut tape, &b, sample, Some(&mut rng))?;
                losses.push(tape.cross_entropy(out.logits, sample.label)?);
            }
            let total = tape.add_all(&losses)?;
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(&tape, epoch));
            }
            tape.backward(loss)?;
            adam_step(model.params_mut(), &tape, cfg, &mut adam)?;
            epoch_loss += value * batch.len() as f64;
        }
        loss_trace.push(epoch_loss / order.len() as f64);
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Held-out predictions and their metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Evaluation {
    /// ROC points of the positive class (binary problems).
    pub fn roc(&self) -> Vec<(f64, f64)> {
        let scores: Vec<f64> = self.probabilities.iter().map(|p| p[1]).collect();
        let positive: Vec<bool> = self.labels.iter().map(|&l| l == 1).collect();
        roc_points(&scores, &positive)
    }
}

pub fn evaluate(model: &Model, data: &Dataset, indices: &[usize], exec: Executor) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let probabilities = exec
        .map(indices, |&i| model.predict_proba(&data.samples[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.samples[i].label).collect();
    let report = MetricsReport::from_probabilities(&probabilities, &labels, model.num_classes());
    Ok(Evaluation {
        report,
        probabilities,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> Parameter {
        Parameter::new("w", Tensor::vector(vec![v]))
    }

    fn no_decay() -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_param(0.7);
        let mut adam = Adam::new();
        let g = [0.0];
        let grads = HashMap::from([("w", &g[..])]);
        for _ in 0..5 {
            adam.step(vec![&mut p], &grads, &no_decay()).unwrap();
        }
        assert_eq!(p.value().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0);
        let mut adam = Adam::new();
        let g = [1.0];
        let cfg = no_decay();
        adam.step(vec![&mut p], &HashMap::from([("w", &g[..])]), &cfg).unwrap();
        assert!((p.value().data()[0] + cfg.lr).abs() < 1e-11);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = TrainConfig {
            lr: 0.01,
            ..no_decay()
        };
        let mut p = scalar_param(1.0);
        let mut adam = Adam::new();
        for _ in 0..500 {
            let g = [2.0 * p.value().data()[0]];
            adam.step(vec![&mut p], &HashMap::from([("w", &g[..])]), &cfg).unwrap();
        }
        assert!(p.value().data()[0].abs() < 1e-3, "{}", p.value().data()[0]);
    }

    #[test]
    fn weight_decay_shrinks_monotonically() {
        let cfg = TrainConfig {
            lr: 0.001,
            weight_decay: 0.005,
            ..TrainConfig::default()
        };
        let mut p = Parameter::new("w", Tensor::vector(vec![1.0, -2.0]));
        let mut adam = Adam::new();
        let g = [0.0, 0.0];
        let mut prev = p.value().data().to_vec();
        for _ in 0..200 {
            adam.step(vec![&mut p], &HashMap::from([("w", &g[..])]), &cfg).unwrap();
            let cur = p.value().data().to_vec();
            for (c, q) in cur.iter().zip(&prev) {
                assert!(c.abs() < q.abs());
            }
            prev = cur;
        }
    }

    #[test]
    fn frozen_untouched() {
        let mut p = scalar_param(0.3);
        p.set_frozen(true);
        let mut adam = Adam::new();
        let g = [5.0];
        adam.step(vec![&mut p], &HashMap::from([("w", &g[..])]), &TrainConfig::default()).unwrap();
        assert_eq!(p.value().data(), &[0.3]);
    }

    #[test]
    fn gradient_shape_mismatch() {
        let mut p = scalar_param(0.3);
        let g = [1.0, 2.0];
        let res = Adam::new().step(vec![&mut p], &HashMap::from([("w", &g[..])]), &TrainConfig::default());
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -0.1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
