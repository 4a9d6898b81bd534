//! Monte Carlo cross-validation over one or more ablation rows.

use serde::{Deserialize, Serialize};

use crate::data::{monte_carlo_splits, Dataset, DatasetSplit};
use crate::error::Result;
use crate::exec::Executor;
use crate::metrics::{MetricsReport, MetricsSummary};
use crate::model::{Arch, Model, ModelConfig};
use crate::train::{evaluate, train_model, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub test_frac: f64,
    /// Seed of the fold partitions; fold `k` trains with seed `train.seed + k`.
    pub split_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 15,
            test_frac: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub arch: Arch,
    pub fold: usize,
    pub seed: u64,
    pub report: MetricsReport,
    pub loss_trace: Vec<f64>,
    pub roc: Vec<(f64, f64)>,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct ArchResult {
    pub arch: Arch,
    pub folds: Vec<FoldResult>,
    pub summary: MetricsSummary,
}

fn run_fold(
    arch: Arch,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Dataset,
    split: &DatasetSplit,
) -> Result<FoldResult> {
    let cfg = TrainConfig {
        seed: train_cfg.seed.wrapping_add(split.fold_id as u64),
        ..train_cfg.clone()
    };
    let outcome = train_model(arch, model_cfg, data, split, &cfg)?;
    // folds already fan out, so evaluation stays on this worker
    let eval = evaluate(&outcome.model, data, &split.test, Executor::Sequential)?;
    Ok(FoldResult {
        arch,
        fold: split.fold_id,
        seed: cfg.seed,
        roc: if data.num_classes == 2 { eval.roc() } else { Vec::new() },
        report: eval.report,
        loss_trace: outcome.loss_trace,
        model: outcome.model,
    })
}

/// Trains and evaluates every `(arch, fold)` pair; results are grouped by
/// arch in the order given and by fold index within each arch.
pub fn run_cross_validation(
    archs: &[Arch],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cv: &CvConfig,
    data: &Dataset,
    exec: Executor,
) -> Result<Vec<ArchResult>> {
    let splits = monte_carlo_splits(data.len(), cv.folds, cv.test_frac, cv.split_seed)?;
    let jobs: Vec<(Arch, &DatasetSplit)> = archs
        .iter()
        .flat_map(|&a| splits.iter().map(move |s| (a, s)))
        .collect();
    let mut results = exec
        .map(&jobs, |(arch, split)| run_fold(*arch, model_cfg, train_cfg, data, split))
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok(archs
        .iter()
        .map(|&arch| {
            let folds: Vec<FoldResult> = results.by_ref().take(splits.len()).collect();
            let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
            ArchResult {
                arch,
                summary: MetricsSummary::from_folds(&reports),
                folds,
            }
        })
        .collect())
}
