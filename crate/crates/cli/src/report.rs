//! CSV outputs. Every writer takes the complete, fold-ordered results, so
//! files come out in the same order whatever the worker count.

use std::path::Path;

use foaa_core::experiment::ArchResult;
use foaa_core::metrics::MeanStd;

use crate::error::CliError;

pub const RESULTS_FILE: &str = "results.csv";
pub const LOSS_FILE: &str = "loss_traces.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const RESULTS_HEADER: [&str; 10] = ["fold", "arch", "auc", "spec", "sens", "f1mi", "f1ma", "acc", "epochs", "seed"];

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn pm(x: &MeanStd) -> String {
    format!("{:.6}±{:.6}", x.mean, x.std)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// One row per fold followed by a `summary` row per arch.
pub fn write_results(path: &Path, results: &[ArchResult], epochs: usize, base_seed: u64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        let arch = r.arch.name();
        for f in &r.folds {
            let rep = &f.report;
            w.write_record([
                f.fold.to_string(),
                arch.to_string(),
                rep.auc.map(num).unwrap_or_default(),
                num(rep.specificity),
                num(rep.sensitivity),
                num(rep.f1_micro),
                num(rep.f1_macro),
                num(rep.accuracy),
                epochs.to_string(),
                f.seed.to_string(),
            ])?;
        }
        let s = &r.summary;
        w.write_record([
            "summary".to_string(),
            arch.to_string(),
            s.auc.as_ref().map(pm).unwrap_or_default(),
            pm(&s.specificity),
            pm(&s.sensitivity),
            pm(&s.f1_micro),
            pm(&s.f1_macro),
            pm(&s.accuracy),
            epochs.to_string(),
            base_seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_loss_traces(path: &Path, results: &[ArchResult]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["arch", "fold", "epoch", "loss"])?;
    for r in results {
        for f in &r.folds {
            for (epoch, loss) in f.loss_trace.iter().enumerate() {
                w.write_record([r.arch.name().to_string(), f.fold.to_string(), epoch.to_string(), format!("{loss:.9}")])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// ROC points per arch and fold (binary tasks only).
pub fn write_roc(path: &Path, results: &[ArchResult]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["arch", "fold", "fpr", "tpr"])?;
    for r in results {
        for f in &r.folds {
            for (fpr, tpr) in &f.roc {
                w.write_record([r.arch.name().to_string(), f.fold.to_string(), num(*fpr), num(*tpr)])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}
