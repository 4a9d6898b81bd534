use std::fs;
use std::path::{Path, PathBuf};

use foaa_core::data::{write_dataset, Dataset, IMAGES_FILE, LABELS_FILE, TABULAR_FILE};
use foaa_core::exec::Executor;
use foaa_core::experiment::{run_cross_validation, ArchResult};
use foaa_core::gradsuite::{run_suite, SuiteLine, TOLERANCE};
use foaa_core::model::{Arch, Model, ModelConfig};
use foaa_core::param::{load_params, save_params};
use foaa_core::tape::OpClass;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{Manifest, Seeds};
use crate::report::{write_loss_traces, write_results, write_roc, LOSS_FILE, RESULTS_FILE, ROC_FILE};

pub const PARAMS_DIR: &str = "params";
pub const MODEL_FILE: &str = "model.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// What a saved parameter directory was trained as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub model: ModelConfig,
    pub image_shape: [usize; 3],
    pub tabular_width: usize,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn seeds(cfg: &ExperimentConfig) -> Seeds {
    Seeds {
        data: match &cfg.dataset {
            DatasetSpec::Generate(g) => Some(g.generator.seed),
            DatasetSpec::Files { .. } => None,
        },
        split: cfg.cv.split_seed,
        folds: (0..cfg.cv.folds as u64).map(|k| cfg.train.seed.wrapping_add(k)).collect(),
    }
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    if !matches!(cfg.dataset, DatasetSpec::Generate(_)) {
        return Err(CliError::Usage("gen-data needs a generated dataset spec".into()));
    }
    let data = cfg.dataset.load()?;
    create_dir(&cfg.out)?;
    write_dataset(&cfg.out, &data)?;
    let m = Manifest::write("gen-data", cfg, seeds(cfg), &cfg.out, &[TABULAR_FILE, LABELS_FILE, IMAGES_FILE])?;
    println!("wrote {} samples to {}", data.len(), cfg.out.display());
    Ok(m)
}

fn run_rows(cfg: &ExperimentConfig, data: &Dataset, archs: &[Arch], exec: Executor) -> Result<Vec<ArchResult>, CliError> {
    run_cross_validation(archs, &cfg.model, &cfg.train, &cfg.cv, data, exec).map_err(|e| match e {
        foaa_core::Error::NonFinite { op } => CliError::Numeric(format!("non-finite loss at {op}")),
        other => other.into(),
    })
}

fn print_summary(results: &[ArchResult]) {
    for r in results {
        let s = &r.summary;
        let auc = s.auc.map_or_else(|| "n/a".to_string(), |a| format!("{:.4}±{:.4}", a.mean, a.std));
        println!(
            "{:<16} auc {}  acc {:.4}±{:.4}  f1mi {:.4}  folds {}",
            r.arch.name(),
            auc,
            s.accuracy.mean,
            s.accuracy.std,
            s.f1_micro.mean,
            s.folds
        );
    }
}

fn write_tables(cfg: &ExperimentConfig, results: &[ArchResult]) -> Result<(), CliError> {
    write_results(&cfg.out.join(RESULTS_FILE), results, cfg.train.epochs, cfg.train.seed)?;
    write_loss_traces(&cfg.out.join(LOSS_FILE), results)?;
    write_roc(&cfg.out.join(ROC_FILE), results)
}

pub fn train(cfg: &ExperimentConfig, exec: Executor) -> Result<Manifest, CliError> {
    let data = cfg.dataset.load()?;
    let results = run_rows(cfg, &data, &[cfg.arch], exec)?;
    create_dir(&cfg.out)?;
    write_tables(cfg, &results)?;
    let params_root = cfg.out.join(PARAMS_DIR).join(cfg.arch.name());
    for f in &results[0].folds {
        let dir = params_root.join(format!("fold_{}", f.fold));
        save_params(&f.model, &dir)?;
        let spec = ModelSpec {
            arch: f.arch,
            model: ModelConfig {
                num_classes: f.model.num_classes(),
                ..cfg.model.clone()
            },
            image_shape: data.image_shape(),
            tabular_width: data.tabular_width(),
        };
        let path = dir.join(MODEL_FILE);
        fs::write(&path, serde_json::to_string_pretty(&spec)? + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    print_summary(&results);
    Manifest::write("train", cfg, seeds(cfg), &cfg.out, &[RESULTS_FILE, LOSS_FILE, ROC_FILE, PARAMS_DIR])
}

pub fn ablate(cfg: &ExperimentConfig, exec: Executor) -> Result<Manifest, CliError> {
    let rows = cfg.ablation_rows();
    if rows.is_empty() {
        return Err(CliError::Usage("no ablation rows selected".into()));
    }
    let data = cfg.dataset.load()?;
    let results = run_rows(cfg, &data, &rows, exec)?;
    create_dir(&cfg.out)?;
    write_tables(cfg, &results)?;
    print_summary(&results);
    Manifest::write("ablate", cfg, seeds(cfg), &cfg.out, &[RESULTS_FILE, LOSS_FILE, ROC_FILE])
}

/// Runs the gradient suite; the report is printed and written as CSV.
pub fn gradcheck(
    cfg: &ExperimentConfig,
    instances: usize,
    fault: Option<OpClass>,
) -> Result<Vec<SuiteLine>, CliError> {
    if instances == 0 {
        return Err(CliError::Usage("need at least one instance per layer".into()));
    }
    let lines = run_suite(instances, cfg.train.seed, fault)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(GRADCHECK_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    w.write_record(["layer", "instances", "coordinates", "max_rel_error", "status"])?;
    for l in &lines {
        let status = if l.passed() { "pass" } else { "FAIL" };
        println!("{:<28} {:>3} inst {:>7} coords  max rel err {:.3e}  {status}", l.name, l.instances, l.coordinates, l.max_rel_error);
        w.write_record([
            l.name.clone(),
            l.instances.to_string(),
            l.coordinates.to_string(),
            format!("{:e}", l.max_rel_error),
            status.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let seeds = Seeds {
        data: None,
        split: cfg.cv.split_seed,
        folds: vec![cfg.train.seed],
    };
    Manifest::write("gradcheck", cfg, seeds, &cfg.out, &[GRADCHECK_FILE])?;
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} layer types within {TOLERANCE:e}", lines.len());
        Ok(lines)
    } else {
        Err(CliError::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn export_embeddings(cfg: &ExperimentConfig, arch_flag: Option<Arch>) -> Result<Manifest, CliError> {
    let params: &PathBuf = cfg
        .params
        .as_ref()
        .ok_or_else(|| CliError::Usage("export-embeddings needs --params <dir>".into()))?;
    let spec_path = params.join(MODEL_FILE);
    let text = fs::read_to_string(&spec_path).map_err(|e| CliError::io(&spec_path, e))?;
    let spec: ModelSpec = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", spec_path.display())))?;
    if let Some(arch) = arch_flag {
        if arch != spec.arch {
            return Err(foaa_core::Error::Contract(format!(
                "parameters in {} belong to arch {}, not {}",
                params.display(),
                spec.arch.name(),
                arch.name()
            ))
            .into());
        }
    }
    let data = cfg.dataset.load()?;
    if (spec.arch.uses_image() && data.image_shape() != spec.image_shape)
        || (spec.arch.uses_tabular() && data.tabular_width() != spec.tabular_width)
    {
        return Err(foaa_core::Error::Contract(format!(
            "dataset shapes {:?}/{} do not match the trained model {:?}/{}",
            data.image_shape(),
            data.tabular_width(),
            spec.image_shape,
            spec.tabular_width
        ))
        .into());
    }
    let mut model = Model::new(spec.arch, &spec.model, spec.image_shape, spec.tabular_width, 0)?;
    load_params(&mut model, params)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(EMBEDDINGS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = (0..spec.model.m).map(|i| format!("e{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for s in &data.samples {
        let mut row: Vec<String> = model.embed(s)?.iter().map(|v| format!("{v:.9}")).collect();
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    println!("wrote {} embeddings of width {} to {}", data.len(), spec.model.m, path.display());
    Manifest::write("export-embeddings", cfg, seeds(cfg), &cfg.out, &[EMBEDDINGS_FILE])
}
