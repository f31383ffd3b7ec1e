//! `vidflow eval kfold`: k-fold cross-validation with a JSON report.
//!
//! Report schema:
//! `{folds: [{fold, confusion, accuracy}], mean_accuracy, config}`.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::data::{load_dataset, DatasetManifest};
use vidflow_core::eval::{cross_validate, render_report};

use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, TrainHyperArgs};

#[derive(Debug, Args)]
pub struct EvalKfoldArgs {
    /// Dataset root containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Report JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Use cached input.ften files when present.
    #[arg(long)]
    pub cache: bool,
    #[command(flatten)]
    pub hyper: TrainHyperArgs,
    /// Run manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: EvalKfoldArgs, threads: usize) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&args.data)?;
    let train_cfg = args.hyper.to_train_config()?;
    let model_cfg = args.hyper.to_model_config(&manifest.prep);
    let config_json = json!({
        "data": args.data, "k": args.k, "train": train_cfg,
        "model": model_cfg, "prep": manifest.prep,
    });
    let run_manifest = RunManifest::start("eval kfold", train_cfg.seed, threads, config_json.clone());

    let loaded = load_dataset::<f32>(&manifest, args.cache)?;
    let (ids, samples): (Vec<String>, Vec<_>) = loaded.into_iter().unzip();
    eprintln!("cross-validating {} samples, k = {}", samples.len(), args.k);

    let report = cross_validate(&ids, &samples, &model_cfg, &train_cfg, args.k)?;
    eprint!("{}", render_report(&report));

    // Deterministic machine-readable report: no wall times inside.
    let folds_json: Vec<serde_json::Value> = report
        .folds
        .iter()
        .map(|f| {
            let k = f.confusion.classes;
            let rows: Vec<Vec<u64>> = (0..k)
                .map(|t| (0..k).map(|p| f.confusion.at(t, p)).collect())
                .collect();
            json!({ "fold": f.fold, "confusion": rows, "accuracy": f.accuracy })
        })
        .collect();
    let out_json = json!({
        "folds": folds_json,
        "mean_accuracy": report.mean_accuracy,
        "config": config_json,
    });
    std::fs::write(&args.out, serde_json::to_string_pretty(&out_json).unwrap())
        .map_err(|e| CliError::Data(format!("writing {}: {}", args.out.display(), e)))?;

    run_manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}
