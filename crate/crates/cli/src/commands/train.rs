//! `vidflow train`: mini-batch SGD on a prepared dataset.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::checkpoint::save_checkpoint_file;
use vidflow_core::data::{load_dataset, DatasetManifest};
use vidflow_core::nn::init_params;
use vidflow_core::tensor::{derive_seed, SeededRng};
use vidflow_core::train::{train, TrainHistory, TrainSample};

use crate::manifest::{manifest_path, RunManifest};
use crate::{CliError, TrainHyperArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV (columns: epoch, loss, acc, lr, seconds).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Which samples to train on: the manifest's train split, or all.
    #[arg(long, value_parser = ["auto", "train", "all"], default_value = "auto")]
    pub split: String,
    /// Use cached input.ften files when present.
    #[arg(long)]
    pub cache: bool,
    #[command(flatten)]
    pub hyper: TrainHyperArgs,
    /// Run manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn write_history_csv(path: &PathBuf, history: &TrainHistory) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,acc,lr,seconds")?;
    for row in history {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.epoch, row.mean_loss, row.train_accuracy, row.lr_at_end, row.seconds
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Select samples per the --split policy.
pub fn select_split<T: vidflow_core::tensor::Scalar>(
    manifest: &DatasetManifest,
    loaded: Vec<(String, TrainSample<T>)>,
    policy: &str,
) -> (Vec<String>, Vec<TrainSample<T>>) {
    let use_train_split = match policy {
        "train" => true,
        "all" => false,
        _ => manifest.split.is_some(),
    };
    if use_train_split {
        if let Some(split) = &manifest.split {
            let keep: std::collections::BTreeSet<&String> = split.train.iter().collect();
            let (ids, samples): (Vec<String>, Vec<TrainSample<T>>) = loaded
                .into_iter()
                .filter(|(id, _)| keep.contains(id))
                .unzip();
            return (ids, samples);
        }
    }
    loaded.into_iter().unzip()
}

pub fn run(args: TrainArgs, threads: usize) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&args.data)?;
    let train_cfg = args.hyper.to_train_config()?;
    let model_cfg = args.hyper.to_model_config(&manifest.prep);
    let run_manifest = RunManifest::start(
        "train",
        train_cfg.seed,
        threads,
        json!({
            "data": args.data, "out": args.out, "split": args.split,
            "cache": args.cache, "train": train_cfg, "model": model_cfg,
            "prep": manifest.prep,
        }),
    );

    let loaded = load_dataset::<f32>(&manifest, args.cache)?;
    let (_, samples) = select_split(&manifest, loaded, &args.split);
    eprintln!("training on {} samples", samples.len());

    let mut rng = SeededRng::new(derive_seed(train_cfg.seed, "model-init"));
    let init = init_params::<f32>(&model_cfg, &mut rng);
    let (state, history) = train(&samples, &model_cfg, &train_cfg, init)?;

    save_checkpoint_file(&args.out, &model_cfg, Some(&manifest.prep), &state)?;
    if let Some(hpath) = &args.history {
        write_history_csv(hpath, &history)?;
    }
    if let Some(last) = history.last() {
        eprintln!(
            "done: epoch {} loss {:.4} train-acc {:.2}%",
            last.epoch,
            last.mean_loss,
            last.train_accuracy * 100.0
        );
    }
    run_manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}
