//! `vidflow predict`: classify one video directory with a checkpoint.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::checkpoint::load_checkpoint_file;
use vidflow_core::data::{build_input, prepare_video, PrepParams};
use vidflow_core::nn::model_forward;
use vidflow_core::tensor::stack_axis;

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of frame images for one video.
    #[arg(long)]
    pub video: PathBuf,
    /// Run manifest path (default: <model>.predict.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: PredictArgs, threads: usize) -> Result<(), CliError> {
    let ckpt = load_checkpoint_file::<f32>(&args.model)?;
    let prep = ckpt.prep.clone().unwrap_or_else(|| {
        if ckpt.model.frame_size == 128 {
            PrepParams::default()
        } else {
            PrepParams::small(ckpt.model.frame_size)
        }
    });
    let run_manifest = RunManifest::start(
        "predict",
        0,
        threads,
        json!({ "model": args.model, "video": args.video, "prep": prep }),
    );

    let sample = prepare_video::<f32>(&args.video, "query", 0, &prep)?;
    let input = build_input(&sample, prep.flow_max_mag)?;
    let batch = stack_axis(&[&input], 0).map_err(|e| CliError::Data(e.to_string()))?;
    let probs = model_forward(&batch, &ckpt.state, &ckpt.model).map_err(|e| {
        crate::CliError::from(vidflow_core::train::TrainError::Nn(e))
    })?;

    let row = probs.data();
    let (class, _) = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let rendered: Vec<String> = row.iter().map(|p| format!("{:.6}", p)).collect();
    println!("class {}", class);
    println!("probs {}", rendered.join(" "));

    let mpath = args.manifest.clone().unwrap_or_else(|| {
        let mut os = args.model.as_os_str().to_owned();
        os.push(".predict.manifest.json");
        PathBuf::from(os)
    });
    run_manifest.finish(&mpath)?;
    Ok(())
}
