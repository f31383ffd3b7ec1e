//! `vidflow synth`: generate the synthetic motion dataset.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::data::synth::{synth_generate, SynthConfig};
use vidflow_core::data::PrepParams;

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of videos (half left-moving, half right-moving).
    #[arg(long, default_value_t = 250)]
    pub n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Written frame side length.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Moving square side length.
    #[arg(long, default_value_t = 24)]
    pub square: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Fraction of each class recorded as the train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    /// Side length the preprocessing should resize to (recorded in the
    /// dataset manifest).
    #[arg(long, default_value_t = 32)]
    pub target_size: usize,
    /// Run manifest path (default: <out>/synth.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: SynthArgs, threads: usize) -> Result<(), CliError> {
    let prep = if args.target_size == 128 {
        PrepParams::default()
    } else {
        PrepParams::small(args.target_size)
    };
    let config = SynthConfig {
        n_videos: args.n,
        frames_per_video: args.frames,
        size: args.size,
        square: args.square,
        train_fraction: args.train_frac,
        prep,
        ..SynthConfig::default()
    };
    let run_manifest = RunManifest::start(
        "synth",
        args.seed,
        threads,
        json!({ "out": args.out, "config": config }),
    );

    let manifest = synth_generate(&args.out, &config, args.seed)?;
    eprintln!(
        "wrote {} videos ({} train / {} test) under {}",
        manifest.entries.len(),
        manifest.split.as_ref().map_or(0, |s| s.train.len()),
        manifest.split.as_ref().map_or(0, |s| s.test.len()),
        args.out.display()
    );

    let mpath = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.out.join("synth.manifest.json"));
    run_manifest.finish(&mpath)?;
    Ok(())
}
