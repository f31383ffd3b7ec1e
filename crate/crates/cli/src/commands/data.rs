//! `vidflow data prepare`: build or refresh a dataset manifest and
//! optionally persist assembled model inputs as FTEN caches.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::data::{scan_layout, write_caches, DatasetManifest, PrepParams};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Args)]
pub struct DataPrepareArgs {
    /// Dataset root (`<root>/<class>/<video>/frame_%04d.ppm`).
    #[arg(long)]
    pub root: PathBuf,
    /// Precompute and store `input.ften` beside each video.
    #[arg(long)]
    pub cache: bool,
    /// Resize side length when creating a new manifest.
    #[arg(long, default_value_t = 128)]
    pub target_size: usize,
    /// Frames sampled per video when creating a new manifest.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Run manifest path (default: <root>/prepare.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: DataPrepareArgs, threads: usize) -> Result<(), CliError> {
    let run_manifest = RunManifest::start(
        "data prepare",
        0,
        threads,
        json!({
            "root": args.root, "cache": args.cache,
            "target_size": args.target_size, "frames": args.frames,
        }),
    );

    // Reuse an existing manifest's preprocessing; otherwise scan anew.
    let manifest = match DatasetManifest::load(&args.root) {
        Ok(m) => m,
        Err(_) => {
            let mut prep = if args.target_size == 128 {
                PrepParams::default()
            } else {
                PrepParams::small(args.target_size)
            };
            prep.frame_count = args.frames;
            let m = scan_layout(&args.root, prep)?;
            m.save(&args.root)?;
            m
        }
    };
    eprintln!(
        "manifest: {} entries, {} classes",
        manifest.entries.len(),
        manifest.class_map.len()
    );

    if args.cache {
        let n = write_caches(&manifest)?;
        eprintln!("cached {} assembled inputs", n);
    }

    let mpath = args
        .manifest
        .clone()
        .unwrap_or_else(|| args.root.join("prepare.manifest.json"));
    run_manifest.finish(&mpath)?;
    Ok(())
}
