//! `vidflow flow compute`: dense flow between two frame images.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use vidflow_core::data::{read_ppm_file, write_ppm_file, PpmImage};
use vidflow_core::flow::{farneback_flow, flow_to_rgb, stack_flow, to_grayscale, FlowParams};
use vidflow_core::tensor::{write_ften_file, Tensor};

use crate::manifest::{manifest_path, RunManifest};
use crate::CliError;

#[derive(Debug, Args)]
pub struct FlowComputeArgs {
    /// First frame (PPM).
    #[arg(long)]
    pub a: PathBuf,
    /// Second frame (PPM).
    #[arg(long)]
    pub b: PathBuf,
    /// Output FTEN file with shape (h, w, 2): dx then dy per pixel.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional PPM visualization of the flow field.
    #[arg(long)]
    pub viz: Option<PathBuf>,
    /// Pyramid levels.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Pyramid scale in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    /// Expansion window (odd).
    #[arg(long, default_value_t = 11)]
    pub win: usize,
    /// Iterations per pyramid level.
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    /// Gaussian applicability sigma.
    #[arg(long, default_value_t = 1.5)]
    pub sigma: f64,
    /// Averaging window (odd).
    #[arg(long, default_value_t = 15)]
    pub avg: usize,
    /// Magnitude that saturates the visualization encoding.
    #[arg(long, default_value_t = 8.0)]
    pub max_mag: f64,
    /// Run manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn load_gray(path: &std::path::Path) -> Result<vidflow_core::flow::GrayImage<f32>, CliError> {
    let img = read_ppm_file(path).map_err(|e| CliError::Data(e.to_string()))?;
    let data: Vec<f32> = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let rgb = Tensor::new(&[img.height, img.width, 3], data)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(to_grayscale(&rgb)?)
}

pub fn run(args: FlowComputeArgs, threads: usize) -> Result<(), CliError> {
    let params = FlowParams {
        pyramid_levels: args.levels,
        pyramid_scale: args.scale,
        window_sigma: args.sigma,
        expansion_window: args.win,
        iterations_per_level: args.iters,
        averaging_window: args.avg,
    };
    let config = json!({
        "a": args.a, "b": args.b, "out": args.out, "viz": args.viz,
        "params": params, "max_mag": args.max_mag,
    });
    let run_manifest = RunManifest::start("flow compute", 0, threads, config);

    let f1 = load_gray(&args.a)?;
    let f2 = load_gray(&args.b)?;
    let flow = farneback_flow(&f1, &f2, &params)?;
    let dump = stack_flow(std::slice::from_ref(&flow))?;
    write_ften_file(&args.out, &dump)?;

    if let Some(viz) = &args.viz {
        let rgb = flow_to_rgb(&flow, args.max_mag)?;
        let (h, w) = (rgb.shape()[0], rgb.shape()[1]);
        let pixels: Vec<u8> = rgb
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_ppm_file(viz, &PpmImage::new(w, h, pixels))
            .map_err(|e| CliError::Data(e.to_string()))?;
    }

    run_manifest.finish(&manifest_path(&args.manifest, &args.out))?;
    Ok(())
}
