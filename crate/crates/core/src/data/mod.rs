//! Dataset ingestion and preprocessing.
//!
//! On-disk layout: `<root>/<class_name>/<video_id>/frame_%04d.ppm`, with
//! a `manifest.json` at the root recording entries, the alphabetical
//! class map, and every preprocessing parameter needed to reproduce the
//! assembled inputs. Frames are resized, ten are sampled per video,
//! optical flow is computed between consecutive sampled frames (the last
//! flow duplicated so ten flows pair with ten frames), and the model
//! input is the RGB stack concatenated with the flow-encoded stack.

mod ppm;
pub mod synth;

pub use ppm::{read_ppm_file, write_ppm_file, PpmError, PpmImage};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    farneback_flow, flow_to_rgb, to_grayscale, FlowError, FlowField, FlowParams,
};
use crate::tensor::{concat_axis, read_ften_file, stack_axis, write_ften_file, FtenError, Scalar, Tensor, TensorError};
use crate::train::TrainSample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Ppm(#[from] PpmError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("ingestion error on {file}: {reason}")]
    Ingest { file: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ften(#[from] FtenError),
}

/// Preprocessing parameters, recorded in the manifest for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepParams {
    /// Square side frames are resized to before flow computation.
    pub target_size: usize,
    /// Frames sampled per video.
    pub frame_count: usize,
    pub flow: FlowParams,
    /// Magnitude that saturates the flow-to-RGB encoding.
    pub flow_max_mag: f64,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self {
            target_size: 128,
            frame_count: 10,
            flow: FlowParams::default(),
            flow_max_mag: 4.0,
        }
    }
}

impl PrepParams {
    /// Parameters for the reduced 32x32 experiment profile. Motions at
    /// this scale are sub-2px, so the encoding saturates at 1 px to use
    /// the full channel range. Pyramid depth is capped so the coarsest
    /// level still fits the expansion window.
    pub fn small(target_size: usize) -> Self {
        let mut flow = FlowParams::small_frames();
        let mut levels = 1usize;
        let mut side = target_size as f64;
        while levels < flow.pyramid_levels
            && side * flow.pyramid_scale >= flow.expansion_window as f64
        {
            side *= flow.pyramid_scale;
            levels += 1;
        }
        flow.pyramid_levels = levels;
        Self {
            target_size,
            frame_count: 10,
            flow,
            flow_max_mag: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Directory of the frame images, relative to the dataset root.
    pub dir: String,
    pub label: usize,
}

/// Named train/test split recorded by generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: String,
    pub entries: Vec<ManifestEntry>,
    /// Class name to index, alphabetical.
    pub class_map: BTreeMap<String, usize>,
    pub prep: PrepParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    /// Generator ground truth, present for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<Vec<synth::SynthVideoInfo>>,
}

impl DatasetManifest {
    pub fn path_of(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        let path = Self::path_of(root);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(&path, json).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(root: &Path) -> Result<Self, DataError> {
        let path = Self::path_of(root);
        let json = std::fs::read_to_string(&path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&json).map_err(|e| DataError::Manifest(e.to_string()))
    }

    pub fn entry_dir(&self, entry: &ManifestEntry) -> PathBuf {
        Path::new(&self.root).join(&entry.dir)
    }
}

/// Decode one frame image to an `(h, w, 3)` tensor in `[0, 1]`.
fn decode_frame<T: Scalar>(path: &Path) -> Result<Tensor<T>, DataError> {
    let img = read_ppm_file(path)?;
    let data: Vec<T> = img
        .pixels
        .iter()
        .map(|&b| T::of(b as f64 / 255.0))
        .collect();
    Ok(Tensor::new(&[img.height, img.width, 3], data)?)
}

/// Trailing digit-run of a file stem, used as the frame index.
fn frame_index(stem: &str) -> Option<u64> {
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

/// Load every frame image in a directory, sorted by the numeric index in
/// the filename (`frame_0001.ppm` style, padding optional).
pub fn load_frames<T: Scalar>(dir: &Path) -> Result<Vec<Tensor<T>>, DataError> {
    let mut indexed: Vec<(u64, PathBuf)> = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        match frame_index(stem) {
            Some(idx) => indexed.push((idx, path)),
            None => {
                return Err(DataError::Ingest {
                    file: path.display().to_string(),
                    reason: "filename carries no frame index".into(),
                })
            }
        }
    }
    if indexed.is_empty() {
        return Err(DataError::Dataset(format!(
            "no decodable frames in {}",
            dir.display()
        )));
    }
    indexed.sort_by_key(|(idx, _)| *idx);
    indexed
        .into_iter()
        .map(|(_, path)| decode_frame(&path))
        .collect()
}

/// Corner-aligned bilinear resize of an `(h, w, 3)` image.
pub fn resize_bilinear<T: Scalar>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>, DataError> {
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(DataError::Dataset(format!(
            "resize expects (h, w, 3), got {:?}",
            img.shape()
        )));
    }
    if out_h < 1 || out_w < 1 {
        return Err(DataError::Dataset("degenerate resize target".into()));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if h < 2 || w < 2 {
        return Err(DataError::Dataset(format!(
            "source image {}x{} too small to resize",
            h, w
        )));
    }
    let ry = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let rx = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let src = img.data();
    let mut out = Tensor::zeros(&[out_h, out_w, 3]);
    for r in 0..out_h {
        let sy = r as f64 * ry;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = T::of(sy - y0 as f64);
        for c in 0..out_w {
            let sx = c as f64 * rx;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = T::of(sx - x0 as f64);
            for ch in 0..3 {
                let v00 = src[(y0 * w + x0) * 3 + ch];
                let v01 = src[(y0 * w + x1) * 3 + ch];
                let v10 = src[(y1 * w + x0) * 3 + ch];
                let v11 = src[(y1 * w + x1) * 3 + ch];
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                // Interpolation of [0, 1] data can overshoot by an ulp.
                let v = (top + (bot - top) * fy).max_val(T::ZERO).min_val(T::ONE);
                out.data_mut()[(r * out_w + c) * 3 + ch] = v;
            }
        }
    }
    Ok(out)
}

/// Uniformly spaced sample indices: `idx_k = floor(k * len / n)`.
///
/// When `len < n` the formula itself repeats earlier frames, so every
/// output index stays in range.
pub fn sample_indices(len: usize, n: usize) -> Vec<usize> {
    assert!(len > 0 && n > 0);
    (0..n).map(|k| k * len / n).collect()
}

/// Pick `n` frames by [`sample_indices`].
pub fn sample_frames<X: Clone>(frames: &[X], n: usize) -> Vec<X> {
    sample_indices(frames.len(), n)
        .into_iter()
        .map(|i| frames[i].clone())
        .collect()
}

/// One preprocessed video: ten RGB frames and ten flow fields.
#[derive(Debug, Clone)]
pub struct VideoSample<T: Scalar> {
    pub id: String,
    pub label: usize,
    pub frames: Vec<Tensor<T>>,
    pub flows: Vec<FlowField<T>>,
}

impl<T: Scalar> VideoSample<T> {
    /// Enforce the pipeline invariants: `n` frames of `(s, s, 3)` in
    /// `[0, 1]` and one flow field per frame.
    pub fn validate(&self, prep: &PrepParams) -> Result<(), DataError> {
        if self.frames.len() != prep.frame_count || self.flows.len() != prep.frame_count {
            return Err(DataError::Dataset(format!(
                "video {}: expected {} frames and flows, got {} and {}",
                self.id,
                prep.frame_count,
                self.frames.len(),
                self.flows.len()
            )));
        }
        let s = prep.target_size;
        for f in &self.frames {
            if f.shape() != [s, s, 3] {
                return Err(DataError::Dataset(format!(
                    "video {}: frame shape {:?}, want ({}, {}, 3)",
                    self.id,
                    f.shape(),
                    s,
                    s
                )));
            }
            if f.iter().any(|&v| !v.is_finite() || v < T::ZERO || v > T::ONE) {
                return Err(DataError::Dataset(format!(
                    "video {}: frame values outside [0, 1]",
                    self.id
                )));
            }
        }
        for fl in &self.flows {
            if fl.height() != s || fl.width() != s {
                return Err(DataError::Dataset(format!(
                    "video {}: flow shape {}x{}, want {}x{}",
                    self.id,
                    fl.height(),
                    fl.width(),
                    s,
                    s
                )));
            }
        }
        Ok(())
    }
}

/// Load, resize, sample, and compute flows for one frame directory.
///
/// Flow `k` is frame `k` to frame `k+1`; the last flow is duplicated so
/// flow count equals frame count.
pub fn prepare_video<T: Scalar>(
    dir: &Path,
    id: &str,
    label: usize,
    prep: &PrepParams,
) -> Result<VideoSample<T>, DataError> {
    let raw = load_frames::<T>(dir)?;
    let picked = sample_frames(&raw, prep.frame_count);
    let frames: Vec<Tensor<T>> = picked
        .iter()
        .map(|f| resize_bilinear(f, prep.target_size, prep.target_size))
        .collect::<Result<_, _>>()?;

    let grays: Vec<_> = frames
        .iter()
        .map(to_grayscale)
        .collect::<Result<Vec<_>, _>>()?;
    let mut flows = Vec::with_capacity(prep.frame_count);
    for k in 0..frames.len().saturating_sub(1) {
        flows.push(farneback_flow(&grays[k], &grays[k + 1], &prep.flow)?);
    }
    if let Some(last) = flows.last().cloned() {
        flows.push(last);
    } else {
        // Single-frame video: no motion to estimate.
        flows.push(FlowField::zeros(prep.target_size, prep.target_size));
    }

    let sample = VideoSample {
        id: id.to_string(),
        label,
        frames,
        flows,
    };
    sample.validate(prep)?;
    Ok(sample)
}

/// Assemble the model input: slices `0..n` are the RGB frames, slices
/// `n..2n` the flow-encoded frames, concatenated along the time axis.
pub fn build_input<T: Scalar>(
    sample: &VideoSample<T>,
    max_mag: f64,
) -> Result<Tensor<T>, DataError> {
    let frame_refs: Vec<&Tensor<T>> = sample.frames.iter().collect();
    let rgb = stack_axis(&frame_refs, 0)?;
    let encoded: Vec<Tensor<T>> = sample
        .flows
        .iter()
        .map(|f| flow_to_rgb(f, max_mag))
        .collect::<Result<_, _>>()?;
    let encoded_refs: Vec<&Tensor<T>> = encoded.iter().collect();
    let flow_stack = stack_axis(&encoded_refs, 0)?;
    Ok(concat_axis(&[&rgb, &flow_stack], 0)?)
}

/// Cache file holding the assembled input, beside the frames.
pub fn cache_path(video_dir: &Path) -> PathBuf {
    video_dir.join("input.ften")
}

/// Load every manifest entry into assembled training samples.
///
/// With `use_cache`, a valid `input.ften` beside the frames short-circuits
/// preprocessing; the cache must match the expected shape and profile.
/// Videos are processed in parallel and collected in manifest order.
pub fn load_dataset<T: Scalar>(
    manifest: &DatasetManifest,
    use_cache: bool,
) -> Result<Vec<(String, TrainSample<T>)>, DataError> {
    let prep = &manifest.prep;
    let want_shape = [
        2 * prep.frame_count,
        prep.target_size,
        prep.target_size,
        3,
    ];
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let dir = manifest.entry_dir(entry);
            if use_cache {
                let cp = cache_path(&dir);
                if cp.is_file() {
                    if let Ok(any) = read_ften_file(&cp) {
                        if any.shape() == want_shape {
                            if let Ok(input) = any.into_exact::<T>() {
                                return Ok((
                                    entry.id.clone(),
                                    TrainSample {
                                        input,
                                        label: entry.label,
                                    },
                                ));
                            }
                        }
                    }
                }
            }
            let sample = prepare_video::<T>(&dir, &entry.id, entry.label, prep)?;
            let input = build_input(&sample, prep.flow_max_mag)?;
            Ok((
                entry.id.clone(),
                TrainSample {
                    input,
                    label: entry.label,
                },
            ))
        })
        .collect()
}

/// Precompute and persist the assembled input for every entry.
pub fn write_caches(manifest: &DatasetManifest) -> Result<usize, DataError> {
    let results: Vec<Result<(), DataError>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let dir = manifest.entry_dir(entry);
            let sample =
                prepare_video::<f32>(&dir, &entry.id, entry.label, &manifest.prep)?;
            let input = build_input(&sample, manifest.prep.flow_max_mag)?;
            write_ften_file(&cache_path(&dir), &input)?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(manifest.entries.len())
}

/// Build a manifest by scanning `<root>/<class>/<video>/` directories.
/// Class indices are assigned alphabetically by class directory name.
pub fn scan_layout(root: &Path, prep: PrepParams) -> Result<DatasetManifest, DataError> {
    let mut classes: Vec<String> = Vec::new();
    let rd = std::fs::read_dir(root).map_err(|source| DataError::Io {
        path: root.display().to_string(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| DataError::Io {
            path: root.display().to_string(),
            source,
        })?;
        if entry.path().is_dir() {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(DataError::Dataset(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let class_map: BTreeMap<String, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();
    let mut entries = Vec::new();
    for class in &classes {
        let class_dir = root.join(class);
        let mut vids: Vec<String> = Vec::new();
        let rd = std::fs::read_dir(&class_dir).map_err(|source| DataError::Io {
            path: class_dir.display().to_string(),
            source,
        })?;
        for entry in rd {
            let entry = entry.map_err(|source| DataError::Io {
                path: class_dir.display().to_string(),
                source,
            })?;
            if entry.path().is_dir() {
                vids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        vids.sort();
        for vid in vids {
            entries.push(ManifestEntry {
                id: vid.clone(),
                dir: format!("{}/{}", class, vid),
                label: class_map[class],
            });
        }
    }
    if entries.is_empty() {
        return Err(DataError::Dataset("no video directories found".into()));
    }
    Ok(DatasetManifest {
        root: root.display().to_string(),
        entries,
        class_map,
        prep,
        split: None,
        synth: None,
    })
}
