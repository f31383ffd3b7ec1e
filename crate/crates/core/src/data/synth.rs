//! Synthetic motion dataset: a textured square drifting left or right
//! over a textured background.
//!
//! The two classes differ only in motion direction; square size, speed
//! range, textures, and positions are drawn identically for both, so
//! per-frame appearance statistics carry no class signal. Ground truth
//! (direction, speed, square position) is recorded in the manifest for
//! oracle checks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    write_ppm_file, DataError, DatasetManifest, ManifestEntry, PpmImage, PrepParams, SplitSpec,
};
use crate::tensor::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    /// Side length of the written frames.
    pub size: usize,
    /// Side length of the moving square.
    pub square: usize,
    /// Per-video speed is drawn uniformly from this inclusive range
    /// (pixels per frame).
    pub speed_min: usize,
    pub speed_max: usize,
    /// Fraction of videos in the recorded train split, per class.
    pub train_fraction: f64,
    /// Preprocessing the consumer should apply, recorded in the manifest.
    pub prep: PrepParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 250,
            frames_per_video: 10,
            size: 64,
            square: 24,
            speed_min: 1,
            speed_max: 3,
            train_fraction: 0.8,
            prep: PrepParams::default(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.n_videos < 2 {
            return Err(DataError::Dataset(
                "need at least one video per class".into(),
            ));
        }
        if self.speed_min < 1 || self.speed_max < self.speed_min {
            return Err(DataError::Dataset("bad speed range".into()));
        }
        let travel = self.speed_max * (self.frames_per_video - 1);
        if self.size < self.square + travel + 2 {
            return Err(DataError::Dataset(format!(
                "frame size {} cannot hold a {} square travelling {} px",
                self.size, self.square, travel
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(DataError::Dataset("train_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generator ground truth for one video, in written-frame pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVideoInfo {
    pub id: String,
    pub label: usize,
    /// Pixels per frame; positive magnitude, direction given by label.
    pub speed: usize,
    /// Square top-left corner at frame 0.
    pub x0: usize,
    pub y0: usize,
    pub square: usize,
}

const CLASS_NAMES: [&str; 2] = ["left", "right"];

/// Band-limited RGB texture in `[0.05, 0.95]`.
fn texture(rng: &mut SeededRng, h: usize, w: usize) -> Vec<f64> {
    let mut buf: Vec<f64> = (0..h * w * 3).map(|_| rng.uniform(0.0, 1.0)).collect();
    // Two small separable box blurs per channel.
    for _ in 0..2 {
        let mut tmp = buf.clone();
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for k in -2i64..=2 {
                        let cc = (c as i64 + k).clamp(0, w as i64 - 1) as usize;
                        acc += buf[(r * w + cc) * 3 + ch];
                    }
                    tmp[(r * w + c) * 3 + ch] = acc / 5.0;
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for k in -2i64..=2 {
                        let rr = (r as i64 + k).clamp(0, h as i64 - 1) as usize;
                        acc += tmp[(rr * w + c) * 3 + ch];
                    }
                    buf[(r * w + c) * 3 + ch] = acc / 5.0;
                }
            }
        }
    }
    let lo = buf.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    buf.iter().map(|v| 0.05 + 0.9 * (v - lo) / span).collect()
}

fn compose_frame(
    bg: &[f64],
    sq: &[f64],
    size: usize,
    square: usize,
    x: usize,
    y: usize,
) -> Vec<u8> {
    let mut px = vec![0u8; size * size * 3];
    for r in 0..size {
        for c in 0..size {
            for ch in 0..3 {
                let inside = r >= y && r < y + square && c >= x && c < x + square;
                let v = if inside {
                    sq[((r - y) * square + (c - x)) * 3 + ch]
                } else {
                    bg[(r * size + c) * 3 + ch]
                };
                px[(r * size + c) * 3 + ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    px
}

/// Generate the dataset under `out_root` and write its manifest.
///
/// Identical `(config, seed)` pairs regenerate byte-identical files.
pub fn synth_generate(
    out_root: &Path,
    config: &SynthConfig,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    let io_err = |path: &Path, source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    for class in CLASS_NAMES {
        let dir = out_root.join(class);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }

    let mut entries = Vec::with_capacity(config.n_videos);
    let mut infos = Vec::with_capacity(config.n_videos);
    let margin = 1usize;
    for i in 0..config.n_videos {
        let mut rng = SeededRng::new(derive_seed(seed, &format!("video-{}", i)));
        let label = i % 2;
        let id = format!("vid_{:04}", i);
        let speed = config.speed_min + rng.below(config.speed_max - config.speed_min + 1);
        let travel = speed * (config.frames_per_video - 1);
        let x_lo = if label == 0 { margin + travel } else { margin };
        let x_hi = if label == 0 {
            config.size - config.square - margin
        } else {
            config.size - config.square - margin - travel
        };
        let x0 = x_lo + rng.below(x_hi - x_lo + 1);
        let y0 = margin + rng.below(config.size - config.square - 2 * margin + 1);

        let bg = texture(&mut rng, config.size, config.size);
        let sq = texture(&mut rng, config.square, config.square);

        let vid_dir = out_root.join(CLASS_NAMES[label]).join(&id);
        std::fs::create_dir_all(&vid_dir).map_err(|e| io_err(&vid_dir, e))?;
        for t in 0..config.frames_per_video {
            let x = if label == 0 { x0 - speed * t } else { x0 + speed * t };
            let px = compose_frame(&bg, &sq, config.size, config.square, x, y0);
            let img = PpmImage::new(config.size, config.size, px);
            write_ppm_file(&vid_dir.join(format!("frame_{:04}.ppm", t)), &img)?;
        }

        entries.push(ManifestEntry {
            id: id.clone(),
            dir: format!("{}/{}", CLASS_NAMES[label], id),
            label,
        });
        infos.push(SynthVideoInfo {
            id,
            label,
            speed,
            x0,
            y0,
            square: config.square,
        });
    }

    // Stratified split, shuffled by a derived stream.
    let mut split_rng = SeededRng::new(derive_seed(seed, "split"));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2usize {
        let mut ids: Vec<String> = entries
            .iter()
            .filter(|e| e.label == class)
            .map(|e| e.id.clone())
            .collect();
        split_rng.shuffle(&mut ids);
        let n_train = (ids.len() as f64 * config.train_fraction).round() as usize;
        for (j, id) in ids.into_iter().enumerate() {
            if j < n_train {
                train.push(id);
            } else {
                test.push(id);
            }
        }
    }
    train.sort();
    test.sort();

    let manifest = DatasetManifest {
        root: out_root.display().to_string(),
        entries,
        class_map: CLASS_NAMES
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i))
            .collect(),
        prep: config.prep.clone(),
        split: Some(SplitSpec { train, test }),
        synth: Some(infos),
    };
    manifest.save(out_root)?;
    Ok(manifest)
}
