//! K-fold cross-validation, confusion matrices, and accuracy reporting.
//!
//! Accuracy is `trace / total` of the confusion matrix, and the k-fold
//! aggregate is the unweighted mean of per-fold accuracies (matching how
//! published fold tables are usually averaged).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{model_forward, ModelConfig, ModelState};
use crate::tensor::{stack_axis, Scalar, SeededRng, Tensor};
use crate::train::{predict_classes, train, TrainConfig, TrainError, TrainHistory, TrainSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bad evaluation config: {0}")]
    Config(String),
    #[error("prediction/label lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class index {0} out of range for {1} classes")]
    ClassOutOfRange(usize, usize),
    #[error("empty confusion matrix")]
    Empty,
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// Row-major `classes x classes` counts.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Self {
        let classes = rows.len();
        let mut counts = Vec::with_capacity(classes * classes);
        for row in rows {
            assert_eq!(row.len(), classes, "confusion matrix must be square");
            counts.extend_from_slice(row);
        }
        Self { classes, counts }
    }

    pub fn at(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.at(i, i)).sum()
    }
}

/// Tally predictions against labels.
pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(EvalError::ClassOutOfRange(p.max(t), classes));
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

/// `trace / total`.
pub fn accuracy_from_confusion(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Train and test index lists of one fold.
pub type FoldIndices = (Vec<usize>, Vec<usize>);

/// Seeded permutation split into `k` nearly equal contiguous test blocks;
/// the first `n mod k` folds take the extra element.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<FoldIndices>, EvalError> {
    if k < 2 {
        return Err(EvalError::Config("k must be >= 2".into()));
    }
    if k > n {
        return Err(EvalError::Config(format!(
            "k = {} exceeds sample count n = {}",
            k, n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold in 0..k {
        let len = base + usize::from(fold < extra);
        let test: Vec<usize> = order[start..start + len].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(order[start + len..].iter())
            .copied()
            .collect();
        folds.push((train, test));
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    /// Unweighted mean of the per-fold accuracies.
    pub mean_accuracy: f64,
}

/// Evaluate a trained state on a set of samples.
pub fn evaluate<T: Scalar>(
    state: &ModelState<T>,
    samples: &[&TrainSample<T>],
    model_cfg: &ModelConfig,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let inputs: Vec<&Tensor<T>> = chunk.iter().map(|s| &s.input).collect();
        let batch = stack_axis(&inputs, 0)?;
        let probs = model_forward(&batch, state, model_cfg)?;
        preds.extend(predict_classes(&probs));
        labels.extend(chunk.iter().map(|s| s.label));
    }
    Ok((preds, labels))
}

/// Train and evaluate one model per fold.
///
/// Fold `i`'s model is initialized from `seed + i` and trained on the
/// fold's training block; the aggregate is the unweighted mean of fold
/// accuracies.
pub fn cross_validate<T: Scalar>(
    ids: &[String],
    samples: &[TrainSample<T>],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
) -> Result<CrossValReport, EvalError> {
    if ids.len() != samples.len() {
        return Err(EvalError::LengthMismatch(ids.len(), samples.len()));
    }
    let splits = kfold_split(samples.len(), k, train_cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for (fold, (train_idx, test_idx)) in splits.into_iter().enumerate() {
        let fold_seed = train_cfg.seed + fold as u64;
        let mut rng = SeededRng::new(crate::tensor::derive_seed(fold_seed, "model-init"));
        let init = crate::nn::init_params::<T>(model_cfg, &mut rng);
        let fold_cfg = TrainConfig {
            seed: fold_seed,
            ..train_cfg.clone()
        };
        let train_set: Vec<TrainSample<T>> =
            train_idx.iter().map(|&i| samples[i].clone()).collect();
        let (state, history) = train(&train_set, model_cfg, &fold_cfg, init)
            .map_err(|source| EvalError::Fold { fold, source })?;

        let test_set: Vec<&TrainSample<T>> = test_idx.iter().map(|&i| &samples[i]).collect();
        let (preds, labels) = evaluate(&state, &test_set, model_cfg, train_cfg.batch_size)
            .map_err(|source| EvalError::Fold { fold, source })?;
        let confusion = confusion_matrix(&preds, &labels, model_cfg.num_classes)?;
        let accuracy = accuracy_from_confusion(&confusion)?;
        folds.push(FoldReport {
            fold,
            train_ids: train_idx.iter().map(|&i| ids[i].clone()).collect(),
            test_ids: test_idx.iter().map(|&i| ids[i].clone()).collect(),
            confusion,
            accuracy,
            history,
        });
    }
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(CrossValReport {
        folds,
        mean_accuracy,
    })
}

/// Render the fold table and per-fold confusion blocks as aligned text.
pub fn render_report(report: &CrossValReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "fold  accuracy").unwrap();
    for f in &report.folds {
        writeln!(out, "{:>4}  {:>7.2}%", f.fold + 1, f.accuracy * 100.0).unwrap();
    }
    writeln!(out, "mean  {:>7.2}%", report.mean_accuracy * 100.0).unwrap();
    for f in &report.folds {
        writeln!(out, "\nconfusion (fold {}):", f.fold + 1).unwrap();
        for t in 0..f.confusion.classes {
            let row: Vec<String> = (0..f.confusion.classes)
                .map(|p| format!("{:>6}", f.confusion.at(t, p)))
                .collect();
            writeln!(out, "  {}", row.join(" ")).unwrap();
        }
    }
    out
}
