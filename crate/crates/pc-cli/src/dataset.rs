//! Dataset container and the seeded synthetic generator used when no
//! dataset files are present.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{CliError, Result};

/// Sample×feature matrix in `[0, 1]` with optional integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    pub inputs: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// Number of classes; 0 when unlabeled.
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Check the container invariants: finite inputs, labels in range.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!(
                "dataset {}: non-finite input value",
                self.name
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(CliError::Config(format!(
                    "dataset {}: {} labels for {} samples",
                    self.name,
                    labels.len(),
                    self.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
                return Err(CliError::Config(format!(
                    "dataset {}: label {bad} outside 0..{}",
                    self.name, self.classes
                )));
            }
        }
        Ok(())
    }

    /// Split class-balanced: of each class block, the trailing `eval_frac`
    /// goes to the evaluation set. Requires the class-major row order
    /// produced by [`synth_blobs`].
    pub fn split_eval(&self, eval_frac: f64) -> (Dataset, Dataset) {
        let labels = self.labels.clone().unwrap_or_default();
        let mut train_rows = Vec::new();
        let mut eval_rows = Vec::new();
        let per_class = if self.classes > 0 {
            self.len() / self.classes
        } else {
            self.len()
        };
        let eval_per_class = ((per_class as f64) * eval_frac).round() as usize;
        for (i, _) in self.inputs.rows().into_iter().enumerate() {
            if i % per_class >= per_class - eval_per_class {
                eval_rows.push(i);
            } else {
                train_rows.push(i);
            }
        }
        let pick = |rows: &[usize], split: &str| {
            let mut inputs = Array2::zeros((rows.len(), self.feature_dim()));
            for (r, &i) in rows.iter().enumerate() {
                inputs.row_mut(r).assign(&self.inputs.row(i));
            }
            Dataset {
                name: self.name.clone(),
                split: split.into(),
                inputs,
                labels: self
                    .labels
                    .as_ref()
                    .map(|_| rows.iter().map(|&i| labels[i]).collect()),
                classes: self.classes,
            }
        };
        (pick(&train_rows, "train"), pick(&eval_rows, "eval"))
    }
}

/// Seeded Gaussian blobs: `classes` cluster means drawn uniformly inside
/// `[0.15, 0.85]^dim`, `per_class` samples per class at `mean + spread·N(0,1)`
/// clipped to `[0, 1]`. Rows are class-major. Deterministic per seed.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(CliError::Config(format!(
            "synth_blobs needs at least 2 classes, got {classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = Array2::from_shape_fn((classes, dim), |_| rng.gen_range(0.15..0.85));
    let mut inputs = Array2::zeros((classes * per_class, dim));
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for sample in 0..per_class {
            let row = class * per_class + sample;
            for d in 0..dim {
                let noise: f64 = rng.sample(StandardNormal);
                inputs[[row, d]] = (means[[class, d]] + spread * noise).clamp(0.0, 1.0);
            }
            labels.push(class);
        }
    }
    Ok(Dataset {
        name: format!("blobs-c{classes}-n{per_class}-d{dim}-s{seed}"),
        split: String::new(),
        inputs,
        labels: Some(labels),
        classes,
    })
}
