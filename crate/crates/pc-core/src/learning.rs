//! Learning phase: weight and covariance updates at the converged activity,
//! and the outer EM-style training loop.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PcError, Result};
use crate::inference::{run_inference, ClampSpec, InferenceConfig, PhiInit};
use crate::model::{count_ops, NetworkState, OpCountTask, PCNetwork};
use crate::scalar::Scalar;

/// Settings for the weight/covariance updates and the outer loop.
#[derive(Debug, Clone)]
pub struct LearningConfig<F: Scalar> {
    /// Weight learning rate η.
    pub eta: F,
    /// Covariance step; 0 disables Σ learning (the default).
    pub sigma_step: F,
    pub sigma_floor: F,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl<F: Scalar> Default for LearningConfig<F> {
    fn default() -> Self {
        LearningConfig {
            eta: F::c(0.02),
            sigma_step: F::zero(),
            sigma_floor: F::c(1e-4),
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl<F: Scalar> LearningConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= F::zero() {
            return Err(PcError::Config("eta must be positive".into()));
        }
        if self.sigma_step < F::zero() {
            return Err(PcError::Config("sigma_step must be non-negative".into()));
        }
        if self.sigma_floor < F::c(1e-8) {
            return Err(PcError::Config("sigma_floor must be at least 1e-8".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(PcError::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which experiment the trainer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Input clamped at the top, one-hot label at the bottom.
    Classify,
    /// Input clamped at the bottom; the top layer converges to a code.
    Compress,
}

/// One completed epoch of the outer loop.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_nfe: f64,
    /// Accuracy (classify) or reconstruction MSE (compress).
    pub metric: f64,
    /// Inference steps used, summed over batches.
    pub inference_steps: usize,
    pub seconds: f64,
    pub op_count: u64,
}

/// Per-epoch records emitted by [`train`].
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// Free-energy gradient w.r.t. Θ_ℓ: `(f′(Θ_ℓφ_ℓ) ⊙ ε_{ℓ-1}) φ_ℓᵀ`,
/// mean over the batch.
pub fn nfe_grad_theta<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
    layer: usize,
) -> Result<Array2<F>> {
    let top = net.top();
    if layer == 0 || layer > top {
        return Err(PcError::LayerOutOfRange { layer, max: top });
    }
    let w = net.weight(layer);
    let z = state.phi[layer].dot(&w.t());
    let fp = net.activation_for(layer).derivative(&z);
    let weighted = &fp * &state.eps[layer - 1];
    let batch = F::c(state.batch_size() as f64);
    Ok(weighted.t().dot(&state.phi[layer]) / batch)
}

/// Free-energy gradient w.r.t. the diagonal of Σ_ℓ:
/// `½(ε_ℓ² − 1/σ_ℓ²)` per component, mean over the batch.
pub fn nfe_grad_sigma<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
    layer: usize,
) -> Result<Array1<F>> {
    let top = net.top();
    if layer > top {
        return Err(PcError::LayerOutOfRange { layer, max: top });
    }
    let eps2 = (&state.eps[layer] * &state.eps[layer]).mean_axis(Axis(0)).unwrap();
    let inv = net.variance(layer).mapv(|v| F::one() / v);
    Ok((eps2 - inv) * F::c(0.5))
}

/// Outcome of one EM step.
#[derive(Debug, Clone)]
pub struct EmOutcome<F: Scalar> {
    pub net: PCNetwork<F>,
    pub mean_nfe: F,
    pub inference_steps: usize,
}

/// One EM alternation: inference to convergence on the clamped batch,
/// then a single gradient step on Θ (and optionally Σ).
pub fn em_step<F: Scalar>(
    net: &PCNetwork<F>,
    clamp: &ClampSpec<F>,
    init: &PhiInit<F>,
    inf_cfg: &InferenceConfig<F>,
    lrn_cfg: &LearningConfig<F>,
) -> Result<EmOutcome<F>> {
    lrn_cfg.validate()?;
    let run = run_inference(net, init, clamp, inf_cfg)?;
    let mut updated = net.clone();
    for layer in 1..=net.top() {
        let grad = nfe_grad_theta(net, &run.state, layer)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(PcError::NonFiniteGradient { layer });
        }
        *updated.weight_mut(layer) = net.weight(layer) + &(grad * lrn_cfg.eta);
    }
    if lrn_cfg.sigma_step > F::zero() {
        for layer in 0..=net.top() {
            let grad = nfe_grad_sigma(net, &run.state, layer)?;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(PcError::NonFiniteGradient { layer });
            }
            let stepped = net.variance(layer) + &(grad * lrn_cfg.sigma_step);
            let floored = stepped.mapv(|v| {
                if v < lrn_cfg.sigma_floor {
                    lrn_cfg.sigma_floor
                } else {
                    v
                }
            });
            updated.set_variance(layer, floored)?;
        }
    }
    Ok(EmOutcome {
        net: updated,
        mean_nfe: run.nfe,
        inference_steps: run.steps,
    })
}

/// One-hot encoding, one row per label.
pub fn one_hot<F: Scalar>(labels: &[usize], classes: usize) -> Array2<F> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (row, &label) in labels.iter().enumerate() {
        out[[row, label]] = F::one();
    }
    out
}

/// Pure top-down pass from inputs clamped at the top; rows are samples.
pub fn feedforward_output<F: Scalar>(net: &PCNetwork<F>, inputs: &Array2<F>) -> Result<Array2<F>> {
    let top = net.top();
    if inputs.ncols() != net.dims()[top] {
        return Err(PcError::shape(
            "feedforward input",
            &[net.dims()[top]],
            &[inputs.ncols()],
        ));
    }
    let mut act = inputs.clone();
    for layer in (1..=top).rev() {
        let z = act.dot(&net.weight(layer).t());
        act = net.activation_for(layer).apply(&z);
    }
    Ok(act)
}

/// Argmax accuracy of the feedforward pass.
pub fn classify_accuracy<F: Scalar>(
    net: &PCNetwork<F>,
    inputs: &Array2<F>,
    labels: &[usize],
) -> Result<f64> {
    let logits = feedforward_output(net, inputs)?;
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(labels.iter()) {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Infer top-layer codes for bottom-clamped inputs (the folded encoder).
pub fn encode<F: Scalar>(
    net: &PCNetwork<F>,
    inputs: &Array2<F>,
    inf_cfg: &InferenceConfig<F>,
) -> Result<Array2<F>> {
    let clamp = ClampSpec::bottom_only(inputs.clone());
    let run = run_inference(net, &PhiInit::Feedforward, &clamp, inf_cfg)?;
    Ok(run.state.phi[net.top()].clone())
}

/// Generative pass from top-layer codes down to the stimulus layer.
pub fn decode<F: Scalar>(net: &PCNetwork<F>, codes: &Array2<F>) -> Result<Array2<F>> {
    feedforward_output(net, codes)
}

/// Mean squared reconstruction error of the encode/decode round trip.
pub fn reconstruction_mse<F: Scalar>(
    net: &PCNetwork<F>,
    inputs: &Array2<F>,
    inf_cfg: &InferenceConfig<F>,
) -> Result<f64> {
    let codes = encode(net, inputs, inf_cfg)?;
    let recon = decode(net, &codes)?;
    let diff = &recon - inputs;
    let mse: F = (&diff * &diff).mean().unwrap();
    Ok(mse.as_f64())
}

/// Training data plus an optional held-out evaluation split.
#[derive(Debug, Clone)]
pub struct TrainData<F: Scalar> {
    pub inputs: Array2<F>,
    pub labels: Option<Vec<usize>>,
    pub eval_inputs: Option<Array2<F>>,
    pub eval_labels: Option<Vec<usize>>,
}

impl<F: Scalar> TrainData<F> {
    pub fn unsupervised(inputs: Array2<F>) -> Self {
        TrainData {
            inputs,
            labels: None,
            eval_inputs: None,
            eval_labels: None,
        }
    }

    pub fn supervised(inputs: Array2<F>, labels: Vec<usize>) -> Self {
        TrainData {
            inputs,
            labels: Some(labels),
            eval_inputs: None,
            eval_labels: None,
        }
    }
}

fn select_rows<F: Scalar>(m: &Array2<F>, idx: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&m.row(i));
    }
    out
}

/// Shuffled mini-batch EM training; deterministic given the seed.
pub fn train<F: Scalar>(
    net: &PCNetwork<F>,
    data: &TrainData<F>,
    task: Task,
    inf_cfg: &InferenceConfig<F>,
    lrn_cfg: &LearningConfig<F>,
) -> Result<(PCNetwork<F>, TrainReport)> {
    lrn_cfg.validate()?;
    inf_cfg.validate()?;
    let n = data.inputs.nrows();
    if n == 0 {
        return Err(PcError::Config("dataset is empty".into()));
    }
    let top_dim = net.dims()[net.top()];
    let bottom_dim = net.dims()[0];
    match task {
        Task::Classify => {
            if data.inputs.ncols() != top_dim {
                return Err(PcError::shape(
                    "classify input",
                    &[top_dim],
                    &[data.inputs.ncols()],
                ));
            }
            let labels = data
                .labels
                .as_ref()
                .ok_or_else(|| PcError::Config("classification needs labels".into()))?;
            if labels.len() != n {
                return Err(PcError::shape("labels", &[n], &[labels.len()]));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= bottom_dim) {
                return Err(PcError::Config(format!(
                    "label {bad} outside 0..{bottom_dim}"
                )));
            }
        }
        Task::Compress => {
            if data.inputs.ncols() != bottom_dim {
                return Err(PcError::shape(
                    "compress input",
                    &[bottom_dim],
                    &[data.inputs.ncols()],
                ));
            }
        }
    }

    let eval_inputs = data.eval_inputs.as_ref().unwrap_or(&data.inputs);
    let eval_labels = data.eval_labels.as_ref().or(data.labels.as_ref());

    let mut rng = ChaCha8Rng::seed_from_u64(lrn_cfg.seed);
    let mut current = net.clone();
    let mut report = TrainReport::default();
    let ops_task = match task {
        Task::Classify => OpCountTask::Classify,
        Task::Compress => OpCountTask::Compress,
    };

    for epoch in 0..lrn_cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut nfe_sum = 0.0;
        let mut steps_sum = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(lrn_cfg.batch_size) {
            let batch_inputs = select_rows(&data.inputs, chunk);
            let clamp = match task {
                Task::Classify => {
                    let labels = data.labels.as_ref().unwrap();
                    let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    ClampSpec::both(one_hot(&batch_labels, bottom_dim), batch_inputs)
                }
                Task::Compress => ClampSpec::bottom_only(batch_inputs),
            };
            let out = em_step(&current, &clamp, &PhiInit::Feedforward, inf_cfg, lrn_cfg)?;
            nfe_sum += out.mean_nfe.as_f64();
            steps_sum += out.inference_steps;
            batches += 1;
            current = out.net;
        }

        let metric = match task {
            Task::Classify => {
                classify_accuracy(&current, eval_inputs, eval_labels.unwrap())?
            }
            Task::Compress => reconstruction_mse(&current, eval_inputs, inf_cfg)?,
        };
        report.epochs.push(EpochRecord {
            epoch,
            mean_nfe: nfe_sum / batches as f64,
            metric,
            inference_steps: steps_sum,
            seconds: started.elapsed().as_secs_f64(),
            op_count: batches as u64
                * count_ops(&current, ops_task, inf_cfg.max_steps as u64),
        });
    }
    Ok((current, report))
}
