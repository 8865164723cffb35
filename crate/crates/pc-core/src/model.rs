//! Hierarchical Gaussian generative model, its state, and the free-energy
//! objective.
//!
//! Layer 0 is the hierarchy bottom (the stimulus), layer `L` the top (the
//! prior). Weight matrix `Θ_ℓ` (ℓ = 1..L) maps layer ℓ activity down to the
//! prediction for layer ℓ−1: `μ_{ℓ-1} = f(Θ_ℓ φ_ℓ)`. Covariances are
//! diagonal, stored as per-layer variance vectors with a hard floor.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::error::{PcError, Result};
use crate::scalar::Scalar;

/// Hard lower bound on variances; keeps precisions finite.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// The generative model: layer widths, top-down weights, diagonal
/// precisions, and the top-layer prior.
#[derive(Debug, Clone)]
pub struct PCNetwork<F: Scalar> {
    dims: Vec<usize>,
    /// weights[ℓ-1] = Θ_ℓ, shape d_{ℓ-1} × d_ℓ.
    weights: Vec<Array2<F>>,
    /// variances[ℓ] = diag Σ_ℓ for ℓ = 0..L; index L is the prior covariance.
    variances: Vec<Array1<F>>,
    prior_mean: Array1<F>,
    activation: Activation,
    /// When set, the map into layer 0 uses the identity activation.
    output_identity: bool,
    sigma_floor: F,
}

/// Per-sample variational state: activity, cached predictions and errors.
///
/// All per-layer arrays are batched, one row per sample.
#[derive(Debug, Clone)]
pub struct NetworkState<F: Scalar> {
    /// Variational parameters φ_ℓ, shape (batch, d_ℓ).
    pub phi: Vec<Array2<F>>,
    /// Cached predictions μ_ℓ; μ_L is the prior mean.
    pub mu: Vec<Array2<F>>,
    /// Cached error nodes ε_ℓ = Σ_ℓ⁻¹(φ_ℓ − μ_ℓ).
    pub eps: Vec<Array2<F>>,
    /// Layers whose φ is frozen during inference.
    pub clamp: Vec<bool>,
}

/// Which experiment drives the op-count model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCountTask {
    /// Both ends clamped; interior layers relax.
    Classify,
    /// Only the bottom clamped; top and interior layers relax.
    Compress,
}

impl<F: Scalar> PCNetwork<F> {
    /// Network with zero weights, unit variances and zero prior mean.
    pub fn new(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(PcError::Config(
                "a network needs at least two layers".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(PcError::Config("layer widths must be positive".into()));
        }
        let levels = dims.len() - 1;
        let weights = (1..=levels)
            .map(|l| Array2::zeros((dims[l - 1], dims[l])))
            .collect();
        let variances = dims.iter().map(|&d| Array1::ones(d)).collect();
        let prior_mean = Array1::zeros(dims[levels]);
        Ok(Self {
            dims,
            weights,
            variances,
            prior_mean,
            activation,
            output_identity: true,
            sigma_floor: F::c(SIGMA_FLOOR),
        })
    }

    /// Seeded scaled-uniform initialization, scale 1/√fan-in.
    ///
    /// Shared with the BP reference so both models start from identical
    /// weights.
    pub fn random_init(dims: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::new(dims, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let fan_in = w.ncols();
            let scale = 1.0 / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = F::c(rng.gen_range(-scale..scale));
            }
        }
        Ok(net)
    }

    /// Top layer index L.
    pub fn top(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Θ_ℓ for ℓ = 1..=L.
    pub fn weight(&self, layer: usize) -> &Array2<F> {
        &self.weights[layer - 1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<F> {
        &mut self.weights[layer - 1]
    }

    pub fn set_weight(&mut self, layer: usize, w: Array2<F>) -> Result<()> {
        let expect = (self.dims[layer - 1], self.dims[layer]);
        if w.dim() != expect {
            return Err(PcError::shape(
                "set_weight",
                &[expect.0, expect.1],
                &[w.nrows(), w.ncols()],
            ));
        }
        self.weights[layer - 1] = w;
        Ok(())
    }

    /// Diagonal of Σ_ℓ for ℓ = 0..=L (index L is the prior covariance Σ̄).
    pub fn variance(&self, layer: usize) -> &Array1<F> {
        &self.variances[layer]
    }

    pub fn set_variance(&mut self, layer: usize, var: Array1<F>) -> Result<()> {
        if var.len() != self.dims[layer] {
            return Err(PcError::shape(
                "set_variance",
                &[self.dims[layer]],
                &[var.len()],
            ));
        }
        if let Some(v) = var.iter().find(|v| **v <= F::zero()) {
            return Err(PcError::Precision {
                layer,
                value: v.as_f64(),
            });
        }
        self.variances[layer] = var;
        Ok(())
    }

    /// Uniform variance at one layer.
    pub fn set_uniform_variance(&mut self, layer: usize, value: F) -> Result<()> {
        let d = self.dims[layer];
        self.set_variance(layer, Array1::from_elem(d, value))
    }

    pub fn prior_mean(&self) -> &Array1<F> {
        &self.prior_mean
    }

    pub fn set_prior_mean(&mut self, mean: Array1<F>) -> Result<()> {
        let top = self.top();
        if mean.len() != self.dims[top] {
            return Err(PcError::shape(
                "set_prior_mean",
                &[self.dims[top]],
                &[mean.len()],
            ));
        }
        self.prior_mean = mean;
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_identity(&self) -> bool {
        self.output_identity
    }

    pub fn set_output_identity(&mut self, on: bool) {
        self.output_identity = on;
    }

    pub fn sigma_floor(&self) -> F {
        self.sigma_floor
    }

    pub fn set_sigma_floor(&mut self, floor: F) -> Result<()> {
        if floor <= F::zero() {
            return Err(PcError::Config("sigma floor must be positive".into()));
        }
        self.sigma_floor = floor;
        Ok(())
    }

    /// Activation used by the generative map Θ_ℓ (into layer ℓ−1).
    pub fn activation_for(&self, layer: usize) -> Activation {
        if layer == 1 && self.output_identity {
            Activation::Identity
        } else {
            self.activation
        }
    }

    fn check_variances(&self) -> Result<()> {
        for (layer, var) in self.variances.iter().enumerate() {
            if let Some(v) = var.iter().find(|v| **v <= F::zero()) {
                return Err(PcError::Precision {
                    layer,
                    value: v.as_f64(),
                });
            }
        }
        Ok(())
    }

    /// Total weight count Σ d_{ℓ-1}·d_ℓ, used by the op-count model.
    pub fn weight_count(&self) -> u64 {
        self.weights.iter().map(|w| w.len() as u64).sum()
    }

    /// FNV-1a over the weight bit patterns; used to log shared-init equality.
    pub fn weight_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for w in &self.weights {
            for v in w.iter() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// One top-down generative map: `f(Θ φ)`.
pub fn layer_prediction<F: Scalar>(
    weights: &Array2<F>,
    phi_above: &Array1<F>,
    act: Activation,
) -> Result<Array1<F>> {
    if weights.ncols() != phi_above.len() {
        return Err(PcError::shape(
            "layer_prediction",
            &[weights.nrows(), weights.ncols()],
            &[phi_above.len()],
        ));
    }
    Ok(act.apply1(&weights.dot(phi_above)))
}

impl<F: Scalar> NetworkState<F> {
    /// All-zero activity for `batch` samples; nothing clamped.
    pub fn zeros(net: &PCNetwork<F>, batch: usize) -> Self {
        let phi: Vec<_> = net
            .dims()
            .iter()
            .map(|&d| Array2::zeros((batch, d)))
            .collect();
        let mu = phi.clone();
        let eps = phi.clone();
        NetworkState {
            phi,
            mu,
            eps,
            clamp: vec![false; net.dims().len()],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.phi[0].nrows()
    }

    pub fn check_dims(&self, net: &PCNetwork<F>) -> Result<()> {
        let got: Vec<usize> = self.phi.iter().map(|p| p.ncols()).collect();
        if got != net.dims() {
            return Err(PcError::shape("state dims", net.dims(), &got));
        }
        Ok(())
    }
}

/// Recompute cached predictions and errors from the current activity.
///
/// Predictions run top-down (μ_L is the prior mean); φ is untouched, so the
/// call is idempotent.
pub fn refresh_state<F: Scalar>(net: &PCNetwork<F>, state: &mut NetworkState<F>) -> Result<()> {
    state.check_dims(net)?;
    net.check_variances()?;
    let top = net.top();
    let batch = state.batch_size();

    let mut prior = Array2::zeros((batch, net.dims()[top]));
    for mut row in prior.rows_mut() {
        row.assign(net.prior_mean());
    }
    state.mu[top] = prior;

    for layer in (0..top).rev() {
        let z = state.phi[layer + 1].dot(&net.weight(layer + 1).t());
        state.mu[layer] = net.activation_for(layer + 1).apply(&z);
    }
    for layer in 0..=top {
        let var = net.variance(layer);
        state.eps[layer] = (&state.phi[layer] - &state.mu[layer]) / var;
    }
    Ok(())
}

/// Negative free energy of the state, mean over the batch.
///
/// With `drop_constants` this is
/// `−½ Σ_ℓ [ln|Σ_ℓ| + (φ_ℓ−μ_ℓ)ᵀΣ_ℓ⁻¹(φ_ℓ−μ_ℓ)]`; without, the
/// `−(d_ℓ/2)·ln 2π` terms are added so the value equals the sum of Gaussian
/// log-densities of the generative model evaluated at the activity.
pub fn nfe<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
    drop_constants: bool,
) -> Result<F> {
    state.check_dims(net)?;
    net.check_variances()?;
    let half = F::c(0.5);
    let batch = state.batch_size();
    let mut total = F::zero();
    for layer in 0..=net.top() {
        let var = net.variance(layer);
        let log_det: F = var.iter().map(|v| v.ln()).sum();
        let resid = &state.phi[layer] - &state.mu[layer];
        // per-sample quadratic form under the diagonal precision
        let weighted = &resid * &resid / var;
        let quad = weighted.sum_axis(Axis(1));
        for q in quad.iter() {
            total = total - half * (log_det + *q);
        }
        if !drop_constants {
            let d = F::c(net.dims()[layer] as f64);
            let two_pi = F::c(std::f64::consts::TAU);
            total = total - half * d * two_pi.ln() * F::c(batch as f64);
        }
    }
    Ok(total / F::c(batch as f64))
}

/// Multiply-accumulate count for one full parameter update under the
/// documented counting model.
///
/// Let `W = Σ_ℓ d_{ℓ-1}·d_ℓ` and `U` the weight count of the maps whose
/// source layer is unclamped for `task` (classify clamps both ends, compress
/// only the bottom). The model charges:
///
/// - `W` for the initial top-down pass,
/// - `W + U` per inference step (prediction refresh plus error backprop to
///   each unclamped layer),
/// - `2·W` for the learning update (outer products plus the weight step).
pub fn count_ops<F: Scalar>(net: &PCNetwork<F>, task: OpCountTask, steps: u64) -> u64 {
    let total: u64 = net.weight_count();
    let top = net.top();
    let unclamped: u64 = (1..=top)
        .filter(|&l| match task {
            OpCountTask::Classify => l < top,
            OpCountTask::Compress => true,
        })
        .map(|l| (net.dims()[l - 1] * net.dims()[l]) as u64)
        .sum();
    total + steps * (total + unclamped) + 2 * total
}

/// Gradient of the Gaussian log-density w.r.t. a full covariance matrix:
/// `½(εεᵀ − Σ⁻¹)` with `ε = Σ⁻¹(x − μ)`.
///
/// Hierarchical layers are diagonal-only; this full-matrix form is used by
/// the filtering module and its gradient tests.
pub fn full_covariance_grad<F: Scalar>(
    residual: &Array1<F>,
    sigma: &Array2<F>,
) -> Result<Array2<F>> {
    let inv = crate::linalg::inverse(sigma)?;
    let eps = inv.dot(residual);
    let d = residual.len();
    let mut outer = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            outer[[i, j]] = eps[i] * eps[j];
        }
    }
    Ok((outer - inv) * F::c(0.5))
}
