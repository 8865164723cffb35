//! From-scratch backpropagation reference and the PC-vs-BP weight-update
//! comparison.
//!
//! The MLP uses the conventional increasing layer index (`y_{ℓ+1} =
//! f(W_ℓ y_ℓ)`); conversion from a [`PCNetwork`] flips the index so that
//! `W_ℓ = Θ_{L−ℓ}` and the BP forward pass equals the PC top-down
//! generative pass bitwise.

use ndarray::{Array1, Array2};

use crate::activation::Activation;
use crate::error::{PcError, Result};
use crate::inference::{run_inference, ClampSpec, InferenceConfig, PhiInit};
use crate::learning::nfe_grad_theta;
use crate::model::PCNetwork;
use crate::scalar::Scalar;

/// Weights-shared feedforward network with a least-squares loss.
#[derive(Debug, Clone)]
pub struct MLPReference<F: Scalar> {
    /// weights[ℓ] = W_ℓ, mapping layer ℓ to ℓ+1.
    weights: Vec<Array2<F>>,
    activation: Activation,
    /// When set, the final map uses the identity activation.
    output_identity: bool,
}

/// Activations and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<F: Scalar> {
    /// y_0 = input, y_L = output.
    pub activations: Vec<Array1<F>>,
    /// z_{ℓ+1} = W_ℓ y_ℓ.
    pub pre_activations: Vec<Array1<F>>,
}

/// Per-layer agreement between rescaled PC updates and BP gradients.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub lambda: f64,
    /// BP layer index of the compared weight matrix.
    pub layer: usize,
    pub cosine: f64,
    pub rel_mag_err: f64,
    pub inference_steps: usize,
    pub converged: bool,
}

impl<F: Scalar> MLPReference<F> {
    pub fn new(weights: Vec<Array2<F>>, activation: Activation, output_identity: bool) -> Result<Self> {
        for pair in weights.windows(2) {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(PcError::shape(
                    "mlp layer chain",
                    &[pair[0].nrows(), pair[0].ncols()],
                    &[pair[1].nrows(), pair[1].ncols()],
                ));
            }
        }
        if weights.is_empty() {
            return Err(PcError::Config("mlp needs at least one layer".into()));
        }
        Ok(MLPReference {
            weights,
            activation,
            output_identity,
        })
    }

    /// Index flip from the top-down PC convention: `W_ℓ = Θ_{L−ℓ}`.
    pub fn from_pc(net: &PCNetwork<F>) -> Self {
        let top = net.top();
        let weights = (0..top).map(|l| net.weight(top - l).clone()).collect();
        MLPReference {
            weights,
            activation: net.activation(),
            output_identity: net.output_identity(),
        }
    }

    /// Inverse of [`from_pc`]; together they form a bijection on weights.
    pub fn to_pc(&self) -> Result<PCNetwork<F>> {
        let depth = self.weights.len();
        let mut dims = Vec::with_capacity(depth + 1);
        // BP layer ℓ width becomes PC layer L−ℓ width
        dims.push(self.weights[depth - 1].nrows());
        for l in (0..depth).rev() {
            dims.push(self.weights[l].ncols());
        }
        let mut net = PCNetwork::new(dims, self.activation)?;
        net.set_output_identity(self.output_identity);
        for l in 0..depth {
            net.set_weight(depth - l, self.weights[l].clone())?;
        }
        Ok(net)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Array2<F> {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<F> {
        &mut self.weights[layer]
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.depth() - 1].nrows()
    }

    fn activation_for(&self, map: usize) -> Activation {
        if map == self.depth() - 1 && self.output_identity {
            Activation::Identity
        } else {
            self.activation
        }
    }

    /// Forward pass, retaining all intermediate values.
    pub fn forward(&self, x: &Array1<F>) -> Result<ForwardPass<F>> {
        if x.len() != self.input_dim() {
            return Err(PcError::shape("bp_forward", &[self.input_dim()], &[x.len()]));
        }
        let mut activations = vec![x.clone()];
        let mut pre_activations = Vec::with_capacity(self.depth());
        for (l, w) in self.weights.iter().enumerate() {
            // row-vector × Wᵀ keeps the summation order identical to the
            // batched PC generative pass, making the two passes bitwise equal
            let y = activations.last().unwrap();
            let row = y.clone().into_shape_with_order((1, y.len())).unwrap();
            let z = row
                .dot(&w.t())
                .into_shape_with_order(w.nrows())
                .unwrap();
            activations.push(self.activation_for(l).apply1(&z));
            pre_activations.push(z);
        }
        Ok(ForwardPass {
            activations,
            pre_activations,
        })
    }

    /// Least-squares loss `½‖y_L − ŷ‖²` at the forward pass output.
    pub fn loss(&self, fwd: &ForwardPass<F>, target: &Array1<F>) -> F {
        let diff = fwd.activations.last().unwrap() - target;
        diff.iter().map(|v| *v * *v).sum::<F>() * F::c(0.5)
    }

    /// Loss gradients w.r.t. every weight matrix via the error recursion
    /// `δ_{ℓ+1} = f′(z_{ℓ+1}) ⊙ Wᵀδ` seeded at the output residual.
    pub fn backward(&self, fwd: &ForwardPass<F>, target: &Array1<F>) -> Result<Vec<Array2<F>>> {
        let depth = self.depth();
        if target.len() != self.output_dim() {
            return Err(PcError::shape(
                "bp_backward",
                &[self.output_dim()],
                &[target.len()],
            ));
        }
        // delta[l] = ∂L/∂z_{l+1}
        let mut grads = vec![Array2::zeros((0, 0)); depth];
        let out_residual = fwd.activations[depth].clone() - target;
        let mut delta = &self
            .activation_for(depth - 1)
            .derivative1(&fwd.pre_activations[depth - 1])
            * &out_residual;
        for l in (0..depth).rev() {
            let y_below = &fwd.activations[l];
            let mut g = Array2::zeros((delta.len(), y_below.len()));
            for i in 0..delta.len() {
                for j in 0..y_below.len() {
                    g[[i, j]] = delta[i] * y_below[j];
                }
            }
            grads[l] = g;
            if l > 0 {
                let back = self.weights[l].t().dot(&delta);
                delta = &self
                    .activation_for(l - 1)
                    .derivative1(&fwd.pre_activations[l - 1])
                    * &back;
            }
        }
        Ok(grads)
    }
}

/// Cosine of two matrices viewed as flat vectors; two (near-)zero vectors
/// agree by convention.
pub fn matrix_cosine<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> f64 {
    let na: f64 = a.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    if na < 1e-300 && nb < 1e-300 {
        return 1.0;
    }
    if na < 1e-300 || nb < 1e-300 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x.as_f64() * y.as_f64())
        .sum();
    dot / (na * nb)
}

fn frobenius<F: Scalar>(a: &Array2<F>) -> f64 {
    a.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
}

/// Precision-rescaling comparison between PC weight updates and BP
/// gradients on one (input, target) pair.
///
/// For each λ the stimulus-layer covariance is set to λ·I (all others stay
/// identity), supervised inference runs from the feedforward init, and the
/// λ-rescaled PC update direction is compared per layer against the BP
/// descent direction.
pub fn compare_pc_bp<F: Scalar>(
    net: &PCNetwork<F>,
    input: &Array1<F>,
    target: &Array1<F>,
    lambdas: &[f64],
    inf_cfg: &InferenceConfig<F>,
) -> Result<Vec<ComparisonRow>> {
    let mlp = MLPReference::from_pc(net);
    let fwd = mlp.forward(input)?;
    let bp_grads = mlp.backward(&fwd, target)?;
    let top = net.top();

    let input_row = input
        .clone()
        .into_shape_with_order((1, input.len()))
        .expect("row reshape");
    let target_row = target
        .clone()
        .into_shape_with_order((1, target.len()))
        .expect("row reshape");

    let mut rows = Vec::new();
    for &lambda in lambdas {
        let mut pc = net.clone();
        for l in 0..=top {
            pc.set_uniform_variance(l, F::one())?;
        }
        pc.set_uniform_variance(0, F::c(lambda))?;

        let clamp = ClampSpec::both(target_row.clone(), input_row.clone());
        let run = run_inference(&pc, &PhiInit::Feedforward, &clamp, inf_cfg)?;
        for pc_layer in 1..=top {
            let pc_update = nfe_grad_theta(&pc, &run.state, pc_layer)? * F::c(lambda);
            // PC ascends the free energy, BP descends the loss
            let bp_dir = bp_grads[top - pc_layer].mapv(|v| -v);
            let n_bp = frobenius(&bp_dir);
            let n_pc = frobenius(&pc_update);
            let rel_mag_err = if n_bp < 1e-300 && n_pc < 1e-300 {
                0.0
            } else if n_bp < 1e-300 {
                f64::INFINITY
            } else {
                (n_pc - n_bp).abs() / n_bp
            };
            rows.push(ComparisonRow {
                lambda,
                layer: top - pc_layer,
                cosine: matrix_cosine(&pc_update, &bp_dir),
                rel_mag_err,
                inference_steps: run.steps,
                converged: run.converged,
            });
        }
    }
    Ok(rows)
}
