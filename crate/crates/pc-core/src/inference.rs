//! Inference phase: gradient ascent of the free energy over unclamped
//! activity until convergence.

use ndarray::Array2;

use crate::error::{PcError, Result};
use crate::model::{nfe, refresh_state, NetworkState, PCNetwork};
use crate::scalar::Scalar;

/// Euler-step settings for the inference phase.
#[derive(Debug, Clone)]
pub struct InferenceConfig<F: Scalar> {
    /// Step size (learning rate and time resolution merged into one scalar).
    pub step: F,
    pub max_steps: usize,
    /// ∞-norm threshold on the unclamped activity gradients.
    pub grad_tol: F,
    /// Halve the step whenever it would decrease the free energy.
    pub monotone_guard: bool,
}

impl<F: Scalar> Default for InferenceConfig<F> {
    fn default() -> Self {
        InferenceConfig {
            step: F::c(0.1),
            max_steps: 500,
            grad_tol: F::c(1e-6),
            monotone_guard: false,
        }
    }
}

impl<F: Scalar> InferenceConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.step <= F::zero() {
            return Err(PcError::Config("inference step must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(PcError::Config("max_steps must be at least 1".into()));
        }
        if self.grad_tol < F::zero() {
            return Err(PcError::Config("grad_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Values frozen at the ends of the hierarchy during a run.
///
/// `bottom` clamps the stimulus at layer 0 (generative setting); adding
/// `top` clamps the other end as well (supervised setting). Rows are
/// samples.
#[derive(Debug, Clone, Default)]
pub struct ClampSpec<F: Scalar> {
    pub bottom: Option<Array2<F>>,
    pub top: Option<Array2<F>>,
}

impl<F: Scalar> ClampSpec<F> {
    pub fn bottom_only(values: Array2<F>) -> Self {
        ClampSpec {
            bottom: Some(values),
            top: None,
        }
    }

    pub fn both(bottom: Array2<F>, top: Array2<F>) -> Self {
        ClampSpec {
            bottom: Some(bottom),
            top: Some(top),
        }
    }

    pub fn validate(&self, net: &PCNetwork<F>) -> Result<usize> {
        let mut batch = None;
        if let Some(b) = &self.bottom {
            if b.ncols() != net.dims()[0] {
                return Err(PcError::shape(
                    "clamp bottom",
                    &[net.dims()[0]],
                    &[b.ncols()],
                ));
            }
            batch = Some(b.nrows());
        }
        if let Some(t) = &self.top {
            let top = net.top();
            if t.ncols() != net.dims()[top] {
                return Err(PcError::shape(
                    "clamp top",
                    &[net.dims()[top]],
                    &[t.ncols()],
                ));
            }
            match batch {
                Some(b) if b != t.nrows() => {
                    return Err(PcError::shape("clamp batch", &[b], &[t.nrows()]));
                }
                _ => batch = Some(t.nrows()),
            }
        }
        batch.ok_or_else(|| {
            PcError::Config("at least one layer must be clamped during inference".into())
        })
    }
}

/// How the unclamped activity is initialized before the run.
#[derive(Debug, Clone)]
pub enum PhiInit<F: Scalar> {
    /// Top-down generative pass from the topmost known layer: the clamped
    /// top in the supervised setting, the prior mean otherwise.
    Feedforward,
    Zeros,
    Given(Vec<Array2<F>>),
}

/// Result of a full inference run.
#[derive(Debug, Clone)]
pub struct InferenceRun<F: Scalar> {
    pub state: NetworkState<F>,
    pub steps: usize,
    pub nfe: F,
    pub grad_norm: F,
    pub converged: bool,
}

/// Free-energy gradient w.r.t. the activity of one layer, per sample.
///
/// For ℓ ≥ 1 this is `Θ_ℓᵀ(f′(Θ_ℓφ_ℓ) ⊙ ε_{ℓ-1}) − ε_ℓ`; the top layer's
/// ε_L pulls toward the prior, and layer 0 (no layer below) yields `−ε_0`.
pub fn nfe_grad_phi<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
    layer: usize,
) -> Result<Array2<F>> {
    let top = net.top();
    if layer > top {
        return Err(PcError::LayerOutOfRange { layer, max: top });
    }
    if layer == 0 {
        return Ok(state.eps[0].mapv(|v| -v));
    }
    let w = net.weight(layer);
    let z = state.phi[layer].dot(&w.t());
    let fp = net.activation_for(layer).derivative(&z);
    let weighted = &fp * &state.eps[layer - 1];
    Ok(weighted.dot(w) - &state.eps[layer])
}

fn unclamped_grads<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
) -> Result<Vec<Option<Array2<F>>>> {
    let mut grads = Vec::with_capacity(state.clamp.len());
    for layer in 0..state.clamp.len() {
        if state.clamp[layer] {
            grads.push(None);
        } else {
            grads.push(Some(nfe_grad_phi(net, state, layer)?));
        }
    }
    Ok(grads)
}

fn grad_inf_norm<F: Scalar>(grads: &[Option<Array2<F>>]) -> F {
    let mut norm = F::zero();
    for g in grads.iter().flatten() {
        for v in g.iter() {
            let a = v.abs();
            if a > norm {
                norm = a;
            }
        }
    }
    norm
}

fn apply_step<F: Scalar>(
    state: &NetworkState<F>,
    grads: &[Option<Array2<F>>],
    step: F,
) -> NetworkState<F> {
    let mut next = state.clone();
    for (layer, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            next.phi[layer] = &state.phi[layer] + &(g * step);
        }
    }
    next
}

/// One Euler update of every unclamped layer, followed by a refresh.
///
/// With the monotone guard on, the step is halved until the free energy does
/// not drop by more than 1e-12; clamped layers stay bitwise unchanged.
pub fn inference_step<F: Scalar>(
    net: &PCNetwork<F>,
    state: &NetworkState<F>,
    cfg: &InferenceConfig<F>,
) -> Result<NetworkState<F>> {
    let grads = unclamped_grads(net, state)?;
    for (layer, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(PcError::NonFiniteGradient { layer });
            }
        }
    }
    if !cfg.monotone_guard {
        let mut next = apply_step(state, &grads, cfg.step);
        refresh_state(net, &mut next)?;
        return Ok(next);
    }

    let before = nfe(net, state, true)?;
    let slack = F::c(1e-12);
    let mut step = cfg.step;
    for _ in 0..60 {
        let mut next = apply_step(state, &grads, step);
        refresh_state(net, &mut next)?;
        if nfe(net, &next, true)? >= before - slack {
            return Ok(next);
        }
        step = step * F::c(0.5);
    }
    // Step underflowed: a zero move can never decrease the objective.
    Ok(state.clone())
}

fn init_state<F: Scalar>(
    net: &PCNetwork<F>,
    init: &PhiInit<F>,
    clamp: &ClampSpec<F>,
    batch: usize,
) -> Result<NetworkState<F>> {
    let top = net.top();
    let mut state = NetworkState::zeros(net, batch);
    if let Some(b) = &clamp.bottom {
        state.phi[0] = b.clone();
        state.clamp[0] = true;
    }
    if let Some(t) = &clamp.top {
        state.phi[top] = t.clone();
        state.clamp[top] = true;
    }
    match init {
        PhiInit::Zeros => {}
        PhiInit::Feedforward => {
            if !state.clamp[top] {
                let mut prior = Array2::zeros((batch, net.dims()[top]));
                for mut row in prior.rows_mut() {
                    row.assign(net.prior_mean());
                }
                state.phi[top] = prior;
            }
            for layer in (0..top).rev() {
                if state.clamp[layer] {
                    continue;
                }
                let z = state.phi[layer + 1].dot(&net.weight(layer + 1).t());
                state.phi[layer] = net.activation_for(layer + 1).apply(&z);
            }
        }
        PhiInit::Given(phis) => {
            for (layer, p) in phis.iter().enumerate() {
                if layer > top {
                    return Err(PcError::LayerOutOfRange { layer, max: top });
                }
                if !state.clamp[layer] {
                    if p.dim() != state.phi[layer].dim() {
                        return Err(PcError::shape(
                            "phi init",
                            &[state.phi[layer].nrows(), state.phi[layer].ncols()],
                            &[p.nrows(), p.ncols()],
                        ));
                    }
                    state.phi[layer] = p.clone();
                }
            }
        }
    }
    refresh_state(net, &mut state)?;
    Ok(state)
}

/// Run inference to convergence (∞-norm of unclamped gradients below
/// `grad_tol`) or for `max_steps` Euler updates.
pub fn run_inference<F: Scalar>(
    net: &PCNetwork<F>,
    init: &PhiInit<F>,
    clamp: &ClampSpec<F>,
    cfg: &InferenceConfig<F>,
) -> Result<InferenceRun<F>> {
    run_inference_traced(net, init, clamp, cfg, |_, _, _| {})
}

/// Same as [`run_inference`], invoking `trace(step, nfe, grad_norm)` after
/// every accepted update (and once for the initial state).
pub fn run_inference_traced<F: Scalar>(
    net: &PCNetwork<F>,
    init: &PhiInit<F>,
    clamp: &ClampSpec<F>,
    cfg: &InferenceConfig<F>,
    mut trace: impl FnMut(usize, F, F),
) -> Result<InferenceRun<F>> {
    cfg.validate()?;
    let batch = clamp.validate(net)?;
    let mut state = init_state(net, init, clamp, batch)?;

    let mut steps = 0;
    let mut grad_norm;
    loop {
        let grads = unclamped_grads(net, &state)?;
        grad_norm = grad_inf_norm(&grads);
        trace(steps, nfe(net, &state, true)?, grad_norm);
        if grad_norm < cfg.grad_tol || steps >= cfg.max_steps {
            break;
        }
        state = inference_step(net, &state, cfg)?;
        steps += 1;
    }
    let energy = nfe(net, &state, true)?;
    Ok(InferenceRun {
        converged: grad_norm < cfg.grad_tol,
        state,
        steps,
        nfe: energy,
        grad_norm,
    })
}
