//! Deterministic MLP policies over flat parameter vectors.
//!
//! A policy is `tanh ∘ affine ∘ elu ∘ … ∘ affine ∘ normalize`. The input
//! normalization has no trainable parameters: it standardizes each state
//! feature with the mean and standard deviation of a uniform distribution over
//! the declared observation bounds, so behavior is a pure function of the
//! weights and the state.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::envs::{Controller, EnvKind, Environment};
use crate::error::{check_len, Error, Result};
use crate::layers::Activation;
use crate::linalg::Matrix;
use crate::mlp::{DenseLayout, ForwardCache, Scratch};

/// A policy's weights, laid out as described in [`crate::mlp`].
pub type FlatParams = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PolicySizePreset {
    /// One hidden layer of 4.
    Small,
    /// Two hidden layers of 32.
    Medium,
    /// Hidden layers of 400 and 300.
    Large,
    /// Two hidden layers of 64, used with the arm.
    MediumRc,
}

impl PolicySizePreset {
    pub fn hidden(self) -> &'static [usize] {
        match self {
            PolicySizePreset::Small => &[4],
            PolicySizePreset::Medium => &[32, 32],
            PolicySizePreset::Large => &[400, 300],
            PolicySizePreset::MediumRc => &[64, 64],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            "medium-rc" => Ok(Self::MediumRc),
            _ => Err(Error::Config(alloc::format!(
                "unknown policy preset '{s}' (expected small, medium, large or medium-rc)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
            Self::MediumRc => "medium-rc",
        }
    }

    /// The preset the experiments pair with each environment by default.
    pub fn default_for(env: EnvKind) -> Self {
        match env {
            EnvKind::MountainCar => Self::Medium,
            EnvKind::Reacher => Self::MediumRc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpArchitecture {
    hidden: Vec<usize>,
    state_low: Vec<f64>,
    state_high: Vec<f64>,
    norm_mean: Vec<f64>,
    norm_inv_std: Vec<f64>,
    layout: DenseLayout,
}

impl MlpArchitecture {
    /// Input dimension is `state_low.len()`.
    pub fn new(
        hidden: Vec<usize>,
        output_dim: usize,
        state_low: Vec<f64>,
        state_high: Vec<f64>,
    ) -> Result<Self> {
        check_len("state bounds", state_low.len(), state_high.len())?;
        if state_low.is_empty() {
            return Err(Error::Config("policy input dimension must be at least 1".into()));
        }
        let (norm_mean, norm_inv_std) = normalization_constants(&state_low, &state_high)?;
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(state_low.len());
        dims.extend_from_slice(&hidden);
        dims.push(output_dim);
        let layout = DenseLayout::new(dims, Activation::Elu, Activation::Tanh)?;
        Ok(Self {
            hidden,
            state_low,
            state_high,
            norm_mean,
            norm_inv_std,
            layout,
        })
    }

    /// Architecture sized for `env`'s observation and action spaces.
    pub fn for_env(env: &Environment, hidden: Vec<usize>) -> Result<Self> {
        let (lo, hi) = env.obs_bounds();
        Self::new(hidden, env.act_dim(), lo, hi)
    }

    pub fn preset(env: &Environment, preset: PolicySizePreset) -> Result<Self> {
        Self::for_env(env, preset.hidden().to_vec())
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn state_bounds(&self) -> (&[f64], &[f64]) {
        (&self.state_low, &self.state_high)
    }

    pub fn layout(&self) -> &DenseLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count()
    }

    fn normalize_into(&self, s: &[f64], out: &mut [f64]) {
        for (((o, &x), m), k) in out
            .iter_mut()
            .zip(s)
            .zip(&self.norm_mean)
            .zip(&self.norm_inv_std)
        {
            *o = (x - m) * k;
        }
    }
}

/// `P = Σ (in·out + out)` over the layers of `arch`.
pub fn param_count(arch: &MlpArchitecture) -> usize {
    arch.param_count()
}

fn normalization_constants(lo: &[f64], hi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let sqrt12 = libm::sqrt(12.0);
    let mut mean = Vec::with_capacity(lo.len());
    let mut inv_std = Vec::with_capacity(lo.len());
    for (&l, &h) in lo.iter().zip(hi) {
        if !(l < h) || !l.is_finite() || !h.is_finite() {
            return Err(Error::Config(alloc::format!(
                "degenerate state bounds [{l}, {h}]"
            )));
        }
        mean.push(0.5 * (l + h));
        inv_std.push(sqrt12 / (h - l));
    }
    Ok((mean, inv_std))
}

/// Standardizes `s` with the moments of `U(lo, hi)`: mean `(lo+hi)/2`,
/// standard deviation `(hi−lo)/√12`.
pub fn normalize_state(lo: &[f64], hi: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_len("normalize_state bounds", lo.len(), hi.len())?;
    check_len("normalize_state input", lo.len(), s.len())?;
    let (mean, inv_std) = normalization_constants(lo, hi)?;
    Ok(s.iter()
        .zip(mean.iter().zip(&inv_std))
        .map(|(x, (m, k))| (x - m) * k)
        .collect())
}

/// A policy bound to its weights, with reusable buffers. Implements [`Controller`].
pub struct Policy<'a> {
    arch: &'a MlpArchitecture,
    params: &'a [f64],
    input: Vec<f64>,
    scratch: Scratch,
}

impl<'a> Policy<'a> {
    pub fn new(arch: &'a MlpArchitecture, params: &'a [f64]) -> Result<Self> {
        arch.layout.check_params(params)?;
        Ok(Self {
            arch,
            params,
            input: vec![0.0; arch.input_dim()],
            scratch: Scratch::default(),
        })
    }

    #[inline]
    pub fn act_into(&mut self, s: &[f64], action: &mut [f64]) {
        self.arch.normalize_into(s, &mut self.input);
        self.arch
            .layout
            .forward(self.params, &self.input, &mut self.scratch, action);
    }
}

impl Controller for Policy<'_> {
    fn obs_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn act_dim(&self) -> usize {
        self.arch.output_dim()
    }

    fn act(&mut self, obs: &[f64], action: &mut [f64]) {
        self.act_into(obs, action);
    }
}

pub fn act(arch: &MlpArchitecture, params: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check_len("act state", arch.input_dim(), s.len())?;
    let mut out = vec![0.0; arch.output_dim()];
    Policy::new(arch, params)?.act_into(s, &mut out);
    Ok(out)
}

/// Actions for every row of `states` (`M × |S|` → `M × |A|`).
pub fn act_batch(arch: &MlpArchitecture, params: &[f64], states: &Matrix) -> Result<Matrix> {
    check_len("act_batch states", arch.input_dim(), states.cols())?;
    let mut policy = Policy::new(arch, params)?;
    let mut out = Matrix::zeros(states.rows(), arch.output_dim());
    for i in 0..states.rows() {
        policy.act_into(states.row(i), out.row_mut(i));
    }
    Ok(out)
}

/// Reusable buffers for [`backprop_weights_into`].
#[derive(Debug, Default, Clone)]
pub struct BackpropWorkspace {
    input: Vec<f64>,
    cache: ForwardCache,
}

/// Gradient of `Σᵢⱼ grad_actions[i][j] · π_θ(states[i])[j]` with respect to θ.
pub fn backprop_weights(
    arch: &MlpArchitecture,
    params: &[f64],
    states: &Matrix,
    grad_actions: &Matrix,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; arch.param_count()];
    backprop_weights_into(
        arch,
        params,
        states,
        grad_actions,
        &mut BackpropWorkspace::default(),
        &mut grad,
    )?;
    Ok(grad)
}

/// Same as [`backprop_weights`], accumulating into `grad`.
pub fn backprop_weights_into(
    arch: &MlpArchitecture,
    params: &[f64],
    states: &Matrix,
    grad_actions: &Matrix,
    ws: &mut BackpropWorkspace,
    grad: &mut [f64],
) -> Result<()> {
    arch.layout.check_params(params)?;
    check_len("backprop_weights grad", arch.param_count(), grad.len())?;
    check_len("backprop_weights states", arch.input_dim(), states.cols())?;
    check_len("backprop_weights grad_actions rows", states.rows(), grad_actions.rows())?;
    check_len("backprop_weights grad_actions cols", arch.output_dim(), grad_actions.cols())?;
    ws.input.resize(arch.input_dim(), 0.0);
    for i in 0..states.rows() {
        let g = grad_actions.row(i);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        arch.normalize_into(states.row(i), &mut ws.input);
        arch.layout.forward_cached(params, &ws.input, &mut ws.cache);
        arch.layout.backward(params, &mut ws.cache, g, grad, None);
    }
    Ok(())
}

/// Draws every weight independently from `U(−scale, scale)`.
pub fn sample_random(arch: &MlpArchitecture, rng: &mut impl Rng, scale: f64) -> Result<FlatParams> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(alloc::format!("sampling scale must be positive, got {scale}")));
    }
    Ok((0..arch.param_count())
        .map(|_| rng.random_range(-scale..scale))
        .collect())
}
