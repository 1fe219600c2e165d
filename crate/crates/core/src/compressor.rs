//! Behavioral autoencoder over flat policy weights.
//!
//! Encoder `P → 25 → 10 → k` and decoder `k → 10 → 25 → P`, ELU on hidden
//! layers, linear latent and output layers. Inputs are standardized per
//! parameter; decoder outputs are mapped back to parameter scale with the same
//! statistics.
//!
//! Training minimizes the mean squared difference between the actions of each
//! policy and the actions of its reconstruction on a random subset of probe
//! states. The gradient flows from the action error through the reconstructed
//! policy's weights into the decoder and encoder; the original policy's actions
//! are treated as constants.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{PolicyDataset, StateProbe};
use crate::error::{check_len, Error, Result};
use crate::layers::Activation;
use crate::linalg::{ensure_finite, Matrix};
use crate::mlp::{DenseLayout, ForwardCache, Scratch};
use crate::optim::{AdamState, PlateauScheduler};
use crate::par;
use crate::policy::{FlatParams, MlpArchitecture, Policy};
use crate::seed::{rng_for, Rng as SeedRng};
use crate::stats;

pub const DEFAULT_HIDDEN: [usize; 2] = [25, 10];
pub const STD_FLOOR: f64 = 1e-8;

pub type LatentCode = Vec<f64>;

/// Per-parameter standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            std: vec![1.0; p],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(t, (m, s))| (t - m) / s)
            .collect()
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Column-wise mean and (population) standard deviation of the parameter
/// matrix, with the deviation floored at [`STD_FLOOR`].
pub fn standardize_fit(params: &Matrix) -> Result<Standardizer> {
    if params.rows() < 2 {
        return Err(Error::Usage("standardization needs at least two policies".into()));
    }
    let (n, p) = params.shape();
    let mut mean = vec![0.0; p];
    for r in params.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for r in params.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .map(|s| libm::sqrt(s / n as f64).max(STD_FLOOR))
        .collect();
    Ok(Standardizer { mean, std })
}

/// Trained (or initialized) autoencoder plus everything needed to use it alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    policy_arch: MlpArchitecture,
    latent_dim: usize,
    hidden: Vec<usize>,
    standardizer: Standardizer,
    encoder: DenseLayout,
    decoder: DenseLayout,
    /// Encoder parameters followed by decoder parameters.
    weights: Vec<f64>,
    /// Median of the training set's latent codes; the default PGPE start.
    latent_center: Vec<f64>,
}

fn layouts(p: usize, hidden: &[usize], k: usize) -> Result<(DenseLayout, DenseLayout)> {
    if k == 0 {
        return Err(Error::Config("latent dimension must be at least 1".into()));
    }
    let mut enc = vec![p];
    enc.extend_from_slice(hidden);
    enc.push(k);
    let dec: Vec<usize> = enc.iter().rev().copied().collect();
    Ok((
        DenseLayout::new(enc, Activation::Elu, Activation::Identity)?,
        DenseLayout::new(dec, Activation::Elu, Activation::Identity)?,
    ))
}

impl Autoencoder {
    /// Fresh weights: uniform with fan-in bounds `√(6/fan_in)` for layers
    /// followed by ELU and `√(3/fan_in)` for the linear ones; zero biases.
    pub fn initialize(
        policy_arch: MlpArchitecture,
        latent_dim: usize,
        hidden: Vec<usize>,
        standardizer: Standardizer,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let p = policy_arch.param_count();
        check_len("standardizer", p, standardizer.len())?;
        let (encoder, decoder) = layouts(p, &hidden, latent_dim)?;
        let mut weights = Vec::with_capacity(encoder.param_count() + decoder.param_count());
        for layout in [&encoder, &decoder] {
            for l in 0..layout.num_layers() {
                let fan_in = layout.dims()[l];
                let fan_out = layout.dims()[l + 1];
                let gain = if layout.activation(l) == Activation::Elu { 6.0 } else { 3.0 };
                let bound = libm::sqrt(gain / fan_in as f64);
                weights.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
                weights.extend(core::iter::repeat_n(0.0, fan_out));
            }
        }
        Ok(Self {
            policy_arch,
            latent_dim,
            hidden,
            standardizer,
            encoder,
            decoder,
            weights,
            latent_center: vec![0.0; latent_dim],
        })
    }

    /// Reassembles an autoencoder from stored parts.
    pub fn from_parts(
        policy_arch: MlpArchitecture,
        latent_dim: usize,
        hidden: Vec<usize>,
        standardizer: Standardizer,
        weights: Vec<f64>,
        latent_center: Vec<f64>,
    ) -> Result<Self> {
        let p = policy_arch.param_count();
        check_len("standardizer mean", p, standardizer.mean.len())?;
        check_len("standardizer std", p, standardizer.std.len())?;
        if standardizer.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("standardizer deviations must be positive".into()));
        }
        let (encoder, decoder) = layouts(p, &hidden, latent_dim)?;
        check_len(
            "autoencoder weights",
            encoder.param_count() + decoder.param_count(),
            weights.len(),
        )?;
        check_len("latent center", latent_dim, latent_center.len())?;
        Ok(Self {
            policy_arch,
            latent_dim,
            hidden,
            standardizer,
            encoder,
            decoder,
            weights,
            latent_center,
        })
    }

    pub fn policy_arch(&self) -> &MlpArchitecture {
        &self.policy_arch
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn latent_center(&self) -> &[f64] {
        &self.latent_center
    }

    pub fn set_latent_center(&mut self, center: Vec<f64>) -> Result<()> {
        check_len("latent center", self.latent_dim, center.len())?;
        self.latent_center = center;
        Ok(())
    }

    pub fn encoder_layout(&self) -> &DenseLayout {
        &self.encoder
    }

    pub fn decoder_layout(&self) -> &DenseLayout {
        &self.decoder
    }

    fn split(&self) -> (&[f64], &[f64]) {
        self.weights.split_at(self.encoder.param_count())
    }

    pub fn encoder_params(&self) -> &[f64] {
        self.split().0
    }

    pub fn decoder_params(&self) -> &[f64] {
        self.split().1
    }

    /// Mutable decoder parameters, for hand-built test fixtures.
    pub fn decoder_params_mut(&mut self) -> &mut [f64] {
        let e = self.encoder.param_count();
        &mut self.weights[e..]
    }

    pub fn encode(&self, theta: &[f64]) -> Result<LatentCode> {
        check_len("encode input", self.policy_arch.param_count(), theta.len())?;
        let x = self.standardizer.standardize(theta);
        let mut z = vec![0.0; self.latent_dim];
        self.encoder
            .forward(self.encoder_params(), &x, &mut Scratch::default(), &mut z);
        Ok(z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<FlatParams> {
        check_len("decode input", self.latent_dim, z.len())?;
        let mut out = vec![0.0; self.policy_arch.param_count()];
        self.decoder
            .forward(self.decoder_params(), z, &mut Scratch::default(), &mut out);
        Ok(self.standardizer.destandardize(&out))
    }

    /// `∇_z g(z)ᵀ · grad_theta`, by a backward pass through the decoder.
    pub fn decoder_pullback(&self, z: &[f64], grad_theta: &[f64]) -> Result<Vec<f64>> {
        check_len("pullback latent", self.latent_dim, z.len())?;
        check_len("pullback gradient", self.policy_arch.param_count(), grad_theta.len())?;
        let mut cache = ForwardCache::new(&self.decoder);
        self.decoder.forward_cached(self.decoder_params(), z, &mut cache);
        let g_out: Vec<f64> = grad_theta
            .iter()
            .zip(&self.standardizer.std)
            .map(|(g, s)| g * s)
            .collect();
        let mut scratch = vec![0.0; self.decoder.param_count()];
        let mut g_z = vec![0.0; self.latent_dim];
        self.decoder.backward(
            self.decoder_params(),
            &mut cache,
            &g_out,
            &mut scratch,
            Some(&mut g_z),
        );
        Ok(g_z)
    }

    pub fn encode_all(&self, params: &Matrix) -> Result<Matrix> {
        let rows = par::try_map_indexed(params.rows(), |i| self.encode(params.row(i)))?;
        Matrix::from_rows(&rows)
    }
}

/// Policies per gradient-accumulation chunk. Fixed, so the reduction order
/// does not depend on the number of worker threads.
const LOSS_CHUNK: usize = 8;

struct PolicyPass {
    loss: f64,
    grad: Option<Vec<f64>>,
}

fn policy_pass(
    ae: &Autoencoder,
    theta: &[f64],
    states: &Matrix,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let arch = &ae.policy_arch;
    let (enc_w, dec_w) = ae.split();
    let mut enc_cache = ForwardCache::new(&ae.encoder);
    let mut dec_cache = ForwardCache::new(&ae.decoder);
    let x = ae.standardizer.standardize(theta);
    ae.encoder.forward_cached(enc_w, &x, &mut enc_cache);
    let z = ae.encoder.cached_output(&enc_cache).to_vec();
    ae.decoder.forward_cached(dec_w, &z, &mut dec_cache);
    let theta_hat = ae
        .standardizer
        .destandardize(ae.decoder.cached_output(&dec_cache));

    let a_dim = arch.output_dim();
    let mut target = vec![0.0; a_dim];
    let mut recon = vec![0.0; a_dim];
    let mut original = Policy::new(arch, theta).expect("checked by caller");
    let mut loss = 0.0;
    match grad {
        None => {
            let mut rebuilt = Policy::new(arch, &theta_hat).expect("decoder output has P entries");
            for s in states.iter_rows() {
                original.act_into(s, &mut target);
                rebuilt.act_into(s, &mut recon);
                loss += target
                    .iter()
                    .zip(&recon)
                    .map(|(t, r)| (r - t) * (r - t))
                    .sum::<f64>();
            }
            loss
        }
        Some(grad) => {
            let mut grad_actions = Matrix::zeros(states.rows(), a_dim);
            let mut rebuilt = Policy::new(arch, &theta_hat).expect("decoder output has P entries");
            for (i, s) in states.iter_rows().enumerate() {
                original.act_into(s, &mut target);
                rebuilt.act_into(s, &mut recon);
                let g = grad_actions.row_mut(i);
                for j in 0..a_dim {
                    let d = recon[j] - target[j];
                    loss += d * d;
                    g[j] = 2.0 * d * scale;
                }
            }
            let mut g_theta = vec![0.0; arch.param_count()];
            crate::policy::backprop_weights(arch, &theta_hat, states, &grad_actions)
                .map(|g| g_theta.copy_from_slice(&g))
                .expect("shapes checked by caller");
            // θ̂ = out ⊙ std + mean
            for (g, s) in g_theta.iter_mut().zip(&ae.standardizer.std) {
                *g *= s;
            }
            let e = ae.encoder.param_count();
            let (g_enc, g_dec) = grad.split_at_mut(e);
            let mut g_z = vec![0.0; ae.latent_dim];
            ae.decoder
                .backward(dec_w, &mut dec_cache, &g_theta, g_dec, Some(&mut g_z));
            ae.encoder.backward(enc_w, &mut enc_cache, &g_z, g_enc, None);
            loss
        }
    }
}

fn check_batch(ae: &Autoencoder, batch: &Matrix, states: &Matrix) -> Result<()> {
    if batch.rows() == 0 || states.rows() == 0 {
        return Err(Error::Usage("behavioral loss needs at least one policy and one state".into()));
    }
    check_len("loss batch params", ae.policy_arch.param_count(), batch.cols())?;
    check_len("loss states", ae.policy_arch.input_dim(), states.cols())
}

/// Behavioral reconstruction loss on `batch` (one policy per row) over
/// `states`, averaged over policies, states and action components, with its
/// gradient w.r.t. all autoencoder weights.
pub fn behavioral_loss(ae: &Autoencoder, batch: &Matrix, states: &Matrix) -> Result<(f64, Vec<f64>)> {
    check_batch(ae, batch, states)?;
    let denom = (batch.rows() * states.rows() * ae.policy_arch.output_dim()) as f64;
    let scale = 1.0 / denom;
    let n_chunks = batch.rows().div_ceil(LOSS_CHUNK);
    let chunks: Vec<PolicyPass> = par::map_indexed(n_chunks, |c| {
        let mut grad = vec![0.0; ae.weights.len()];
        let mut loss = 0.0;
        for i in c * LOSS_CHUNK..((c + 1) * LOSS_CHUNK).min(batch.rows()) {
            loss += policy_pass(ae, batch.row(i), states, scale, Some(&mut grad));
        }
        PolicyPass {
            loss,
            grad: Some(grad),
        }
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; ae.weights.len()];
    for c in chunks {
        loss += c.loss;
        for (g, v) in grad.iter_mut().zip(c.grad.expect("gradient requested")) {
            *g += v;
        }
    }
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite("behavioral loss"));
    }
    ensure_finite("behavioral loss gradient", &grad)?;
    Ok((loss, grad))
}

/// Loss only, without the backward pass.
pub fn behavioral_loss_value(ae: &Autoencoder, batch: &Matrix, states: &Matrix) -> Result<f64> {
    check_batch(ae, batch, states)?;
    let denom = (batch.rows() * states.rows() * ae.policy_arch.output_dim()) as f64;
    let per: Vec<f64> = par::map_indexed(batch.rows(), |i| {
        policy_pass(ae, batch.row(i), states, 0.0, None)
    });
    let loss = per.iter().sum::<f64>() / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite("behavioral loss"));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CompressorTrainConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Probe states sampled (without replacement) at every gradient step.
    pub states_per_step: usize,
    /// Probe states in the fixed validation subsample.
    pub validation_states: usize,
    pub holdout_fraction: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
}

impl Default for CompressorTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: 64,
            states_per_step: 1000,
            validation_states: 1000,
            holdout_fraction: 0.2,
            plateau_patience: 15,
            plateau_factor: 0.5,
        }
    }
}

impl CompressorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("compressor: {m}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be >= 1");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.states_per_step == 0 || self.validation_states == 0 {
            return bad("epochs, batch_size, states_per_step and validation_states must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must be in (0, 1)");
        }
        if self.plateau_patience == 0 || !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_patience must be >= 1 and plateau_factor in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Validation loss of the freshly initialized autoencoder.
    pub initial_val_loss: f64,
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr: Vec<f64>,
    /// 0-based epoch whose weights were kept; `None` if no epoch improved on
    /// the initial weights.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Trains the autoencoder on `dataset`; returns the weights with the lowest
/// validation loss.
pub fn train(
    dataset: &PolicyDataset,
    cfg: &CompressorTrainConfig,
    seed: u64,
) -> Result<(Autoencoder, TrainReport)> {
    cfg.validate()?;
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Usage(alloc::format!("need at least 3 policies to train, got {n}")));
    }
    let probe = StateProbe::rebuild(&dataset.probe)?;
    let mut rng: SeedRng = rng_for(seed, "compressor", 0);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (libm::round(cfg.holdout_fraction * n as f64) as usize).clamp(1, n - 2);
    let mut val_indices = order[..n_val].to_vec();
    let mut train_indices = order[n_val..].to_vec();
    val_indices.sort_unstable();
    train_indices.sort_unstable();
    let train_set = dataset.params.select_rows(&train_indices);
    let val_set = dataset.params.select_rows(&val_indices);

    let standardizer = standardize_fit(&train_set)?;
    let mut ae = Autoencoder::initialize(
        dataset.arch.clone(),
        cfg.latent_dim,
        cfg.hidden.clone(),
        standardizer,
        &mut rng,
    )?;

    let m = probe.len();
    let val_rows: Vec<usize> = sample_indices(&mut rng, m, cfg.validation_states.min(m)).into_vec();
    let val_states = probe.states.select_rows(&val_rows);
    let per_step = cfg.states_per_step.min(m);

    let initial_val_loss = behavioral_loss_value(&ae, &val_set, &val_states)?;
    let mut adam = AdamState::new(ae.weights.len(), cfg.learning_rate);
    let mut sched = PlateauScheduler::new(
        cfg.learning_rate.max(f64::MIN_POSITIVE),
        cfg.plateau_patience,
        cfg.plateau_factor,
    )?;
    let mut best = (initial_val_loss, ae.weights.clone(), None);
    let mut report = TrainReport {
        initial_val_loss,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        lr: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_val_loss: initial_val_loss,
        train_indices,
        val_indices,
    };
    let mut batch_order: Vec<usize> = (0..train_set.rows()).collect();
    for epoch in 0..cfg.epochs {
        report.lr.push(adam.lr);
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in batch_order.chunks(cfg.batch_size) {
            let rows = sample_indices(&mut rng, m, per_step).into_vec();
            let states = probe.states.select_rows(&rows);
            let batch = train_set.select_rows(chunk);
            let (loss, grad) = behavioral_loss(&ae, &batch, &states)?;
            adam.step(&mut ae.weights, &grad)?;
            epoch_loss += loss;
            steps += 1;
        }
        report.train_loss.push(epoch_loss / steps as f64);
        let val = behavioral_loss_value(&ae, &val_set, &val_states)?;
        report.val_loss.push(val);
        if val < best.0 {
            best = (val, ae.weights.clone(), Some(epoch));
        }
        let next_lr = sched.step(val);
        if cfg.learning_rate > 0.0 {
            adam.lr = next_lr;
        }
    }
    ae.weights = best.1;
    report.best_epoch = best.2;
    report.best_val_loss = best.0;

    let codes = ae.encode_all(&train_set)?;
    let center = (0..ae.latent_dim)
        .map(|d| {
            let col: Vec<f64> = codes.iter_rows().map(|r| r[d]).collect();
            stats::median(&col)
        })
        .collect();
    ae.latent_center = center;
    Ok((ae, report))
}
