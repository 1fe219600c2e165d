//! PGPE with symmetric sampling over latent codes or raw policy parameters.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::compressor::Autoencoder;
use crate::envs::{rollout, Environment, TaskId};
use crate::error::{check_len, Error, Result};
use crate::linalg::ensure_finite;
use crate::optim::AdamState;
use crate::par;
use crate::policy::{MlpArchitecture, Policy};
use crate::seed::{rng_for, Rng as SeedRng};
use crate::stats;

/// Added to the fitness standard deviation before dividing.
pub const NORMALIZATION_EPS: f64 = 1e-8;

/// Gaussian search distribution `N(μ, diag(σ²))` with `σ = exp(log_std)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianHyperPolicy {
    pub center: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHyperPolicy {
    /// Isotropic start: every dimension gets `sigma`.
    pub fn new(center: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(alloc::format!("initial sigma must be positive, got {sigma}")));
        }
        ensure_finite("hyper-policy center", &center)?;
        let log_std = vec![libm::log(sigma); center.len()];
        Ok(Self { center, log_std })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_std.iter().map(|&l| libm::exp(l)).collect()
    }

    pub fn sigma_mean(&self) -> f64 {
        stats::mean(&self.sigma())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FitnessNormalization {
    /// Raw returns.
    Off,
    /// Per generation, `(R − mean) / (std + 1e-8)`.
    #[default]
    ZScore,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PgpeConfig {
    /// Individuals per generation, i.e. twice the number of symmetric pairs.
    pub population: usize,
    pub center_lr: f64,
    pub sigma_lr: f64,
    pub init_sigma: f64,
    pub generations: usize,
    /// The center learning rate decays linearly to this fraction of its
    /// initial value over the run. `1.0` disables annealing.
    pub anneal_fraction: f64,
    pub normalization: FitnessNormalization,
    pub natural_gradient: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Rollouts averaged per candidate.
    pub episodes: usize,
    /// Rollouts used to score the center each generation; 0 disables it.
    /// These are monitoring only and are counted separately from the
    /// candidate environment steps.
    pub center_eval_episodes: usize,
    /// Starting center; `None` uses the search space's default.
    pub initial_center: Option<Vec<f64>>,
    /// Set by the caller for each run rather than read from config files.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for PgpeConfig {
    fn default() -> Self {
        Self::mountain_car()
    }
}

impl PgpeConfig {
    pub fn mountain_car() -> Self {
        Self {
            population: 4,
            center_lr: 0.05,
            sigma_lr: 0.1,
            init_sigma: 0.6,
            generations: 50,
            anneal_fraction: 1.0,
            normalization: FitnessNormalization::ZScore,
            natural_gradient: true,
            beta1: 0.2,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            episodes: 1,
            center_eval_episodes: 0,
            initial_center: None,
            seed: 0,
        }
    }

    pub fn reacher() -> Self {
        Self {
            population: 10,
            center_lr: 0.01,
            init_sigma: 0.3,
            generations: 200,
            anneal_fraction: 0.2,
            ..Self::mountain_car()
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.population / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("pgpe: {m}")));
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return bad("population must be even and at least 2");
        }
        if !(self.center_lr > 0.0 && self.center_lr.is_finite()) || !(self.sigma_lr > 0.0 && self.sigma_lr.is_finite()) {
            return bad("learning rates must be positive");
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad("init_sigma must be positive");
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return bad("anneal_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must be in [0, 1) and epsilon positive");
        }
        if self.generations == 0 || self.episodes == 0 {
            return bad("generations and episodes must be at least 1");
        }
        Ok(())
    }

    /// Center learning rate in effect at 0-based generation `g`.
    pub fn center_lr_at(&self, g: usize) -> f64 {
        if self.generations <= 1 {
            return self.center_lr;
        }
        let t = g.min(self.generations - 1) as f64 / (self.generations - 1) as f64;
        self.center_lr * (1.0 - (1.0 - self.anneal_fraction) * t)
    }
}

/// Mirrored samples `μ ± σ⊙ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricPair {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub eps: Vec<f64>,
}

pub fn ask(hyper: &GaussianHyperPolicy, rng: &mut impl Rng, n_pairs: usize) -> Result<Vec<SymmetricPair>> {
    if n_pairs == 0 {
        return Err(Error::Usage("ask needs at least one pair".into()));
    }
    let sigma = hyper.sigma();
    Ok((0..n_pairs)
        .map(|_| {
            let eps: Vec<f64> = (0..hyper.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let step: Vec<f64> = eps.iter().zip(&sigma).map(|(e, s)| e * s).collect();
            SymmetricPair {
                plus: hyper.center.iter().zip(&step).map(|(m, d)| m + d).collect(),
                minus: hyper.center.iter().zip(&step).map(|(m, d)| m - d).collect(),
                eps,
            }
        })
        .collect())
}

/// Candidates in evaluation order: `plus₀, minus₀, plus₁, minus₁, …`.
pub fn flatten_pairs(pairs: &[SymmetricPair]) -> Vec<&[f64]> {
    pairs
        .iter()
        .flat_map(|p| [p.plus.as_slice(), p.minus.as_slice()])
        .collect()
}

pub fn normalize_fitness(returns: &[f64], mode: FitnessNormalization) -> Vec<f64> {
    match mode {
        FitnessNormalization::Off => returns.to_vec(),
        FitnessNormalization::ZScore => {
            let m = stats::mean(returns);
            let s = stats::std_dev(returns) + NORMALIZATION_EPS;
            returns.iter().map(|r| (r - m) / s).collect()
        }
    }
}

/// Ascent directions for the center and the log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PgpeGradient {
    pub center: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Gradient estimate from one generation. `returns` follows [`flatten_pairs`]
/// order.
pub fn estimate_gradient(
    hyper: &GaussianHyperPolicy,
    pairs: &[SymmetricPair],
    returns: &[f64],
    normalization: FitnessNormalization,
    natural: bool,
) -> Result<PgpeGradient> {
    check_len("pgpe returns", 2 * pairs.len(), returns.len())?;
    if pairs.is_empty() {
        return Err(Error::Usage("gradient needs at least one pair".into()));
    }
    ensure_finite("pgpe returns", returns)?;
    let d = hyper.dim();
    let f = normalize_fitness(returns, normalization);
    let baseline = stats::mean(&f);
    let sigma = hyper.sigma();
    let mut g_mu = vec![0.0; d];
    let mut g_ls = vec![0.0; d];
    for (i, pair) in pairs.iter().enumerate() {
        check_len("pgpe eps", d, pair.eps.len())?;
        let (fp, fm) = (f[2 * i], f[2 * i + 1]);
        let diff = 0.5 * (fp - fm);
        let avg = 0.5 * (fp + fm) - baseline;
        for j in 0..d {
            let e = pair.eps[j];
            let s = if natural { sigma[j] * e } else { e / sigma[j] };
            g_mu[j] += diff * s;
            g_ls[j] += avg * (e * e - 1.0);
        }
    }
    let n = pairs.len() as f64;
    g_mu.iter_mut().for_each(|g| *g /= n);
    g_ls.iter_mut().for_each(|g| *g /= n);
    Ok(PgpeGradient {
        center: g_mu,
        log_std: g_ls,
    })
}

/// Ask/tell state: the search distribution plus Adam moments for its center.
#[derive(Debug, Clone, PartialEq)]
pub struct PgpeOptimizer {
    pub hyper: GaussianHyperPolicy,
    pub adam: AdamState,
    pub config: PgpeConfig,
    pub generation: usize,
}

impl PgpeOptimizer {
    pub fn new(config: PgpeConfig, center: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let hyper = GaussianHyperPolicy::new(center, config.init_sigma)?;
        let adam = AdamState::with_betas(
            hyper.dim(),
            config.center_lr,
            config.beta1,
            config.beta2,
            config.adam_epsilon,
        );
        Ok(Self {
            hyper,
            adam,
            config,
            generation: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.config.center_lr_at(self.generation)
    }

    pub fn ask(&self, rng: &mut impl Rng) -> Result<Vec<SymmetricPair>> {
        ask(&self.hyper, rng, self.config.n_pairs())
    }

    /// Applies one update and advances the generation counter. A generation
    /// whose returns are all equal carries no information and leaves the
    /// distribution (and the Adam moments) untouched.
    pub fn tell(&mut self, pairs: &[SymmetricPair], returns: &[f64]) -> Result<()> {
        let grad = estimate_gradient(
            &self.hyper,
            pairs,
            returns,
            self.config.normalization,
            self.config.natural_gradient,
        )?;
        let lr = self.current_lr();
        self.generation += 1;
        if returns.iter().all(|&r| r == returns[0]) {
            return Ok(());
        }
        self.adam.lr = lr;
        let descent: Vec<f64> = grad.center.iter().map(|g| -g).collect();
        self.adam.step(&mut self.hyper.center, &descent)?;
        for (l, g) in self.hyper.log_std.iter_mut().zip(&grad.log_std) {
            *l += self.config.sigma_lr * g;
        }
        ensure_finite("pgpe log-std", &self.hyper.log_std)?;
        Ok(())
    }
}

/// Where PGPE searches and how a search point becomes policy weights.
pub trait SearchSpace: Sync {
    fn dim(&self) -> usize;
    fn arch(&self) -> &MlpArchitecture;
    fn materialize<'x>(&self, x: &'x [f64]) -> Result<Cow<'x, [f64]>>;
    /// Starting center when the config does not give one.
    fn default_center(&self) -> Vec<f64>;
}

/// Latent codes decoded by a frozen autoencoder.
pub struct LatentSpace<'a> {
    pub ae: &'a Autoencoder,
}

impl SearchSpace for LatentSpace<'_> {
    fn dim(&self) -> usize {
        self.ae.latent_dim()
    }

    fn arch(&self) -> &MlpArchitecture {
        self.ae.policy_arch()
    }

    fn materialize<'x>(&self, x: &'x [f64]) -> Result<Cow<'x, [f64]>> {
        Ok(Cow::Owned(self.ae.decode(x)?))
    }

    fn default_center(&self) -> Vec<f64> {
        self.ae.latent_center().to_vec()
    }
}

/// Raw flat policy parameters.
pub struct ParameterSpace<'a> {
    pub arch: &'a MlpArchitecture,
}

impl SearchSpace for ParameterSpace<'_> {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn arch(&self) -> &MlpArchitecture {
        self.arch
    }

    fn materialize<'x>(&self, x: &'x [f64]) -> Result<Cow<'x, [f64]>> {
        check_len("parameter candidate", self.arch.param_count(), x.len())?;
        Ok(Cow::Borrowed(x))
    }

    fn default_center(&self) -> Vec<f64> {
        vec![0.0; self.arch.param_count()]
    }
}

/// Mean return over `episodes` and the environment steps spent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean_return: f64,
    pub env_steps: u64,
}

/// Black-box objective maximized by [`optimize`].
pub trait Objective: Sync {
    fn evaluate(&self, x: &[f64], rng: &mut SeedRng, episodes: usize) -> Result<Evaluation>;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut SeedRng, usize) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, x: &[f64], rng: &mut SeedRng, episodes: usize) -> Result<Evaluation> {
        self(x, rng, episodes)
    }
}

/// Rollout return of a search-space point on one task.
pub struct TaskObjective<'a, S: SearchSpace> {
    pub space: &'a S,
    pub env: &'a Environment,
    pub task: TaskId,
}

impl<S: SearchSpace> Objective for TaskObjective<'_, S> {
    fn evaluate(&self, x: &[f64], rng: &mut SeedRng, episodes: usize) -> Result<Evaluation> {
        check_len("search point", self.space.dim(), x.len())?;
        let theta = self.space.materialize(x)?;
        let mut policy = Policy::new(self.space.arch(), &theta)?;
        let mut total = 0.0;
        let mut steps = 0u64;
        for _ in 0..episodes {
            let r = rollout(self.env, &mut policy, self.task, rng, self.env.horizon())?;
            total += r.total_return;
            steps += r.steps as u64;
        }
        Ok(Evaluation {
            mean_return: total / episodes as f64,
            env_steps: steps,
        })
    }
}

/// Evaluates every candidate with its own pre-assigned RNG stream, so results
/// do not depend on evaluation order. Stream `i` of generation `g` is
/// `rng_for(seed, "pgpe-eval", g · len + i)`.
pub fn evaluate(
    candidates: &[&[f64]],
    objective: &impl Objective,
    seed: u64,
    generation: usize,
    episodes: usize,
) -> Result<Vec<Evaluation>> {
    let n = candidates.len();
    par::try_map_indexed(n, |i| {
        let mut rng = rng_for(seed, "pgpe-eval", (generation * n + i) as u64);
        objective.evaluate(candidates[i], &mut rng, episodes)
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerationLog {
    pub generation: usize,
    pub mean_return: f64,
    pub max_return: f64,
    /// Mean return of the center over `center_eval_episodes` fresh rollouts.
    pub center_return: Option<f64>,
    pub best_return: f64,
    pub sigma_mean: f64,
    pub center_lr: f64,
    /// Candidate environment steps up to and including this generation.
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PgpeResult {
    pub best_candidate: Vec<f64>,
    pub best_return: f64,
    pub final_center: Vec<f64>,
    pub final_sigma: Vec<f64>,
    pub log: Vec<GenerationLog>,
    pub env_steps: u64,
    /// Steps spent on center monitoring, not included in `env_steps`.
    pub monitor_steps: u64,
}

impl PgpeResult {
    /// Candidate steps spent up to the end of the first generation whose
    /// `score` reaches `threshold`.
    pub fn steps_to_reach(&self, threshold: f64, score: impl Fn(&GenerationLog) -> Option<f64>) -> Option<u64> {
        self.log
            .iter()
            .find(|g| score(g).is_some_and(|s| s >= threshold))
            .map(|g| g.env_steps)
    }
}

/// Ask → evaluate → tell for `config.generations` generations.
pub fn optimize(config: &PgpeConfig, center: Vec<f64>, objective: &impl Objective) -> Result<PgpeResult> {
    let mut opt = PgpeOptimizer::new(config.clone(), center)?;
    let mut rng = rng_for(config.seed, "pgpe-ask", 0);
    let mut best_candidate = opt.hyper.center.clone();
    let mut best_return = f64::NEG_INFINITY;
    let mut env_steps = 0u64;
    let mut monitor_steps = 0u64;
    let mut log = Vec::with_capacity(config.generations);
    for g in 0..config.generations {
        let center_return = if config.center_eval_episodes > 0 {
            let mut crng = rng_for(config.seed, "pgpe-center", g as u64);
            let ev = objective.evaluate(&opt.hyper.center, &mut crng, config.center_eval_episodes)?;
            monitor_steps += ev.env_steps;
            Some(ev.mean_return)
        } else {
            None
        };
        let pairs = opt.ask(&mut rng)?;
        let candidates = flatten_pairs(&pairs);
        let evals = evaluate(&candidates, objective, config.seed, g, config.episodes)?;
        let returns: Vec<f64> = evals.iter().map(|e| e.mean_return).collect();
        env_steps += evals.iter().map(|e| e.env_steps).sum::<u64>();
        let mut gen_max = f64::NEG_INFINITY;
        for (i, &r) in returns.iter().enumerate() {
            if r > gen_max {
                gen_max = r;
            }
            if r > best_return {
                best_return = r;
                best_candidate = candidates[i].to_vec();
            }
        }
        let center_lr = opt.current_lr();
        let sigma_mean = opt.hyper.sigma_mean();
        opt.tell(&pairs, &returns)?;
        log.push(GenerationLog {
            generation: g,
            mean_return: stats::mean(&returns),
            max_return: gen_max,
            center_return,
            best_return,
            sigma_mean,
            center_lr,
            env_steps,
        });
    }
    Ok(PgpeResult {
        best_candidate,
        best_return,
        final_sigma: opt.hyper.sigma(),
        final_center: opt.hyper.center,
        log,
        env_steps,
        monitor_steps,
    })
}

/// Fine-tunes a policy for `task` by searching `space`.
pub fn run<S: SearchSpace>(config: &PgpeConfig, space: &S, env: &Environment, task: TaskId) -> Result<PgpeResult> {
    env.check_task(task)?;
    let center = match &config.initial_center {
        Some(c) => {
            check_len("initial center", space.dim(), c.len())?;
            c.clone()
        }
        None => space.default_center(),
    };
    optimize(config, center, &TaskObjective { space, env, task })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicySizePreset;
    use rand::SeedableRng;

    fn quadratic(x: &[f64], _: &mut SeedRng, _: usize) -> Result<Evaluation> {
        Ok(Evaluation {
            mean_return: -x.iter().map(|v| v * v).sum::<f64>(),
            env_steps: 1,
        })
    }

    #[test]
    fn pairs_mirror_about_center() {
        let h = GaussianHyperPolicy::new(vec![0.3, -1.7, 4.0], 0.8).unwrap();
        let pairs = ask(&h, &mut SeedRng::seed_from_u64(1), 50).unwrap();
        for p in &pairs {
            for j in 0..3 {
                assert!(((p.plus[j] + p.minus[j]) / 2.0 - h.center[j]).abs() < 1e-15);
                assert!((p.plus[j] - h.center[j] - 0.8 * p.eps[j]).abs() < 1e-14);
            }
        }
        assert!(ask(&h, &mut SeedRng::seed_from_u64(1), 0).is_err());
    }

    #[test]
    fn sampled_covariance_is_diagonal_sigma_squared() {
        let mut h = GaussianHyperPolicy::new(vec![1.0, -2.0], 1.0).unwrap();
        h.log_std = vec![libm::log(0.5), libm::log(2.0)];
        let n = 10_000;
        let pairs = ask(&h, &mut SeedRng::seed_from_u64(8), n).unwrap();
        let sig = [0.5, 2.0];
        for a in 0..2 {
            for b in a..2 {
                let c: f64 = pairs
                    .iter()
                    .map(|p| (p.plus[a] - h.center[a]) * (p.plus[b] - h.center[b]))
                    .sum::<f64>()
                    / n as f64;
                let expect = if a == b { sig[a] * sig[a] } else { 0.0 };
                // SE of a product-moment estimate: σaσb·√((1+δab)/n)
                let se = sig[a] * sig[b] * libm::sqrt((1.0 + (a == b) as u8 as f64) / n as f64);
                assert!((c - expect).abs() < 3.0 * se, "cov[{a}{b}]={c}");
            }
        }
    }

    #[test]
    fn vanilla_gradient_is_unbiased_on_linear_fitness() {
        let c = [1.5, -0.7, 0.2];
        let mut h = GaussianHyperPolicy::new(vec![0.4, 0.1, -2.0], 1.0).unwrap();
        h.log_std = vec![libm::log(0.3), libm::log(1.0), libm::log(2.5)];
        let n = 10_000;
        let pairs = ask(&h, &mut SeedRng::seed_from_u64(3), n).unwrap();
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let returns: Vec<f64> = flatten_pairs(&pairs).iter().map(|x| f(x)).collect();
        let g = estimate_gradient(&h, &pairs, &returns, FitnessNormalization::Off, false).unwrap();
        // per-pair samples are (cᵀε)·ε; compute their SE directly
        for j in 0..3 {
            let samples: Vec<f64> = pairs
                .iter()
                .map(|p| p.eps.iter().zip(&c).map(|(e, ci)| e * ci).sum::<f64>() * p.eps[j])
                .collect();
            let se = stats::std_dev(&samples) / libm::sqrt(n as f64);
            assert!((g.center[j] - c[j]).abs() < 3.0 * se, "coord {j}: {} vs {}", g.center[j], c[j]);
        }
    }

    #[test]
    fn equal_fitness_is_a_no_op() {
        let cfg = PgpeConfig { population: 6, ..PgpeConfig::mountain_car() };
        let mut opt = PgpeOptimizer::new(cfg, vec![0.5, -0.5]).unwrap();
        let mut rng = SeedRng::seed_from_u64(0);
        let pairs = opt.ask(&mut rng).unwrap();
        let before = opt.hyper.clone();
        opt.tell(&pairs, &[3.0; 6]).unwrap();
        assert_eq!(opt.hyper, before);
        let g = estimate_gradient(&before, &pairs, &[3.0; 6], FitnessNormalization::Off, true).unwrap();
        assert!(g.center.iter().chain(&g.log_std).all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_fitness_gives_zero_center_gradient() {
        let h = GaussianHyperPolicy::new(vec![0.0; 4], 0.7).unwrap();
        let pairs = ask(&h, &mut SeedRng::seed_from_u64(5), 8).unwrap();
        let returns: Vec<f64> = (0..8).flat_map(|i| [i as f64, i as f64]).collect();
        for natural in [false, true] {
            let g = estimate_gradient(&h, &pairs, &returns, FitnessNormalization::ZScore, natural).unwrap();
            assert!(g.center.iter().all(|&v| v == 0.0));
        }
        assert!(estimate_gradient(&h, &pairs, &returns[..5], FitnessNormalization::Off, true).is_err());
    }

    #[test]
    fn natural_gradient_is_fisher_scaled_vanilla() {
        let mut h = GaussianHyperPolicy::new(vec![0.0; 3], 1.0).unwrap();
        h.log_std = vec![-1.0, 0.0, 0.5];
        let pairs = ask(&h, &mut SeedRng::seed_from_u64(6), 5).unwrap();
        let returns: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).sin()).collect();
        let v = estimate_gradient(&h, &pairs, &returns, FitnessNormalization::ZScore, false).unwrap();
        let n = estimate_gradient(&h, &pairs, &returns, FitnessNormalization::ZScore, true).unwrap();
        for (j, s) in h.sigma().iter().enumerate() {
            assert!((n.center[j] - v.center[j] * s * s).abs() < 1e-12);
        }
        assert_eq!(v.log_std, n.log_std);
    }

    #[test]
    fn annealing_is_linear() {
        let cfg = PgpeConfig::reacher();
        assert_eq!(cfg.center_lr_at(0), 0.01);
        assert!((cfg.center_lr_at(199) - 0.002).abs() < 1e-15);
        assert!((cfg.center_lr_at(99) - 0.01 * (1.0 - 0.8 * 99.0 / 199.0)).abs() < 1e-15);
        assert_eq!(PgpeConfig::mountain_car().center_lr_at(49), 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(PgpeConfig::mountain_car().validate().is_ok());
        assert!(PgpeConfig::reacher().validate().is_ok());
        for bad in [
            PgpeConfig { population: 3, ..Default::default() },
            PgpeConfig { population: 0, ..Default::default() },
            PgpeConfig { center_lr: 0.0, ..Default::default() },
            PgpeConfig { anneal_fraction: 0.0, ..Default::default() },
            PgpeConfig { init_sigma: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn quadratic_1d_converges_in_most_seeds() {
        let mut ok = 0;
        for seed in 0..10 {
            let cfg = PgpeConfig {
                population: 4,
                init_sigma: 0.5,
                generations: 50,
                center_lr: 0.1,
                seed,
                ..PgpeConfig::mountain_car()
            };
            let res = optimize(&cfg, vec![2.0], &quadratic).unwrap();
            assert_eq!(res.log.len(), 50);
            if res.final_center[0].abs() < 0.1 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10 seeds converged");
    }

    #[test]
    fn best_return_is_monotone_and_steps_accumulate() {
        let cfg = PgpeConfig { population: 10, generations: 30, seed: 4, ..PgpeConfig::mountain_car() };
        let res = optimize(&cfg, vec![1.0, 1.0, 1.0], &quadratic).unwrap();
        for w in res.log.windows(2) {
            assert!(w[1].best_return >= w[0].best_return);
            assert_eq!(w[1].env_steps, w[0].env_steps + 10);
        }
        assert_eq!(res.env_steps, 300);
        assert_eq!(res.best_return, res.log.last().unwrap().best_return);
        assert_eq!(-res.best_candidate.iter().map(|v| v * v).sum::<f64>(), res.best_return);
    }

    #[test]
    fn zero_policy_scores_nothing_on_speed() {
        let env = Environment::mountain_car();
        let arch = MlpArchitecture::preset(&env, PolicySizePreset::Small).unwrap();
        let space = ParameterSpace { arch: &arch };
        let obj = TaskObjective { space: &space, env: &env, task: TaskId::McSpeed };
        let ev = obj.evaluate(&[0.0; 17], &mut SeedRng::seed_from_u64(2), 3).unwrap();
        assert!(ev.mean_return.abs() < 0.05);
        assert_eq!(ev.env_steps, 3 * 999);
    }

    #[test]
    fn runs_are_reproducible() {
        let env = Environment::mountain_car();
        let arch = MlpArchitecture::preset(&env, PolicySizePreset::Small).unwrap();
        let space = ParameterSpace { arch: &arch };
        let cfg = PgpeConfig { generations: 3, center_eval_episodes: 1, seed: 9, ..PgpeConfig::mountain_car() };
        let a = run(&cfg, &space, &env, TaskId::McStandard).unwrap();
        let b = run(&cfg, &space, &env, TaskId::McStandard).unwrap();
        assert_eq!(a, b);
        assert!(a.log.iter().all(|g| g.center_return.is_some()));
        assert!(run(&cfg, &space, &env, TaskId::RcSpeed).is_err());
    }
}
