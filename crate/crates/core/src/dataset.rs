//! Policy dataset generation: state probes, behavior signatures, k-NN novelty
//! and top-fraction filtering.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::envs::{EnvKind, Environment};
use crate::error::{check_len, Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::par;
use crate::policy::{act_batch, sample_random, MlpArchitecture};
use crate::seed::{derive_seed, rng_for, Rng as SeedRng};

/// Points per axis of the Mountain Car probe grid (55² = 3025 states).
pub const MC_GRID_SIDE: usize = 55;
/// Number of uniformly sampled Reacher probe states.
pub const RC_PROBE_SIZE: usize = 3000;
/// Neighbours averaged by the novelty score.
pub const DEFAULT_NOVELTY_K: usize = 15;
pub const DEFAULT_FILTER_FRACTION: f64 = 0.10;
/// Support of the uniform weight distribution for raw policies.
pub const DEFAULT_SAMPLE_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProbeKind {
    Grid,
    Uniform,
}

/// Everything needed to rebuild a probe bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeDescriptor {
    pub env: EnvKind,
    pub kind: ProbeKind,
    pub seed: u64,
    pub size: usize,
}

/// Fixed states on which all behavioral comparisons are made.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProbe {
    pub states: Matrix,
    pub kind: ProbeKind,
    pub seed: u64,
    pub env: EnvKind,
}

impl StateProbe {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn descriptor(&self) -> ProbeDescriptor {
        ProbeDescriptor {
            env: self.env,
            kind: self.kind,
            seed: self.seed,
            size: self.len(),
        }
    }

    pub fn rebuild(desc: &ProbeDescriptor) -> Result<Self> {
        let probe = build_state_probe(&Environment::from_kind(desc.env), desc.seed);
        if probe.kind != desc.kind || probe.len() != desc.size {
            return Err(Error::Config(alloc::format!(
                "probe descriptor {desc:?} does not match what this build generates"
            )));
        }
        Ok(probe)
    }
}

/// Mountain Car: a 55×55 grid over position × velocity, corners included.
/// Reacher: 3000 states with joint angles drawn uniformly on the circle (so
/// the cos/sin features stay consistent) and velocities uniform in ±5.
pub fn build_state_probe(env: &Environment, seed: u64) -> StateProbe {
    let (lo, hi) = env.obs_bounds();
    match env.kind() {
        EnvKind::MountainCar => {
            let n = MC_GRID_SIDE;
            let axis = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (n - 1) as f64;
            let mut states = Matrix::zeros(n * n, 2);
            for i in 0..n {
                for j in 0..n {
                    let r = states.row_mut(i * n + j);
                    r[0] = axis(0, i);
                    r[1] = axis(1, j);
                }
            }
            StateProbe {
                states,
                kind: ProbeKind::Grid,
                seed,
                env: EnvKind::MountainCar,
            }
        }
        EnvKind::Reacher => {
            let mut rng = rng_for(seed, "state-probe", 0);
            let mut states = Matrix::zeros(RC_PROBE_SIZE, 6);
            for i in 0..RC_PROBE_SIZE {
                let q1 = rng.random_range(-PI..PI);
                let q2 = rng.random_range(-PI..PI);
                let r = states.row_mut(i);
                let (s1, c1) = libm::sincos(q1);
                let (s2, c2) = libm::sincos(q2);
                r[..4].copy_from_slice(&[c1, c2, s1, s2]);
                r[4] = rng.random_range(lo[4]..hi[4]);
                r[5] = rng.random_range(lo[5]..hi[5]);
            }
            StateProbe {
                states,
                kind: ProbeKind::Uniform,
                seed,
                env: EnvKind::Reacher,
            }
        }
    }
}

/// A policy's deterministic actions on the probe (`M × |A|`).
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSignature(pub Matrix);

impl BehaviorSignature {
    pub fn compute(arch: &MlpArchitecture, params: &[f64], probe: &StateProbe) -> Result<Self> {
        Ok(Self(act_batch(arch, params, &probe.states)?))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Euclidean distance between two signatures over all probe states and action
/// components.
pub fn pairwise_divergence(a: &BehaviorSignature, b: &BehaviorSignature) -> Result<f64> {
    check_len("signature rows", a.0.rows(), b.0.rows())?;
    check_len("signature cols", a.0.cols(), b.0.cols())?;
    Ok(libm::sqrt(squared_distance(a.as_slice(), b.as_slice())))
}

/// The `k` smallest values seen so far, kept sorted ascending.
struct SmallestK {
    k: usize,
    vals: Vec<f64>,
}

impl SmallestK {
    fn new(k: usize) -> Self {
        Self {
            k,
            vals: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, d: f64) {
        if self.vals.len() == self.k {
            if d >= self.vals[self.k - 1] {
                return;
            }
            self.vals.pop();
        }
        let pos = self.vals.partition_point(|&v| v <= d);
        self.vals.insert(pos, d);
    }

    fn mean(&self) -> f64 {
        self.vals.iter().sum::<f64>() / self.k as f64
    }
}

const NOVELTY_BLOCK_ROWS: usize = 64;

/// Novelty of each signature: mean divergence to its `k` nearest other signatures.
///
/// Exact: every pair distance is computed once, in row blocks, and merged in a
/// fixed order.
pub fn novelty_scores(signatures: &[BehaviorSignature], k: usize) -> Result<Vec<f64>> {
    let n = signatures.len();
    if k == 0 || n <= k {
        return Err(Error::Usage(alloc::format!(
            "novelty needs more signatures than neighbours (N={n}, k={k})"
        )));
    }
    let shape = signatures[0].0.shape();
    for s in signatures {
        check_len("signature rows", shape.0, s.0.rows())?;
        check_len("signature cols", shape.1, s.0.cols())?;
    }
    let mut knn: Vec<SmallestK> = (0..n).map(|_| SmallestK::new(k)).collect();
    let mut start = 0;
    while start < n {
        let end = (start + NOVELTY_BLOCK_ROWS).min(n);
        let block: Vec<Vec<f64>> = par::map_indexed(end - start, |r| {
            let i = start + r;
            let a = signatures[i].as_slice();
            ((i + 1)..n)
                .map(|j| libm::sqrt(squared_distance(a, signatures[j].as_slice())))
                .collect()
        });
        for (r, dists) in block.iter().enumerate() {
            let i = start + r;
            for (off, &d) in dists.iter().enumerate() {
                knn[i].push(d);
                knn[i + 1 + off].push(d);
            }
        }
        start = end;
    }
    Ok(knn.iter().map(SmallestK::mean).collect())
}

/// Indices of the `⌈fraction·N⌉` highest scores, ties going to the lower index.
/// Returned in ascending index order.
pub fn top_fraction_indices(scores: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Usage("cannot filter an empty policy pool".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Usage(alloc::format!(
            "filter fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = scores.len();
    // guard against 0.1·N landing a hair above an integer
    let keep = (libm::ceil(fraction * n as f64 - 1e-9) as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Per-task min/max returns over the dataset's policies.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReturnBounds {
    pub lower: f64,
    pub upper: f64,
}

/// A filtered set of policies sharing one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDataset {
    pub arch: MlpArchitecture,
    /// `N × P`, one flat policy per row.
    pub params: Matrix,
    pub scores: Vec<f64>,
    /// Row of each kept policy in the generated pool.
    pub source_indices: Vec<usize>,
    pub pool_size: usize,
    pub seed: u64,
    pub probe: ProbeDescriptor,
    pub novelty_k: usize,
    pub sample_scale: f64,
}

impl PolicyDataset {
    pub fn len(&self) -> usize {
        self.params.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.params.rows() == 0
    }

    pub fn policy(&self, i: usize) -> &[f64] {
        self.params.row(i)
    }
}

/// Keeps the top `fraction` of a scored pool.
pub fn filter_top_percentile(
    params: &Matrix,
    scores: &[f64],
    fraction: f64,
) -> Result<(Matrix, Vec<f64>, Vec<usize>)> {
    check_len("filter scores", params.rows(), scores.len())?;
    let kept = top_fraction_indices(scores, fraction)?;
    let kept_scores = kept.iter().map(|&i| scores[i]).collect();
    Ok((params.select_rows(&kept), kept_scores, kept))
}

/// Settings for [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub pool_size: usize,
    pub fraction: f64,
    pub novelty_k: usize,
    pub sample_scale: f64,
    pub seed: u64,
}

fn pool_policy_rng(seed: u64, i: usize) -> SeedRng {
    rng_for(seed, "pool-policy", i as u64)
}

/// Samples the raw pool, scores it on the probe and keeps the most novel policies.
///
/// Policy `i` of the pool is drawn from its own seeded stream, so kept
/// policies are regenerated after filtering instead of holding the whole pool's
/// weights in memory.
pub fn generate_dataset(
    arch: &MlpArchitecture,
    env: &Environment,
    cfg: &GenerationConfig,
) -> Result<PolicyDataset> {
    if cfg.pool_size <= cfg.novelty_k {
        return Err(Error::Usage(alloc::format!(
            "pool size {} must exceed k = {}",
            cfg.pool_size,
            cfg.novelty_k
        )));
    }
    check_len("policy input vs observation", env.obs_dim(), arch.input_dim())?;
    check_len("policy output vs action", env.act_dim(), arch.output_dim())?;
    let probe = build_state_probe(env, derive_seed(cfg.seed, "state-probe", 0));
    let signatures = par::try_map_indexed(cfg.pool_size, |i| {
        let theta = sample_random(arch, &mut pool_policy_rng(cfg.seed, i), cfg.sample_scale)?;
        BehaviorSignature::compute(arch, &theta, &probe)
    })?;
    let scores = novelty_scores(&signatures, cfg.novelty_k)?;
    drop(signatures);
    let kept = top_fraction_indices(&scores, cfg.fraction)?;
    let rows = par::try_map_indexed(kept.len(), |r| {
        sample_random(arch, &mut pool_policy_rng(cfg.seed, kept[r]), cfg.sample_scale)
    })?;
    let params = Matrix::from_rows(&rows)?;
    Ok(PolicyDataset {
        arch: arch.clone(),
        params,
        scores: kept.iter().map(|&i| scores[i]).collect(),
        source_indices: kept,
        pool_size: cfg.pool_size,
        seed: cfg.seed,
        probe: probe.descriptor(),
        novelty_k: cfg.novelty_k,
        sample_scale: cfg.sample_scale,
    })
}

/// Signatures of every raw pool policy [`generate_dataset`] draws for `cfg`.
pub fn pool_signatures(
    arch: &MlpArchitecture,
    probe: &StateProbe,
    cfg: &GenerationConfig,
) -> Result<Vec<BehaviorSignature>> {
    par::try_map_indexed(cfg.pool_size, |i| {
        let theta = sample_random(arch, &mut pool_policy_rng(cfg.seed, i), cfg.sample_scale)?;
        BehaviorSignature::compute(arch, &theta, probe)
    })
}

/// Mean divergence over all unordered pairs of the selected signatures.
pub fn mean_pairwise_divergence(signatures: &[BehaviorSignature], subset: &[usize]) -> Result<f64> {
    if subset.len() < 2 {
        return Err(Error::Usage("need at least two signatures".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            sum += pairwise_divergence(&signatures[i], &signatures[j])?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
