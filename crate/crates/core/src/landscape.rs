//! Latent landscapes, dataset return bounds and performance recovery.

use alloc::vec;
use alloc::vec::Vec;

use crate::compressor::Autoencoder;
use crate::dataset::ReturnBounds;
use crate::envs::{rollout_tasks, Environment, TaskId};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par;
use crate::policy::{MlpArchitecture, Policy};
use crate::seed::rng_for;
use crate::stats;

pub const DEFAULT_EPISODES: usize = 3;
/// Half-width given to a dimension whose quartiles coincide.
pub const DEGENERATE_HALF_WIDTH: f64 = 1e-6;
/// Grid budget used to size latent dimensions outside the standard table.
const FALLBACK_BUDGET: f64 = 6561.0;

/// Points per axis for a `k`-dimensional latent grid.
///
/// `k ∈ {1, 2, 3, 5, 8}` use 100, 50, 17, 5 and 3. Other dimensions get
/// `max(2, ⌊6561^(1/k)⌋)`.
pub fn points_per_dim(k: usize) -> usize {
    match k {
        1 => 100,
        2 => 50,
        3 => 17,
        5 => 5,
        8 => 3,
        0 => 0,
        _ => {
            let mut n = libm::floor(libm::pow(FALLBACK_BUDGET, 1.0 / k as f64)) as usize;
            // floor(x^(1/k)) may land one short for exact powers
            while libm::pow(n as f64 + 1.0, k as f64) <= FALLBACK_BUDGET {
                n += 1;
            }
            n.max(2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GridSpan {
    /// `[Q1, Q3]`.
    #[default]
    Iqr,
    /// `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]`.
    Whiskers,
}

/// Regular grid over a box in latent space. Points are enumerated with the
/// last dimension varying fastest.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
    /// Dimensions whose quartiles coincided and were widened.
    pub degenerate: Vec<usize>,
}

impl LatentGrid {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of grid index `i` along one axis.
    pub fn axis_value(&self, d: usize, i: usize) -> f64 {
        if self.points == 1 {
            return 0.5 * (self.lo[d] + self.hi[d]);
        }
        let t = i as f64 / (self.points - 1) as f64;
        self.lo[d] + t * (self.hi[d] - self.lo[d])
    }

    /// Per-axis indices of flat point `i`.
    pub fn unravel(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = i % self.points;
            i /= self.points;
        }
        idx
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.unravel(i)
            .iter()
            .enumerate()
            .map(|(d, &j)| self.axis_value(d, j))
            .collect()
    }

    pub fn coords(&self) -> Matrix {
        let k = self.dim();
        let mut m = Matrix::zeros(self.len(), k);
        for i in 0..self.len() {
            m.row_mut(i).copy_from_slice(&self.point(i));
        }
        m
    }
}

/// Grid over the spread of the training codes (`N × k`).
pub fn fit_grid(codes: &Matrix, span: GridSpan) -> Result<LatentGrid> {
    let (n, k) = codes.shape();
    if n < 4 {
        return Err(Error::Usage(alloc::format!("grid fit needs at least 4 codes, got {n}")));
    }
    if k == 0 {
        return Err(Error::Usage("latent codes have no dimensions".into()));
    }
    if !codes.is_finite() {
        return Err(Error::NonFinite("latent codes"));
    }
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    let mut degenerate = Vec::new();
    for d in 0..k {
        let mut col: Vec<f64> = codes.iter_rows().map(|r| r[d]).collect();
        col.sort_by(f64::total_cmp);
        let q1 = stats::quantile_sorted(&col, 0.25);
        let q3 = stats::quantile_sorted(&col, 0.75);
        let (mut a, mut b) = match span {
            GridSpan::Iqr => (q1, q3),
            GridSpan::Whiskers => (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)),
        };
        if a == b {
            a -= DEGENERATE_HALF_WIDTH;
            b += DEGENERATE_HALF_WIDTH;
            degenerate.push(d);
        }
        lo.push(a);
        hi.push(b);
    }
    Ok(LatentGrid {
        lo,
        hi,
        points: points_per_dim(k),
        degenerate,
    })
}

/// Mean returns of decoded grid policies.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeResult {
    /// `points × k`.
    pub coords: Matrix,
    /// `points × tasks`.
    pub returns: Matrix,
    pub tasks: Vec<TaskId>,
    pub episodes: usize,
    pub seed: u64,
    pub env_steps: u64,
}

impl LandscapeResult {
    /// Highest grid return per task.
    pub fn max_per_task(&self) -> Vec<f64> {
        column_extrema(&self.returns).into_iter().map(|b| b.upper).collect()
    }

    pub fn bounds(&self) -> Vec<ReturnBounds> {
        column_extrema(&self.returns)
    }
}

/// Per-task mean returns of a batch of policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    /// `policies × tasks`.
    pub returns: Matrix,
    /// Simulated steps; the tasks of one episode share a trajectory, which
    /// counts once.
    pub env_steps: u64,
}

/// Mean per-task returns of each policy (row of `params`) over `episodes`.
///
/// Episode `e` of every policy starts from the stream
/// `rng_for(seed, "eval-episode", e)`, so all policies face the same start
/// states, and the tasks share one trajectory per episode.
pub fn evaluate_policies(
    arch: &MlpArchitecture,
    params: &Matrix,
    env: &Environment,
    tasks: &[TaskId],
    episodes: usize,
    seed: u64,
) -> Result<PolicyEvaluation> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Usage("no tasks to evaluate".into()));
    }
    for &t in tasks {
        env.check_task(t)?;
    }
    let rows = par::try_map_indexed(params.rows(), |i| {
        let mut policy = Policy::new(arch, params.row(i))?;
        let mut sums = vec![0.0; tasks.len()];
        let mut steps = 0u64;
        for e in 0..episodes {
            let mut rng = rng_for(seed, "eval-episode", e as u64);
            let res = rollout_tasks(env, &mut policy, tasks, &mut rng, env.horizon())?;
            for (s, r) in sums.iter_mut().zip(&res) {
                *s += r.total_return;
            }
            steps += res.iter().map(|r| r.steps).max().unwrap_or(0) as u64;
        }
        sums.iter_mut().for_each(|s| *s /= episodes as f64);
        Ok((sums, steps))
    })?;
    let env_steps = rows.iter().map(|r| r.1).sum();
    let mut returns = Matrix::zeros(rows.len(), tasks.len());
    for (i, (r, _)) in rows.iter().enumerate() {
        returns.row_mut(i).copy_from_slice(r);
    }
    Ok(PolicyEvaluation { returns, env_steps })
}

pub fn evaluate_landscape(
    ae: &Autoencoder,
    grid: &LatentGrid,
    env: &Environment,
    tasks: &[TaskId],
    episodes: usize,
    seed: u64,
) -> Result<LandscapeResult> {
    if grid.dim() != ae.latent_dim() {
        return Err(Error::dim("grid vs latent dimension", ae.latent_dim(), grid.dim()));
    }
    let coords = grid.coords();
    let decoded = par::try_map_indexed(coords.rows(), |i| ae.decode(coords.row(i)))?;
    let params = Matrix::from_rows(&decoded)?;
    let eval = evaluate_policies(ae.policy_arch(), &params, env, tasks, episodes, seed)?;
    Ok(LandscapeResult {
        coords,
        returns: eval.returns,
        tasks: tasks.to_vec(),
        episodes,
        seed,
        env_steps: eval.env_steps,
    })
}

fn column_extrema(m: &Matrix) -> Vec<ReturnBounds> {
    (0..m.cols())
        .map(|j| {
            let mut b = ReturnBounds {
                lower: f64::INFINITY,
                upper: f64::NEG_INFINITY,
            };
            for r in m.iter_rows() {
                b.lower = b.lower.min(r[j]);
                b.upper = b.upper.max(r[j]);
            }
            b
        })
        .collect()
}

/// Min/max of per-policy mean returns, per task.
pub fn bounds_of(returns: &Matrix) -> Vec<ReturnBounds> {
    column_extrema(returns)
}

/// Min/max of per-policy mean returns over the dataset, per task.
pub fn dataset_bounds(
    arch: &MlpArchitecture,
    params: &Matrix,
    env: &Environment,
    tasks: &[TaskId],
    episodes: usize,
    seed: u64,
) -> Result<Vec<ReturnBounds>> {
    if params.rows() == 0 {
        return Err(Error::Usage("dataset is empty".into()));
    }
    Ok(column_extrema(&evaluate_policies(arch, params, env, tasks, episodes, seed)?.returns))
}

/// `(ub_L − lb_D) / (ub_D − lb_D)`.
pub fn performance_recovery(lb_d: f64, ub_d: f64, ub_l: f64) -> Result<f64> {
    if !(ub_d > lb_d) || !ub_l.is_finite() || !lb_d.is_finite() || !ub_d.is_finite() {
        return Err(Error::UndefinedRatio { lb: lb_d, ub: ub_d });
    }
    Ok((ub_l - lb_d) / (ub_d - lb_d))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskRecovery {
    pub task: TaskId,
    pub dataset: ReturnBounds,
    pub latent: ReturnBounds,
    /// `None` when the dataset bounds coincide.
    pub recovery: Option<f64>,
}

pub fn recovery_report(tasks: &[TaskId], dataset: &[ReturnBounds], latent: &[ReturnBounds]) -> Result<Vec<TaskRecovery>> {
    if dataset.len() != tasks.len() || latent.len() != tasks.len() {
        return Err(Error::dim("recovery bounds per task", tasks.len(), dataset.len().min(latent.len())));
    }
    Ok(tasks
        .iter()
        .zip(dataset.iter().zip(latent))
        .map(|(&task, (&d, &l))| TaskRecovery {
            task,
            dataset: d,
            latent: l,
            recovery: performance_recovery(d.lower, d.upper, l.upper).ok(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::{Autoencoder, Standardizer};
    use crate::policy::PolicySizePreset;
    use crate::seed::Rng as SeedRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn standard_point_counts() {
        let expected = [(1, 100), (2, 2500), (3, 4913), (5, 3125), (8, 6561)];
        for (k, total) in expected {
            let codes = Matrix::from_vec(4, k, (0..4 * k).map(|i| i as f64).collect()).unwrap();
            let g = fit_grid(&codes, GridSpan::Iqr).unwrap();
            assert_eq!(g.len(), total, "k={k}");
            assert_eq!(g.coords().rows(), total);
        }
        assert_eq!(points_per_dim(4), 9);
        assert_eq!(points_per_dim(6), 4);
        assert_eq!(points_per_dim(13), 2);
        assert_eq!(points_per_dim(20), 2);
    }

    #[test]
    fn uniform_codes_give_quartile_range() {
        let mut rng = SeedRng::seed_from_u64(0);
        let n = 100_000;
        let data: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let g = fit_grid(&Matrix::from_vec(n, 2, data).unwrap(), GridSpan::Iqr).unwrap();
        for d in 0..2 {
            assert!((g.lo[d] - 0.25).abs() < 0.01 && (g.hi[d] - 0.75).abs() < 0.01);
        }
        assert_eq!(g.point(0), vec![g.lo[0], g.lo[1]]);
        assert_eq!(g.point(1), vec![g.lo[0], g.axis_value(1, 1)]);
        assert_eq!(g.point(g.len() - 1), vec![g.hi[0], g.hi[1]]);
    }

    #[test]
    fn whiskers_and_degenerate_dims() {
        let codes = Matrix::from_rows(&[[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]]).unwrap();
        let g = fit_grid(&codes, GridSpan::Iqr).unwrap();
        assert_eq!((g.lo[0], g.hi[0]), (1.0, 3.0));
        assert_eq!(g.degenerate, vec![1]);
        assert!(g.lo[1] < 5.0 && g.hi[1] > 5.0);
        let w = fit_grid(&codes, GridSpan::Whiskers).unwrap();
        assert_eq!((w.lo[0], w.hi[0]), (-2.0, 6.0));
        assert!(fit_grid(&Matrix::zeros(3, 2), GridSpan::Iqr).is_err());
    }

    #[test]
    fn recovery_formula() {
        assert_eq!(performance_recovery(-10.0, 90.0, 90.0).unwrap(), 1.0);
        assert_eq!(performance_recovery(-10.0, 90.0, -10.0).unwrap(), 0.0);
        assert!((performance_recovery(-10.0, 90.0, 95.0).unwrap() - 1.05).abs() < 1e-15);
        for c in [-50.0, 0.25, 1e3] {
            let a = performance_recovery(-3.0, 7.0, 5.0).unwrap();
            let b = performance_recovery(-3.0 + c, 7.0 + c, 5.0 + c).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(performance_recovery(1.0, 1.0, 2.0), Err(Error::UndefinedRatio { .. })));
    }

    fn zero_decoder_ae() -> Autoencoder {
        let env = Environment::mountain_car();
        let arch = MlpArchitecture::preset(&env, PolicySizePreset::Small).unwrap();
        let mut ae = Autoencoder::initialize(arch, 1, vec![4], Standardizer::identity(17), &mut SeedRng::seed_from_u64(1)).unwrap();
        ae.decoder_params_mut().iter_mut().for_each(|w| *w = 0.0);
        ae
    }

    #[test]
    fn zero_policy_landscape_scores_nothing_on_speed() {
        let env = Environment::mountain_car();
        let ae = zero_decoder_ae();
        let grid = LatentGrid { lo: vec![-1.0], hi: vec![1.0], points: 5, degenerate: vec![] };
        let tasks = [TaskId::McSpeed, TaskId::McStandard];
        let res = evaluate_landscape(&ae, &grid, &env, &tasks, 2, 3).unwrap();
        assert_eq!(res.returns.shape(), (5, 2));
        // the speed task never terminates early, so every episode is a full horizon
        assert_eq!(res.env_steps, 5 * 2 * 999);
        for r in res.returns.iter_rows() {
            assert!(r[0].abs() < 0.05);
            assert_eq!(r[1], 0.0);
        }
        assert_eq!(res, evaluate_landscape(&ae, &grid, &env, &tasks, 2, 3).unwrap());
        let bad = LatentGrid { lo: vec![0.0; 2], hi: vec![1.0; 2], points: 3, degenerate: vec![] };
        assert!(evaluate_landscape(&ae, &bad, &env, &tasks, 1, 0).is_err());
    }

    #[test]
    fn bounds_bracket_policy_returns() {
        let env = Environment::mountain_car();
        let arch = MlpArchitecture::preset(&env, PolicySizePreset::Small).unwrap();
        let mut rng = SeedRng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| crate::policy::sample_random(&arch, &mut rng, 1.0).unwrap())
            .collect();
        let params = Matrix::from_rows(&rows).unwrap();
        let tasks = [TaskId::McStandard, TaskId::McHeight];
        let ret = evaluate_policies(&arch, &params, &env, &tasks, 2, 5).unwrap().returns;
        let b = dataset_bounds(&arch, &params, &env, &tasks, 2, 5).unwrap();
        for r in ret.iter_rows() {
            for j in 0..2 {
                assert!(b[j].lower <= r[j] && r[j] <= b[j].upper);
            }
        }
        let one = dataset_bounds(&arch, &params.select_rows(&[2]), &env, &tasks, 2, 5).unwrap();
        assert!(one.iter().all(|b| b.lower == b.upper));
        // row order does not change a policy's returns
        let swapped = evaluate_policies(&arch, &params.select_rows(&[5, 0]), &env, &tasks, 2, 5).unwrap().returns;
        assert_eq!(swapped.row(0), ret.row(5));
        let rep = recovery_report(&tasks, &b, &one).unwrap();
        assert_eq!(rep.len(), 2);
    }
}
