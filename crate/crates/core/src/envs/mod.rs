//! Environments, tasks and the episode loop.

pub mod mountain_car;
pub mod reacher;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
pub use mountain_car::MountainCarState;
pub use reacher::{ReacherPhysicsConfig, ReacherState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EnvKind {
    #[cfg_attr(feature = "serde", serde(rename = "mc"))]
    MountainCar,
    #[cfg_attr(feature = "serde", serde(rename = "rc"))]
    Reacher,
}

impl EnvKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mc" | "mountain_car" => Ok(EnvKind::MountainCar),
            "rc" | "reacher" => Ok(EnvKind::Reacher),
            _ => Err(Error::Config(alloc::format!("unknown environment '{s}' (expected mc or rc)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::MountainCar => "mc",
            EnvKind::Reacher => "rc",
        }
    }
}

/// Downstream tasks. Each belongs to exactly one environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskId {
    McStandard,
    McLeft,
    McSpeed,
    McHeight,
    RcSpeed,
    RcClockwise,
    RcCounterClockwise,
    RcRadial,
}

impl TaskId {
    pub const MOUNTAIN_CAR: [TaskId; 4] = [
        TaskId::McStandard,
        TaskId::McLeft,
        TaskId::McSpeed,
        TaskId::McHeight,
    ];
    pub const REACHER: [TaskId; 4] = [
        TaskId::RcSpeed,
        TaskId::RcClockwise,
        TaskId::RcCounterClockwise,
        TaskId::RcRadial,
    ];

    pub fn env(self) -> EnvKind {
        match self {
            TaskId::McStandard | TaskId::McLeft | TaskId::McSpeed | TaskId::McHeight => {
                EnvKind::MountainCar
            }
            _ => EnvKind::Reacher,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::McStandard => "standard",
            TaskId::McLeft => "left",
            TaskId::McSpeed | TaskId::RcSpeed => "speed",
            TaskId::McHeight => "height",
            TaskId::RcClockwise => "clockwise",
            TaskId::RcCounterClockwise => "c_clockwise",
            TaskId::RcRadial => "radial",
        }
    }

    /// Task names are only unique within an environment.
    pub fn parse(env: EnvKind, name: &str) -> Result<Self> {
        let t = match (env, name) {
            (EnvKind::MountainCar, "standard") => TaskId::McStandard,
            (EnvKind::MountainCar, "left") => TaskId::McLeft,
            (EnvKind::MountainCar, "speed") => TaskId::McSpeed,
            (EnvKind::MountainCar, "height") => TaskId::McHeight,
            (EnvKind::Reacher, "speed") => TaskId::RcSpeed,
            (EnvKind::Reacher, "clockwise") => TaskId::RcClockwise,
            (EnvKind::Reacher, "c_clockwise" | "c-clockwise") => TaskId::RcCounterClockwise,
            (EnvKind::Reacher, "radial") => TaskId::RcRadial,
            _ => {
                return Err(Error::Config(alloc::format!(
                    "unknown task '{name}' for environment {}",
                    env.name()
                )))
            }
        };
        Ok(t)
    }
}

/// An environment instance with its (possibly overridden) constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    kind: EnvKind,
    reacher: ReacherPhysicsConfig,
}

impl Environment {
    pub fn mountain_car() -> Self {
        Self {
            kind: EnvKind::MountainCar,
            reacher: ReacherPhysicsConfig::default(),
        }
    }

    pub fn reacher(cfg: ReacherPhysicsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            kind: EnvKind::Reacher,
            reacher: cfg,
        })
    }

    pub fn from_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::MountainCar => Self::mountain_car(),
            EnvKind::Reacher => Self {
                kind,
                reacher: ReacherPhysicsConfig::default(),
            },
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn reacher_config(&self) -> &ReacherPhysicsConfig {
        &self.reacher
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::MountainCar => 2,
            EnvKind::Reacher => 6,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self.kind {
            EnvKind::MountainCar => 1,
            EnvKind::Reacher => 2,
        }
    }

    /// Declared observation bounds used for normalization and state probes.
    pub fn obs_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            EnvKind::MountainCar => (
                vec![mountain_car::MIN_POSITION, -mountain_car::MAX_SPEED],
                vec![mountain_car::MAX_POSITION, mountain_car::MAX_SPEED],
            ),
            EnvKind::Reacher => (reacher::OBS_LOW.to_vec(), reacher::OBS_HIGH.to_vec()),
        }
    }

    pub fn horizon(&self) -> usize {
        match self.kind {
            EnvKind::MountainCar => mountain_car::HORIZON,
            EnvKind::Reacher => reacher::HORIZON,
        }
    }

    pub fn tasks(&self) -> &'static [TaskId] {
        match self.kind {
            EnvKind::MountainCar => &TaskId::MOUNTAIN_CAR,
            EnvKind::Reacher => &TaskId::REACHER,
        }
    }

    pub fn check_task(&self, task: TaskId) -> Result<()> {
        if task.env() == self.kind {
            Ok(())
        } else {
            Err(Error::Usage(alloc::format!(
                "task {} does not belong to environment {}",
                task.name(),
                self.kind.name()
            )))
        }
    }
}

/// Anything that maps an observation to an action deterministically.
pub trait Controller {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn act(&mut self, obs: &[f64], action: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeResult {
    /// Undiscounted sum of task rewards.
    pub total_return: f64,
    pub steps: usize,
    /// The episode ended on a task goal rather than the horizon.
    pub reached_goal: bool,
}

#[derive(Debug, Clone, Copy)]
enum EnvState {
    Mc(MountainCarState),
    Rc(ReacherState),
}

/// Runs one episode of `task` from a fresh start state drawn from `rng`.
pub fn rollout<C: Controller>(
    env: &Environment,
    policy: &mut C,
    task: TaskId,
    rng: &mut impl Rng,
    horizon: usize,
) -> Result<EpisodeResult> {
    Ok(rollout_tasks(env, policy, &[task], rng, horizon)?[0])
}

/// Runs several tasks on one shared trajectory.
///
/// The dynamics do not depend on the task, only termination does, so each
/// task's result equals a separate [`rollout`] started from the same RNG state.
/// The trajectory continues until every task has terminated or the horizon is hit.
pub fn rollout_tasks<C: Controller>(
    env: &Environment,
    policy: &mut C,
    tasks: &[TaskId],
    rng: &mut impl Rng,
    horizon: usize,
) -> Result<Vec<EpisodeResult>> {
    for &t in tasks {
        env.check_task(t)?;
    }
    if policy.obs_dim() != env.obs_dim() {
        return Err(Error::dim("policy input vs observation", env.obs_dim(), policy.obs_dim()));
    }
    if policy.act_dim() != env.act_dim() {
        return Err(Error::dim("policy output vs action", env.act_dim(), policy.act_dim()));
    }
    let mut results = vec![
        EpisodeResult {
            total_return: 0.0,
            steps: 0,
            reached_goal: false,
        };
        tasks.len()
    ];
    let mut done = vec![false; tasks.len()];
    let mut state = match env.kind {
        EnvKind::MountainCar => EnvState::Mc(mountain_car::reset(rng)),
        EnvKind::Reacher => EnvState::Rc(reacher::reset(&env.reacher, rng)),
    };
    let mut obs = vec![0.0; env.obs_dim()];
    let mut action = vec![0.0; env.act_dim()];
    let mut remaining = tasks.len();
    for _ in 0..horizon {
        if remaining == 0 {
            break;
        }
        match &state {
            EnvState::Mc(s) => obs.copy_from_slice(&s.observe()),
            EnvState::Rc(s) => obs.copy_from_slice(&reacher::observe(s)),
        }
        policy.act(&obs, &mut action);
        match &mut state {
            EnvState::Mc(s) => {
                let next = mountain_car::step(s, action[0]);
                let right = next.at_right_goal();
                let left = next.at_left_goal();
                for (i, &t) in tasks.iter().enumerate() {
                    if done[i] {
                        continue;
                    }
                    let r = &mut results[i];
                    r.total_return += mountain_car::reward(t, &next, action[0], right, left)?;
                    r.steps += 1;
                    if mountain_car::terminates(t, &next) {
                        r.reached_goal = true;
                        done[i] = true;
                        remaining -= 1;
                    }
                }
                *s = next;
            }
            EnvState::Rc(s) => {
                let next = reacher::step(s, [action[0], action[1]], &env.reacher);
                for (i, &t) in tasks.iter().enumerate() {
                    let r = &mut results[i];
                    r.total_return += reacher::reward(t, &next, &env.reacher)?;
                    r.steps += 1;
                }
                *s = next;
            }
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng as ChaCha;
    use rand::SeedableRng;

    struct Const(f64, usize, usize);
    impl Controller for Const {
        fn obs_dim(&self) -> usize {
            self.1
        }
        fn act_dim(&self) -> usize {
            self.2
        }
        fn act(&mut self, _obs: &[f64], a: &mut [f64]) {
            a.iter_mut().for_each(|v| *v = self.0);
        }
    }

    /// Pushes in the direction of motion: pumps energy into the car.
    struct Pump(f64);
    impl Controller for Pump {
        fn obs_dim(&self) -> usize {
            2
        }
        fn act_dim(&self) -> usize {
            1
        }
        fn act(&mut self, obs: &[f64], a: &mut [f64]) {
            a[0] = if obs[1] > 0.0 { self.0 } else if obs[1] < 0.0 { -self.0 } else { -1.0 };
        }
    }

    #[test]
    fn task_names_round_trip() {
        for env in [EnvKind::MountainCar, EnvKind::Reacher] {
            for &t in Environment::from_kind(env).tasks() {
                assert_eq!(TaskId::parse(env, t.name()).unwrap(), t);
                assert_eq!(t.env(), env);
            }
        }
        assert!(TaskId::parse(EnvKind::MountainCar, "radial").is_err());
        assert!(EnvKind::parse("cartpole").is_err());
    }

    #[test]
    fn reacher_episodes_run_full_horizon() {
        let env = Environment::reacher(ReacherPhysicsConfig::default()).unwrap();
        let mut rng = ChaCha::seed_from_u64(0);
        for &t in env.tasks() {
            let r = rollout(&env, &mut Const(1.0, 6, 2), t, &mut rng, env.horizon()).unwrap();
            assert_eq!(r.steps, 50);
            assert!(!r.reached_goal);
        }
    }

    #[test]
    fn zero_policy_on_speed_task_is_small() {
        let env = Environment::mountain_car();
        let mut rng = ChaCha::seed_from_u64(4);
        let r = rollout(&env, &mut Const(0.0, 2, 1), TaskId::McSpeed, &mut rng, 999).unwrap();
        assert!(r.total_return < 0.05 && r.total_return >= 0.0);
        assert_eq!(r.steps, 999);
        let again = rollout(&env, &mut Const(0.0, 2, 1), TaskId::McSpeed, &mut ChaCha::seed_from_u64(4), 999).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn pumping_policy_reaches_right_goal() {
        let env = Environment::mountain_car();
        let mut rng = ChaCha::seed_from_u64(1);
        let r = rollout(&env, &mut Pump(1.0), TaskId::McStandard, &mut rng, 999).unwrap();
        assert!(r.reached_goal);
        assert!(r.total_return > 100.0 - 0.1 * r.steps as f64 - 1e-9);
        assert!(r.total_return > 50.0);
    }

    #[test]
    fn left_goal_is_reachable() {
        // pump energy, then commit left once the swing is large enough
        struct SwingLeft;
        impl Controller for SwingLeft {
            fn obs_dim(&self) -> usize {
                2
            }
            fn act_dim(&self) -> usize {
                1
            }
            fn act(&mut self, obs: &[f64], a: &mut [f64]) {
                a[0] = if obs[1] >= 0.0 && obs[0] < 0.2 { 1.0 } else { -1.0 };
            }
        }
        let env = Environment::mountain_car();
        let mut rng = ChaCha::seed_from_u64(3);
        let r = rollout(&env, &mut SwingLeft, TaskId::McLeft, &mut rng, 999).unwrap();
        assert!(r.reached_goal, "{r:?}");
    }

    #[test]
    fn shared_trajectory_matches_separate_rollouts() {
        let env = Environment::mountain_car();
        let shared = rollout_tasks(&env, &mut Pump(0.8), env.tasks(), &mut ChaCha::seed_from_u64(9), 999).unwrap();
        for (i, &t) in env.tasks().iter().enumerate() {
            let single = rollout(&env, &mut Pump(0.8), t, &mut ChaCha::seed_from_u64(9), 999).unwrap();
            assert_eq!(shared[i], single);
        }
    }

    #[test]
    fn dimension_and_task_checks() {
        let env = Environment::mountain_car();
        let mut rng = ChaCha::seed_from_u64(0);
        assert!(rollout(&env, &mut Const(0.0, 6, 2), TaskId::McSpeed, &mut rng, 10).is_err());
        assert!(rollout(&env, &mut Const(0.0, 2, 1), TaskId::RcSpeed, &mut rng, 10).is_err());
    }
}
