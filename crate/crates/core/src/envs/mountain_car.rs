//! Mountain Car with a continuous acceleration action.

use rand::Rng;

use super::TaskId;
use crate::error::{Error, Result};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const POWER: f64 = 0.0015;
pub const GRAVITY: f64 = 0.0025;
/// Right-hill goal: the episode ends once `p ≥ RIGHT_GOAL`.
pub const RIGHT_GOAL: f64 = 0.45;
/// Left-hill goal used by the `left` task: `p ≤ LEFT_GOAL`.
pub const LEFT_GOAL: f64 = -1.1;
pub const GOAL_REWARD: f64 = 100.0;
pub const HORIZON: usize = 999;
/// Heights below this earn nothing in the `height` task.
pub const MIN_REWARDED_HEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    pub fn observe(&self) -> [f64; 2] {
        [self.position, self.velocity]
    }

    pub fn at_right_goal(&self) -> bool {
        self.position >= RIGHT_GOAL
    }

    pub fn at_left_goal(&self) -> bool {
        self.position <= LEFT_GOAL
    }

    /// Vertical coordinate of the car on the hill profile.
    pub fn height(&self) -> f64 {
        libm::sin(3.0 * self.position) * 0.45 + 0.55
    }
}

/// Start state: `p ~ U(−0.6, −0.4)`, `v = 0`.
pub fn reset(rng: &mut impl Rng) -> MountainCarState {
    MountainCarState {
        position: rng.random_range(-0.6..=-0.4),
        velocity: 0.0,
    }
}

/// One transition. The action is clipped to `[−1, 1]`.
pub fn step(s: &MountainCarState, action: f64) -> MountainCarState {
    let a = action.clamp(-1.0, 1.0);
    let mut v = s.velocity + POWER * a - GRAVITY * libm::cos(3.0 * s.position);
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    let p = (s.position + v).clamp(MIN_POSITION, MAX_POSITION);
    if p <= MIN_POSITION && v < 0.0 {
        v = 0.0;
    }
    MountainCarState {
        position: p,
        velocity: v,
    }
}

/// Reward for the transition that produced `next` under action `a`.
pub fn reward(
    task: TaskId,
    next: &MountainCarState,
    action: f64,
    reached_right_goal: bool,
    reached_left_goal: bool,
) -> Result<f64> {
    let a = action.clamp(-1.0, 1.0);
    Ok(match task {
        TaskId::McStandard => {
            -0.1 * a * a + if reached_right_goal { GOAL_REWARD } else { 0.0 }
        }
        TaskId::McLeft => -0.1 * a * a + if reached_left_goal { GOAL_REWARD } else { 0.0 },
        TaskId::McHeight => {
            let h = next.height();
            if h >= MIN_REWARDED_HEIGHT {
                h * h
            } else {
                0.0
            }
        }
        TaskId::McSpeed => next.velocity * next.velocity,
        other => {
            return Err(Error::Usage(alloc::format!(
                "task {other:?} is not a mountain car task"
            )))
        }
    })
}

/// Whether `task` ends the episode in state `next`.
pub fn terminates(task: TaskId, next: &MountainCarState) -> bool {
    match task {
        TaskId::McLeft => next.at_left_goal(),
        _ => next.at_right_goal(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng as ChaCha;
    use rand::SeedableRng;

    #[test]
    fn reset_range_and_determinism() {
        let mut rng = ChaCha::seed_from_u64(1);
        for _ in 0..1000 {
            let s = reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&s.position));
            assert_eq!(s.velocity, 0.0);
        }
        let a = reset(&mut ChaCha::seed_from_u64(42));
        let b = reset(&mut ChaCha::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn reset_mean_is_centered() {
        let mut rng = ChaCha::seed_from_u64(2);
        let n = 100_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| reset(&mut rng).position).collect();
        let m = crate::stats::mean(&xs);
        // U(-0.6,-0.4) has std 0.2/sqrt(12)
        let se = 0.2 / libm::sqrt(12.0) / libm::sqrt(n as f64);
        assert!((m + 0.5).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn step_direct_evaluation() {
        let s = step(&MountainCarState { position: -0.5, velocity: 0.0 }, 1.0);
        let v = 0.0015 - 0.0025 * libm::cos(-1.5);
        assert!((s.velocity - v).abs() < 1e-15);
        assert!((s.velocity - 0.00132316).abs() < 1e-8);
        assert!((s.position - (-0.49867684)).abs() < 1e-8);
    }

    #[test]
    fn valley_bottom_is_equilibrium() {
        let p = -core::f64::consts::PI / 6.0;
        let s = step(&MountainCarState { position: p, velocity: 0.0 }, 0.0);
        assert!(s.velocity.abs() < 1e-18);
        assert!((s.position - p).abs() < 1e-15);
    }

    #[test]
    fn left_wall_stops_car() {
        let s = step(&MountainCarState { position: -1.19, velocity: -0.07 }, -1.0);
        assert_eq!(s.position, MIN_POSITION);
        assert_eq!(s.velocity, 0.0);
    }

    #[test]
    fn rewards() {
        let s = MountainCarState { position: -0.5, velocity: 0.0 };
        assert!((reward(TaskId::McStandard, &s, 1.0, false, false).unwrap() + 0.1).abs() < 1e-15);
        assert!((reward(TaskId::McStandard, &s, 1.0, true, false).unwrap() - 99.9).abs() < 1e-12);
        assert!((reward(TaskId::McLeft, &s, 0.0, false, true).unwrap() - 100.0).abs() < 1e-12);
        let top = MountainCarState { position: 0.0, velocity: 0.0 };
        assert!((reward(TaskId::McHeight, &top, 0.0, false, false).unwrap() - 0.3025).abs() < 1e-15);
        // h = 0.1 at p = -pi/6 -> below cutoff
        let low = MountainCarState { position: -core::f64::consts::PI / 6.0, velocity: 0.0 };
        assert_eq!(reward(TaskId::McHeight, &low, 0.0, false, false).unwrap(), 0.0);
        assert_eq!(reward(TaskId::McSpeed, &s, 1.0, false, false).unwrap(), 0.0);
        let fast = MountainCarState { position: 0.0, velocity: 0.05 };
        assert!((reward(TaskId::McSpeed, &fast, 0.0, false, false).unwrap() - 0.0025).abs() < 1e-15);
        assert!(reward(TaskId::RcSpeed, &s, 0.0, false, false).is_err());
    }
}
