//! Planar two-link arm. Each joint is an independent damped double
//! integrator driven by a bounded torque; the tasks only look at the
//! fingertip velocity.

use core::f64::consts::PI;

use rand::Rng;

use super::TaskId;
use crate::error::{Error, Result};

pub const HORIZON: usize = 50;
pub const OBS_LOW: [f64; 6] = [-1.0, -1.0, -1.0, -1.0, -5.0, -5.0];
pub const OBS_HIGH: [f64; 6] = [1.0, 1.0, 1.0, 1.0, 5.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReacherState {
    pub q: [f64; 2],
    pub omega: [f64; 2],
}

/// Physical constants and task thresholds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ReacherPhysicsConfig {
    pub link_lengths: [f64; 2],
    pub inertia: [f64; 2],
    pub damping: [f64; 2],
    pub torque_gain: f64,
    pub dt: f64,
    /// `speed`: tip speed must exceed this.
    pub speed_threshold: f64,
    /// `clockwise`: tangential velocity compared against this.
    pub clockwise_threshold: f64,
    /// When set, `clockwise` rewards tangential velocity *below* the threshold
    /// instead of above it.
    pub clockwise_below: bool,
    /// `c_clockwise`: tangential velocity must exceed this.
    pub counter_clockwise_threshold: f64,
    /// `radial`: radial velocity must exceed this.
    pub radial_threshold: f64,
    /// Initial joint angles are drawn from `U(−a, a)`.
    pub init_angle_range: f64,
    /// Initial joint velocities are drawn from `U(−w, w)`.
    pub init_velocity_range: f64,
}

impl Default for ReacherPhysicsConfig {
    fn default() -> Self {
        Self {
            link_lengths: [0.1, 0.11],
            inertia: [0.1, 0.1],
            damping: [1.0, 1.0],
            torque_gain: 30.0,
            dt: 0.02,
            speed_threshold: 6.0,
            clockwise_threshold: -11.0,
            clockwise_below: false,
            counter_clockwise_threshold: 1.0,
            radial_threshold: 3.0,
            init_angle_range: 0.1,
            init_velocity_range: 0.005,
        }
    }
}

impl ReacherPhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self
            .link_lengths
            .iter()
            .chain(&self.inertia)
            .chain(&self.damping)
            .chain([&self.torque_gain, &self.dt])
            .all(|&v| v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Config(
                "reacher link lengths, inertias, damping, gain and dt must be positive".into(),
            ));
        }
        if !(self.init_angle_range >= 0.0 && self.init_velocity_range >= 0.0) {
            return Err(Error::Config("reacher init ranges must be non-negative".into()));
        }
        Ok(())
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut w = libm::fmod(a + PI, two_pi);
    if w < 0.0 {
        w += two_pi;
    }
    w -= PI;
    if w <= -PI {
        w += two_pi;
    }
    w
}

pub fn reset(cfg: &ReacherPhysicsConfig, rng: &mut impl Rng) -> ReacherState {
    let mut draw = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let q = [draw(cfg.init_angle_range), draw(cfg.init_angle_range)];
    let omega = [draw(cfg.init_velocity_range), draw(cfg.init_velocity_range)];
    ReacherState { q, omega }
}

/// Semi-implicit Euler step; torques are clipped to `[−1, 1]`.
pub fn step(s: &ReacherState, torque: [f64; 2], cfg: &ReacherPhysicsConfig) -> ReacherState {
    let mut next = *s;
    for j in 0..2 {
        let tau = torque[j].clamp(-1.0, 1.0);
        let accel = (cfg.torque_gain * tau - cfg.damping[j] * s.omega[j]) / cfg.inertia[j];
        next.omega[j] = s.omega[j] + cfg.dt * accel;
        next.q[j] = wrap_angle(s.q[j] + cfg.dt * next.omega[j]);
    }
    next
}

pub fn observe(s: &ReacherState) -> [f64; 6] {
    let (s1, c1) = libm::sincos(s.q[0]);
    let (s2, c2) = libm::sincos(s.q[1]);
    [c1, c2, s1, s2, s.omega[0], s.omega[1]]
}

/// Fingertip position and velocity in the arm's base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipKinematics {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl TipKinematics {
    pub fn speed(&self) -> f64 {
        libm::hypot(self.velocity[0], self.velocity[1])
    }

    /// Velocity along the base→tip direction (positive when extending).
    pub fn radial_velocity(&self) -> f64 {
        let r = libm::hypot(self.position[0], self.position[1]);
        if r == 0.0 {
            return 0.0;
        }
        (self.position[0] * self.velocity[0] + self.position[1] * self.velocity[1]) / r
    }

    /// Velocity perpendicular to the base→tip direction, counter-clockwise positive.
    pub fn tangential_velocity(&self) -> f64 {
        let r = libm::hypot(self.position[0], self.position[1]);
        if r == 0.0 {
            return 0.0;
        }
        (self.position[0] * self.velocity[1] - self.position[1] * self.velocity[0]) / r
    }
}

pub fn tip_kinematics(s: &ReacherState, cfg: &ReacherPhysicsConfig) -> TipKinematics {
    let [l1, l2] = cfg.link_lengths;
    let (s1, c1) = libm::sincos(s.q[0]);
    let (s12, c12) = libm::sincos(s.q[0] + s.q[1]);
    let w1 = s.omega[0];
    let w12 = s.omega[0] + s.omega[1];
    TipKinematics {
        position: [l1 * c1 + l2 * c12, l1 * s1 + l2 * s12],
        velocity: [-l1 * s1 * w1 - l2 * s12 * w12, l1 * c1 * w1 + l2 * c12 * w12],
    }
}

/// Indicator reward for the state reached after a step.
pub fn reward(task: TaskId, s: &ReacherState, cfg: &ReacherPhysicsConfig) -> Result<f64> {
    let tip = tip_kinematics(s, cfg);
    let hit = match task {
        TaskId::RcSpeed => tip.speed() > cfg.speed_threshold,
        TaskId::RcClockwise => {
            let vt = tip.tangential_velocity();
            if cfg.clockwise_below {
                vt < cfg.clockwise_threshold
            } else {
                vt > cfg.clockwise_threshold
            }
        }
        TaskId::RcCounterClockwise => tip.tangential_velocity() > cfg.counter_clockwise_threshold,
        TaskId::RcRadial => tip.radial_velocity() > cfg.radial_threshold,
        other => {
            return Err(Error::Usage(alloc::format!(
                "task {other:?} is not a reacher task"
            )))
        }
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ReacherPhysicsConfig {
        ReacherPhysicsConfig::default()
    }

    #[test]
    fn rest_is_equilibrium() {
        let s = ReacherState { q: [0.3, -1.0], omega: [0.0, 0.0] };
        assert_eq!(step(&s, [0.0, 0.0], &cfg()), s);
    }

    #[test]
    fn constant_torque_converges_to_closed_form_speed() {
        let c = cfg();
        let mut s = ReacherState { q: [0.0, 0.0], omega: [0.0, 0.0] };
        for _ in 0..500 {
            s = step(&s, [0.5, -1.0], &c);
        }
        // steady state of ω' = (gain·τ − d·ω)/I
        assert!((s.omega[0] - c.torque_gain * 0.5 / c.damping[0]).abs() < 1e-9);
        assert!((s.omega[1] + c.torque_gain / c.damping[1]).abs() < 1e-9);
    }

    #[test]
    fn damping_contracts_velocity() {
        let c = cfg();
        let mut s = ReacherState { q: [0.0, 0.0], omega: [4.0, -3.0] };
        for _ in 0..50 {
            let n = step(&s, [0.0, 0.0], &c);
            assert!(n.omega[0].abs() < s.omega[0].abs());
            assert!(n.omega[1].abs() < s.omega[1].abs());
            s = n;
        }
    }

    #[test]
    fn angles_wrap_into_half_open_interval() {
        for &a in &[PI, -PI, 3.0 * PI, -3.0 * PI, 7.5, -7.5, 0.0] {
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI, "{a} -> {w}");
            assert!((libm::cos(w) - libm::cos(a)).abs() < 1e-12);
        }
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn observation_layout() {
        let o = observe(&ReacherState { q: [0.0, 0.0], omega: [0.0, 0.0] });
        assert_eq!(o, [1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let o = observe(&ReacherState { q: [PI / 2.0, 0.0], omega: [2.0, -1.0] });
        assert!(o[0].abs() < 1e-15);
        assert_eq!(o[2], 1.0);
        assert_eq!((o[4], o[5]), (2.0, -1.0));
    }

    /// Tip velocity by differentiating the tip position numerically.
    fn numeric_tip_velocity(s: &ReacherState, c: &ReacherPhysicsConfig) -> [f64; 2] {
        let h = 1e-6;
        let pos = |t: f64| {
            let q1 = s.q[0] + t * s.omega[0];
            let q2 = s.q[1] + t * s.omega[1];
            let [l1, l2] = c.link_lengths;
            [
                l1 * libm::cos(q1) + l2 * libm::cos(q1 + q2),
                l1 * libm::sin(q1) + l2 * libm::sin(q1 + q2),
            ]
        };
        let (p, m) = (pos(h), pos(-h));
        [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
    }

    #[test]
    fn tip_velocity_matches_numeric_derivative() {
        let c = cfg();
        for s in [
            ReacherState { q: [0.3, 1.1], omega: [2.0, -4.0] },
            ReacherState { q: [-2.0, 2.9], omega: [-7.0, 12.0] },
        ] {
            let tip = tip_kinematics(&s, &c);
            let v = numeric_tip_velocity(&s, &c);
            assert!((tip.velocity[0] - v[0]).abs() < 1e-7);
            assert!((tip.velocity[1] - v[1]).abs() < 1e-7);
            let split = libm::hypot(tip.radial_velocity(), tip.tangential_velocity());
            assert!((split - tip.speed()).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_rotation_has_no_radial_component() {
        let c = cfg();
        let s = ReacherState { q: [0.7, 0.0], omega: [40.0, 0.0] };
        let tip = tip_kinematics(&s, &c);
        assert!(tip.radial_velocity().abs() < 1e-12);
        // counter-clockwise rotation of the extended arm: v_t = ω·(l1 + l2)
        assert!((tip.tangential_velocity() - 40.0 * 0.21).abs() < 1e-12);
        assert_eq!(reward(TaskId::RcCounterClockwise, &s, &c).unwrap(), 1.0);
        assert_eq!(reward(TaskId::RcRadial, &s, &c).unwrap(), 0.0);
        assert_eq!(reward(TaskId::RcSpeed, &s, &c).unwrap(), 1.0);
    }

    #[test]
    fn zero_state_fails_positive_thresholds() {
        let c = cfg();
        let s = ReacherState { q: [0.0, 0.0], omega: [0.0, 0.0] };
        for t in [TaskId::RcSpeed, TaskId::RcCounterClockwise, TaskId::RcRadial] {
            assert_eq!(reward(t, &s, &c).unwrap(), 0.0);
        }
        // as printed, the clockwise cutoff of -11 is satisfied at rest
        assert_eq!(reward(TaskId::RcClockwise, &s, &c).unwrap(), 1.0);
        let flipped = ReacherPhysicsConfig { clockwise_below: true, ..c.clone() };
        assert_eq!(reward(TaskId::RcClockwise, &s, &flipped).unwrap(), 0.0);
        assert!(reward(TaskId::McSpeed, &s, &c).is_err());
    }

    #[test]
    fn validate_rejects_nonpositive_constants() {
        assert!(cfg().validate().is_ok());
        let bad = ReacherPhysicsConfig { dt: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }
}
