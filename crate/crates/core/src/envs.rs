//! Cart-pole and pendulum swing-up with physical-parameter multipliers.
//!
//! Both integrate with explicit Euler. Step functions are pure; all randomness
//! lives in `reset`.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub gravity: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub angle_limit: f64,
    pub x_limit: f64,
    pub max_steps: u32,
    pub relative_mass: f64,
    pub relative_length: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.8,
            force_mag: 10.0,
            dt: 0.02,
            angle_limit: 0.2095,
            x_limit: 2.4,
            max_steps: 500,
            relative_mass: 1.0,
            relative_length: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub torque_limit: f64,
    pub speed_limit: f64,
    pub max_steps: u32,
    pub relative_mass: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            dt: 0.05,
            torque_limit: 2.0,
            speed_limit: 8.0,
            max_steps: 200,
            relative_mass: 1.0,
        }
    }
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<()> {
    for (name, v) in pairs {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        check_positive(&[
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("dt", self.dt),
            ("relative_mass", self.relative_mass),
            ("relative_length", self.relative_length),
        ])
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        check_positive(&[
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
            ("torque_limit", self.torque_limit),
            ("speed_limit", self.speed_limit),
            ("relative_mass", self.relative_mass),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum EnvParams {
    CartPole(CartPoleParams),
    Pendulum(PendulumParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    CartPole,
    Pendulum,
}

impl std::str::FromStr for EnvId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(Self::CartPole),
            "pendulum" => Ok(Self::Pendulum),
            other => Err(Error::InvalidArgument(format!("unknown env `{other}`"))),
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CartPole => "cartpole",
            Self::Pendulum => "pendulum",
        })
    }
}

impl EnvParams {
    pub fn nominal(id: EnvId) -> Self {
        match id {
            EnvId::CartPole => Self::CartPole(CartPoleParams::default()),
            EnvId::Pendulum => Self::Pendulum(PendulumParams::default()),
        }
    }

    pub fn id(&self) -> EnvId {
        match self {
            Self::CartPole(_) => EnvId::CartPole,
            Self::Pendulum(_) => EnvId::Pendulum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::CartPole(p) => p.validate(),
            Self::Pendulum(p) => p.validate(),
        }
    }

    /// Width of the observation vector fed to agents.
    pub fn observation_dim(&self) -> usize {
        match self {
            Self::CartPole(_) => 4,
            Self::Pendulum(_) => 3,
        }
    }
}

/// Returns `params` with the named multiplier set to `value`.
pub fn apply_perturbation(params: &EnvParams, name: &str, value: f64) -> Result<EnvParams> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidArgument(format!("multiplier {name} must be positive, got {value}")));
    }
    let mut out = *params;
    match (&mut out, name) {
        (EnvParams::CartPole(p), "relative_mass") => p.relative_mass = value,
        (EnvParams::CartPole(p), "relative_length") => p.relative_length = value,
        (EnvParams::Pendulum(p), "relative_mass") => p.relative_mass = value,
        _ => return Err(Error::UnknownMultiplier(name.to_string())),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub reward: f64,
    /// Episode over, by failure or by the step limit.
    pub done: bool,
    /// Episode over by failure only. Time-limit ends keep bootstrapping.
    pub terminal: bool,
}

impl CartPoleState {
    pub fn observation(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    fn is_finite(&self) -> bool {
        self.observation().iter().all(|v| v.is_finite())
    }
}

impl PendulumState {
    /// `(cos θ, sin θ, θ̇)`.
    pub fn observation(&self) -> [f64; 3] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

pub fn reset_cartpole_with(rng: &mut Rng) -> CartPoleState {
    let mut u = || rng.gen_range(-0.05..=0.05);
    CartPoleState { x: u(), x_dot: u(), theta: u(), theta_dot: u(), steps: 0 }
}

pub fn reset_pendulum_with(rng: &mut Rng) -> PendulumState {
    let theta = rng.gen_range(-PI..=PI);
    let theta_dot = rng.gen_range(-1.0..=1.0);
    PendulumState { theta, theta_dot, steps: 0 }
}

pub fn reset_cartpole(seed: u64) -> CartPoleState {
    reset_cartpole_with(&mut seeded(seed))
}

pub fn reset_pendulum(seed: u64) -> PendulumState {
    reset_pendulum_with(&mut seeded(seed))
}

/// Action 1 pushes right, action 0 pushes left.
pub fn step_cartpole(state: &CartPoleState, params: &CartPoleParams, action: usize) -> Result<Step<CartPoleState>> {
    if action > 1 {
        return Err(Error::InvalidArgument(format!("cart-pole action {action} not in {{0, 1}}")));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("cart-pole state {state:?}")));
    }
    let m_c = params.cart_mass;
    let m_p = params.pole_mass * params.relative_mass;
    let l = params.pole_half_length * params.relative_length;
    let total = m_c + m_p;
    let force = if action == 1 { params.force_mag } else { -params.force_mag };
    let (sin, cos) = state.theta.sin_cos();
    let w2 = state.theta_dot * state.theta_dot;

    let theta_acc = (params.gravity * sin + cos * (-force - m_p * l * w2 * sin) / total)
        / (l * (4.0 / 3.0 - m_p * cos * cos / total));
    let x_acc = (force + m_p * l * (w2 * sin - theta_acc * cos)) / total;

    let dt = params.dt;
    let next = CartPoleState {
        x: state.x + dt * state.x_dot,
        x_dot: state.x_dot + dt * x_acc,
        theta: state.theta + dt * state.theta_dot,
        theta_dot: state.theta_dot + dt * theta_acc,
        steps: state.steps + 1,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("cart-pole state {next:?}")));
    }
    let terminal = next.theta.abs() >= params.angle_limit || next.x.abs() >= params.x_limit;
    Ok(Step { state: next, reward: 1.0, done: terminal || next.steps >= params.max_steps, terminal })
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// The reward is charged on the pre-step state and the clipped torque.
pub fn step_pendulum(state: &PendulumState, params: &PendulumParams, torque: f64) -> Result<Step<PendulumState>> {
    if !(state.theta.is_finite() && state.theta_dot.is_finite() && torque.is_finite()) {
        return Err(Error::NonFinite(format!("pendulum state {state:?}, torque {torque}")));
    }
    let u = torque.clamp(-params.torque_limit, params.torque_limit);
    let m = params.mass * params.relative_mass;
    let l = params.length;
    let th = wrap_angle(state.theta);
    let reward = -(th * th + 0.1 * state.theta_dot * state.theta_dot + 0.001 * u * u);

    let theta_acc = 3.0 * params.gravity / (2.0 * l) * state.theta.sin() + 3.0 / (m * l * l) * u;
    let theta_dot = (state.theta_dot + params.dt * theta_acc).clamp(-params.speed_limit, params.speed_limit);
    let next = PendulumState {
        theta: state.theta + params.dt * state.theta_dot,
        theta_dot,
        steps: state.steps + 1,
    };
    Ok(Step { state: next, reward, done: next.steps >= params.max_steps, terminal: false })
}

/// Minimal episode driver shared by the agents.
#[derive(Debug, Clone)]
pub enum Env {
    CartPole { params: CartPoleParams, state: CartPoleState },
    Pendulum { params: PendulumParams, state: PendulumState },
}

/// Observation after a step, plus reward and end flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub terminal: bool,
}

impl Env {
    pub fn new(params: &EnvParams) -> Result<Self> {
        params.validate()?;
        Ok(match *params {
            EnvParams::CartPole(p) => Env::CartPole { params: p, state: reset_cartpole(0) },
            EnvParams::Pendulum(p) => Env::Pendulum { params: p, state: reset_pendulum(0) },
        })
    }

    pub fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Env::CartPole { state, .. } => *state = reset_cartpole_with(rng),
            Env::Pendulum { state, .. } => *state = reset_pendulum_with(rng),
        }
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::CartPole { state, .. } => state.observation().to_vec(),
            Env::Pendulum { state, .. } => state.observation().to_vec(),
        }
    }

    /// Discrete action index for cart-pole, `action[0]` as torque for pendulum.
    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let (reward, done, terminal) = match self {
            Env::CartPole { params, state } => {
                let s = step_cartpole(state, params, action[0] as usize)?;
                *state = s.state;
                (s.reward, s.done, s.terminal)
            }
            Env::Pendulum { params, state } => {
                let s = step_pendulum(state, params, action[0])?;
                *state = s.state;
                (s.reward, s.done, s.terminal)
            }
        };
        Ok(EnvStep { observation: self.observation(), reward, done, terminal })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_bounded() {
        assert_eq!(reset_cartpole(3), reset_cartpole(3));
        assert_eq!(reset_pendulum(3), reset_pendulum(3));
        for seed in 0..200 {
            let c = reset_cartpole(seed);
            assert!(c.observation().iter().all(|v| v.abs() <= 0.05));
            let p = reset_pendulum(seed);
            assert!(p.theta.abs() <= PI && p.theta_dot.abs() <= 1.0);
        }
    }

    #[test]
    fn rightward_push_signs() {
        let s = CartPoleState { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0, steps: 0 };
        let p = CartPoleParams::default();
        let a = step_cartpole(&s, &p, 1).unwrap().state;
        let b = step_cartpole(&a, &p, 1).unwrap().state;
        assert!(a.x_dot > 0.0, "ẍ > 0");
        assert!(a.theta_dot < 0.0, "θ̈ < 0");
        assert!(b.x > 0.0 && b.theta < 0.0);
    }

    #[test]
    fn angle_limit_is_terminal() {
        let p = CartPoleParams::default();
        // with θ̇ = 0 one Euler step leaves θ on the limit
        let s = CartPoleState { x: 0.0, x_dot: 0.0, theta: p.angle_limit, theta_dot: 0.0, steps: 0 };
        let out = step_cartpole(&s, &p, 0).unwrap();
        assert_eq!(out.state.theta, p.angle_limit);
        assert!(out.done && out.terminal);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn cartpole_time_limit_is_not_terminal() {
        let p = CartPoleParams { max_steps: 1, ..Default::default() };
        let out = step_cartpole(&reset_cartpole(0), &p, 0).unwrap();
        assert!(out.done && !out.terminal);
    }

    #[test]
    fn nan_state_faults() {
        let s = CartPoleState { x: f64::NAN, x_dot: 0.0, theta: 0.0, theta_dot: 0.0, steps: 0 };
        assert!(matches!(step_cartpole(&s, &CartPoleParams::default(), 0), Err(Error::NonFinite(_))));
        assert!(step_cartpole(&reset_cartpole(0), &CartPoleParams::default(), 2).is_err());
    }

    #[test]
    fn pendulum_rest_point() {
        let s = PendulumState { theta: 0.0, theta_dot: 0.0, steps: 0 };
        let out = step_pendulum(&s, &PendulumParams::default(), 0.0).unwrap();
        assert_eq!((out.state.theta, out.state.theta_dot), (0.0, 0.0));
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn torque_saturates() {
        let s = PendulumState { theta: 0.3, theta_dot: -0.2, steps: 0 };
        let p = PendulumParams::default();
        assert_eq!(step_pendulum(&s, &p, 50.0).unwrap(), step_pendulum(&s, &p, 2.0).unwrap());
        assert_eq!(step_pendulum(&s, &p, -50.0).unwrap(), step_pendulum(&s, &p, -2.0).unwrap());
    }

    #[test]
    fn pendulum_speed_clipped_and_done_at_limit() {
        let p = PendulumParams::default();
        let mut s = PendulumState { theta: 1.0, theta_dot: 7.99, steps: 0 };
        for _ in 0..p.max_steps {
            let out = step_pendulum(&s, &p, 2.0).unwrap();
            assert!(out.state.theta_dot.abs() <= 8.0);
            let bound = PI * PI + 0.1 * 64.0 + 0.001 * 4.0;
            assert!(out.reward <= 0.0 && out.reward >= -bound);
            assert!(!out.terminal);
            s = out.state;
        }
        assert!(step_pendulum(&PendulumState { steps: p.max_steps - 1, ..s }, &p, 0.0).unwrap().done);
    }

    #[test]
    fn perturbation_names() {
        let cp = EnvParams::nominal(EnvId::CartPole);
        let pd = EnvParams::nominal(EnvId::Pendulum);
        assert_eq!(apply_perturbation(&cp, "relative_mass", 1.0).unwrap(), cp);
        assert!(matches!(apply_perturbation(&pd, "relative_length", 2.0), Err(Error::UnknownMultiplier(_))));
        assert!(matches!(apply_perturbation(&cp, "gravity", 2.0), Err(Error::UnknownMultiplier(_))));
        assert!(apply_perturbation(&cp, "relative_mass", 0.0).is_err());
    }

    #[test]
    fn double_mass_halves_torque_term() {
        let p1 = PendulumParams::default();
        let p2 = match apply_perturbation(&EnvParams::Pendulum(p1), "relative_mass", 2.0).unwrap() {
            EnvParams::Pendulum(p) => p,
            _ => unreachable!(),
        };
        let s = PendulumState { theta: 0.0, theta_dot: 0.0, steps: 0 };
        let d1 = step_pendulum(&s, &p1, 1.0).unwrap().state.theta_dot;
        let d2 = step_pendulum(&s, &p2, 1.0).unwrap().state.theta_dot;
        assert!((d1 - 2.0 * d2).abs() < 1e-15);
    }

    #[test]
    fn wrap_range() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!(wrap_angle(PI) >= -PI && wrap_angle(PI) < PI);
    }
}
