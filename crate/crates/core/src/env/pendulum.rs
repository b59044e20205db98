use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{levels, uniform, wrap_angle, Dynamics, EnvState};

/// Torque-limited pendulum. Angle 0 is upright; the hanging position `pi`
/// is the stable equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub horizon: usize,
    pub velocity_weight: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            length: 1.0,
            mass: 1.0,
            damping: 0.05,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            horizon: 200,
            velocity_weight: 0.1,
        }
    }
}

impl Dynamics for Pendulum {
    fn state_dims(&self) -> usize {
        2
    }

    fn action_dims(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dimension_names(&self) -> Vec<String> {
        ["theta", "omega", "torque"].map(String::from).to_vec()
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        vec![
            (-PI, PI),
            (-self.max_speed, self.max_speed),
            (-self.max_torque, self.max_torque),
        ]
    }

    fn action_levels(&self, count: usize) -> Vec<Vec<f64>> {
        vec![levels(-self.max_torque, self.max_torque, count)]
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        vec![wrap_angle(uniform(rng, -PI, PI)), 0.0]
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.clone()
    }

    fn step(&self, state: &EnvState, action: &[f64], _rng: &mut dyn rand::RngCore) -> EnvState {
        let (theta, omega) = (state[0], state[1]);
        let torque = action[0].clamp(-self.max_torque, self.max_torque);
        let accel = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * torque
            - self.damping * omega;
        let omega = (omega + self.dt * accel).clamp(-self.max_speed, self.max_speed);
        vec![wrap_angle(theta + self.dt * omega), omega]
    }

    fn reward(&self, sa: &[f64]) -> f64 {
        -(sa[0] * sa[0] + self.velocity_weight * sa[1] * sa[1])
    }
}
