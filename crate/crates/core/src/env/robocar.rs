use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{levels, uniform, wrap_angle, Dynamics, EnvState};

/// Kinematic car driving towards a randomly placed goal. The car starts at
/// the origin facing right (+x).
///
/// Internal state is `[px, py, heading, gx, gy]`; the observed state is
/// `[y, d, bearing]` with `d` the distance to the goal and `bearing` the
/// goal direction relative to the heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoboCar {
    pub goal_distance: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub horizon: usize,
    pub goal_radius: f64,
    pub goal_bonus: f64,
}

impl Default for RoboCar {
    fn default() -> Self {
        Self {
            goal_distance: 6.0,
            max_speed: 0.3,
            max_steer: 0.3,
            horizon: 100,
            goal_radius: 1.0,
            goal_bonus: 1.0,
        }
    }
}

impl RoboCar {
    fn reach(&self) -> f64 {
        self.max_speed * self.horizon as f64
    }
}

impl Dynamics for RoboCar {
    fn state_dims(&self) -> usize {
        3
    }

    fn action_dims(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dimension_names(&self) -> Vec<String> {
        ["y", "d", "bearing", "speed", "steer"].map(String::from).to_vec()
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        vec![
            (-self.reach(), self.reach()),
            (0.0, self.goal_distance + self.reach()),
            (-PI, PI),
            (0.0, self.max_speed),
            (-self.max_steer, self.max_steer),
        ]
    }

    fn action_levels(&self, count: usize) -> Vec<Vec<f64>> {
        vec![
            levels(0.0, self.max_speed, count),
            levels(-self.max_steer, self.max_steer, count),
        ]
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        let angle = uniform(rng, -PI, PI);
        vec![
            0.0,
            0.0,
            0.0,
            self.goal_distance * angle.cos(),
            self.goal_distance * angle.sin(),
        ]
    }

    fn observe(&self, s: &EnvState) -> Vec<f64> {
        let (dx, dy) = (s[3] - s[0], s[4] - s[1]);
        vec![s[1], dx.hypot(dy), wrap_angle(dy.atan2(dx) - s[2])]
    }

    fn step(&self, s: &EnvState, action: &[f64], _rng: &mut dyn rand::RngCore) -> EnvState {
        let speed = action[0].clamp(0.0, self.max_speed);
        let steer = action[1].clamp(-self.max_steer, self.max_steer);
        let heading = wrap_angle(s[2] + steer);
        vec![
            s[0] + speed * heading.cos(),
            s[1] + speed * heading.sin(),
            heading,
            s[3],
            s[4],
        ]
    }

    /// Reduction in goal distance produced by the action, plus a bonus while
    /// within the goal radius. Computed from the observed state alone.
    fn reward(&self, sa: &[f64]) -> f64 {
        let (d, bearing) = (sa[1], sa[2]);
        let speed = sa[3].clamp(0.0, self.max_speed);
        let steer = sa[4].clamp(-self.max_steer, self.max_steer);
        let after = bearing - steer;
        let next = (d * d + speed * speed - 2.0 * d * speed * after.cos()).max(0.0).sqrt();
        let bonus = if d < self.goal_radius { self.goal_bonus } else { 0.0 };
        d - next + bonus
    }
}
