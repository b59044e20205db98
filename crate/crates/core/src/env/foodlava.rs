use serde::{Deserialize, Serialize};

use super::{levels, uniform, Dynamics, EnvState};

/// Axis-aligned region `[x0, x1) x [y0, y1)`; an upper bound lying on the
/// arena edge is inclusive since clipping puts points exactly on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect {
    fn contains_axis((lo, hi): (f64, f64), v: f64, edge: f64) -> bool {
        v >= lo && (v < hi || (hi >= edge && v <= hi))
    }

    pub fn contains(&self, px: f64, py: f64, edge: f64) -> bool {
        Self::contains_axis(self.x, px, edge) && Self::contains_axis(self.y, py, edge)
    }
}

/// Continuous square arena with a food corner and a lava band that leaves a
/// gap at the right edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodLava {
    pub size: f64,
    pub max_step: f64,
    pub horizon: usize,
    pub food: Rect,
    pub food_reward: f64,
    pub lava: Rect,
    pub lava_reward: f64,
    pub start: Rect,
}

impl Default for FoodLava {
    fn default() -> Self {
        Self {
            size: 10.0,
            max_step: 0.25,
            horizon: 200,
            food: Rect {
                x: (8.0, 10.0),
                y: (8.0, 10.0),
            },
            food_reward: 1.0,
            lava: Rect {
                x: (0.0, 8.0),
                y: (3.5, 4.5),
            },
            lava_reward: -1.0,
            start: Rect {
                x: (0.5, 1.5),
                y: (0.5, 1.5),
            },
        }
    }
}

impl Dynamics for FoodLava {
    fn state_dims(&self) -> usize {
        2
    }

    fn action_dims(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dimension_names(&self) -> Vec<String> {
        ["x", "y", "dx", "dy"].map(String::from).to_vec()
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        let a = (-self.max_step, self.max_step);
        vec![(0.0, self.size), (0.0, self.size), a, a]
    }

    fn action_levels(&self, count: usize) -> Vec<Vec<f64>> {
        vec![levels(-self.max_step, self.max_step, count); 2]
    }

    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        vec![
            uniform(rng, self.start.x.0, self.start.x.1),
            uniform(rng, self.start.y.0, self.start.y.1),
        ]
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.clone()
    }

    fn step(&self, state: &EnvState, action: &[f64], _rng: &mut dyn rand::RngCore) -> EnvState {
        let clamp_a = |a: f64| a.clamp(-self.max_step, self.max_step);
        vec![
            (state[0] + clamp_a(action[0])).clamp(0.0, self.size),
            (state[1] + clamp_a(action[1])).clamp(0.0, self.size),
        ]
    }

    fn reward(&self, sa: &[f64]) -> f64 {
        let (x, y) = (sa[0], sa[1]);
        if self.food.contains(x, y, self.size) {
            self.food_reward
        } else if self.lava.contains(x, y, self.size) {
            self.lava_reward
        } else {
            0.0
        }
    }
}
