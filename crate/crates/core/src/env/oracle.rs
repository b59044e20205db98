use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::clamp_label;
use crate::normal::std_normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    #[default]
    Hard,
    Thurstone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub mode: OracleMode,
    /// Fitness-difference scale of the Thurstone mode.
    pub scale: f64,
    /// Replace the probability with a Bernoulli draw of it (still clamped).
    pub stochastic: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::Hard,
            scale: 1.0,
            stochastic: false,
        }
    }
}

/// Synthetic preference for trajectory `i` over `j` given their
/// ground-truth fitness.
pub fn oracle_label<R: Rng + ?Sized>(fi: f64, fj: f64, oracle: &OracleConfig, epsilon: f64, rng: &mut R) -> f64 {
    let p = if fi == fj {
        0.5
    } else {
        match oracle.mode {
            OracleMode::Hard => {
                if fi > fj {
                    1.0
                } else {
                    0.0
                }
            }
            OracleMode::Thurstone => std_normal_cdf((fi - fj) / oracle.scale),
        }
    };
    let p = if oracle.stochastic && p != 0.5 {
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    } else {
        p
    };
    clamp_label(p, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hard_and_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hard = OracleConfig::default();
        assert_eq!(oracle_label(3.0, 1.0, &hard, 0.1, &mut rng), 0.9);
        assert_eq!(oracle_label(1.0, 3.0, &hard, 0.1, &mut rng), 0.1);
        let th = OracleConfig {
            mode: OracleMode::Thurstone,
            ..OracleConfig::default()
        };
        assert_eq!(oracle_label(2.0, 2.0, &hard, 0.1, &mut rng), 0.5);
        assert_eq!(oracle_label(2.0, 2.0, &th, 0.1, &mut rng), 0.5);
    }

    #[test]
    fn thurstone_one_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let th = OracleConfig {
            mode: OracleMode::Thurstone,
            scale: 2.5,
            stochastic: false,
        };
        // Reference value of the standard normal CDF at 1.
        let y = oracle_label(3.5, 1.0, &th, 0.1, &mut rng);
        assert!((y - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(oracle_label(100.0, 0.0, &th, 0.1, &mut rng), 0.9);
    }

    #[test]
    fn labels_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [OracleMode::Hard, OracleMode::Thurstone] {
            let cfg = OracleConfig {
                mode,
                scale: 3.0,
                stochastic: false,
            };
            for (a, b) in [(0.0, 1.0), (-4.0, 2.5), (7.0, 7.0), (10.0, -1.0)] {
                let s = oracle_label(a, b, &cfg, 0.1, &mut rng) + oracle_label(b, a, &cfg, 0.1, &mut rng);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stochastic_draws_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = OracleConfig {
            mode: OracleMode::Thurstone,
            scale: 1.0,
            stochastic: true,
        };
        let mut ones = 0;
        for _ in 0..1000 {
            let y = oracle_label(1.0, 0.0, &cfg, 0.1, &mut rng);
            assert!(y == 0.9 || y == 0.1);
            ones += (y == 0.9) as usize;
        }
        assert!((780..900).contains(&ones), "{ones}");
    }
}
