use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::{Activation, AgentSpec};

/// Candidate values for each searched hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub action_sets: Vec<Vec<i32>>,
    pub activations: Vec<Activation>,
    pub hidden_layers: Vec<Vec<usize>>,
    pub learning_rates: Vec<f64>,
    pub clip_ranges: Vec<f64>,
    pub entropy_coefs: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            action_sets: vec![
                vec![0, 20, 50],
                vec![0, 10, 20],
                vec![0, 40, 50, 60],
                vec![0, 50, 100],
                vec![0, 10, 20, 30],
            ],
            activations: vec![Activation::Sigmoid, Activation::Relu, Activation::Tanh],
            hidden_layers: vec![
                vec![6, 4],
                vec![4, 2],
                vec![6, 6, 6],
                vec![8, 2],
                vec![10, 2],
                vec![6, 2],
                vec![8, 4],
            ],
            learning_rates: vec![5e-5, 1e-5, 0.01, 0.005, 1e-4, 1e-3],
            clip_ranges: vec![0.05, 0.1, 0.2, 0.4],
            entropy_coefs: vec![1e-5, 1e-4, 1e-3, 0.01],
            gammas: vec![0.9, 0.99, 0.999, 0.9999],
        }
    }
}

impl SearchGrid {
    /// A grid that always yields `spec`'s searched values.
    pub fn singleton(spec: &AgentSpec) -> Self {
        Self {
            action_sets: vec![spec.action_set.clone()],
            activations: vec![spec.activation],
            hidden_layers: vec![spec.hidden_layers.clone()],
            learning_rates: vec![spec.learning_rate],
            clip_ranges: vec![spec.clip_range],
            entropy_coefs: vec![spec.entropy_coef],
            gammas: vec![spec.gamma],
        }
    }

    pub fn validate(&self, tick_spacing: i32) -> Result<()> {
        let empty = [
            ("action_sets", self.action_sets.is_empty()),
            ("activations", self.activations.is_empty()),
            ("hidden_layers", self.hidden_layers.is_empty()),
            ("learning_rates", self.learning_rates.is_empty()),
            ("clip_ranges", self.clip_ranges.is_empty()),
            ("entropy_coefs", self.entropy_coefs.is_empty()),
            ("gammas", self.gammas.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Validation(format!("search grid `{name}` is empty")));
        }
        for a in &self.action_sets {
            crate::env::validate_action_set(a, tick_spacing)?;
        }
        // every combination must form a valid spec
        let probe = AgentSpec::default();
        for h in &self.hidden_layers {
            AgentSpec {
                hidden_layers: h.clone(),
                ..probe.clone()
            }
            .validate()?;
        }
        for &learning_rate in &self.learning_rates {
            AgentSpec {
                learning_rate,
                ..probe.clone()
            }
            .validate()?;
        }
        for &clip_range in &self.clip_ranges {
            AgentSpec {
                clip_range,
                ..probe.clone()
            }
            .validate()?;
        }
        for &entropy_coef in &self.entropy_coefs {
            AgentSpec {
                entropy_coef,
                ..probe.clone()
            }
            .validate()?;
        }
        for &gamma in &self.gammas {
            AgentSpec {
                gamma,
                ..probe.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Independent uniform draw per searched dimension; the rest comes from `template`.
pub fn sample_spec<R: Rng + ?Sized>(
    grid: &SearchGrid,
    template: &AgentSpec,
    rng: &mut R,
) -> AgentSpec {
    fn pick<'a, T, R: Rng + ?Sized>(xs: &'a [T], rng: &mut R) -> &'a T {
        xs.choose(rng).expect("grid validated as nonempty")
    }
    AgentSpec {
        action_set: pick(&grid.action_sets, rng).clone(),
        activation: *pick(&grid.activations, rng),
        hidden_layers: pick(&grid.hidden_layers, rng).clone(),
        learning_rate: *pick(&grid.learning_rates, rng),
        clip_range: *pick(&grid.clip_ranges, rng),
        entropy_coef: *pick(&grid.entropy_coefs, rng),
        gamma: *pick(&grid.gammas, rng),
        ..template.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_grid_is_valid() {
        SearchGrid::default().validate(10).unwrap();
    }

    #[test]
    fn singleton_grid_returns_the_spec() {
        let spec = AgentSpec {
            action_set: vec![0, 40, 50, 60],
            activation: Activation::Relu,
            hidden_layers: vec![6, 6, 6],
            learning_rate: 0.005,
            clip_range: 0.4,
            entropy_coef: 1e-5,
            gamma: 0.9,
            ..AgentSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            assert_eq!(
                sample_spec(&SearchGrid::singleton(&spec), &spec, &mut rng),
                spec
            );
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let grid = SearchGrid::default();
        let t = AgentSpec::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_spec(&grid, &t, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn learning_rate_draws_are_uniform() {
        let grid = SearchGrid::default();
        let t = AgentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1000;
        let k = grid.learning_rates.len();
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let s = sample_spec(&grid, &t, &mut rng);
            let i = grid
                .learning_rates
                .iter()
                .position(|v| *v == s.learning_rate)
                .unwrap();
            counts[i] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn empty_dimension_is_rejected() {
        let grid = SearchGrid {
            gammas: vec![],
            ..SearchGrid::default()
        };
        assert!(grid
            .validate(10)
            .unwrap_err()
            .to_string()
            .contains("gammas"));
    }
}
