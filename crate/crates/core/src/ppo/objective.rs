use super::mlp::Mlp;
use super::policy::Categorical;

/// Discounted Monte-Carlo returns `G_t = r_t + γ G_{t+1}` of one finished episode.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let dones: Vec<bool> = (0..rewards.len()).map(|i| i + 1 == rewards.len()).collect();
    compute_returns_bootstrapped(rewards, &dones, 0.0, gamma)
}

/// Returns over a rollout that may span several episodes. `done[t]` cuts the
/// recursion after step `t`; `last_value` seeds it past the final step.
pub fn compute_returns_bootstrapped(
    rewards: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len());
    let mut out = vec![0.0; rewards.len()];
    let mut next = last_value;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

/// Generalised advantage estimates; the returns are `advantage + value`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, keep) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (last_value, 1.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * keep * running;
        adv[t] = running;
    }
    adv
}

/// `A = G − V`, standardised to zero mean and unit variance over the batch.
/// A batch with (near) constant advantages is only centred.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = returns.iter().zip(values).map(|(g, v)| g - v).collect();
    normalize(&raw)
}

pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return xs.iter().map(|x| x - mean).collect();
    }
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// Transitions collected under the behaviour policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub clip_range: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Value of the objective and its parts, averaged over a minibatch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// `surrogate − c1 · value_loss + c2 · entropy`, to be maximised.
    pub objective: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Share of samples whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
}

/// Objective and its gradient (ascent direction) with respect to actor and critic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub terms: ObjectiveTerms,
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

/// Clipped surrogate objective over the samples `idx` of `batch`.
pub fn ppo_objective(
    actor: &Mlp,
    critic: &Mlp,
    batch: &RolloutBatch,
    idx: &[usize],
    coef: Coefficients,
) -> ObjectiveGrad {
    assert!(!idx.is_empty(), "empty minibatch");
    let n = idx.len() as f64;
    let eps = coef.clip_range;
    let mut actor_grad = vec![0.0; actor.num_params()];
    let mut critic_grad = vec![0.0; critic.num_params()];
    let (mut surrogate, mut value_loss, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0usize);

    for &i in idx {
        let obs = &batch.observations[i];
        let action = batch.actions[i];
        let adv = batch.advantages[i];

        let cache = actor.forward_cached(obs);
        let dist = Categorical::from_logits(cache.output());
        let ratio = (dist.log_prob(action) - batch.log_probs[i]).exp();
        let bounded = ratio.clamp(1.0 - eps, 1.0 + eps);
        if bounded != ratio {
            clipped += 1;
        }
        let (unclipped_term, clipped_term) = (ratio * adv, bounded * adv);
        // gradient flows only through the unclipped branch when it is the minimum
        let d_ratio = if unclipped_term <= clipped_term {
            adv
        } else {
            0.0
        };
        surrogate += unclipped_term.min(clipped_term);
        let h = dist.entropy();
        entropy += h;

        let probs = dist.probs();
        let logp = dist.log_probs();
        let d_logits: Vec<f64> = (0..probs.len())
            .map(|j| {
                let onehot = if j == action { 1.0 } else { 0.0 };
                let d_surr = d_ratio * ratio * (onehot - probs[j]);
                let d_ent = -probs[j] * (logp[j] + h);
                (d_surr + coef.entropy_coef * d_ent) / n
            })
            .collect();
        actor.backward(&cache, &d_logits, &mut actor_grad);

        let vcache = critic.forward_cached(obs);
        let err = vcache.output()[0] - batch.returns[i];
        value_loss += err * err;
        critic.backward(
            &vcache,
            &[-2.0 * coef.value_coef * err / n],
            &mut critic_grad,
        );
    }

    let (surrogate, value_loss, entropy) = (surrogate / n, value_loss / n, entropy / n);
    ObjectiveGrad {
        terms: ObjectiveTerms {
            objective: surrogate - coef.value_coef * value_loss + coef.entropy_coef * entropy,
            surrogate,
            value_loss,
            entropy,
            clip_fraction: clipped as f64 / n,
        },
        actor: actor_grad,
        critic: critic_grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::mlp::Activation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn returns_worked_example() {
        assert_eq!(compute_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn returns_restart_at_episode_boundaries() {
        let g = compute_returns_bootstrapped(
            &[1.0, 2.0, 3.0, 4.0],
            &[false, true, false, false],
            10.0,
            0.5,
        );
        assert_eq!(g, vec![2.0, 2.0, 3.0 + 0.5 * (4.0 + 5.0), 9.0]);
    }

    #[test]
    fn gae_with_unit_lambda_matches_returns_minus_values() {
        let r = [0.5, -1.0, 2.0, 0.25];
        let v = [0.1, 0.2, -0.3, 0.4];
        let d = [false, false, true, false];
        let adv = compute_gae(&r, &v, &d, 0.7, 0.9, 1.0);
        let g = compute_returns_bootstrapped(&r, &d, 0.7, 0.9);
        for t in 0..4 {
            assert!((adv[t] - (g[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_discount_returns_rewards() {
        let r = [0.5, -2.0, 3.25];
        assert_eq!(compute_returns(&r, 0.0), r.to_vec());
    }

    #[test]
    fn advantage_examples() {
        let g = [1.0, 4.0, -2.0, 0.5];
        assert_eq!(advantages(&g, &g), vec![0.0; 4]);
        assert_eq!(advantages(&g, &[0.0; 4]), normalize(&g));
        let v = [0.3, -0.1, 0.7, 0.2];
        let shifted: Vec<f64> = v.iter().map(|x| x + 10.0).collect();
        let (a, b) = (advantages(&g, &v), advantages(&g, &shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_ratio_surrogate_is_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let actor = Mlp::orthogonal(&[3, 4, 3], Activation::Relu, 1.0, &mut rng);
        let critic = Mlp::zeros(&[3, 1], Activation::Relu);
        let mut batch = random_batch(&mut rng, 12, 3, 3);
        for i in 0..12 {
            let d = Categorical::from_logits(&actor.forward(&batch.observations[i]));
            batch.log_probs[i] = d.log_prob(batch.actions[i]);
        }
        let idx: Vec<usize> = (0..12).collect();
        let coef = Coefficients {
            clip_range: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
        };
        let g = ppo_objective(&actor, &critic, &batch, &idx, coef);
        let mean = batch.advantages.iter().sum::<f64>() / 12.0;
        assert!((g.terms.surrogate - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_advantages_do_not_blow_up() {
        let a = advantages(&[1.0; 4], &[0.0; 4]);
        assert_eq!(a, vec![0.0; 4]);
    }

    proptest! {
        #[test]
        fn returns_match_naive_double_sum(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..40),
            gamma in 0.0f64..1.0,
        ) {
            let g = compute_returns(&rewards, gamma);
            #[allow(clippy::needless_range_loop)]
            for t in 0..rewards.len() {
                let naive: f64 = (t..rewards.len())
                    .map(|k| gamma.powi((k - t) as i32) * rewards[k])
                    .sum();
                prop_assert!((g[t] - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
            }
        }

        #[test]
        fn normalised_advantages_are_standardised(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..50),
        ) {
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let a = normalize(&xs);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, actions: usize) -> RolloutBatch {
        RolloutBatch {
            observations: (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            actions: (0..n).map(|_| rng.gen_range(0..actions)).collect(),
            log_probs: (0..n)
                .map(|_| -(actions as f64).ln() + rng.gen_range(-0.3..0.3))
                .collect(),
            returns: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            advantages: (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        }
    }

    #[test]
    fn wide_clip_reduces_to_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let actor = Mlp::orthogonal(&[4, 5, 3], Activation::Tanh, 1.0, &mut rng);
        let critic = Mlp::orthogonal(&[4, 5, 1], Activation::Tanh, 1.0, &mut rng);
        let batch = random_batch(&mut rng, 16, 4, 3);
        let idx: Vec<usize> = (0..16).collect();
        let coef = Coefficients {
            clip_range: 1e6,
            value_coef: 0.0,
            entropy_coef: 0.0,
        };
        let g = ppo_objective(&actor, &critic, &batch, &idx, coef);

        // ∇ mean(ratio · A), written out per sample
        let mut expect = vec![0.0; actor.num_params()];
        for i in 0..16 {
            let cache = actor.forward_cached(&batch.observations[i]);
            let d = Categorical::from_logits(cache.output());
            let ratio = (d.log_prob(batch.actions[i]) - batch.log_probs[i]).exp();
            let dl: Vec<f64> = (0..3)
                .map(|j| {
                    let onehot = if j == batch.actions[i] { 1.0 } else { 0.0 };
                    batch.advantages[i] * ratio * (onehot - d.probs()[j]) / 16.0
                })
                .collect();
            actor.backward(&cache, &dl, &mut expect);
        }
        for (a, b) in g.actor.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert_eq!(g.terms.clip_fraction, 0.0);

        // one gradient-ascent step on either objective lands on the same parameters
        let lr = 0.05;
        let mut clipped = actor.clone();
        let mut vanilla = actor.clone();
        clipped
            .params_mut()
            .iter_mut()
            .zip(&g.actor)
            .for_each(|(p, d)| *p += lr * d);
        vanilla
            .params_mut()
            .iter_mut()
            .zip(&expect)
            .for_each(|(p, d)| *p += lr * d);
        for (a, b) in clipped.params().iter().zip(vanilla.params()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn clipped_samples_carry_no_surrogate_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Mlp::orthogonal(&[3, 4, 2], Activation::Sigmoid, 1.0, &mut rng);
        let critic = Mlp::zeros(&[3, 1], Activation::Sigmoid);
        let mut batch = random_batch(&mut rng, 1, 3, 2);
        let d = Categorical::from_logits(&actor.forward(&batch.observations[0]));
        // ratio = e^{1} > 1 + ε with positive advantage: clipped branch wins
        batch.log_probs[0] = d.log_prob(batch.actions[0]) - 1.0;
        batch.advantages[0] = 1.0;
        let coef = Coefficients {
            clip_range: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.0,
        };
        let g = ppo_objective(&actor, &critic, &batch, &[0], coef);
        assert!(g.actor.iter().all(|x| *x == 0.0));
        assert_eq!(g.terms.clip_fraction, 1.0);
        assert!((g.terms.surrogate - 1.2).abs() < 1e-15);
    }
}
