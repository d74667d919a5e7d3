use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Activation, Mlp};
use super::objective::{
    advantages, compute_gae, compute_returns_bootstrapped, normalize, ppo_objective, Coefficients,
    ObjectiveTerms, RolloutBatch,
};
use super::policy::Categorical;
use crate::env::LpEnv;
use crate::error::{Error, Result};

/// Step outcome in the shape the trainer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment with a discrete action space.
pub trait Environment {
    fn observation_len(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<Transition>;
}

impl Environment for LpEnv {
    fn observation_len(&self) -> usize {
        crate::env::OBS_LEN
    }

    fn action_count(&self) -> usize {
        self.config().action_set.len()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        Ok(LpEnv::reset(self)?.0)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let out = LpEnv::step(self, action)?;
        Ok(Transition {
            observation: out.observation.0,
            reward: out.reward,
            done: out.done,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Updates without improvement before training stops.
    pub patience: usize,
    /// Minimum relative improvement of the rollout's mean step reward.
    pub min_rel_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 5,
            min_rel_improvement: 0.01,
        }
    }
}

/// Everything that defines one agent: action set, network shape and PPO settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSpec {
    pub action_set: Vec<i32>,
    pub activation: Activation,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    /// `None` uses plain Monte-Carlo returns.
    pub gae_lambda: Option<f64>,
    pub rollout_length: usize,
    pub total_timesteps: usize,
    pub n_epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: Option<f64>,
    pub early_stop: Option<EarlyStop>,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            action_set: vec![0, 20, 50],
            activation: Activation::Tanh,
            hidden_layers: vec![6, 4],
            learning_rate: 1e-4,
            clip_range: 0.2,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: None,
            rollout_length: 2500,
            total_timesteps: 100_000,
            n_epochs: 10,
            minibatch_size: 64,
            max_grad_norm: Some(0.5),
            early_stop: Some(EarlyStop::default()),
        }
    }
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.action_set.is_empty() {
            return bad("action set is empty".into());
        }
        if self.hidden_layers.contains(&0) {
            return bad(format!(
                "hidden layer sizes must be positive: {:?}",
                self.hidden_layers
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.clip_range > 0.0) {
            return bad(format!(
                "clip range must be positive, got {}",
                self.clip_range
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if let Some(l) = self.gae_lambda {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("gae lambda must lie in [0, 1], got {l}"));
            }
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.rollout_length == 0 || self.minibatch_size == 0 || self.n_epochs == 0 {
            return bad("rollout length, minibatch size and epochs must be positive".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return bad(format!("max grad norm must be positive, got {g}"));
            }
        }
        Ok(())
    }

    fn coefficients(&self) -> Coefficients {
        Coefficients {
            clip_range: self.clip_range,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// Actor (logits) and critic (state value) networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(spec: &AgentSpec, obs_len: usize, rng: &mut R) -> Self {
        let n_actions = spec.action_set.len();
        let sizes = |out: usize| {
            let mut s = vec![obs_len];
            s.extend(&spec.hidden_layers);
            s.push(out);
            s
        };
        Self {
            actor: Mlp::orthogonal(&sizes(n_actions), spec.activation, 0.01, rng),
            critic: Mlp::orthogonal(&sizes(1), spec.activation, 1.0, rng),
        }
    }

    pub fn distribution(&self, obs: &[f64]) -> Categorical {
        Categorical::from_logits(&self.actor.forward(obs))
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    pub fn act_greedy(&self, obs: &[f64]) -> usize {
        self.distribution(obs).argmax()
    }
}

/// One row of the training curve, recorded after each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    pub timesteps: usize,
    pub mean_step_reward: f64,
    /// Mean return of episodes that finished during the rollout.
    pub mean_episode_reward: Option<f64>,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Columns: `update,timesteps,mean_step_reward,mean_episode_reward,surrogate,value_loss,entropy,clip_fraction`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "update",
        "timesteps",
        "mean_step_reward",
        "mean_episode_reward",
        "surrogate",
        "value_loss",
        "entropy",
        "clip_fraction",
    ])?;
    for p in curve {
        w.write_record([
            p.update.to_string(),
            p.timesteps.to_string(),
            p.mean_step_reward.to_string(),
            p.mean_episode_reward
                .map(|v| v.to_string())
                .unwrap_or_default(),
            p.surrogate.to_string(),
            p.value_loss.to_string(),
            p.entropy.to_string(),
            p.clip_fraction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<curve writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub curve: Vec<CurvePoint>,
    pub timesteps: usize,
    pub stopped_early: bool,
}

struct Rollout {
    batch: RolloutBatch,
    rewards: Vec<f64>,
    episode_returns: Vec<f64>,
}

/// Trains a fresh agent on `env` for `spec.total_timesteps` steps.
///
/// Fully determined by `seed`: initialisation, action sampling and minibatch
/// shuffling all draw from one ChaCha stream.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    spec: &AgentSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if env.action_count() != spec.action_set.len() {
        return Err(Error::Validation(format!(
            "environment has {} actions, agent spec has {}",
            env.action_count(),
            spec.action_set.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = Agent::new(spec, env.observation_len(), &mut rng);
    train_agent(env, spec, agent, &mut rng)
}

/// Continues training an existing agent.
pub fn train_agent<E: Environment + ?Sized>(
    env: &mut E,
    spec: &AgentSpec,
    mut agent: Agent,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let mut actor_opt = Adam::new(agent.actor.num_params(), spec.learning_rate);
    let mut critic_opt = Adam::new(agent.critic.num_params(), spec.learning_rate);
    let coef = spec.coefficients();

    let mut curve = Vec::new();
    let mut timesteps = 0;
    let mut obs = env.reset()?;
    let mut episode_return = 0.0;
    let mut best: Option<f64> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    while timesteps < spec.total_timesteps {
        let n = spec.rollout_length.min(spec.total_timesteps - timesteps);
        let rollout = collect(env, &agent, spec, n, &mut obs, &mut episode_return, rng)?;
        timesteps += n;
        let update = curve.len();

        let mut terms = ObjectiveTerms::default();
        let mut n_minibatches = 0usize;
        let mut order: Vec<usize> = (0..rollout.batch.len()).collect();
        for _ in 0..spec.n_epochs {
            order.shuffle(rng);
            for idx in order.chunks(spec.minibatch_size) {
                let mut g = ppo_objective(&agent.actor, &agent.critic, &rollout.batch, idx, coef);
                let finite = g.terms.objective.is_finite()
                    && g.actor.iter().chain(&g.critic).all(|x| x.is_finite());
                if !finite {
                    return Err(Error::Divergence {
                        update,
                        detail: format!(
                            "objective {} with non-finite gradient (surrogate {}, value loss {})",
                            g.terms.objective, g.terms.surrogate, g.terms.value_loss
                        ),
                    });
                }
                if let Some(max_norm) = spec.max_grad_norm {
                    let norm = g
                        .actor
                        .iter()
                        .chain(&g.critic)
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    if norm > max_norm {
                        let s = max_norm / (norm + 1e-6);
                        g.actor
                            .iter_mut()
                            .chain(g.critic.iter_mut())
                            .for_each(|x| *x *= s);
                    }
                }
                // Adam minimises, the objective is maximised
                g.actor
                    .iter_mut()
                    .chain(g.critic.iter_mut())
                    .for_each(|x| *x = -*x);
                actor_opt.step(agent.actor.params_mut(), &g.actor);
                critic_opt.step(agent.critic.params_mut(), &g.critic);
                terms.surrogate += g.terms.surrogate;
                terms.value_loss += g.terms.value_loss;
                terms.entropy += g.terms.entropy;
                terms.clip_fraction += g.terms.clip_fraction;
                n_minibatches += 1;
            }
        }
        if agent
            .actor
            .params()
            .iter()
            .chain(agent.critic.params())
            .any(|p| !p.is_finite())
        {
            return Err(Error::Divergence {
                update,
                detail: "parameters became non-finite".into(),
            });
        }

        let k = n_minibatches.max(1) as f64;
        let mean_step_reward = rollout.rewards.iter().sum::<f64>() / rollout.rewards.len() as f64;
        let point = CurvePoint {
            update,
            timesteps,
            mean_step_reward,
            mean_episode_reward: (!rollout.episode_returns.is_empty()).then(|| {
                rollout.episode_returns.iter().sum::<f64>() / rollout.episode_returns.len() as f64
            }),
            surrogate: terms.surrogate / k,
            value_loss: terms.value_loss / k,
            entropy: terms.entropy / k,
            clip_fraction: terms.clip_fraction / k,
        };
        debug!(
            "update {update}: {timesteps} steps, mean reward {mean_step_reward:.6}, entropy {:.4}",
            point.entropy
        );
        curve.push(point);

        if let Some(es) = spec.early_stop {
            match best {
                Some(b) if mean_step_reward <= b + es.min_rel_improvement * b.abs() => {
                    stale += 1;
                    if stale >= es.patience {
                        stopped_early = true;
                        break;
                    }
                }
                _ => {
                    best = Some(best.map_or(mean_step_reward, |b| b.max(mean_step_reward)));
                    stale = 0;
                }
            }
        }
    }

    Ok(TrainOutcome {
        agent,
        curve,
        timesteps,
        stopped_early,
    })
}

fn collect<E: Environment + ?Sized>(
    env: &mut E,
    agent: &Agent,
    spec: &AgentSpec,
    n: usize,
    obs: &mut Vec<f64>,
    episode_return: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let mut batch = RolloutBatch::default();
    let mut rewards = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut episode_returns = Vec::new();
    for _ in 0..n {
        let dist = agent.distribution(obs);
        let action = dist.sample(rng);
        values.push(agent.value(obs));
        let tr = env.step(action)?;
        batch.observations.push(std::mem::take(obs));
        batch.actions.push(action);
        batch.log_probs.push(dist.log_prob(action));
        rewards.push(tr.reward);
        dones.push(tr.done);
        *episode_return += tr.reward;
        if tr.done {
            episode_returns.push(*episode_return);
            *episode_return = 0.0;
            *obs = env.reset()?;
        } else {
            *obs = tr.observation;
        }
    }
    // a rollout cut mid-episode is bootstrapped from the critic
    let last_value = if dones.last().copied().unwrap_or(true) {
        0.0
    } else {
        agent.value(obs)
    };
    match spec.gae_lambda {
        None => {
            batch.returns = compute_returns_bootstrapped(&rewards, &dones, last_value, spec.gamma);
            batch.advantages = advantages(&batch.returns, &values);
        }
        Some(lambda) => {
            let adv = compute_gae(&rewards, &values, &dones, last_value, spec.gamma, lambda);
            batch.returns = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
            batch.advantages = normalize(&adv);
        }
    }
    Ok(Rollout {
        batch,
        rewards,
        episode_returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-step episodes; action 1 pays 1, the others pay 0.
    struct TwoArm {
        obs: Vec<f64>,
    }

    impl Environment for TwoArm {
        fn observation_len(&self) -> usize {
            2
        }
        fn action_count(&self) -> usize {
            2
        }
        fn reset(&mut self) -> Result<Vec<f64>> {
            Ok(self.obs.clone())
        }
        fn step(&mut self, action: usize) -> Result<Transition> {
            Ok(Transition {
                observation: self.obs.clone(),
                reward: if action == 1 { 1.0 } else { 0.0 },
                done: true,
            })
        }
    }

    fn spec() -> AgentSpec {
        AgentSpec {
            action_set: vec![0, 10],
            hidden_layers: vec![4],
            learning_rate: 1e-2,
            rollout_length: 128,
            total_timesteps: 2048,
            early_stop: None,
            ..AgentSpec::default()
        }
    }

    #[test]
    fn learns_a_two_armed_bandit() {
        let mut env = TwoArm {
            obs: vec![1.0, -1.0],
        };
        let out = train(&mut env, &spec(), 1).unwrap();
        assert_eq!(out.agent.act_greedy(&[1.0, -1.0]), 1);
        assert_eq!(out.curve.len(), 16);
        assert_eq!(out.timesteps, 2048);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let mut env = TwoArm {
            obs: vec![0.5, 0.5],
        };
        let s = AgentSpec {
            learning_rate: 0.0,
            ..spec()
        };
        let out = train(&mut env, &s, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = Agent::new(&s, 2, &mut rng);
        assert_eq!(out.agent, init);
    }

    #[test]
    fn same_seed_same_run() {
        let mut env = TwoArm {
            obs: vec![0.2, 1.0],
        };
        let a = train(&mut env, &spec(), 77).unwrap();
        let b = train(&mut env, &spec(), 77).unwrap();
        assert_eq!(a, b);
        let c = train(&mut env, &spec(), 78).unwrap();
        assert_ne!(a.agent, c.agent);
    }

    #[test]
    fn flat_rewards_trigger_early_stop() {
        struct Flat;
        impl Environment for Flat {
            fn observation_len(&self) -> usize {
                1
            }
            fn action_count(&self) -> usize {
                2
            }
            fn reset(&mut self) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
            fn step(&mut self, _: usize) -> Result<Transition> {
                Ok(Transition {
                    observation: vec![0.0],
                    reward: 1.0,
                    done: false,
                })
            }
        }
        let s = AgentSpec {
            early_stop: Some(EarlyStop::default()),
            total_timesteps: 100 * 128,
            ..spec()
        };
        let out = train(&mut Flat, &s, 0).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.curve.len(), 6);
    }

    #[test]
    fn exploding_rewards_report_divergence() {
        struct Wild;
        impl Environment for Wild {
            fn observation_len(&self) -> usize {
                1
            }
            fn action_count(&self) -> usize {
                2
            }
            fn reset(&mut self) -> Result<Vec<f64>> {
                Ok(vec![f64::NAN])
            }
            fn step(&mut self, _: usize) -> Result<Transition> {
                Ok(Transition {
                    observation: vec![f64::NAN],
                    reward: 0.0,
                    done: true,
                })
            }
        }
        let err = train(&mut Wild, &spec(), 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { update: 0, .. }), "{err}");
    }

    #[test]
    fn action_count_mismatch_is_rejected() {
        let mut env = TwoArm {
            obs: vec![0.0, 0.0],
        };
        let s = AgentSpec {
            action_set: vec![0, 10, 20],
            ..spec()
        };
        assert!(matches!(train(&mut env, &s, 0), Err(Error::Validation(_))));
    }
}
