use std::sync::Arc;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::search::{sample_spec, SearchGrid};
use super::window::Window;
use crate::amm::PoolSpec;
use crate::env::{
    run_episode, run_passive, AccessTracker, EnvConfig, EpisodeTrace, GasMode, LpEnv, MarketData,
    NormStats, PassivePolicy,
};
use crate::error::{Error, Result};
use crate::ppo::{self, Agent, AgentSpec, Checkpoint, CurvePoint};

/// Slice whose greedy cumulative reward picks the window's agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Train,
    /// Picks by test-slice performance. Leaks the test slice into the choice;
    /// only for replicating the original protocol.
    LeakyTest,
}

/// Everything a window run needs besides the data and the window itself.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSettings {
    pub pool: PoolSpec,
    pub x0: f64,
    pub gas_mode: GasMode,
    pub grid: SearchGrid,
    /// Non-searched training settings (budget, epochs, early stopping).
    pub template: AgentSpec,
    pub n_agents: usize,
    pub passive: PassivePolicy,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for WindowSettings {
    fn default() -> Self {
        Self {
            pool: PoolSpec::default(),
            x0: 2.0,
            gas_mode: GasMode::default(),
            grid: SearchGrid::default(),
            template: AgentSpec::default(),
            n_agents: 50,
            passive: PassivePolicy::default(),
            selection: Selection::default(),
            seed: 0,
        }
    }
}

impl WindowSettings {
    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        self.grid.validate(self.pool.tick_spacing)?;
        self.template.validate()?;
        if self.n_agents == 0 {
            return Err(Error::Validation("n_agents must be at least 1".into()));
        }
        if !(self.x0 > 0.0) {
            return Err(Error::Validation(format!(
                "x0 must be positive, got {}",
                self.x0
            )));
        }
        if self.passive.width <= 0 || self.passive.width % self.pool.tick_spacing != 0 {
            return Err(Error::Validation(format!(
                "passive width {} must be a positive multiple of the tick spacing {}",
                self.passive.width, self.pool.tick_spacing
            )));
        }
        if self.passive.period == 0 {
            return Err(Error::Validation("passive period must be positive".into()));
        }
        Ok(())
    }
}

/// One trained candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub id: usize,
    pub seed: u64,
    pub spec: AgentSpec,
    pub curve: Vec<CurvePoint>,
    pub stopped_early: bool,
    /// Greedy cumulative reward on the train slice; `None` if training failed.
    pub train_reward: Option<f64>,
    /// Greedy cumulative reward on the test slice, only filled for leaky selection.
    pub test_reward: Option<f64>,
    pub error: Option<String>,
    agent: Option<Agent>,
    norm: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window: Window,
    /// Timestamp of the last test candle.
    pub end_of_test: i64,
    pub agents: Vec<AgentRun>,
    pub selected: usize,
    pub checkpoint: Checkpoint,
    pub active: EpisodeTrace,
    pub passive: EpisodeTrace,
    /// Highest candle index read while training and selecting.
    pub train_max_read: Option<usize>,
}

impl WindowResult {
    pub fn selected_spec(&self) -> &AgentSpec {
        &self.agents[self.selected].spec
    }

    pub fn active_total(&self) -> f64 {
        self.active.total_reward()
    }

    pub fn passive_total(&self) -> f64 {
        self.passive.total_reward()
    }

    pub fn active_wins(&self) -> bool {
        self.active_total() > self.passive_total()
    }
}

fn env_for(
    data: &Arc<MarketData>,
    settings: &WindowSettings,
    action_set: &[i32],
    range: std::ops::Range<usize>,
    norm: NormStats,
) -> Result<LpEnv> {
    LpEnv::new(EnvConfig {
        pool: settings.pool,
        action_set: action_set.to_vec(),
        x0: settings.x0,
        gas_mode: settings.gas_mode,
        data: Arc::clone(data),
        range,
        norm,
    })
}

fn greedy_trace(env: &mut LpEnv, agent: &Agent) -> Result<EpisodeTrace> {
    run_episode(env, |_, obs| Ok(agent.act_greedy(obs.as_slice())))
}

/// Trains `n_agents` sampled specs on the train slice in parallel, picks one, and
/// evaluates it and the passive baseline on the test slice.
pub fn run_window(
    data: &Arc<MarketData>,
    window: &Window,
    settings: &WindowSettings,
) -> Result<WindowResult> {
    settings.validate()?;
    if window.test.end > data.len() || window.train.end != window.test.start {
        return Err(Error::Validation(format!(
            "window {} ({:?} / {:?}) does not fit {} candles",
            window.index,
            window.train,
            window.test,
            data.len()
        )));
    }

    let mut master = ChaCha8Rng::seed_from_u64(settings.seed);
    master.set_stream(window.index as u64);
    let draws: Vec<(AgentSpec, u64)> = (0..settings.n_agents)
        .map(|_| {
            let spec = sample_spec(&settings.grid, &settings.template, &mut master);
            (spec, master.gen())
        })
        .collect();

    let tracker = AccessTracker::new();
    let mut agents: Vec<AgentRun> = draws
        .into_par_iter()
        .enumerate()
        .map(|(id, (spec, seed))| train_candidate(data, window, settings, &tracker, id, spec, seed))
        .collect();

    let trained: Vec<usize> = agents
        .iter()
        .filter(|a| a.train_reward.is_some())
        .map(|a| a.id)
        .collect();
    if trained.is_empty() {
        let reasons: Vec<String> = agents.iter().filter_map(|a| a.error.clone()).collect();
        return Err(Error::TrainingFailed {
            window: window.index,
            detail: reasons.join("; "),
        });
    }

    if settings.selection == Selection::LeakyTest {
        for run in agents.iter_mut().filter(|a| a.agent.is_some()) {
            let norm = run
                .norm
                .clone()
                .expect("trained agents keep their normalisation");
            let mut env = env_for(
                data,
                settings,
                &run.spec.action_set,
                window.test.clone(),
                norm,
            )?;
            run.test_reward =
                Some(greedy_trace(&mut env, run.agent.as_ref().unwrap())?.total_reward());
        }
    }
    let metric = |a: &AgentRun| match settings.selection {
        Selection::Train => a.train_reward,
        Selection::LeakyTest => a.test_reward,
    };
    let mut selected = trained[0];
    for &id in &trained[1..] {
        if metric(&agents[id]) > metric(&agents[selected]) {
            selected = id;
        }
    }

    let chosen = &agents[selected];
    let agent = chosen.agent.clone().expect("selected agent trained");
    let norm = chosen
        .norm
        .clone()
        .expect("selected agent has normalisation");
    let mut test_env = env_for(
        data,
        settings,
        &chosen.spec.action_set,
        window.test.clone(),
        norm.clone(),
    )?;
    let active = greedy_trace(&mut test_env, &agent)?;

    let mut passive_env = env_for(
        data,
        settings,
        &settings.passive.action_set(),
        window.test.clone(),
        NormStats::identity(),
    )?;
    let passive = run_passive(&mut passive_env, settings.passive)?;

    let checkpoint = Checkpoint::new(chosen.spec.clone(), agent, Some(norm), chosen.seed);
    info!(
        "window {}: agent {} selected, active {:.4} vs passive {:.4}",
        window.index,
        selected,
        active.total_reward(),
        passive.total_reward()
    );
    Ok(WindowResult {
        window: window.clone(),
        end_of_test: data.candles()[window.test.end - 1].timestamp,
        agents,
        selected,
        checkpoint,
        active,
        passive,
        train_max_read: tracker.max_read(),
    })
}

fn train_candidate(
    data: &Arc<MarketData>,
    window: &Window,
    settings: &WindowSettings,
    tracker: &Arc<AccessTracker>,
    id: usize,
    spec: AgentSpec,
    seed: u64,
) -> AgentRun {
    let mut run = AgentRun {
        id,
        seed,
        spec,
        curve: Vec::new(),
        stopped_early: false,
        train_reward: None,
        test_reward: None,
        error: None,
        agent: None,
        norm: None,
    };
    let attempt = || -> Result<(ppo::TrainOutcome, NormStats, f64)> {
        let norm = NormStats::fit(
            data,
            window.train.clone(),
            &run.spec.action_set,
            settings.x0,
            settings.pool.tick_spacing,
        )?;
        let mut env = env_for(
            data,
            settings,
            &run.spec.action_set,
            window.train.clone(),
            norm.clone(),
        )?
        .with_tracker(Arc::clone(tracker));
        let outcome = ppo::train(&mut env, &run.spec, seed)?;
        let reward = greedy_trace(&mut env, &outcome.agent)?.total_reward();
        Ok((outcome, norm, reward))
    };
    match attempt() {
        Ok((outcome, norm, reward)) => {
            run.curve = outcome.curve;
            run.stopped_early = outcome.stopped_early;
            run.train_reward = Some(reward);
            run.agent = Some(outcome.agent);
            run.norm = Some(norm);
        }
        Err(e) => {
            warn!("window {} agent {id} failed: {e}", window.index);
            run.error = Some(e.to_string());
        }
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gbm_generate, GbmParams};
    use crate::harness::make_windows;
    use crate::indicators::FeatureParams;

    fn data(n: usize) -> Arc<MarketData> {
        let s = gbm_generate(&GbmParams {
            seed: 13,
            n_hours: n,
            ..GbmParams::default()
        })
        .unwrap();
        MarketData::new(&s, &FeatureParams::default()).unwrap()
    }

    fn small_settings(n_agents: usize) -> WindowSettings {
        WindowSettings {
            n_agents,
            template: AgentSpec {
                total_timesteps: 1200,
                rollout_length: 400,
                n_epochs: 2,
                ..AgentSpec::default()
            },
            passive: PassivePolicy {
                width: 50,
                period: 100,
            },
            seed: 3,
            ..WindowSettings::default()
        }
    }

    #[test]
    fn single_agent_trivial_grid() {
        let d = data(900);
        let plan = make_windows(900, 600, 300, 300).unwrap();
        let mut s = small_settings(1);
        s.grid = SearchGrid::singleton(&s.template);
        let r = run_window(&d, &plan.windows[0], &s).unwrap();
        assert_eq!(r.agents.len(), 1);
        assert_eq!(r.selected, 0);
        let expected = AgentSpec {
            ..s.template.clone()
        };
        assert_eq!(r.selected_spec(), &expected);
        assert_eq!(r.active.steps.len(), 300);
        assert_eq!(r.passive.deployment_steps(), vec![0, 100, 200]);
    }

    #[test]
    fn training_never_reads_the_test_slice() {
        let d = data(900);
        let plan = make_windows(900, 600, 300, 300).unwrap();
        let r = run_window(&d, &plan.windows[0], &small_settings(3)).unwrap();
        assert_eq!(r.train_max_read, Some(599));
        let best = r
            .agents
            .iter()
            .filter_map(|a| a.train_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.agents[r.selected].train_reward, Some(best));
    }

    #[test]
    fn report_matches_the_traces() {
        let d = data(1100);
        let plan = make_windows(1100, 600, 250, 250).unwrap();
        let results: Vec<WindowResult> = plan
            .windows
            .iter()
            .map(|w| run_window(&d, w, &small_settings(1)).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let report = crate::harness::emit_report(&results, dir.path()).unwrap();
        assert_eq!(report.windows, 2);
        assert_eq!(
            report.wins,
            results
                .iter()
                .filter(|r| r.active_total() > r.passive_total())
                .count()
        );

        let text = std::fs::read_to_string(&report.summary_csv).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        for (row, r) in rows.iter().zip(&results) {
            let cols: Vec<&str> = row.split(',').collect();
            let active: f64 = cols[2].parse().unwrap();
            let passive: f64 = cols[3].parse().unwrap();
            assert_eq!(
                active.to_bits(),
                r.active.cumulative.last().unwrap().to_bits()
            );
            assert_eq!(
                passive.to_bits(),
                r.passive.cumulative.last().unwrap().to_bits()
            );
        }
        let per_window =
            std::fs::read_to_string(dir.path().join("window_01").join("cumulative.csv")).unwrap();
        assert_eq!(per_window.lines().count(), 251);
        let txt = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert_eq!(txt.trim(), report.win_line());

        assert!(matches!(
            crate::harness::emit_report(&[], dir.path()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn leaky_selection_uses_test_rewards() {
        let d = data(900);
        let plan = make_windows(900, 600, 300, 300).unwrap();
        let s = WindowSettings {
            selection: Selection::LeakyTest,
            ..small_settings(3)
        };
        let r = run_window(&d, &plan.windows[0], &s).unwrap();
        assert!(r.agents.iter().all(|a| a.test_reward.is_some()));
        let best = r
            .agents
            .iter()
            .filter_map(|a| a.test_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.agents[r.selected].test_reward, Some(best));
        assert_eq!(r.active_total(), best);
    }

    #[test]
    fn same_seed_same_result() {
        let d = data(900);
        let plan = make_windows(900, 600, 300, 300).unwrap();
        let a = run_window(&d, &plan.windows[0], &small_settings(2)).unwrap();
        let b = run_window(&d, &plan.windows[0], &small_settings(2)).unwrap();
        assert_eq!(a, b);
    }
}
