//! Hourly LP environment.
//!
//! At step `t` the agent sees the market state of hour `t − 1`, picks a half-width
//! (0 keeps the current position, or stays out if none is open), and the price then
//! moves close-to-close from hour `t − 1` to hour `t`. The reward is
//! `fee − lvr − gas`.

use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::amm::{self, PoolSpec, Position};
use crate::data::{Candle, PriceSeries};
use crate::error::{Error, Result};
use crate::indicators::{compute_features, FeatureParams, FeatureRow};
use crate::numeric::ExactSum;

pub const OBS_LEN: usize = 13;

pub const FEATURE_NAMES: [&str; OBS_LEN] = [
    "price",
    "tick",
    "width",
    "liquidity",
    "ewma_vol",
    "ma24",
    "ma168",
    "bb_upper",
    "bb_mid",
    "bb_lower",
    "adxr",
    "bop",
    "dx",
];

const WIDTH: usize = 2;
const LIQUIDITY: usize = 3;

/// Candles with their precomputed features. Shared read-only between environments.
#[derive(Debug)]
pub struct MarketData {
    candles: Vec<Candle>,
    features: Vec<FeatureRow>,
    ticks: Vec<i32>,
    warmup: usize,
}

impl MarketData {
    pub fn new(series: &PriceSeries, params: &FeatureParams) -> Result<Arc<Self>> {
        let candles = series.candles().to_vec();
        if candles.len() < 2 {
            return Err(Error::Validation(
                "market data needs at least two candles".into(),
            ));
        }
        let features = compute_features(&candles, params)?;
        let ticks = candles
            .iter()
            .map(|c| amm::tick_index(c.close).map(|t| t.index()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(Self {
            candles,
            features,
            ticks,
            warmup: params.warmup(),
        }))
    }

    pub fn len(&self) -> usize {
        self.candles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candles.is_empty()
    }

    pub fn candles(&self) -> &[Candle] {
        &self.candles
    }

    /// First row whose features are all defined.
    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// First step index usable inside `range`: the observed row `t − 1` must be warm.
    pub fn first_step(&self, range: &Range<usize>) -> usize {
        range.start.max(self.warmup + 1)
    }

    fn market_row(&self, i: usize) -> [f64; OBS_LEN] {
        let f = &self.features[i];
        [
            self.candles[i].close,
            f64::from(self.ticks[i]),
            0.0,
            0.0,
            f.ewma_vol,
            f.ma24,
            f.ma168,
            f.bb_upper,
            f.bb_mid,
            f.bb_lower,
            f.adxr,
            f.bop,
            f.dx,
        ]
    }
}

/// Per-feature z-score statistics, fitted on a training slice and frozen afterwards.
///
/// Width and liquidity are only scaled (mean fixed at 0) so that "no position" stays 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; OBS_LEN],
    pub std: [f64; OBS_LEN],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; OBS_LEN],
            std: [1.0; OBS_LEN],
        }
    }

    pub fn fit(
        data: &MarketData,
        range: Range<usize>,
        action_set: &[i32],
        x0: f64,
        tick_spacing: i32,
    ) -> Result<Self> {
        let start = range.start.max(data.warmup);
        let end = range.end.min(data.len());
        if start >= end {
            return Err(Error::Validation(format!(
                "no warm rows in {range:?} to fit normalisation (warm-up ends at {})",
                data.warmup
            )));
        }
        let n = (end - start) as f64;
        let mut mean = [0.0; OBS_LEN];
        for i in start..end {
            for (m, v) in mean.iter_mut().zip(data.market_row(i)) {
                *m += v / n;
            }
        }
        let mut var = [0.0; OBS_LEN];
        for i in start..end {
            for ((s, v), m) in var.iter_mut().zip(data.market_row(i)).zip(mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let mut std = var.map(f64::sqrt);

        let widths: Vec<i32> = action_set.iter().copied().filter(|w| *w > 0).collect();
        let rms =
            |xs: &[f64]| (xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64).sqrt();
        mean[WIDTH] = 0.0;
        std[WIDTH] = rms(&widths.iter().map(|w| f64::from(*w)).collect::<Vec<_>>());
        let mut liquidities = Vec::with_capacity((end - start) * widths.len());
        for i in start..end {
            for &w in &widths {
                let pos = open_position(data.candles[i].close, w, x0, tick_spacing)?;
                liquidities.push(pos.liquidity);
            }
        }
        mean[LIQUIDITY] = 0.0;
        std[LIQUIDITY] = rms(&liquidities);
        Ok(Self { mean, std })
    }

    fn scale(&self, i: usize, v: f64) -> f64 {
        let (m, s) = (self.mean[i], self.std[i]);
        if !(s > 1e-12 * m.abs()) || !s.is_finite() {
            return 0.0;
        }
        let z = (v - m) / s;
        if z.is_finite() {
            z
        } else {
            0.0
        }
    }
}

/// Agent input: the 13 state entries in [`FEATURE_NAMES`] order, z-scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Un-normalised state entries in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawState(pub [f64; OBS_LEN]);

pub fn observation_vector(raw: &RawState, stats: &NormStats) -> Observation {
    Observation(
        raw.0
            .iter()
            .enumerate()
            .map(|(i, v)| stats.scale(i, *v))
            .collect(),
    )
}

/// How a rebalance of an already-open position is charged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasMode {
    /// Withdraw and redeploy are separate transactions: `2g`.
    #[default]
    WithdrawAndRedeploy,
    /// A single `g` for every nonzero action.
    SingleCharge,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub pool: PoolSpec,
    /// Half-widths in ticks; entry 0 must be 0 (hold).
    pub action_set: Vec<i32>,
    /// Amount of X deposited at every (re)deployment.
    pub x0: f64,
    pub gas_mode: GasMode,
    pub data: Arc<MarketData>,
    /// Candle indices realised by the episode's steps.
    pub range: Range<usize>,
    pub norm: NormStats,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        validate_action_set(&self.action_set, self.pool.tick_spacing)?;
        if !(self.x0 > 0.0) {
            return Err(Error::Validation(format!(
                "x0 must be positive, got {}",
                self.x0
            )));
        }
        if self.range.end > self.data.len() || self.range.start >= self.range.end {
            return Err(Error::Validation(format!(
                "range {:?} is not inside the {} available candles",
                self.range,
                self.data.len()
            )));
        }
        let first = self.data.first_step(&self.range);
        if first >= self.range.end {
            return Err(Error::Validation(format!(
                "range {:?} ends before the {}-row indicator warm-up completes",
                self.range,
                self.data.warmup + 1
            )));
        }
        Ok(())
    }

    /// Number of steps an episode runs.
    pub fn episode_len(&self) -> usize {
        self.range
            .end
            .saturating_sub(self.data.first_step(&self.range))
    }
}

pub fn validate_action_set(actions: &[i32], tick_spacing: i32) -> Result<()> {
    match actions.first() {
        Some(0) => {}
        _ => {
            return Err(Error::Validation(format!(
                "action set must start with 0 (hold), got {actions:?}"
            )))
        }
    }
    if actions.len() < 2 {
        return Err(Error::Validation(
            "action set needs at least one width".into(),
        ));
    }
    if let Some(w) = actions[1..]
        .iter()
        .find(|w| **w <= 0 || **w % tick_spacing != 0)
    {
        return Err(Error::Validation(format!(
            "width {w} is not a positive multiple of tick spacing {tick_spacing}"
        )));
    }
    Ok(())
}

fn open_position(price: f64, half_width: i32, x0: f64, spacing: i32) -> Result<Position> {
    let center = amm::tick_index(price)?;
    let (lower, upper) = amm::align_range(center, half_width, spacing)?;
    Position::open(lower, upper, x0, price)
}

/// Diagnostics for one step. `reward == fee - lvr - gas` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Candle index realised by this step.
    pub t: usize,
    pub timestamp: i64,
    /// Close at `t`.
    pub price: f64,
    pub action: usize,
    /// Half-width of the position held during the step (0 if none).
    pub width: i32,
    pub liquidity: f64,
    pub fee: f64,
    pub lvr: f64,
    pub gas: f64,
    pub reward: f64,
    /// Impermanent loss of the held position at `price` (0 if none).
    pub il: f64,
    pub deployed: bool,
    pub rebalanced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Tracks the highest candle index an environment has read.
#[derive(Debug, Default)]
pub struct AccessTracker {
    max_read: AtomicUsize,
    reads: AtomicUsize,
}

impl AccessTracker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn record(&self, i: usize) {
        self.max_read.fetch_max(i, Ordering::Relaxed);
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    /// Highest index read, or `None` if nothing was read.
    pub fn max_read(&self) -> Option<usize> {
        (self.reads.load(Ordering::Relaxed) > 0).then(|| self.max_read.load(Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, Copy)]
struct Held {
    position: Position,
    width: i32,
}

pub struct LpEnv {
    cfg: EnvConfig,
    first_step: usize,
    t: usize,
    held: Option<Held>,
    done: bool,
    ledger: ExactSum,
    tracker: Option<Arc<AccessTracker>>,
}

impl LpEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let first_step = cfg.data.first_step(&cfg.range);
        Ok(Self {
            first_step,
            t: first_step,
            held: None,
            done: true,
            ledger: ExactSum::new(),
            tracker: None,
            cfg,
        })
    }

    pub fn with_tracker(mut self, tracker: Arc<AccessTracker>) -> Self {
        self.tracker = Some(tracker);
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn episode_len(&self) -> usize {
        self.cfg.range.end - self.first_step
    }

    pub fn first_step(&self) -> usize {
        self.first_step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn position(&self) -> Option<&Position> {
        self.held.as_ref().map(|h| &h.position)
    }

    /// Correctly rounded `Σfee − Σlvr − Σgas` since the last reset.
    pub fn cumulative_reward(&self) -> f64 {
        self.ledger.value()
    }

    pub fn reset(&mut self) -> Result<Observation> {
        self.cfg.validate()?;
        self.t = self.first_step;
        self.held = None;
        self.done = false;
        self.ledger = ExactSum::new();
        Ok(self.observe(self.t - 1))
    }

    fn read(&self, i: usize) -> (&Candle, [f64; OBS_LEN]) {
        debug_assert!(i < self.cfg.range.end, "read past the episode range");
        if let Some(tr) = &self.tracker {
            tr.record(i);
        }
        (&self.cfg.data.candles[i], self.cfg.data.market_row(i))
    }

    fn raw_state(&self, i: usize) -> RawState {
        let (_, mut row) = self.read(i);
        if let Some(h) = &self.held {
            row[WIDTH] = f64::from(h.width);
            row[LIQUIDITY] = h.position.liquidity;
        }
        RawState(row)
    }

    fn observe(&self, i: usize) -> Observation {
        observation_vector(&self.raw_state(i), &self.cfg.norm)
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract(
                "step called on a finished episode; call reset".into(),
            ));
        }
        let width = *self.cfg.action_set.get(action).ok_or_else(|| {
            Error::Contract(format!(
                "action {action} out of range for {} actions",
                self.cfg.action_set.len()
            ))
        })?;
        let pool = self.cfg.pool;
        let t = self.t;
        let (prev, prev_row) = self.read(t - 1);
        let p_from = prev.close;
        let sigma = prev_row[4];

        let mut gas = 0.0;
        let (mut deployed, mut rebalanced) = (false, false);
        if width > 0 {
            let position = open_position(p_from, width, self.cfg.x0, pool.tick_spacing)?;
            gas = match (self.held.is_some(), self.cfg.gas_mode) {
                (true, GasMode::WithdrawAndRedeploy) => 2.0 * pool.gas_cost,
                _ => pool.gas_cost,
            };
            rebalanced = self.held.is_some();
            deployed = !rebalanced;
            self.held = Some(Held { position, width });
        }

        let (cur, _) = self.read(t);
        let (p_to, timestamp) = (cur.close, cur.timestamp);
        let (fee, lvr, liquidity, il, held_width) = match &self.held {
            Some(h) => {
                let pos = &h.position;
                let fee = amm::fee_for_move(
                    pos.liquidity,
                    pool.fee_rate,
                    p_from,
                    p_to,
                    pos.lower_price(),
                    pos.upper_price(),
                );
                let lvr = amm::lvr_penalty(pos.liquidity, sigma, p_from, pos.contains(p_from));
                let il = pos.impermanent_loss(p_to).unwrap_or(0.0);
                (fee, lvr, pos.liquidity, il, h.width)
            }
            None => (0.0, 0.0, 0.0, 0.0, 0),
        };
        let reward = fee - lvr - gas;
        self.ledger.add(fee);
        self.ledger.sub(lvr);
        self.ledger.sub(gas);

        self.t += 1;
        self.done = self.t >= self.cfg.range.end;
        let observation = self.observe(t);
        Ok(StepOutcome {
            observation,
            reward,
            done: self.done,
            info: StepInfo {
                t,
                timestamp,
                price: p_to,
                action,
                width: held_width,
                liquidity,
                fee,
                lvr,
                gas,
                reward,
                il,
                deployed,
                rebalanced,
            },
        })
    }
}

/// Periodic recentering baseline: deploy `width` ticks either side every `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassivePolicy {
    pub width: i32,
    pub period: usize,
}

impl Default for PassivePolicy {
    fn default() -> Self {
        Self {
            width: 50,
            period: 500,
        }
    }
}

impl PassivePolicy {
    /// Width to request at step `step` of an episode.
    pub fn width_at(&self, step: usize) -> i32 {
        if self.period > 0 && step.is_multiple_of(self.period) {
            self.width
        } else {
            0
        }
    }

    pub fn widths(&self, steps: usize) -> Vec<i32> {
        (0..steps).map(|s| self.width_at(s)).collect()
    }

    /// Action set the policy acts in: `[0, width]`.
    pub fn action_set(&self) -> Vec<i32> {
        vec![0, self.width]
    }

    pub fn action_at(&self, step: usize) -> usize {
        usize::from(self.width_at(step) > 0)
    }
}

/// A full episode: one [`StepInfo`] per step plus the running cumulative reward.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepInfo>,
    pub cumulative: Vec<f64>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn gas_charges(&self, gas_cost: f64) -> usize {
        if gas_cost == 0.0 {
            return 0;
        }
        self.steps
            .iter()
            .map(|s| (s.gas / gas_cost).round() as usize)
            .sum()
    }

    pub fn deployment_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.deployed || s.rebalanced)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    /// Columns: `t,price,action,width,liquidity,fee,lvr,gas,reward`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t",
            "price",
            "action",
            "width",
            "liquidity",
            "fee",
            "lvr",
            "gas",
            "reward",
        ])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.price.to_string(),
                s.action.to_string(),
                s.width.to_string(),
                s.liquidity.to_string(),
                s.fee.to_string(),
                s.lvr.to_string(),
                s.gas.to_string(),
                s.reward.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace writer>", e))?;
        Ok(())
    }
}

/// Runs one episode, asking `policy(step, observation)` for each action.
pub fn run_episode<F>(env: &mut LpEnv, mut policy: F) -> Result<EpisodeTrace>
where
    F: FnMut(usize, &Observation) -> Result<usize>,
{
    let mut obs = env.reset()?;
    let mut trace = EpisodeTrace::default();
    let mut step = 0;
    loop {
        let action = policy(step, &obs)?;
        let out = env.step(action)?;
        trace.steps.push(out.info);
        trace.cumulative.push(env.cumulative_reward());
        obs = out.observation;
        step += 1;
        if out.done {
            return Ok(trace);
        }
    }
}

pub fn run_passive(env: &mut LpEnv, policy: PassivePolicy) -> Result<EpisodeTrace> {
    let width_index = env
        .config()
        .action_set
        .iter()
        .position(|w| *w == policy.width)
        .ok_or_else(|| {
            Error::Validation(format!(
                "passive width {} is not in the action set {:?}",
                policy.width,
                env.config().action_set
            ))
        })?;
    run_episode(env, |step, _| {
        Ok(if policy.width_at(step) > 0 {
            width_index
        } else {
            0
        })
    })
}
