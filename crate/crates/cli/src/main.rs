use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use rangewise::amm::PoolSpec;
use rangewise::data::{
    gbm_generate, load_candles, load_trades, resample_hourly, write_candles, GbmParams,
    LoadOptions, PriceSeries,
};
use rangewise::env::{
    run_episode, run_passive, EnvConfig, GasMode, LpEnv, MarketData, NormStats, PassivePolicy,
};
use rangewise::harness::{run_experiment, win_line, ExperimentConfig};
use rangewise::indicators::FeatureParams;
use rangewise::ppo::{self, write_curve_csv, Activation, AgentSpec, Checkpoint};
use rangewise::Error;

#[derive(Parser)]
#[command(
    name = "rangewise",
    version,
    about = "Concentrated-liquidity LP simulator and PPO training harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate trades or candles and write an hourly candle CSV.
    Ingest(IngestArgs),
    /// Write a synthetic GBM candle series.
    Generate(GenerateArgs),
    /// Train one PPO agent and save a checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint greedily over a candle slice.
    Evaluate(EvaluateArgs),
    /// Run the periodic passive strategy over a candle slice.
    Baseline(BaselineArgs),
    /// Run a rolling-window study from a TOML config.
    Experiment(ExperimentArgs),
    /// Print the summary table of a finished experiment.
    Report(ReportArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "input")]
struct IngestInput {
    /// Raw trades CSV (timestamp, price[, volume]), resampled to hourly candles.
    #[arg(long)]
    trades: Option<PathBuf>,
    /// Hourly candle CSV to validate.
    #[arg(long)]
    candles: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: IngestInput,
    #[arg(long)]
    out: PathBuf,
    /// Forward-fill missing hours instead of failing.
    #[arg(long)]
    fill_gaps: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 24_000)]
    hours: usize,
    #[arg(long, default_value_t = 2000.0)]
    p_start: f64,
    /// Hourly log drift.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    drift: f64,
    /// Hourly volatility.
    #[arg(long, default_value_t = 0.006)]
    volatility: f64,
}

#[derive(Args, Clone, Copy)]
struct PoolArgs {
    #[arg(long, default_value_t = 0.0005)]
    fee_rate: f64,
    #[arg(long, default_value_t = 10)]
    tick_spacing: i32,
    /// Gas cost per transaction, in the numeraire.
    #[arg(long, default_value_t = 5.0)]
    gas: f64,
    /// Amount of token X deposited at each deployment.
    #[arg(long, default_value_t = 2.0)]
    x0: f64,
    /// Charge a single gas cost for rebalances instead of withdraw + redeploy.
    #[arg(long)]
    single_gas: bool,
}

impl PoolArgs {
    fn pool(&self) -> rangewise::Result<PoolSpec> {
        PoolSpec::new(self.fee_rate, self.tick_spacing, self.gas)
    }

    fn gas_mode(&self) -> GasMode {
        if self.single_gas {
            GasMode::SingleCharge
        } else {
            GasMode::WithdrawAndRedeploy
        }
    }
}

#[derive(Args, Clone)]
struct SliceArgs {
    #[arg(long)]
    candles: PathBuf,
    /// First candle index of the slice.
    #[arg(long)]
    start: Option<usize>,
    /// One past the last candle index of the slice.
    #[arg(long)]
    end: Option<usize>,
    #[arg(long)]
    fill_gaps: bool,
}

impl SliceArgs {
    fn load(&self) -> rangewise::Result<(Arc<MarketData>, std::ops::Range<usize>)> {
        let series = load_candles(
            &self.candles,
            LoadOptions {
                fill_gaps: self.fill_gaps,
            },
        )?;
        let data = MarketData::new(&series, &FeatureParams::default())?;
        let range = self.start.unwrap_or(0)..self.end.unwrap_or(data.len());
        Ok((data, range))
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str) -> Result<Vec<T>, String> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("bad list entry `{s}`"))
        })
        .collect()
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    slice: SliceArgs,
    #[command(flatten)]
    pool: PoolArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-widths in ticks, starting with 0 (hold).
    #[arg(long, default_value = "0,20,50", value_parser = parse_list::<i32>)]
    actions: std::vec::Vec<i32>,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    #[arg(long, default_value = "6,4", value_parser = parse_list::<usize>)]
    hidden: std::vec::Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    clip: f64,
    #[arg(long, default_value_t = 1e-3)]
    ent_coef: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 100_000)]
    timesteps: usize,
    #[arg(long, default_value_t = 2500)]
    rollout: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    slice: SliceArgs,
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Step trace CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    slice: SliceArgs,
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long, default_value_t = 50)]
    width: i32,
    #[arg(long, default_value_t = 500)]
    period: usize,
    /// Step trace CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's number of agents per window.
    #[arg(long)]
    agents: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory.
    #[arg(long)]
    results: PathBuf,
}

/// Exit codes: 0 success, 1 usage/config, 2 data, 3 training failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Config(_) | Error::Contract(_) => 1,
        Error::Domain(_)
        | Error::Parse { .. }
        | Error::Gap { .. }
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::Divergence { .. } | Error::TrainingFailed { .. } => 3,
    }
}

fn env_for(
    data: Arc<MarketData>,
    range: std::ops::Range<usize>,
    pool: &PoolArgs,
    action_set: Vec<i32>,
    norm: NormStats,
) -> rangewise::Result<LpEnv> {
    LpEnv::new(EnvConfig {
        pool: pool.pool()?,
        action_set,
        x0: pool.x0,
        gas_mode: pool.gas_mode(),
        data,
        range,
        norm,
    })
}

fn write_text(path: &Path, text: &str) -> rangewise::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ingest(args: IngestArgs) -> rangewise::Result<()> {
    let series: PriceSeries = match (&args.input.trades, &args.input.candles) {
        (Some(trades), _) => resample_hourly(&load_trades(trades)?)?,
        (None, Some(candles)) => load_candles(
            candles,
            LoadOptions {
                fill_gaps: args.fill_gaps,
            },
        )?,
        (None, None) => unreachable!("clap requires one input"),
    };
    write_candles(&args.out, &series)?;
    println!(
        "wrote {} hourly candles to {}",
        series.len(),
        args.out.display()
    );
    Ok(())
}

fn generate(args: GenerateArgs) -> rangewise::Result<()> {
    let series = gbm_generate(&GbmParams {
        seed: args.seed,
        n_hours: args.hours,
        p_start: args.p_start,
        drift: args.drift,
        volatility: args.volatility,
        ..GbmParams::default()
    })?;
    write_candles(&args.out, &series)?;
    println!(
        "wrote {} synthetic candles to {}",
        series.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> rangewise::Result<()> {
    let (data, range) = args.slice.load()?;
    let spec = AgentSpec {
        action_set: args.actions.clone(),
        activation: args.activation,
        hidden_layers: args.hidden.clone(),
        learning_rate: args.lr,
        clip_range: args.clip,
        entropy_coef: args.ent_coef,
        gamma: args.gamma,
        total_timesteps: args.timesteps,
        rollout_length: args.rollout,
        ..AgentSpec::default()
    };
    spec.validate()?;
    let norm = NormStats::fit(
        &data,
        range.clone(),
        &spec.action_set,
        args.pool.x0,
        args.pool.tick_spacing,
    )?;
    let mut env = env_for(
        Arc::clone(&data),
        range,
        &args.pool,
        spec.action_set.clone(),
        norm.clone(),
    )?;
    let outcome = ppo::train(&mut env, &spec, args.seed)?;
    let train_reward = run_episode(&mut env, |_, obs| {
        Ok(outcome.agent.act_greedy(obs.as_slice()))
    })?
    .total_reward();
    if let Some(path) = &args.curve {
        let file = fs::File::create(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        write_curve_csv(&outcome.curve, file)?;
    }
    Checkpoint::new(spec, outcome.agent, Some(norm), args.seed).save(&args.out)?;
    println!(
        "trained {} steps ({} updates{}); greedy train reward {train_reward}; checkpoint {}",
        outcome.timesteps,
        outcome.curve.len(),
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> rangewise::Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (data, range) = args.slice.load()?;
    let norm = ck.norm.clone().unwrap_or_else(NormStats::identity);
    let mut env = env_for(data, range, &args.pool, ck.spec.action_set.clone(), norm)?;
    let trace = run_episode(&mut env, |_, obs| Ok(ck.agent.act_greedy(obs.as_slice())))?;
    if let Some(out) = &args.out {
        trace.write_csv(out)?;
    }
    println!("steps {}", trace.steps.len());
    println!("cumulative reward {}", trace.total_reward());
    Ok(())
}

fn baseline(args: BaselineArgs) -> rangewise::Result<()> {
    let (data, range) = args.slice.load()?;
    let policy = PassivePolicy {
        width: args.width,
        period: args.period,
    };
    if policy.period == 0 {
        return Err(Error::Validation("--period must be positive".into()));
    }
    let mut env = env_for(
        data,
        range,
        &args.pool,
        policy.action_set(),
        NormStats::identity(),
    )?;
    let trace = run_passive(&mut env, policy)?;
    if let Some(out) = &args.out {
        trace.write_csv(out)?;
    }
    println!("steps {}", trace.steps.len());
    println!("deployments {}", trace.deployment_steps().len());
    println!("cumulative reward {}", trace.total_reward());
    Ok(())
}

fn experiment(args: ExperimentArgs) -> rangewise::Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.agents {
        cfg.n_agents = n;
        cfg.validate()?;
    }
    info!("writing results to {}", cfg.output_dir.display());
    let outcome = run_experiment(&cfg)?;
    for r in &outcome.results {
        println!(
            "window {}: active {} passive {}",
            r.window.index,
            r.active_total(),
            r.passive_total()
        );
    }
    if let Some(report) = &outcome.report {
        println!("{}", report.win_line());
    }
    if let Some((window, reason)) = outcome.failures.first() {
        return Err(Error::TrainingFailed {
            window: *window,
            detail: format!(
                "{reason} ({} failed window(s) in total)",
                outcome.failures.len()
            ),
        });
    }
    Ok(())
}

fn report(args: ReportArgs) -> rangewise::Result<()> {
    let path = args.results.join("summary.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.clone(),
            source,
        },
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |col: usize, name: &str| -> rangewise::Result<f64> {
            rec.get(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    row: i + 2,
                    column: name.into(),
                    message: "expected a number".into(),
                })
        };
        rows.push((
            rec.get(0).unwrap_or("").to_string(),
            rec.get(1).unwrap_or("").to_string(),
            num(2, "active")?,
            num(3, "passive")?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no windows",
            path.display()
        )));
    }
    let mut table = format!(
        "{:>6}  {:<20}  {:>14}  {:>14}\n",
        "window", "end of test", "active", "passive"
    );
    for (w, end, a, p) in &rows {
        table.push_str(&format!("{w:>6}  {end:<20}  {a:>14.2}  {p:>14.2}\n"));
    }
    print!("{table}");
    let wins = rows.iter().filter(|(_, _, a, p)| a > p).count();
    println!("{}", win_line(wins, rows.len()));
    write_text(
        &args.results.join("report.txt"),
        &format!("{table}{}\n", win_line(wins, rows.len())),
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baseline(a) => baseline(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
