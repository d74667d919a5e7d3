use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rangewise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangewise"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn line_value(out: &Output, key: &str) -> String {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().to_string()))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{}", stdout(out)))
}

#[test]
fn ingest_trades_writes_candles() {
    let dir = tempfile::tempdir().unwrap();
    let trades = dir.path().join("trades.csv");
    fs::write(
        &trades,
        "timestamp,price,volume\n\
         2021-05-05T01:00:10Z,3000,1\n\
         2021-05-05T01:30:00Z,3010,2\n\
         2021-05-05T03:05:00Z,2990,1\n",
    )
    .unwrap();
    let out = dir.path().join("candles.csv");
    let run = rangewise(&["ingest", "--trades", p(&trades), "--out", p(&out)]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    // three hours: the empty middle hour is forward-filled
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn gapped_candles_need_fill_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let candles = dir.path().join("gapped.csv");
    fs::write(
        &candles,
        "timestamp,open,high,low,close\n\
         2021-05-05T01:00:00Z,10,11,9,10.5\n\
         2021-05-05T03:00:00Z,10.5,12,10,11\n",
    )
    .unwrap();
    let out = dir.path().join("out.csv");
    let run = rangewise(&["ingest", "--candles", p(&candles), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing"));

    let run = rangewise(&[
        "ingest",
        "--candles",
        p(&candles),
        "--out",
        p(&out),
        "--fill-gaps",
    ]);
    assert!(run.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(
        rows[2].ends_with("10.5,10.5,10.5,10.5") || rows[2].contains(",10.5,10.5,10.5,10.5"),
        "{}",
        rows[2]
    );
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(rangewise(&[]).status.code(), Some(1));
    assert_eq!(rangewise(&["baseline"]).status.code(), Some(1));
    assert_eq!(rangewise(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rangewise(&["--help"]).status.code(), Some(0));
}

#[test]
fn constant_price_baseline_costs_one_gas() {
    let dir = tempfile::tempdir().unwrap();
    let candles = dir.path().join("flat.csv");
    assert!(rangewise(&[
        "generate",
        "--out",
        p(&candles),
        "--hours",
        "400",
        "--volatility",
        "0"
    ])
    .status
    .success());
    let trace = dir.path().join("trace.csv");
    let run = rangewise(&[
        "baseline",
        "--candles",
        p(&candles),
        "--width",
        "50",
        "--period",
        "100000",
        "--out",
        p(&trace),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(line_value(&run, "cumulative reward"), "-5");
    assert_eq!(line_value(&run, "deployments"), "1");
    let rows = fs::read_to_string(&trace).unwrap().lines().count();
    assert_eq!(rows, 1 + 400 - 168);
}

#[test]
fn baseline_over_1500_steps_deploys_three_times() {
    let dir = tempfile::tempdir().unwrap();
    let candles = dir.path().join("c.csv");
    assert!(rangewise(&[
        "generate",
        "--out",
        p(&candles),
        "--hours",
        "2000",
        "--seed",
        "4"
    ])
    .status
    .success());
    let run = rangewise(&["baseline", "--candles", p(&candles), "--start", "500"]);
    assert!(run.status.success());
    assert_eq!(line_value(&run, "steps"), "1500");
    assert_eq!(line_value(&run, "deployments"), "3");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let candles = dir.path().join("c.csv");
    assert!(rangewise(&[
        "generate",
        "--out",
        p(&candles),
        "--hours",
        "700",
        "--seed",
        "1"
    ])
    .status
    .success());
    let ck = dir.path().join("agent.json");
    let curve = dir.path().join("curve.csv");
    let train = |seed: &str| {
        rangewise(&[
            "train",
            "--candles",
            p(&candles),
            "--end",
            "500",
            "--timesteps",
            "1000",
            "--rollout",
            "500",
            "--seed",
            seed,
            "--out",
            p(&ck),
            "--curve",
            p(&curve),
        ])
    };
    let run = train("9");
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let first = fs::read_to_string(&ck).unwrap();
    assert!(train("9").status.success());
    assert_eq!(
        fs::read_to_string(&ck).unwrap(),
        first,
        "same seed, same checkpoint"
    );
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), 3);

    let trace = dir.path().join("eval.csv");
    let run = rangewise(&[
        "evaluate",
        "--candles",
        p(&candles),
        "--start",
        "500",
        "--checkpoint",
        p(&ck),
        "--out",
        p(&trace),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(line_value(&run, "steps"), "200");
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 201);
}

fn mini_config(dir: &Path, data: &str) -> std::path::PathBuf {
    let cfg = dir.join("experiment.toml");
    fs::write(
        &cfg,
        format!(
            "n_agents = 3\noutput_dir = \"out\"\n\n[data]\n{data}\n\n\
             [windows]\ntrain_len = 600\ntest_len = 200\nstride = 200\n\n\
             [training]\ntotal_timesteps = 1500\nrollout_length = 500\nn_epochs = 3\n\n\
             [passive]\nwidth = 50\nperiod = 100\n"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn miniature_experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), "synthetic = { seed = 8, n_hours = 1000 }");
    let run = rangewise(&["experiment", "--config", p(&cfg), "--seed", "5"]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout(&run)
        .lines()
        .any(|l| l.starts_with("active wins ") && l.ends_with(" of 2")));

    let out = dir.path().join("out");
    let summary = fs::read(out.join("summary.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&summary).lines().count(), 3);
    for w in ["window_00", "window_01"] {
        for f in [
            "result.json",
            "checkpoint.json",
            "cumulative.csv",
            "active_trace.csv",
            "passive_trace.csv",
        ] {
            assert!(out.join(w).join(f).is_file(), "{w}/{f}");
        }
    }

    let again = rangewise(&["experiment", "--config", p(&cfg), "--seed", "5"]);
    assert!(again.status.success());
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), summary);

    let report = rangewise(&["report", "--results", p(&out)]);
    assert!(report.status.success());
    assert!(out.join("report.txt").is_file());
}

#[test]
fn missing_data_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mini_config(dir.path(), "path = \"does-not-exist.csv\"");
    let run = rangewise(&["experiment", "--config", p(&cfg)]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("does-not-exist.csv"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n_agents = \"many\"\n").unwrap();
    assert_eq!(
        rangewise(&["experiment", "--config", p(&bad)])
            .status
            .code(),
        Some(1)
    );
}
