use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::run::WindowResult;
use crate::data::format_timestamp;
use crate::error::{Error, Result};
use crate::ppo::write_curve_csv;

/// What [`emit_report`] wrote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSummary {
    pub wins: usize,
    pub windows: usize,
    pub summary_csv: PathBuf,
}

impl ReportSummary {
    pub fn win_line(&self) -> String {
        win_line(self.wins, self.windows)
    }
}

pub fn win_line(wins: usize, windows: usize) -> String {
    format!("active wins {wins} of {windows}")
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn window_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("window_{index:02}"))
}

/// Writes `summary.csv` (one row per window), `summary.txt` (the win line) and,
/// per window, the step-level cumulative rewards of both strategies.
pub fn emit_report(results: &[WindowResult], out: &Path) -> Result<ReportSummary> {
    if results.is_empty() {
        return Err(Error::Validation("no window results to report".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let summary_csv = out.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&summary_csv)?);
    w.write_record(["window", "end_of_test", "active", "passive"])?;
    for r in results {
        w.write_record([
            r.window.index.to_string(),
            format_timestamp(r.end_of_test),
            r.active_total().to_string(),
            r.passive_total().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&summary_csv, e))?;

    for r in results {
        let dir = window_dir(out, r.window.index);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("cumulative.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["step", "timestamp", "active", "passive"])?;
        for (i, (a, p)) in r
            .active
            .cumulative
            .iter()
            .zip(&r.passive.cumulative)
            .enumerate()
        {
            w.write_record([
                i.to_string(),
                format_timestamp(r.active.steps[i].timestamp),
                a.to_string(),
                p.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let wins = results.iter().filter(|r| r.active_wins()).count();
    let line = win_line(wins, results.len());
    let txt = out.join("summary.txt");
    writeln!(create(&txt)?, "{line}").map_err(|e| Error::io(&txt, e))?;
    Ok(ReportSummary {
        wins,
        windows: results.len(),
        summary_csv,
    })
}

/// Per-window artefacts: checkpoint, traces, training curves and a JSON summary.
pub fn write_window_artifacts(result: &WindowResult, out: &Path) -> Result<()> {
    let dir = window_dir(out, result.window.index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    result.checkpoint.save(dir.join("checkpoint.json"))?;
    result.active.write_csv(dir.join("active_trace.csv"))?;
    result.passive.write_csv(dir.join("passive_trace.csv"))?;
    for run in &result.agents {
        let path = dir.join(format!("curve_agent_{:02}.csv", run.id));
        write_curve_csv(&run.curve, create(&path)?)?;
    }
    let agents: Vec<serde_json::Value> = result
        .agents
        .iter()
        .map(|a| {
            serde_json::json!({
                "id": a.id,
                "seed": a.seed,
                "spec": a.spec,
                "train_reward": a.train_reward,
                "test_reward": a.test_reward,
                "stopped_early": a.stopped_early,
                "updates": a.curve.len(),
                "error": a.error,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "window": result.window,
        "end_of_test": format_timestamp(result.end_of_test),
        "selected": result.selected,
        "selected_spec": result.selected_spec(),
        "active": result.active_total(),
        "passive": result.passive_total(),
        "agents": agents,
    });
    let path = dir.join("result.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))
}
