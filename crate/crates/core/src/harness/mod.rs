//! Rolling-window experiments: window slicing, random hyperparameter search,
//! agent selection, baseline comparison and report files.

mod experiment;
mod report;
mod run;
mod search;
mod window;

pub use experiment::{
    run_experiment, DataSource, ExperimentConfig, ExperimentOutcome, WindowSizes,
};
pub use report::{emit_report, win_line, window_dir, write_window_artifacts, ReportSummary};
pub use run::{run_window, AgentRun, Selection, WindowResult, WindowSettings};
pub use search::{sample_spec, SearchGrid};
pub use window::{make_windows, Window, WindowPlan};
