//! The experiment matrix: which encoder, which fine-tuning regime, which
//! label budget, over every fold and seed. Runs are recorded in a
//! resumable ledger and aggregated into tables and plots.

mod cell;
mod ledger;
mod matrix;
mod plan;
mod report;
mod studies;

pub use cell::{CheckpointStage, ExperimentCell, Source};
pub use ledger::{run_key, Ledger, RunOutcome, TrainRunResult};
pub use matrix::{fold_windows, run_matrix, EncoderStore, MatrixConfig, MatrixSummary};
pub use plan::{load_windowed, ExperimentPlan};
pub use report::{
    aggregate, aggregate_and_render, baseline_deltas, budget_curves, budgets_of, format_mean_std, render_budget_svg,
    render_delta_svg, render_stopping_table, render_table_csv, render_table_markdown, AggregateRow, BudgetCurve,
    BudgetPoint, DeltaSeries, TABLE_COLUMNS,
};
pub use studies::{label_budget_sweep, stopping_point_study, StageInfo, StoppingStudy};
