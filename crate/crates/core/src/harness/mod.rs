//! Run configuration, single experiments and experiment grids.

mod config;
mod run;
mod suite;

pub use config::{
    parse_with_overrides, DatasetSource, Method, PriorUpdate, RunConfig, ScenarioSection,
    UpdateSource, SYNTHETIC_LEARNING_RATE,
};
pub use run::{
    load_dataset, run_experiment, Checkpoint, CurvePoint, Experiment, RunOutcome, RunResults,
    BRANCH_LOG_FILE, CURVE_FILE, MATRIX_FILE, RESULTS_FILE, RESULTS_VERSION, SCENARIO_FILE,
};
pub use suite::{
    run_configs, run_suite, CellKey, CellSummary, RunFailure, SuiteGrid, SuitePreset, SuiteReport,
    TASK_SIZE_PRESETS,
};
