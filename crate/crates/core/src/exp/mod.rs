//! Experiment layer: TOML run configs with embedded defaults, versioned
//! binary checkpoints, CSV/record artifacts, learning-curve plots, and the
//! scenario runner that glues the training modules into cached,
//! reproducible run directories.

mod checkpoint;
mod config;
mod metrics;
mod plot;
mod scenarios;

pub use checkpoint::{blob_map, load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{
    fnv1a64, EnvSection, ExperimentConfig, InputsSection, JointSection, ModelSection, PlanSection,
    PretrainSection, RewardSection, Scenario,
};
pub use metrics::{
    episode_csv, episodes_to_threshold, final_window_mean, loss_csv, read_episode_returns,
    write_episode_csv, write_loss_csv, RunRecord,
};
pub use plot::{aggregate, curves_csv, svg_plot, window_means, Curve, CurvePoint, SeriesData};
pub use scenarios::{
    ablation_table, evaluate, median, run_ablation, run_all, run_scenario, seed_dir, EvalReport,
    EvalRow, METRIC_FINAL_RETURN,
};
