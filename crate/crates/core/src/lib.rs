//! Group fairness auditing and recall-balancing selection for scored cohorts.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`data_model`] ingests score files into an immutable [`Cohort`].
//! * [`group_metrics`] audits any selection per group (recall, FDR, FPR,
//!   FOR, FNR, FP/GS, FN/GS) with disparity ratios to a reference group.
//! * [`balancer`] computes per-group quotas that equalize recall, or make it
//!   proportional to prevalence, under a recall target or a list size.
//! * [`fairness_tree`] recommends which parity metric fits a program.
//! * [`temporal`] runs inter-temporal precision@k evaluation and model
//!   selection.
//! * [`synth`] generates synthetic cohorts with known group structure.
//! * [`reporting`] builds the equity/efficiency trade-off menu and writes
//!   JSON, CSV and long-format plot data.

pub mod balancer;
pub mod data_model;
pub mod fairness_tree;
pub mod group_metrics;
pub mod ranking;
pub mod reporting;
pub mod synth;
pub mod temporal;

pub use balancer::{
    balance, balance_cohort, BalanceError, BalanceMode, BalanceSpec, Constraint, CurveSet, RollingRecallCurve,
    SearchStrategy, SelectionPlan,
};
pub use data_model::{parse_score_file, partition_by_group, Cohort, IngestConfig, IngestError, ScoredExample};
pub use fairness_tree::{
    recommend_metric, FairnessContext, Focus, MetricRecommendation, Nature, ParityMetric, ProgramScale,
};
pub use group_metrics::{
    audit_selection, audit_top_k, AuditReport, GroupConfusion, GroupMetricSet, GroupStats, Metric,
};
pub use ranking::TieBreak;
pub use reporting::{
    build_tradeoff_menu, emit, BalanceReport, Format, MenuOptions, Report, ScenarioLabel, TradeoffMenu,
};
pub use synth::{generate_population, GroupSpec, SynthSpec};
pub use temporal::{
    generate_splits, run_temporal_eval, select_model, SelectionRule, SplitEvaluation, TemporalConfig, TemporalReport,
    TemporalSplit,
};
