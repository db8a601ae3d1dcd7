//! Trade-off menus and report emission.
//!
//! [`build_tradeoff_menu`] lays out five selection options side by side:
//! the unadjusted top-K list, two options that keep the top-K and add
//! people until groups reach a recall target, and two balanced options at
//! the same list size. Every option is audited on the exact set of people
//! it selects.
//!
//! [`emit`] writes any [`Report`] as JSON, a wide CSV table, or long-format
//! plot data (`scenario,group,metric,value`). Floats are written with the
//! shortest representation that parses back to the same value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{balance, BalanceError, BalanceSpec, CurveSet, SearchStrategy, SelectionPlan};
use crate::data_model::Cohort;
use crate::group_metrics::{audit_selection, audit_top_k, default_reference, AuditReport, Metric, MetricsError};
use crate::ranking::TieBreak;
use crate::temporal::TemporalReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error("{kind} cannot be written as {format}")]
    Unsupported { kind: &'static str, format: Format },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLabel {
    TopKUnadjusted,
    ExpandedEqualized,
    ExpandedProportional,
    CurrentScaleEqualized,
    CurrentScaleProportional,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 5] = [
        ScenarioLabel::TopKUnadjusted,
        ScenarioLabel::ExpandedEqualized,
        ScenarioLabel::ExpandedProportional,
        ScenarioLabel::CurrentScaleEqualized,
        ScenarioLabel::CurrentScaleProportional,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioLabel::TopKUnadjusted => "top_k_unadjusted",
            ScenarioLabel::ExpandedEqualized => "expanded_equalized",
            ScenarioLabel::ExpandedProportional => "expanded_proportional",
            ScenarioLabel::CurrentScaleEqualized => "current_scale_equalized",
            ScenarioLabel::CurrentScaleProportional => "current_scale_proportional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffScenario {
    pub label: ScenarioLabel,
    pub total: usize,
    pub overall_precision: Option<f64>,
    /// Overall precision minus the unadjusted top-K precision.
    pub precision_change_vs_top_k: Option<f64>,
    /// The unadjusted option has no plan.
    pub plan: Option<SelectionPlan>,
    pub audit: AuditReport,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffMenu {
    pub attribute: String,
    pub k: usize,
    pub reference_group: String,
    #[serde(flatten)]
    pub tie_break: TieBreak,
    pub trim_trailing_negatives: bool,
    pub scenarios: Vec<TradeoffScenario>,
}

impl TradeoffMenu {
    pub fn scenario(&self, label: ScenarioLabel) -> &TradeoffScenario {
        self.scenarios.iter().find(|s| s.label == label).expect("menu holds every scenario")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MenuOptions {
    pub tie_break: TieBreak,
    /// Trim trailing negatives in the fixed-size options.
    pub trim: bool,
}

/// Keeps every group's top-K members and extends each group down its own
/// ranking to the shortest prefix reaching the plan's recall.
fn expand_from_top_k(mut plan: SelectionPlan, top_k: &AuditReport, curves: &CurveSet) -> SelectionPlan {
    for g in &mut plan.groups {
        let kept = top_k.group(&g.group).map_or(0, |a| a.metrics.selected as usize);
        g.k_g = g.k_g.max(kept);
        let curve = curves.get(&g.group).expect("plan groups come from these curves");
        g.achieved_recall = (curve.positives() > 0).then(|| curve.recall_at(g.k_g));
    }
    plan.total = plan.groups.iter().map(|g| g.k_g).sum();
    plan
}

fn recall_of(audit: &AuditReport, group: &str) -> f64 {
    audit.group(group).and_then(|g| g.metrics.recall).map_or(0.0, |r| r.value())
}

/// Builds the five-option menu for a list of size `k`. The reference group
/// defaults to the largest group.
pub fn build_tradeoff_menu(
    cohort: &Cohort,
    attribute: &str,
    k: usize,
    reference: Option<&str>,
    opts: MenuOptions,
) -> Result<TradeoffMenu, ReportError> {
    let curves = CurveSet::build(cohort, attribute, opts.tie_break)?;
    let reference_group = match reference {
        Some(r) if curves.get(r).is_some() => r.to_string(),
        Some(r) => return Err(BalanceError::UnknownReference(r.to_string()).into()),
        None => default_reference(&curves.stats()).map(|s| s.group.clone()).unwrap_or_default(),
    };
    let top_k = audit_top_k(cohort, attribute, k, opts.tie_break, Some(&reference_group))?;

    let best = top_k.recall_disparity().map_or(0.0, |d| d.best_recall);
    let ref_recall = recall_of(&top_k, &reference_group);
    let tie = opts.tie_break;
    let specs = [
        (ScenarioLabel::ExpandedEqualized, BalanceSpec::equalized_by_recall(best).with_trim(true)),
        (
            ScenarioLabel::ExpandedProportional,
            BalanceSpec::proportional_by_ref_recall(&reference_group, ref_recall).with_trim(true),
        ),
        (ScenarioLabel::CurrentScaleEqualized, BalanceSpec::equalized_by_size(k).with_trim(opts.trim)),
        (
            ScenarioLabel::CurrentScaleProportional,
            BalanceSpec::proportional_by_size(&reference_group, k)
                .with_search(SearchStrategy::ExactBreakpoint)
                .with_fill_to_budget(true)
                .with_trim(opts.trim),
        ),
    ];

    let balanced = specs
        .into_par_iter()
        .map(|(label, spec)| -> Result<TradeoffScenario, ReportError> {
            let mut plan = balance(&curves, &spec.with_tie_break(tie))?;
            let mut notes = Vec::new();
            match label {
                ScenarioLabel::ExpandedEqualized => {
                    plan = expand_from_top_k(plan, &top_k, &curves);
                    notes.push(format!(
                        "keeps the top {k} and extends each group to the highest recall not above {best}, the best group recall at top {k}"
                    ));
                }
                ScenarioLabel::ExpandedProportional => {
                    plan = expand_from_top_k(plan, &top_k, &curves);
                    notes.push(format!(
                        "keeps the top {k} and extends each group toward prevalence-scaled recall, with `{reference_group}` held at its top-{k} recall {ref_recall}"
                    ));
                }
                ScenarioLabel::CurrentScaleEqualized => {
                    notes.push(format!("equalized recall at a fixed list size of {k}"));
                }
                _ => notes.push(format!(
                    "prevalence-proportional recall relative to `{reference_group}` at a fixed list size of {k}"
                )),
            }
            let ids = crate::balancer::realize_selection(&plan, &curves)?;
            let audit = audit_selection(cohort, attribute, &ids, Some(&reference_group))?;
            Ok(TradeoffScenario {
                label,
                total: plan.total,
                overall_precision: audit.overall_precision,
                precision_change_vs_top_k: None,
                plan: Some(plan),
                audit,
                notes,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let base_precision = top_k.overall_precision;
    let mut scenarios = vec![TradeoffScenario {
        label: ScenarioLabel::TopKUnadjusted,
        total: top_k.k,
        overall_precision: base_precision,
        precision_change_vs_top_k: base_precision.map(|_| 0.0),
        plan: None,
        notes: vec![format!("the {k} highest scores, no adjustment")],
        audit: top_k,
    }];
    scenarios.extend(balanced);
    for s in &mut scenarios {
        s.precision_change_vs_top_k = match (s.overall_precision, base_precision) {
            (Some(p), Some(b)) => Some(p - b),
            _ => None,
        };
    }
    Ok(TradeoffMenu {
        attribute: attribute.to_string(),
        k,
        reference_group,
        tie_break: tie,
        trim_trailing_negatives: opts.trim,
        scenarios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Plotdata,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Plotdata => "plotdata",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "plotdata" => Ok(Format::Plotdata),
            other => Err(format!("unknown format `{other}` (expected json, csv or plotdata)")),
        }
    }
}

/// Shortest round-trip decimal; empty for undefined values.
pub fn fmt_float(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

type Rows = (Vec<&'static str>, Vec<Vec<String>>);

/// Something [`emit`] can write.
pub trait Report: Serialize {
    const KIND: &'static str;

    fn table(&self) -> Option<Rows> {
        None
    }

    fn plotdata(&self) -> Option<Rows> {
        None
    }
}

fn write_rows((header, rows): Rows) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io { path: "<buffer>".into(), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Renders `report` in `format`. JSON ends with a newline.
pub fn emit<R: Report>(report: &R, format: Format) -> Result<String, ReportError> {
    let unsupported = ReportError::Unsupported { kind: R::KIND, format };
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => write_rows(report.table().ok_or(unsupported)?),
        Format::Plotdata => write_rows(report.plotdata().ok_or(unsupported)?),
    }
}

/// Renders and writes to `path`.
pub fn write_report<R: Report>(report: &R, format: Format, path: &Path) -> Result<(), ReportError> {
    let text = emit(report, format)?;
    std::fs::write(path, text).map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

const PLOT_HEADER: [&str; 4] = ["scenario", "group", "metric", "value"];

fn audit_long(scenario: &str, audit: &AuditReport, out: &mut Vec<Vec<String>>) {
    for g in &audit.groups {
        let mut push = |metric: &str, value: String| {
            out.push(vec![scenario.to_string(), g.stats.group.clone(), metric.to_string(), value]);
        };
        push("count", g.metrics.selected.to_string());
        for m in Metric::ALL {
            push(m.name(), fmt_float(g.metrics.get(m).map(|r| r.value())));
        }
        for m in Metric::ALL {
            push(&format!("{}_ratio", m.name()), fmt_float(g.ratios.get(&m).copied().flatten()));
        }
    }
}

impl Report for AuditReport {
    const KIND: &'static str = "audit";

    fn table(&self) -> Option<Rows> {
        let mut header = vec!["group", "n", "positives", "prevalence", "tp", "fp", "fn", "tn", "selected"];
        header.extend(Metric::ALL.iter().map(|m| m.name()));
        let ratio_names: Vec<&'static str> = Metric::ALL
            .iter()
            .map(|m| match m {
                Metric::Recall => "recall_ratio",
                Metric::Precision => "precision_ratio",
                Metric::Fdr => "fdr_ratio",
                Metric::Fpr => "fpr_ratio",
                Metric::Fnr => "fnr_ratio",
                Metric::For => "for_ratio",
                Metric::FpOverGroupSize => "fp_over_group_size_ratio",
                Metric::FnOverGroupSize => "fn_over_group_size_ratio",
            })
            .collect();
        header.extend(ratio_names);
        let rows = self
            .groups
            .iter()
            .map(|g| {
                let mut r = vec![
                    g.stats.group.clone(),
                    g.stats.n.to_string(),
                    g.stats.positives.to_string(),
                    g.stats.prevalence.to_string(),
                    g.confusion.tp.to_string(),
                    g.confusion.fp.to_string(),
                    g.confusion.fn_.to_string(),
                    g.confusion.tn.to_string(),
                    g.metrics.selected.to_string(),
                ];
                r.extend(Metric::ALL.iter().map(|&m| fmt_float(g.metrics.get(m).map(|x| x.value()))));
                r.extend(Metric::ALL.iter().map(|m| fmt_float(g.ratios.get(m).copied().flatten())));
                r
            })
            .collect();
        Some((header, rows))
    }

    fn plotdata(&self) -> Option<Rows> {
        let mut rows = Vec::new();
        audit_long("audit", self, &mut rows);
        Some((PLOT_HEADER.to_vec(), rows))
    }
}

fn plan_table(plan: &SelectionPlan) -> Rows {
    let header = vec!["group", "n", "positives", "k_g", "target_recall", "achieved_recall", "r_g", "capped"];
    let rows = plan
        .groups
        .iter()
        .map(|g| {
            vec![
                g.group.clone(),
                g.n.to_string(),
                g.positives.to_string(),
                g.k_g.to_string(),
                fmt_float(g.target_recall),
                fmt_float(g.achieved_recall),
                fmt_float(g.r_g),
                g.capped.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

fn plan_long(scenario: &str, plan: &SelectionPlan, out: &mut Vec<Vec<String>>) {
    for g in &plan.groups {
        for (metric, value) in [
            ("k_g", Some(g.k_g as f64)),
            ("target_recall", g.target_recall),
            ("achieved_recall", g.achieved_recall),
            ("r_g", g.r_g),
        ] {
            out.push(vec![scenario.to_string(), g.group.clone(), metric.to_string(), fmt_float(value)]);
        }
    }
}

impl Report for SelectionPlan {
    const KIND: &'static str = "plan";

    fn table(&self) -> Option<Rows> {
        Some(plan_table(self))
    }

    fn plotdata(&self) -> Option<Rows> {
        let mut rows = Vec::new();
        plan_long("plan", self, &mut rows);
        Some((PLOT_HEADER.to_vec(), rows))
    }
}

/// A plan together with the audit of the selection it realizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub plan: SelectionPlan,
    pub audit: AuditReport,
}

impl Report for BalanceReport {
    const KIND: &'static str = "balance";

    fn table(&self) -> Option<Rows> {
        let (mut header, mut rows) = plan_table(&self.plan);
        header.extend(["recall", "precision", "selected"]);
        for (row, g) in rows.iter_mut().zip(&self.plan.groups) {
            let a = self.audit.group(&g.group);
            row.push(fmt_float(a.and_then(|a| a.metrics.recall).map(|r| r.value())));
            row.push(fmt_float(a.and_then(|a| a.metrics.precision).map(|r| r.value())));
            row.push(a.map_or(0, |a| a.metrics.selected).to_string());
        }
        Some((header, rows))
    }

    fn plotdata(&self) -> Option<Rows> {
        let mut rows = Vec::new();
        plan_long("plan", &self.plan, &mut rows);
        audit_long("plan", &self.audit, &mut rows);
        Some((PLOT_HEADER.to_vec(), rows))
    }
}

impl Report for TradeoffMenu {
    const KIND: &'static str = "tradeoff menu";

    fn table(&self) -> Option<Rows> {
        let header = vec!["scenario", "group", "count", "recall", "precision", "target_recall"];
        let mut rows = Vec::new();
        for s in &self.scenarios {
            let targets: BTreeMap<&str, Option<f64>> =
                s.plan.iter().flat_map(|p| p.groups.iter().map(|g| (g.group.as_str(), g.target_recall))).collect();
            for g in &s.audit.groups {
                rows.push(vec![
                    s.label.name().to_string(),
                    g.stats.group.clone(),
                    g.metrics.selected.to_string(),
                    fmt_float(g.metrics.recall.map(|r| r.value())),
                    fmt_float(g.metrics.precision.map(|r| r.value())),
                    fmt_float(targets.get(g.stats.group.as_str()).copied().flatten()),
                ]);
            }
            rows.push(vec![
                s.label.name().to_string(),
                "all".into(),
                s.total.to_string(),
                String::new(),
                fmt_float(s.overall_precision),
                String::new(),
            ]);
        }
        Some((header, rows))
    }

    fn plotdata(&self) -> Option<Rows> {
        let mut rows = Vec::new();
        for s in &self.scenarios {
            let name = s.label.name();
            for g in &s.audit.groups {
                rows.push(vec![name.into(), g.stats.group.clone(), "count".into(), g.metrics.selected.to_string()]);
                rows.push(vec![
                    name.into(),
                    g.stats.group.clone(),
                    "recall".into(),
                    fmt_float(g.metrics.recall.map(|r| r.value())),
                ]);
            }
            rows.push(vec![name.into(), "all".into(), "total".into(), s.total.to_string()]);
            rows.push(vec![name.into(), "all".into(), "precision".into(), fmt_float(s.overall_precision)]);
        }
        Some((PLOT_HEADER.to_vec(), rows))
    }
}

impl Report for TemporalReport {
    const KIND: &'static str = "temporal report";

    fn table(&self) -> Option<Rows> {
        let header =
            vec!["modeling_date", "model_id", "precision_at_k", "true_positives", "n_evaluated", "k_effective"];
        let rows = self
            .evaluations
            .iter()
            .map(|e| {
                vec![
                    e.modeling_date.to_string(),
                    e.model_id.clone(),
                    e.precision_at_k.to_string(),
                    e.true_positives.to_string(),
                    e.n_evaluated.to_string(),
                    e.k_effective.to_string(),
                ]
            })
            .collect();
        Some((header, rows))
    }

    fn plotdata(&self) -> Option<Rows> {
        let rows = self
            .evaluations
            .iter()
            .map(|e| vec![e.modeling_date.to_string(), e.model_id.clone(), e.precision_at_k.to_string()])
            .collect();
        Some((vec!["modeling_date", "model_id", "precision"], rows))
    }
}

impl Report for crate::fairness_tree::MetricRecommendation {
    const KIND: &'static str = "recommendation";
}

impl Report for crate::data_model::Cohort {
    const KIND: &'static str = "cohort";
}
