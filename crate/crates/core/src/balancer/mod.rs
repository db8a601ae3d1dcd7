//! Group-specific selection quotas that balance within-group recall.
//!
//! Each group's examples are ranked by score and turned into a
//! [`RollingRecallCurve`]. Quotas `k_g` are then chosen so that recall is
//! either equal across groups or proportional to group prevalence relative
//! to a reference group, under either a recall target or a total list size.
//!
//! Quotas follow the `max n such that R_{g,n} <= target` rule literally, so
//! they can include negatives sitting on a recall plateau; see
//! [`trim_trailing_negatives`] for the minimal-prefix variant.

mod curve;
mod equalized;
mod proportional;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::Cohort;
use crate::ranking::TieBreak;

pub use curve::{CurveEntry, CurveSet, RollingRecallCurve, RECALL_EPS};
pub use equalized::{balance_equalized_by_recall, balance_equalized_by_size};
pub use proportional::{
    balance_proportional_by_ref_recall, balance_proportional_by_size, proportional_quotas_at, target_ratios, SizeSearch,
};

/// Default step for the fixed-step proportional search, in recall units.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalanceError {
    #[error("group `{0}` has no examples")]
    EmptyGroup(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("recall {0} is outside [0, 1]")]
    RecallOutOfRange(f64),
    #[error("list size {k} exceeds the {available} examples available for selection")]
    ListSizeTooLarge { k: usize, available: usize },
    #[error("reference group `{0}` not found")]
    UnknownReference(String),
    #[error("reference group `{0}` has zero prevalence; prevalence ratios are undefined")]
    ZeroPrevalenceReference(String),
    #[error("proportional balancing requires a reference group")]
    MissingReference,
    #[error("equalized balancing does not take a reference group")]
    UnexpectedReference,
    #[error("constraint {constraint} is not valid for {mode} balancing")]
    InvalidConstraint { mode: &'static str, constraint: String },
    #[error("step size must be finite and > 0, got {0}")]
    InvalidStep(f64),
    #[error("plan was built with tie-break {plan} but curves use {curves}")]
    TieBreakMismatch { plan: String, curves: String },
    #[error("plan groups {plan:?} do not match cohort groups {cohort:?}")]
    GroupMismatch { plan: Vec<String>, cohort: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    Equalized,
    Proportional,
}

impl BalanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            BalanceMode::Equalized => "equalized",
            BalanceMode::Proportional => "proportional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Total number of people to select.
    ListSize(usize),
    /// Recall every group should reach (equalized mode).
    RecallTarget(f64),
    /// Recall for the reference group (proportional mode).
    ReferenceRecall(f64),
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::ListSize(k) => write!(f, "list_size={k}"),
            Constraint::RecallTarget(r) => write!(f, "recall_target={r}"),
            Constraint::ReferenceRecall(r) => write!(f, "reference_recall={r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    /// Increase the reference recall in steps of `step_size` until the
    /// budget is met.
    #[default]
    FixedStep,
    /// Scan the finite set of reference recalls at which any quota changes.
    ExactBreakpoint,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

/// Everything needed to reproduce a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSpec {
    pub mode: BalanceMode,
    pub constraint: Constraint,
    #[serde(default)]
    pub reference_group: Option<String>,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default)]
    pub search_strategy: SearchStrategy,
    #[serde(flatten)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub trim_trailing_negatives: bool,
    /// Proportional by size only: when the search overshoots the budget,
    /// admit the examples crossing the final breakpoint in merged order
    /// until exactly K are selected.
    #[serde(default)]
    pub fill_to_budget: bool,
}

impl BalanceSpec {
    fn base(mode: BalanceMode, constraint: Constraint, reference_group: Option<String>) -> Self {
        Self {
            mode,
            constraint,
            reference_group,
            step_size: DEFAULT_STEP,
            search_strategy: SearchStrategy::FixedStep,
            tie_break: TieBreak::EntityId,
            trim_trailing_negatives: false,
            fill_to_budget: false,
        }
    }

    pub fn equalized_by_size(k: usize) -> Self {
        Self::base(BalanceMode::Equalized, Constraint::ListSize(k), None)
    }

    pub fn equalized_by_recall(recall: f64) -> Self {
        Self::base(BalanceMode::Equalized, Constraint::RecallTarget(recall), None)
    }

    pub fn proportional_by_ref_recall(reference: impl Into<String>, recall: f64) -> Self {
        Self::base(BalanceMode::Proportional, Constraint::ReferenceRecall(recall), Some(reference.into()))
    }

    pub fn proportional_by_size(reference: impl Into<String>, k: usize) -> Self {
        Self::base(BalanceMode::Proportional, Constraint::ListSize(k), Some(reference.into()))
    }

    pub fn with_tie_break(mut self, tie: TieBreak) -> Self {
        self.tie_break = tie;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step_size = step;
        self
    }

    pub fn with_search(mut self, strategy: SearchStrategy) -> Self {
        self.search_strategy = strategy;
        self
    }

    pub fn with_trim(mut self, trim: bool) -> Self {
        self.trim_trailing_negatives = trim;
        self
    }

    pub fn with_fill_to_budget(mut self, fill: bool) -> Self {
        self.fill_to_budget = fill;
        self
    }

    pub fn validate(&self) -> Result<(), BalanceError> {
        let bad =
            || BalanceError::InvalidConstraint { mode: self.mode.name(), constraint: self.constraint.to_string() };
        match (self.mode, self.constraint) {
            (BalanceMode::Equalized, Constraint::ReferenceRecall(_)) => return Err(bad()),
            (BalanceMode::Proportional, Constraint::RecallTarget(_)) => return Err(bad()),
            _ => {}
        }
        match (self.mode, &self.reference_group) {
            (BalanceMode::Equalized, Some(_)) => return Err(BalanceError::UnexpectedReference),
            (BalanceMode::Proportional, None) => return Err(BalanceError::MissingReference),
            _ => {}
        }
        if let Constraint::RecallTarget(r) | Constraint::ReferenceRecall(r) = self.constraint {
            check_recall(r)?;
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(BalanceError::InvalidStep(self.step_size));
        }
        Ok(())
    }
}

pub(crate) fn check_recall(r: f64) -> Result<(), BalanceError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(BalanceError::RecallOutOfRange(r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanGroup {
    pub group: String,
    pub n: usize,
    pub positives: u64,
    pub k_g: usize,
    pub target_recall: Option<f64>,
    /// Absent for groups with no positives.
    pub achieved_recall: Option<f64>,
    /// Prevalence ratio to the reference group (proportional mode).
    pub r_g: Option<f64>,
    /// Set when `r_g * x` exceeded 1 and the target was capped.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotaSnapshot {
    pub x: f64,
    pub total: usize,
    pub quotas: BTreeMap<String, usize>,
}

/// How the proportional-by-size search ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrace {
    /// Final reference-recall level.
    pub x: f64,
    /// Sum of formula quotas at `x`; may exceed the requested size.
    pub k_all: usize,
    /// Grid steps taken (fixed step) or candidates in the scan (exact).
    pub steps: u64,
    /// Last plan below the budget (exact breakpoint search only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undershoot: Option<QuotaSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionPlan {
    pub attribute: String,
    #[serde(flatten)]
    pub spec: BalanceSpec,
    pub groups: Vec<PlanGroup>,
    pub total: usize,
    #[serde(rename = "requested_K")]
    pub requested_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchTrace>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_ids: Option<Vec<String>>,
}

impl SelectionPlan {
    pub fn group(&self, name: &str) -> Option<&PlanGroup> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn quota(&self, name: &str) -> Option<usize> {
        self.group(name).map(|g| g.k_g)
    }

    pub fn quotas(&self) -> BTreeMap<String, usize> {
        self.groups.iter().map(|g| (g.group.clone(), g.k_g)).collect()
    }

    /// Max pairwise difference of achieved recall across groups with
    /// positives.
    pub fn recall_gap(&self) -> f64 {
        let rs: Vec<f64> = self.groups.iter().filter_map(|g| g.achieved_recall).collect();
        let max = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
        if rs.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

/// Per-group quota inputs used to assemble a plan.
pub(crate) struct GroupChoice {
    pub k: usize,
    pub target: Option<f64>,
    pub r_g: Option<f64>,
    pub capped: bool,
}

pub(crate) fn zero_positive_warning(group: &str) -> String {
    format!("group `{group}` has no positive labels; quota forced to 0")
}

pub(crate) fn assemble_plan(
    curves: &CurveSet,
    spec: BalanceSpec,
    mut choices: BTreeMap<String, GroupChoice>,
    search: Option<SearchTrace>,
    mut warnings: Vec<String>,
) -> SelectionPlan {
    let mut groups = Vec::with_capacity(curves.len());
    for c in curves.iter() {
        let choice = choices.remove(&c.group).unwrap_or(GroupChoice { k: 0, target: None, r_g: None, capped: false });
        if c.positives() == 0 && !warnings.iter().any(|w| w == &zero_positive_warning(&c.group)) {
            warnings.push(zero_positive_warning(&c.group));
        }
        groups.push(PlanGroup {
            group: c.group.clone(),
            n: c.len(),
            positives: c.positives(),
            k_g: choice.k,
            target_recall: choice.target,
            achieved_recall: (c.positives() > 0).then(|| c.recall_at(choice.k)),
            r_g: choice.r_g,
            capped: choice.capped,
        });
    }
    let total = groups.iter().map(|g| g.k_g).sum();
    let requested_k = match spec.constraint {
        Constraint::ListSize(k) => Some(k),
        _ => None,
    };
    SelectionPlan {
        attribute: curves.attribute.clone(),
        spec,
        groups,
        total,
        requested_k,
        search,
        warnings,
        selected_ids: None,
    }
}

/// Runs whichever balancing branch `spec` describes.
pub fn balance(curves: &CurveSet, spec: &BalanceSpec) -> Result<SelectionPlan, BalanceError> {
    spec.validate()?;
    if spec.tie_break != curves.tie_break {
        return Err(BalanceError::TieBreakMismatch {
            plan: format!("{:?}", spec.tie_break),
            curves: format!("{:?}", curves.tie_break),
        });
    }
    let mut plan = match (spec.mode, spec.constraint, spec.reference_group.as_deref()) {
        (BalanceMode::Equalized, Constraint::ListSize(k), _) => balance_equalized_by_size(curves, k)?,
        (BalanceMode::Equalized, Constraint::RecallTarget(r), _) => balance_equalized_by_recall(curves, r)?,
        (BalanceMode::Proportional, Constraint::ReferenceRecall(r), Some(g)) => {
            balance_proportional_by_ref_recall(curves, g, r)?
        }
        (BalanceMode::Proportional, Constraint::ListSize(k), Some(g)) => {
            let search = SizeSearch {
                step: spec.step_size,
                strategy: spec.search_strategy,
                fill_to_budget: spec.fill_to_budget,
            };
            balance_proportional_by_size(curves, g, k, &search)?
        }
        _ => unreachable!("rejected by validate"),
    };
    if spec.trim_trailing_negatives {
        plan = trim_trailing_negatives(&plan, curves)?;
    }
    plan.spec = spec.clone();
    Ok(plan)
}

/// Builds curves for `attribute` with the spec's tie-break, then balances.
pub fn balance_cohort(cohort: &Cohort, attribute: &str, spec: &BalanceSpec) -> Result<SelectionPlan, BalanceError> {
    let curves = CurveSet::build(cohort, attribute, spec.tie_break)?;
    balance(&curves, spec)
}

fn check_groups(plan: &SelectionPlan, curves: &CurveSet) -> Result<(), BalanceError> {
    let plan_groups: BTreeSet<&str> = plan.groups.iter().map(|g| g.group.as_str()).collect();
    let curve_groups: BTreeSet<&str> = curves.groups().collect();
    if plan_groups != curve_groups {
        return Err(BalanceError::GroupMismatch {
            plan: plan_groups.into_iter().map(String::from).collect(),
            cohort: curve_groups.into_iter().map(String::from).collect(),
        });
    }
    Ok(())
}

/// Shrinks every quota to the shortest prefix with the same recall. The
/// total may drop below the requested size; freed slots are not refilled.
pub fn trim_trailing_negatives(plan: &SelectionPlan, curves: &CurveSet) -> Result<SelectionPlan, BalanceError> {
    check_groups(plan, curves)?;
    let mut out = plan.clone();
    for g in &mut out.groups {
        let curve = curves.get(&g.group).expect("checked above");
        g.k_g = curve.minimal_quota(g.k_g);
    }
    out.total = out.groups.iter().map(|g| g.k_g).sum();
    out.spec.trim_trailing_negatives = true;
    out.selected_ids = None;
    Ok(out)
}

/// The top `k_g` entity ids of every group, groups in name order.
pub fn realize_selection(plan: &SelectionPlan, curves: &CurveSet) -> Result<Vec<String>, BalanceError> {
    check_groups(plan, curves)?;
    let mut ids = Vec::with_capacity(plan.total);
    for g in &plan.groups {
        let curve = curves.get(&g.group).expect("checked above");
        ids.extend_from_slice(&curve.ranked_ids()[..g.k_g]);
    }
    Ok(ids)
}

/// Rebuilds the curves from the cohort under `tie` and realizes the plan.
pub fn realize_in_cohort(
    plan: &SelectionPlan,
    cohort: &Cohort,
    attribute: &str,
    tie: TieBreak,
) -> Result<Vec<String>, BalanceError> {
    let curves = CurveSet::build(cohort, attribute, tie)?;
    realize_selection(plan, &curves)
}
