//! Choosing a parity metric from the nature of the program.
//!
//! The decision table lives in `fairness_tree_rules.json` and is embedded at
//! build time; [`RuleTable::from_json`] accepts alternative tables with the
//! same schema.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const STANDARD_RULES: &str = include_str!("fairness_tree_rules.json");

/// Default share of the population below which a program counts as small
/// when an audit is available.
pub const SMALL_PROGRAM_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("assistive programs need a scale (small_fraction_of_need or substantial)")]
    MissingScale,
    #[error("scale only applies to assistive programs")]
    UnexpectedScale,
    #[error("a focus group is required for this branch")]
    MissingFocus,
    #[error("no rule for focus `{focus}` in this branch")]
    UnsupportedFocus { focus: String },
    #[error("invalid rule table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nature {
    Punitive,
    Assistive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramScale {
    SmallFractionOfNeed,
    Substantial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Focus {
    Everyone,
    IntervenedOrServed,
    NotIntervenedOrUnserved,
    ActualNeedOrUnwarranted,
}

impl Focus {
    pub const ALL: [Focus; 4] =
        [Focus::Everyone, Focus::IntervenedOrServed, Focus::NotIntervenedOrUnserved, Focus::ActualNeedOrUnwarranted];
}

macro_rules! snake_name {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
                f.write_str(v.as_str().unwrap_or_default())
            }
        }
    };
}
snake_name!(Nature);
snake_name!(ProgramScale);
snake_name!(Focus);
snake_name!(ParityMetric);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityMetric {
    FpGsParity,
    FdrParity,
    FprParity,
    RecallParity,
    FnGsParity,
    ForParity,
    FnrParity,
}

impl ParityMetric {
    pub const ALL: [ParityMetric; 7] = [
        ParityMetric::FpGsParity,
        ParityMetric::FdrParity,
        ParityMetric::FprParity,
        ParityMetric::RecallParity,
        ParityMetric::FnGsParity,
        ParityMetric::ForParity,
        ParityMetric::FnrParity,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ParityMetric::FpGsParity => "FP/GS parity",
            ParityMetric::FdrParity => "FDR parity",
            ParityMetric::FprParity => "FPR parity",
            ParityMetric::RecallParity => "Recall parity",
            ParityMetric::FnGsParity => "FN/GS parity",
            ParityMetric::ForParity => "FOR parity",
            ParityMetric::FnrParity => "FNR parity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessContext {
    pub nature: Nature,
    #[serde(default)]
    pub scale: Option<ProgramScale>,
    #[serde(default)]
    pub focus: Option<Focus>,
}

impl FairnessContext {
    pub fn validate(&self) -> Result<(), TreeError> {
        match (self.nature, self.scale) {
            (Nature::Assistive, None) => Err(TreeError::MissingScale),
            (Nature::Punitive, Some(_)) => Err(TreeError::UnexpectedScale),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecommendation {
    pub metric: ParityMetric,
    pub metric_label: &'static str,
    pub context: FairnessContext,
    pub rationale: String,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub nature: Nature,
    #[serde(default)]
    pub scale: Option<ProgramScale>,
    /// `None` matches any focus, including none given.
    #[serde(default)]
    pub focus: Option<Focus>,
    pub metric: ParityMetric,
    pub path: Vec<String>,
    #[serde(default)]
    pub caveats: Vec<String>,
}

impl Rule {
    fn matches(&self, ctx: &FairnessContext) -> bool {
        self.nature == ctx.nature && self.scale == ctx.scale && (self.focus.is_none() || self.focus == ctx.focus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub general_caveats: Vec<String>,
}

impl RuleTable {
    /// The shipped decision table.
    pub fn standard() -> Self {
        Self::from_json(STANDARD_RULES).expect("embedded rule table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let table: RuleTable = serde_json::from_str(text).map_err(|e| TreeError::InvalidTable(e.to_string()))?;
        if table.rules.is_empty() {
            return Err(TreeError::InvalidTable("no rules".into()));
        }
        Ok(table)
    }

    pub fn recommend(&self, ctx: &FairnessContext) -> Result<MetricRecommendation, TreeError> {
        ctx.validate()?;
        let rule = self.rules.iter().find(|r| r.matches(ctx)).ok_or_else(|| match ctx.focus {
            None => TreeError::MissingFocus,
            Some(f) => TreeError::UnsupportedFocus { focus: f.to_string() },
        })?;
        let mut caveats = rule.caveats.clone();
        caveats.extend(self.general_caveats.iter().cloned());
        Ok(MetricRecommendation {
            metric: rule.metric,
            metric_label: rule.metric.label(),
            context: *ctx,
            rationale: format!("{} -> {}", rule.path.join(" -> "), rule.metric.label()),
            caveats,
        })
    }

    /// Every context the table accepts, in a stable order.
    pub fn valid_contexts(&self) -> Vec<FairnessContext> {
        let mut out = Vec::new();
        for nature in [Nature::Punitive, Nature::Assistive] {
            for scale in [None, Some(ProgramScale::SmallFractionOfNeed), Some(ProgramScale::Substantial)] {
                for focus in std::iter::once(None).chain(Focus::ALL.into_iter().map(Some)) {
                    let ctx = FairnessContext { nature, scale, focus };
                    if self.recommend(&ctx).is_ok() {
                        out.push(ctx);
                    }
                }
            }
        }
        out
    }
}

/// Recommendation from the shipped table.
pub fn recommend_metric(ctx: &FairnessContext) -> Result<MetricRecommendation, TreeError> {
    RuleTable::standard().recommend(ctx)
}

/// Like [`recommend_metric`], adding a hint when the share of the
/// population selected by an accompanying audit disagrees with the stated
/// program scale.
pub fn recommend_with_selection(
    ctx: &FairnessContext,
    selected_fraction: f64,
    threshold: f64,
) -> Result<MetricRecommendation, TreeError> {
    let mut rec = recommend_metric(ctx)?;
    let pct = selected_fraction * 100.0;
    let small = selected_fraction <= threshold;
    match (ctx.scale, small) {
        (Some(ProgramScale::Substantial), true) => rec.caveats.push(format!(
            "The audited selection covers {pct:.2}% of the population (at most {:.0}%): FOR will sit near each group's prevalence and FNR near 1. The small-program branch (recall parity) may fit better.",
            threshold * 100.0
        )),
        (Some(ProgramScale::SmallFractionOfNeed), false) => rec.caveats.push(format!(
            "The audited selection covers {pct:.2}% of the population, above the {:.0}% hint for a small program.",
            threshold * 100.0
        )),
        _ => {}
    }
    Ok(rec)
}
