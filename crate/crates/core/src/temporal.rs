//! Inter-temporal evaluation of competing score sets.
//!
//! Each score set carries an `as_of_date` (the modeling date) and labels
//! observed over the window that follows it. Splits are generated on a
//! monthly grid, every (model, split) pair is scored by precision@k, and
//! models are ranked by a stability-aware rule.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{Cohort, ScoredExample};
use crate::ranking::{top_k_indices, TieBreak};

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("invalid temporal config: {0}")]
    InvalidConfig(String),
    #[error("entity `{entity_id}` is dated {found:?} but the split's modeling date is {expected}")]
    DateMismatch { entity_id: String, found: Option<NaiveDate>, expected: NaiveDate },
    #[error("no scored examples for model `{model_id}` at {modeling_date}")]
    EmptySplit { model_id: String, modeling_date: NaiveDate },
    #[error("model `{model_id}` has {available} examples at {modeling_date}, fewer than k = {k} (use lenient mode to evaluate anyway)")]
    ShortList { model_id: String, modeling_date: NaiveDate, k: usize, available: usize },
    #[error("entity `{0}` has no as_of_date")]
    MissingDate(String),
    #[error("duplicate evaluation for model `{model_id}` at {modeling_date}")]
    DuplicateEvaluation { model_id: String, modeling_date: NaiveDate },
    #[error("no evaluations to rank")]
    NoEvaluations,
    #[error("model `{model_id}` has {n} evaluations; this rule needs at least {required}")]
    TooFewEvaluations { model_id: String, n: usize, required: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub interval_months: u32,
    pub label_window_months: u32,
    pub k: usize,
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let bad = |m: &str| Err(TemporalError::InvalidConfig(m.to_string()));
        if self.start_date > self.end_date {
            return bad("start_date is after end_date");
        }
        if self.interval_months == 0 {
            return bad("interval_months must be positive");
        }
        if self.label_window_months == 0 {
            return bad("label_window_months must be positive");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub modeling_date: NaiveDate,
    /// Labels are observed over `[window_start, window_end)`.
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

fn add_months(date: NaiveDate, months: u32) -> Result<NaiveDate, TemporalError> {
    date.checked_add_months(Months::new(months))
        .ok_or_else(|| TemporalError::InvalidConfig(format!("{date} + {months} months is out of range")))
}

/// Modeling dates `start, start + interval, ...` up to and including `end`.
/// Each date is offset from `start` directly, so a day clamped in a short
/// month does not drift into later dates.
pub fn generate_splits(cfg: &TemporalConfig) -> Result<Vec<TemporalSplit>, TemporalError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for i in 0u32.. {
        let offset = i
            .checked_mul(cfg.interval_months)
            .ok_or_else(|| TemporalError::InvalidConfig("date range too long".into()))?;
        let modeling_date = add_months(cfg.start_date, offset)?;
        if modeling_date > cfg.end_date {
            break;
        }
        let window_end = add_months(modeling_date, cfg.label_window_months)?;
        let split = TemporalSplit { modeling_date, window_start: modeling_date, window_end };
        assert!(split.window_start >= split.modeling_date && split.window_end > split.window_start);
        out.push(split);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub model_id: String,
    pub modeling_date: NaiveDate,
    pub precision_at_k: f64,
    pub true_positives: u64,
    pub n_evaluated: usize,
    pub k_effective: usize,
}

/// Precision among the top `k` of one model's scores for one split.
///
/// In strict mode a list shorter than `k` is an error; in lenient mode the
/// whole list is evaluated and `k_effective` records its length.
pub fn evaluate_split<E: AsRef<ScoredExample> + Sync>(
    model_id: &str,
    examples: &[E],
    split: &TemporalSplit,
    k: usize,
    tie: TieBreak,
    lenient: bool,
) -> Result<SplitEvaluation, TemporalError> {
    if examples.is_empty() {
        return Err(TemporalError::EmptySplit { model_id: model_id.into(), modeling_date: split.modeling_date });
    }
    if let Some(ex) = examples.iter().map(AsRef::as_ref).find(|e| e.as_of_date != Some(split.modeling_date)) {
        return Err(TemporalError::DateMismatch {
            entity_id: ex.entity_id.clone(),
            found: ex.as_of_date,
            expected: split.modeling_date,
        });
    }
    if k == 0 {
        return Err(TemporalError::InvalidConfig("k must be positive".into()));
    }
    if examples.len() < k && !lenient {
        return Err(TemporalError::ShortList {
            model_id: model_id.into(),
            modeling_date: split.modeling_date,
            k,
            available: examples.len(),
        });
    }
    let top = top_k_indices(examples, k, tie);
    let tp = top.iter().filter(|&&i| examples[i].as_ref().label).count() as u64;
    Ok(SplitEvaluation {
        model_id: model_id.into(),
        modeling_date: split.modeling_date,
        precision_at_k: tp as f64 / top.len() as f64,
        true_positives: tp,
        n_evaluated: examples.len(),
        k_effective: top.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    MeanMinusLambdaStddev { lambda: f64 },
    BestMean,
    MinRegret,
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::MeanMinusLambdaStddev { lambda: 1.0 }
    }
}

impl SelectionRule {
    /// Whether larger scores rank first.
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, SelectionRule::MinRegret)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model_id: String,
    pub score: f64,
    pub mean_precision: f64,
    /// Population standard deviation across splits.
    pub stddev_precision: f64,
    pub n_splits: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_stddev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Ranks models under `rule`, best first; ties go to the smaller model id.
pub fn select_model(evaluations: &[SplitEvaluation], rule: SelectionRule) -> Result<Vec<ModelScore>, TemporalError> {
    if evaluations.is_empty() {
        return Err(TemporalError::NoEvaluations);
    }
    if let SelectionRule::MeanMinusLambdaStddev { lambda } = rule {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(TemporalError::InvalidLambda(lambda));
        }
    }
    let mut by_model: BTreeMap<&str, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for e in evaluations {
        if by_model.entry(&e.model_id).or_default().insert(e.modeling_date, e.precision_at_k).is_some() {
            return Err(TemporalError::DuplicateEvaluation {
                model_id: e.model_id.clone(),
                modeling_date: e.modeling_date,
            });
        }
    }
    let mut best_at: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for e in evaluations {
        let b = best_at.entry(e.modeling_date).or_insert(f64::NEG_INFINITY);
        *b = b.max(e.precision_at_k);
    }

    let mut ranked = Vec::with_capacity(by_model.len());
    for (model_id, per_split) in by_model {
        let xs: Vec<f64> = per_split.values().copied().collect();
        if matches!(rule, SelectionRule::MeanMinusLambdaStddev { .. }) && xs.len() < 2 {
            return Err(TemporalError::TooFewEvaluations { model_id: model_id.into(), n: xs.len(), required: 2 });
        }
        let m = mean(&xs);
        let sd = population_stddev(&xs);
        let score = match rule {
            SelectionRule::MeanMinusLambdaStddev { lambda } => m - lambda * sd,
            SelectionRule::BestMean => m,
            SelectionRule::MinRegret => {
                let regrets: Vec<f64> = per_split.iter().map(|(d, p)| best_at[d] - p).collect();
                mean(&regrets)
            }
        };
        ranked.push(ModelScore {
            model_id: model_id.into(),
            score,
            mean_precision: m,
            stddev_precision: sd,
            n_splits: xs.len(),
        });
    }
    let higher = rule.higher_is_better();
    ranked.sort_by(|a, b| {
        let ord = a.score.total_cmp(&b.score);
        let ord = if higher { ord.reverse() } else { ord };
        ord.then_with(|| a.model_id.cmp(&b.model_id))
    });
    Ok(ranked)
}

/// Entities scored at two consecutive modeling dates. Informational only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOverlap {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub shared_entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub config: TemporalConfig,
    pub rule: SelectionRule,
    pub splits: Vec<TemporalSplit>,
    pub evaluations: Vec<SplitEvaluation>,
    pub ranking: Vec<ModelScore>,
    pub overlap: Vec<SplitOverlap>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TemporalOptions {
    pub tie_break: TieBreak,
    pub lenient: bool,
}

/// A score source: rows without a `model_id` take `default_model`.
#[derive(Debug, Clone, Copy)]
pub struct ModelScores<'a> {
    pub default_model: &'a str,
    pub cohort: &'a Cohort,
}

/// Evaluates every model at every split and ranks them.
///
/// Rows whose date is not a modeling date are ignored with a warning, as are
/// (model, split) pairs with no rows. Missing dates are an error.
pub fn run_temporal_eval(
    sources: &[ModelScores<'_>],
    cfg: &TemporalConfig,
    rule: SelectionRule,
    opts: TemporalOptions,
) -> Result<TemporalReport, TemporalError> {
    let splits = generate_splits(cfg)?;
    let dates: BTreeSet<NaiveDate> = splits.iter().map(|s| s.modeling_date).collect();

    let mut cells: BTreeMap<(&str, NaiveDate), Vec<&ScoredExample>> = BTreeMap::new();
    let mut models: BTreeSet<&str> = BTreeSet::new();
    let mut off_grid = 0usize;
    for src in sources {
        for ex in src.cohort.examples() {
            let date = ex.as_of_date.ok_or_else(|| TemporalError::MissingDate(ex.entity_id.clone()))?;
            let model = ex.model_id.as_deref().unwrap_or(src.default_model);
            models.insert(model);
            if dates.contains(&date) {
                cells.entry((model, date)).or_default().push(ex);
            } else {
                off_grid += 1;
            }
        }
    }

    let mut warnings = Vec::new();
    if off_grid > 0 {
        warnings.push(format!("{off_grid} rows have an as_of_date that is not a modeling date and were ignored"));
    }
    let mut jobs = Vec::new();
    for &model in &models {
        for split in &splits {
            match cells.get(&(model, split.modeling_date)) {
                Some(rows) => jobs.push((model, split, rows)),
                None => warnings.push(format!("model `{model}` has no scores at {}", split.modeling_date)),
            }
        }
    }
    let evaluations = jobs
        .par_iter()
        .map(|(model, split, rows)| evaluate_split(model, rows, split, cfg.k, opts.tie_break, opts.lenient))
        .collect::<Result<Vec<_>, _>>()?;
    for e in evaluations.iter().filter(|e| e.k_effective < cfg.k) {
        warnings.push(format!(
            "model `{}` at {} evaluated on {} examples (k = {})",
            e.model_id, e.modeling_date, e.k_effective, cfg.k
        ));
    }
    let ranking = select_model(&evaluations, rule)?;

    let mut entities: BTreeMap<NaiveDate, BTreeSet<&str>> = BTreeMap::new();
    for ((_, date), rows) in &cells {
        entities.entry(*date).or_default().extend(rows.iter().map(|e| e.entity_id.as_str()));
    }
    let overlap = entities
        .iter()
        .zip(entities.iter().skip(1))
        .map(|((from, a), (to, b))| SplitOverlap { from: *from, to: *to, shared_entities: a.intersection(b).count() })
        .collect();

    Ok(TemporalReport { config: cfg.clone(), rule, splits, evaluations, ranking, overlap, warnings })
}
