//! Per-group confusion counts, error-rate metrics and disparity ratios.
//!
//! Rates are kept as exact count ratios ([`Rate`]) so identities such as
//! `recall + fnr = 1` can be checked without rounding. A rate whose
//! denominator is zero is absent (`None`), never zero.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::data_model::{Cohort, ScoredExample, UNKNOWN_CATEGORY};
use crate::ranking::{top_k_indices, TieBreak};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("selected id `{0}` is not a member of the group")]
    NotInGroup(String),
    #[error("selected id `{0}` is not in the cohort")]
    UnknownEntity(String),
    #[error("entity id `{0}` appears more than once in the cohort")]
    DuplicateEntity(String),
    #[error("k = {k} exceeds cohort size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("reference group `{0}` not present for this attribute")]
    UnknownReference(String),
}

/// An exact ratio of counts with a non-zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Option<Rate> {
        (den > 0).then_some(Rate { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `1 - self`, exactly.
    pub fn complement(&self) -> Rate {
        Rate { num: self.den - self.num, den: self.den }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub n: u64,
    pub positives: u64,
    pub prevalence: f64,
}

impl GroupStats {
    pub fn new(group: impl Into<String>, n: u64, positives: u64) -> Self {
        let prevalence = if n == 0 { 0.0 } else { positives as f64 / n as f64 };
        Self { group: group.into(), n, positives, prevalence }
    }

    pub fn from_examples(group: impl Into<String>, examples: &[&ScoredExample]) -> Self {
        let positives = examples.iter().filter(|e| e.label).count() as u64;
        Self::new(group, examples.len() as u64, positives)
    }

    pub fn prevalence_rate(&self) -> Option<Rate> {
        Rate::new(self.positives, self.n)
    }
}

/// One [`GroupStats`] per partition, in category order.
pub fn group_stats(partitions: &BTreeMap<String, Vec<&ScoredExample>>) -> Vec<GroupStats> {
    partitions.iter().map(|(g, xs)| GroupStats::from_examples(g.clone(), xs)).collect()
}

/// Confusion counts at a selection; selected means predicted positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl GroupConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, label: bool, selected: bool) {
        match (selected, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion_at_selection(
    group: &[&ScoredExample],
    selected: &HashSet<&str>,
) -> Result<GroupConfusion, MetricsError> {
    let members: HashSet<&str> = group.iter().map(|e| e.entity_id.as_str()).collect();
    if let Some(stray) = selected.iter().find(|id| !members.contains(*id)) {
        return Err(MetricsError::NotInGroup(stray.to_string()));
    }
    let mut c = GroupConfusion::default();
    for e in group {
        c.record(e.label, selected.contains(e.entity_id.as_str()));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Recall,
    Precision,
    Fdr,
    Fpr,
    Fnr,
    #[serde(rename = "for")]
    For,
    FpOverGroupSize,
    FnOverGroupSize,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Recall,
        Metric::Precision,
        Metric::Fdr,
        Metric::Fpr,
        Metric::Fnr,
        Metric::For,
        Metric::FpOverGroupSize,
        Metric::FnOverGroupSize,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::Fdr => "fdr",
            Metric::Fpr => "fpr",
            Metric::Fnr => "fnr",
            Metric::For => "for",
            Metric::FpOverGroupSize => "fp_over_group_size",
            Metric::FnOverGroupSize => "fn_over_group_size",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupMetricSet {
    pub recall: Option<Rate>,
    pub precision: Option<Rate>,
    pub fdr: Option<Rate>,
    pub fpr: Option<Rate>,
    pub fnr: Option<Rate>,
    #[serde(rename = "for")]
    pub for_: Option<Rate>,
    pub fp_over_group_size: Option<Rate>,
    pub fn_over_group_size: Option<Rate>,
    pub selected: u64,
}

impl GroupMetricSet {
    pub fn get(&self, metric: Metric) -> Option<Rate> {
        match metric {
            Metric::Recall => self.recall,
            Metric::Precision => self.precision,
            Metric::Fdr => self.fdr,
            Metric::Fpr => self.fpr,
            Metric::Fnr => self.fnr,
            Metric::For => self.for_,
            Metric::FpOverGroupSize => self.fp_over_group_size,
            Metric::FnOverGroupSize => self.fn_over_group_size,
        }
    }
}

pub fn metrics_from_confusion(c: &GroupConfusion) -> GroupMetricSet {
    let n = c.total();
    GroupMetricSet {
        recall: Rate::new(c.tp, c.tp + c.fn_),
        precision: Rate::new(c.tp, c.tp + c.fp),
        fdr: Rate::new(c.fp, c.tp + c.fp),
        fpr: Rate::new(c.fp, c.fp + c.tn),
        fnr: Rate::new(c.fn_, c.tp + c.fn_),
        for_: Rate::new(c.fn_, c.fn_ + c.tn),
        fp_over_group_size: Rate::new(c.fp, n),
        fn_over_group_size: Rate::new(c.fn_, n),
        selected: c.tp + c.fp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAudit {
    #[serde(flatten)]
    pub stats: GroupStats,
    #[serde(flatten)]
    pub confusion: GroupConfusion,
    pub metrics: GroupMetricSet,
    /// Each metric divided by the reference group's value; absent when
    /// either side is absent or the reference value is zero.
    pub ratios: BTreeMap<Metric, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub attribute: String,
    pub k: usize,
    pub reference_group: String,
    pub groups: Vec<GroupAudit>,
    pub overall_precision: Option<f64>,
}

/// Best- and worst-served groups by recall.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallDisparity {
    pub best_group: String,
    pub best_recall: f64,
    pub worst_group: String,
    pub worst_recall: f64,
}

impl RecallDisparity {
    /// `best / worst`; infinite when the worst group has zero recall.
    pub fn ratio(&self) -> f64 {
        self.best_recall / self.worst_recall
    }
}

impl AuditReport {
    pub fn group(&self, name: &str) -> Option<&GroupAudit> {
        self.groups.iter().find(|g| g.stats.group == name)
    }

    pub fn total_selected(&self) -> u64 {
        self.groups.iter().map(|g| g.metrics.selected).sum()
    }

    pub fn total_true_positives(&self) -> u64 {
        self.groups.iter().map(|g| g.confusion.tp).sum()
    }

    /// Recall spread across groups that have at least one positive.
    pub fn recall_disparity(&self) -> Option<RecallDisparity> {
        let mut defined =
            self.groups.iter().filter_map(|g| g.metrics.recall.map(|r| (g.stats.group.as_str(), r.value())));
        let first = defined.next()?;
        let (mut best, mut worst) = (first, first);
        for (g, r) in defined {
            if r > best.1 {
                best = (g, r);
            }
            if r < worst.1 {
                worst = (g, r);
            }
        }
        Some(RecallDisparity {
            best_group: best.0.to_string(),
            best_recall: best.1,
            worst_group: worst.0.to_string(),
            worst_recall: worst.1,
        })
    }
}

/// Largest group by size, ties broken by name.
pub fn default_reference(stats: &[GroupStats]) -> Option<&GroupStats> {
    stats.iter().max_by(|a, b| a.n.cmp(&b.n).then_with(|| b.group.cmp(&a.group)))
}

/// Audits an arbitrary selection given as a per-example mask over
/// `cohort.examples()`.
pub fn audit_mask(
    cohort: &Cohort,
    attribute: &str,
    selected: &[bool],
    reference: Option<&str>,
) -> Result<AuditReport, MetricsError> {
    assert_eq!(selected.len(), cohort.len(), "selection mask must cover the cohort");
    let categories = cohort.categories(attribute).map_err(|_| MetricsError::UnknownAttribute(attribute.to_string()))?;
    let slot: HashMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut confusion = vec![GroupConfusion::default(); categories.len()];
    for (ex, &sel) in cohort.examples().iter().zip(selected) {
        let cat = ex.group(attribute).unwrap_or(UNKNOWN_CATEGORY);
        confusion[slot[cat]].record(ex.label, sel);
    }

    let stats: Vec<GroupStats> =
        categories.iter().zip(&confusion).map(|(g, c)| GroupStats::new(g.clone(), c.total(), c.tp + c.fn_)).collect();
    let reference_group = match reference {
        Some(r) if categories.iter().any(|c| c == r) => r.to_string(),
        Some(r) => return Err(MetricsError::UnknownReference(r.to_string())),
        None => default_reference(&stats).map(|s| s.group.clone()).unwrap_or_default(),
    };
    let metrics: Vec<GroupMetricSet> = confusion.iter().map(metrics_from_confusion).collect();
    let ref_metrics = metrics[slot[reference_group.as_str()]];

    let groups = stats
        .into_iter()
        .zip(confusion)
        .zip(&metrics)
        .map(|((stats, confusion), m)| {
            let is_ref = stats.group == reference_group;
            let ratios = Metric::ALL
                .iter()
                .map(|&metric| {
                    let ratio = match (m.get(metric), ref_metrics.get(metric)) {
                        (Some(_), Some(_)) if is_ref => Some(1.0),
                        (Some(v), Some(r)) if r.num > 0 => Some(v.value() / r.value()),
                        _ => None,
                    };
                    (metric, ratio)
                })
                .collect();
            GroupAudit { stats, confusion, metrics: *m, ratios }
        })
        .collect::<Vec<_>>();

    let selected_total: u64 = groups.iter().map(|g| g.metrics.selected).sum();
    let tp_total: u64 = groups.iter().map(|g| g.confusion.tp).sum();
    Ok(AuditReport {
        attribute: attribute.to_string(),
        k: selected_total as usize,
        reference_group,
        groups,
        overall_precision: Rate::new(tp_total, selected_total).map(|r| r.value()),
    })
}

/// Audits a selection given by entity id. Entity ids must be unique in the
/// cohort.
pub fn audit_selection(
    cohort: &Cohort,
    attribute: &str,
    selected_ids: &[String],
    reference: Option<&str>,
) -> Result<AuditReport, MetricsError> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(cohort.len());
    for (i, ex) in cohort.examples().iter().enumerate() {
        if index.insert(ex.entity_id.as_str(), i).is_some() {
            return Err(MetricsError::DuplicateEntity(ex.entity_id.clone()));
        }
    }
    let mut mask = vec![false; cohort.len()];
    for id in selected_ids {
        let i = index.get(id.as_str()).ok_or_else(|| MetricsError::UnknownEntity(id.clone()))?;
        mask[*i] = true;
    }
    audit_mask(cohort, attribute, &mask, reference)
}

/// Audits the `k` highest-scoring examples cohort-wide.
pub fn audit_top_k(
    cohort: &Cohort,
    attribute: &str,
    k: usize,
    tie: TieBreak,
    reference: Option<&str>,
) -> Result<AuditReport, MetricsError> {
    if k > cohort.len() {
        return Err(MetricsError::KTooLarge { k, n: cohort.len() });
    }
    let mut mask = vec![false; cohort.len()];
    for i in top_k_indices(cohort.examples(), k, tie) {
        mask[i] = true;
    }
    audit_mask(cohort, attribute, &mask, reference)
}
