use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::BalanceError;
use crate::data_model::{partition_by_group, Cohort, ScoredExample};
use crate::group_metrics::GroupStats;
use crate::ranking::{rank_indices, TieBreak};

/// Slack used when comparing a rolling recall against a real-valued target,
/// so that targets computed as products of ratios do not miss an exactly
/// equal recall level through rounding.
pub const RECALL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveEntry {
    /// Depth into the group's ranked list, starting at 1.
    pub n: usize,
    pub cum_positives: u64,
    pub rolling_recall: f64,
}

/// Within-group recall as a function of selection depth.
#[derive(Debug, Clone)]
pub struct RollingRecallCurve {
    pub group: String,
    pub stats: GroupStats,
    entries: Vec<CurveEntry>,
    ranked_ids: Vec<String>,
}

impl RollingRecallCurve {
    /// Ranks `examples` by descending score and accumulates recall. Groups
    /// with no positives get a recall of 0 at every depth.
    pub fn build(group: impl Into<String>, examples: &[&ScoredExample], tie: TieBreak) -> Result<Self, BalanceError> {
        let group = group.into();
        if examples.is_empty() {
            return Err(BalanceError::EmptyGroup(group));
        }
        let order = rank_indices(examples, tie);
        let stats = GroupStats::from_examples(group.clone(), examples);
        let y = stats.positives;

        let mut cum = 0u64;
        let mut entries = Vec::with_capacity(order.len());
        let mut ranked_ids = Vec::with_capacity(order.len());
        for (pos, &i) in order.iter().enumerate() {
            let ex = examples[i];
            cum += u64::from(ex.label);
            let rolling_recall = if y == 0 { 0.0 } else { cum as f64 / y as f64 };
            entries.push(CurveEntry { n: pos + 1, cum_positives: cum, rolling_recall });
            ranked_ids.push(ex.entity_id.clone());
        }
        Ok(Self { group, stats, entries, ranked_ids })
    }

    pub fn entries(&self) -> &[CurveEntry] {
        &self.entries
    }

    pub fn ranked_ids(&self) -> &[String] {
        &self.ranked_ids
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> u64 {
        self.stats.positives
    }

    /// Rolling recall after selecting the top `n`; 0 for `n = 0`.
    pub fn recall_at(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.entries[n - 1].rolling_recall
        }
    }

    pub fn positives_at(&self, n: usize) -> u64 {
        if n == 0 {
            0
        } else {
            self.entries[n - 1].cum_positives
        }
    }

    /// Largest depth whose rolling recall does not exceed `target`
    /// (0 when even the first entry exceeds it).
    pub fn quota_for_target(&self, target: f64) -> usize {
        let bound = target + RECALL_EPS;
        self.entries.partition_point(|e| e.rolling_recall <= bound)
    }

    /// Smallest depth reaching the same recall as depth `k`.
    pub fn minimal_quota(&self, k: usize) -> usize {
        let reached = self.positives_at(k);
        if reached == 0 {
            return 0;
        }
        self.entries.partition_point(|e| e.cum_positives < reached) + 1
    }

    /// Distinct positive recall levels, ascending.
    pub fn recall_levels(&self) -> impl Iterator<Item = f64> + '_ {
        let y = self.stats.positives;
        (1..=y).map(move |c| c as f64 / y as f64)
    }
}

/// Recall curves for every category of one attribute.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub attribute: String,
    pub tie_break: TieBreak,
    curves: BTreeMap<String, RollingRecallCurve>,
}

impl CurveSet {
    pub fn build(cohort: &Cohort, attribute: &str, tie: TieBreak) -> Result<Self, BalanceError> {
        let parts =
            partition_by_group(cohort, attribute).map_err(|_| BalanceError::UnknownAttribute(attribute.to_string()))?;
        let curves = parts
            .into_par_iter()
            .map(|(g, xs)| RollingRecallCurve::build(g.clone(), &xs, tie).map(|c| (g, c)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        Ok(Self { attribute: attribute.to_string(), tie_break: tie, curves })
    }

    pub fn from_curves(
        attribute: impl Into<String>,
        tie: TieBreak,
        curves: impl IntoIterator<Item = RollingRecallCurve>,
    ) -> Self {
        Self {
            attribute: attribute.into(),
            tie_break: tie,
            curves: curves.into_iter().map(|c| (c.group.clone(), c)).collect(),
        }
    }

    pub fn get(&self, group: &str) -> Option<&RollingRecallCurve> {
        self.curves.get(group)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RollingRecallCurve> {
        self.curves.values()
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.curves.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.curves.values().map(RollingRecallCurve::len).sum()
    }

    pub fn stats(&self) -> Vec<GroupStats> {
        self.curves.values().map(|c| c.stats.clone()).collect()
    }

    /// Order used to break cross-group ties: more positives first, then
    /// category name. Returns each group's rank keyed by name.
    pub fn group_tie_rank(&self) -> BTreeMap<&str, usize> {
        let mut order: Vec<&RollingRecallCurve> = self.curves.values().collect();
        order.sort_by(|a, b| b.positives().cmp(&a.positives()).then_with(|| a.group.cmp(&b.group)));
        order.into_iter().enumerate().map(|(i, c)| (c.group.as_str(), i)).collect()
    }
}
