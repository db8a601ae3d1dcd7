use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use super::{
    assemble_plan, check_recall, zero_positive_warning, BalanceError, BalanceSpec, CurveSet, GroupChoice, SelectionPlan,
};

/// Largest depth per group whose rolling recall is at most `recall`.
pub fn balance_equalized_by_recall(curves: &CurveSet, recall: f64) -> Result<SelectionPlan, BalanceError> {
    check_recall(recall)?;
    let mut warnings = Vec::new();
    let choices = curves
        .iter()
        .map(|c| {
            let k = if c.positives() == 0 {
                warnings.push(zero_positive_warning(&c.group));
                0
            } else {
                c.quota_for_target(recall)
            };
            (c.group.clone(), GroupChoice { k, target: Some(recall), r_g: None, capped: false })
        })
        .collect();
    let spec = BalanceSpec::equalized_by_recall(recall).with_tie_break(curves.tie_break);
    Ok(assemble_plan(curves, spec, choices, None, warnings))
}

/// Merges every group's curve by `(rolling recall, depth, group order)` and
/// gives each group the deepest of its entries among the first `k`.
pub fn balance_equalized_by_size(curves: &CurveSet, k: usize) -> Result<SelectionPlan, BalanceError> {
    let scale: BTreeMap<&str, f64> = curves.iter().map(|c| (c.group.as_str(), 1.0)).collect();
    let merged = merged_prefix(curves, k, &scale)?;

    let mut warnings = Vec::new();
    let choices = curves
        .iter()
        .map(|c| {
            let k_g = merged.quotas.get(c.group.as_str()).copied().unwrap_or(0);
            if c.positives() == 0 {
                warnings.push(zero_positive_warning(&c.group));
            } else if k_g == 0 && k > 0 {
                warnings.push(format!("group `{}` has no entries in the first {k} merged entries; quota 0", c.group));
            }
            (c.group.clone(), GroupChoice { k: k_g, target: merged.frontier, r_g: None, capped: false })
        })
        .collect();
    let spec = BalanceSpec::equalized_by_size(k).with_tie_break(curves.tie_break);
    Ok(assemble_plan(curves, spec, choices, None, warnings))
}

pub(crate) struct MergedPrefix<'a> {
    pub quotas: BTreeMap<&'a str, usize>,
    /// Key of the last admitted entry.
    pub frontier: Option<f64>,
}

#[derive(PartialEq)]
struct Head {
    key: f64,
    n: usize,
    rank: usize,
    slot: usize,
}

impl Eq for Head {}

impl Ord for Head {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.n.cmp(&other.n)).then(self.rank.cmp(&other.rank))
    }
}

impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First `k` entries of all curves merged by `(R_{g,n} / scale_g, n, group
/// tie order)`. Groups without positives never enter the merge. Each curve
/// is already sorted under this key, so a k-way heap merge suffices.
pub(crate) fn merged_prefix<'a>(
    curves: &'a CurveSet,
    k: usize,
    scale: &BTreeMap<&str, f64>,
) -> Result<MergedPrefix<'a>, BalanceError> {
    let eligible: Vec<_> = curves.iter().filter(|c| c.positives() > 0).collect();
    let available: usize = eligible.iter().map(|c| c.len()).sum();
    if k > available {
        return Err(BalanceError::ListSizeTooLarge { k, available });
    }
    let ranks = curves.group_tie_rank();
    let key = |slot: usize, n: usize| {
        let c = eligible[slot];
        c.recall_at(n) / scale[c.group.as_str()]
    };

    let mut heap: BinaryHeap<Reverse<Head>> = eligible
        .iter()
        .enumerate()
        .map(|(slot, c)| Reverse(Head { key: key(slot, 1), n: 1, rank: ranks[c.group.as_str()], slot }))
        .collect();
    let mut depth = vec![0usize; eligible.len()];
    let mut frontier = None;
    for _ in 0..k {
        let Reverse(head) = heap.pop().expect("k <= available entries");
        depth[head.slot] = head.n;
        frontier = Some(head.key);
        if head.n < eligible[head.slot].len() {
            let n = head.n + 1;
            heap.push(Reverse(Head { key: key(head.slot, n), n, ..head }));
        }
    }
    let quotas = eligible.iter().zip(depth).map(|(c, d)| (c.group.as_str(), d)).collect();
    Ok(MergedPrefix { quotas, frontier })
}
