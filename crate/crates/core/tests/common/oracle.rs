//! Brute-force reference implementations in exact rational arithmetic.
//!
//! Nothing here calls into the library beyond reading `ScoredExample`
//! fields, so agreement with the library is meaningful.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use fairquota::ScoredExample;
use num_rational::Ratio;

pub type Q = Ratio<i128>;

pub fn q(n: i128, d: i128) -> Q {
    Ratio::new(n, d)
}

/// One group's labels in rank order plus its name.
#[derive(Debug, Clone)]
pub struct Group {
    pub name: String,
    pub labels: Vec<bool>,
}

impl Group {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn y(&self) -> i128 {
        self.labels.iter().filter(|&&l| l).count() as i128
    }

    /// Positives among the first `n`.
    pub fn cum(&self, n: usize) -> i128 {
        self.labels[..n].iter().filter(|&&l| l).count() as i128
    }

    /// Exact rolling recall at depth `n`; 0 when the group has no positives.
    pub fn recall(&self, n: usize) -> Q {
        if self.y() == 0 {
            q(0, 1)
        } else {
            q(self.cum(n), self.y())
        }
    }

    /// `max n in 0..=N with R_n <= target`, scanning every n.
    pub fn max_depth(&self, target: Q) -> usize {
        if self.y() == 0 {
            return 0;
        }
        (0..=self.n()).filter(|&n| n == 0 || self.recall(n) <= target).max().unwrap()
    }
}

/// Splits examples by `attribute` and ranks each group by descending score,
/// then ascending entity id, with a plain insertion sort.
pub fn groups(examples: &[ScoredExample], attribute: &str) -> Vec<Group> {
    let mut by: BTreeMap<String, Vec<&ScoredExample>> = BTreeMap::new();
    for e in examples {
        by.entry(e.group_values[attribute].clone()).or_default().push(e);
    }
    by.into_iter()
        .map(|(name, mut xs)| {
            for i in 1..xs.len() {
                let mut j = i;
                while j > 0 && before(xs[j], xs[j - 1]) {
                    xs.swap(j, j - 1);
                    j -= 1;
                }
            }
            Group { name, labels: xs.iter().map(|e| e.label).collect() }
        })
        .collect()
}

fn before(a: &ScoredExample, b: &ScoredExample) -> bool {
    a.score > b.score || (a.score == b.score && a.entity_id < b.entity_id)
}

pub type Quotas = BTreeMap<String, usize>;

pub fn equalized_by_recall(gs: &[Group], target: Q) -> Quotas {
    gs.iter().map(|g| (g.name.clone(), g.max_depth(target))).collect()
}

/// Enumerates all entries with positives, sorts them by (recall / scale,
/// depth, positives desc, name), and takes each group's deepest entry among
/// the first `k`. `None` when `k` exceeds the entries available.
pub fn merged_prefix(gs: &[Group], k: usize, scale: &BTreeMap<String, Q>) -> Option<Quotas> {
    let mut entries: Vec<(Q, usize, i128, &str)> = Vec::new();
    for g in gs.iter().filter(|g| g.y() > 0) {
        for n in 1..=g.n() {
            entries.push((g.recall(n) / scale[&g.name], n, -g.y(), g.name.as_str()));
        }
    }
    if k > entries.len() {
        return None;
    }
    entries.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut out: Quotas = gs.iter().map(|g| (g.name.clone(), 0)).collect();
    for (_, n, _, name) in &entries[..k] {
        let slot = out.get_mut(*name).unwrap();
        *slot = (*slot).max(*n);
    }
    Some(out)
}

pub fn equalized_by_size(gs: &[Group], k: usize) -> Option<Quotas> {
    let ones = gs.iter().map(|g| (g.name.clone(), q(1, 1))).collect();
    merged_prefix(gs, k, &ones)
}

/// `r_g = (Y_g / N_g) / (Y_ref / N_ref)`.
pub fn ratios(gs: &[Group], reference: &str) -> BTreeMap<String, Q> {
    let r = gs.iter().find(|g| g.name == reference).unwrap();
    gs.iter().map(|g| (g.name.clone(), q(g.y() * r.n() as i128, g.n() as i128 * r.y()))).collect()
}

pub fn proportional_at(gs: &[Group], ratios: &BTreeMap<String, Q>, x: Q) -> Quotas {
    gs.iter()
        .map(|g| {
            let t = (ratios[&g.name] * x).min(q(1, 1));
            (g.name.clone(), g.max_depth(t))
        })
        .collect()
}

pub fn proportional_by_ref_recall(gs: &[Group], reference: &str, x: Q) -> Quotas {
    proportional_at(gs, &ratios(gs, reference), x)
}

/// Reference level at which each entry of a group with positives enters.
fn thresholds(gs: &[Group], ratios: &BTreeMap<String, Q>) -> Vec<Q> {
    gs.iter().filter(|g| g.y() > 0).flat_map(|g| (1..=g.n()).map(move |n| g.recall(n) / ratios[&g.name])).collect()
}

fn x0(gs: &[Group], reference: &str) -> Q {
    gs.iter().find(|g| g.name == reference).unwrap().recall(1)
}

#[derive(Debug, Clone)]
pub struct SizeResult {
    pub quotas: Quotas,
    pub x: Q,
    pub steps: u64,
}

/// Grid search `x = x0 + j * step` for the first `j` whose quotas sum to at
/// least `k`. Entry thresholds give each entry's first admitting `j`
/// directly, so the `k`-th smallest of those is the stopping point.
pub fn proportional_by_size_fixed(gs: &[Group], reference: &str, k: usize, step: Q) -> Option<SizeResult> {
    let ratios = ratios(gs, reference);
    let ts = thresholds(gs, &ratios);
    if k > ts.len() {
        return None;
    }
    let x0 = x0(gs, reference);
    if k == 0 {
        let quotas = gs.iter().map(|g| (g.name.clone(), 0)).collect();
        return Some(SizeResult { quotas, x: x0, steps: 0 });
    }
    let mut js: Vec<i128> =
        ts.iter().map(|&t| if t <= x0 { 0 } else { ((t - x0) / step).ceil().to_integer() }).collect();
    js.sort_unstable();
    let j = js[k - 1];
    let x = x0 + step * Q::from_integer(j);
    let quotas = proportional_at(gs, &ratios, x);
    let admitted = js.iter().filter(|&&e| e <= j).count();
    assert_eq!(admitted, quotas.values().sum::<usize>(), "oracle paths disagree");
    Some(SizeResult { quotas, x, steps: j as u64 })
}

/// Smallest `x >= x0` at which the quotas sum to at least `k`.
pub fn proportional_by_size_exact(gs: &[Group], reference: &str, k: usize) -> Option<SizeResult> {
    let ratios = ratios(gs, reference);
    let mut ts = thresholds(gs, &ratios);
    if k > ts.len() {
        return None;
    }
    let x0 = x0(gs, reference);
    if k == 0 {
        let quotas = gs.iter().map(|g| (g.name.clone(), 0)).collect();
        return Some(SizeResult { quotas, x: x0, steps: 0 });
    }
    ts.sort();
    let x = ts[k - 1].max(x0);
    Some(SizeResult { quotas: proportional_at(gs, &ratios, x), x, steps: 0 })
}

/// Per-group `(tp, fp, fn, tn)` by scanning every example against every
/// selected id.
pub fn confusion(examples: &[ScoredExample], attribute: &str, selected: &[String]) -> BTreeMap<String, [u64; 4]> {
    let mut out: BTreeMap<String, [u64; 4]> = BTreeMap::new();
    for e in examples {
        let mut chosen = false;
        for id in selected {
            if *id == e.entity_id {
                chosen = true;
            }
        }
        let cell = out.entry(e.group_values[attribute].clone()).or_default();
        let slot = match (chosen, e.label) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        cell[slot] += 1;
    }
    out
}

/// Ids of the `k` best examples cohort-wide, by the same ordering rule.
pub fn top_k_ids(examples: &[ScoredExample], k: usize) -> Vec<String> {
    let mut taken: HashSet<usize> = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, e) in examples.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| before(e, &examples[b])) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken.insert(b);
        out.push(examples[b].entity_id.clone());
    }
    out
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}
