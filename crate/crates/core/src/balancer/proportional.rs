use std::collections::BTreeMap;

use super::equalized::merged_prefix;
use super::{
    assemble_plan, check_recall, zero_positive_warning, BalanceError, BalanceSpec, CurveSet, GroupChoice,
    QuotaSnapshot, SearchStrategy, SearchTrace, SelectionPlan, DEFAULT_STEP,
};

/// Search settings for the proportional-by-size branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSearch {
    pub step: f64,
    pub strategy: SearchStrategy,
    pub fill_to_budget: bool,
}

impl Default for SizeSearch {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, strategy: SearchStrategy::FixedStep, fill_to_budget: false }
    }
}

/// `r_g = P_g / P_ref` for every group.
pub fn target_ratios(curves: &CurveSet, reference: &str) -> Result<BTreeMap<String, f64>, BalanceError> {
    let ref_curve = curves.get(reference).ok_or_else(|| BalanceError::UnknownReference(reference.to_string()))?;
    let p_ref = ref_curve.stats.prevalence;
    if ref_curve.positives() == 0 {
        return Err(BalanceError::ZeroPrevalenceReference(reference.to_string()));
    }
    Ok(curves.iter().map(|c| (c.group.clone(), c.stats.prevalence / p_ref)).collect())
}

fn capped_target(r_g: f64, x: f64) -> (f64, bool) {
    let t = r_g * x;
    if t > 1.0 {
        (1.0, true)
    } else {
        (t, false)
    }
}

/// Formula quotas `max n : R_{g,n} <= min(1, r_g * x)` at reference level
/// `x`. Groups without positives get 0.
pub fn proportional_quotas_at(curves: &CurveSet, ratios: &BTreeMap<String, f64>, x: f64) -> BTreeMap<String, usize> {
    curves
        .iter()
        .map(|c| {
            let k = if c.positives() == 0 { 0 } else { c.quota_for_target(capped_target(ratios[&c.group], x).0) };
            (c.group.clone(), k)
        })
        .collect()
}

fn k_all(curves: &CurveSet, ratios: &BTreeMap<String, f64>, x: f64) -> usize {
    curves.iter().filter(|c| c.positives() > 0).map(|c| c.quota_for_target(capped_target(ratios[&c.group], x).0)).sum()
}

fn choices_at(
    curves: &CurveSet,
    ratios: &BTreeMap<String, f64>,
    x: f64,
    quotas: &BTreeMap<String, usize>,
) -> BTreeMap<String, GroupChoice> {
    curves
        .iter()
        .map(|c| {
            let r_g = ratios[&c.group];
            let (target, capped) = capped_target(r_g, x);
            let choice = GroupChoice { k: quotas[&c.group], target: Some(target), r_g: Some(r_g), capped };
            (c.group.clone(), choice)
        })
        .collect()
}

fn zero_positive_warnings(curves: &CurveSet) -> Vec<String> {
    curves.iter().filter(|c| c.positives() == 0).map(|c| zero_positive_warning(&c.group)).collect()
}

fn capped_warnings(plan_choices: &BTreeMap<String, GroupChoice>) -> Vec<String> {
    plan_choices
        .iter()
        .filter(|(_, c)| c.capped)
        .map(|(g, _)| format!("target recall for group `{g}` capped at 1"))
        .collect()
}

/// Targets `min(1, r_g * R_ref)` per group, quotas by the max-depth rule.
pub fn balance_proportional_by_ref_recall(
    curves: &CurveSet,
    reference: &str,
    ref_recall: f64,
) -> Result<SelectionPlan, BalanceError> {
    check_recall(ref_recall)?;
    let ratios = target_ratios(curves, reference)?;
    let quotas = proportional_quotas_at(curves, &ratios, ref_recall);
    let choices = choices_at(curves, &ratios, ref_recall, &quotas);
    let mut warnings = zero_positive_warnings(curves);
    warnings.extend(capped_warnings(&choices));
    let spec = BalanceSpec::proportional_by_ref_recall(reference, ref_recall).with_tie_break(curves.tie_break);
    Ok(assemble_plan(curves, spec, choices, None, warnings))
}

/// Raises the reference recall `x` from the reference group's first
/// rolling-recall value until the summed quotas reach `k`.
///
/// With [`SearchStrategy::FixedStep`] the result equals stepping
/// `x = x0 + j * step` for `j = 0, 1, ...` and stopping at the first `j`
/// with `k_all >= k`; grid points between quota changes are skipped since
/// `k_all` cannot change there. The loop may overshoot `k`, which is
/// reported in the trace and in a warning.
pub fn balance_proportional_by_size(
    curves: &CurveSet,
    reference: &str,
    k: usize,
    search: &SizeSearch,
) -> Result<SelectionPlan, BalanceError> {
    if !(search.step.is_finite() && search.step > 0.0) {
        return Err(BalanceError::InvalidStep(search.step));
    }
    let ratios = target_ratios(curves, reference)?;
    let available: usize = curves.iter().filter(|c| c.positives() > 0).map(|c| c.len()).sum();
    if k > available {
        return Err(BalanceError::ListSizeTooLarge { k, available });
    }
    let spec = BalanceSpec::proportional_by_size(reference, k)
        .with_tie_break(curves.tie_break)
        .with_step(search.step)
        .with_search(search.strategy)
        .with_fill_to_budget(search.fill_to_budget);
    let mut warnings = zero_positive_warnings(curves);

    let x0 = curves.get(reference).expect("checked by target_ratios").recall_at(1);
    if k == 0 {
        let zeros: BTreeMap<String, usize> = curves.groups().map(|g| (g.to_string(), 0)).collect();
        let choices = choices_at(curves, &ratios, x0, &zeros);
        let trace = SearchTrace { x: x0, k_all: 0, steps: 0, undershoot: None };
        return Ok(assemble_plan(curves, spec, choices, Some(trace), warnings));
    }

    let mut trace = match search.strategy {
        SearchStrategy::FixedStep => fixed_step(curves, &ratios, x0, k, search.step),
        SearchStrategy::ExactBreakpoint => exact_breakpoint(curves, &ratios, x0, k),
    };

    let quotas = if trace.k_all > k && search.fill_to_budget {
        let scale: BTreeMap<&str, f64> = ratios.iter().map(|(g, r)| (g.as_str(), *r)).collect();
        let merged = merged_prefix(curves, k, &scale)?;
        warnings
            .push(format!("search reached {} at x = {}; filled to exactly {k} in merged order", trace.k_all, trace.x));
        curves.groups().map(|g| (g.to_string(), merged.quotas.get(g).copied().unwrap_or(0))).collect()
    } else {
        if trace.k_all > k {
            warnings.push(format!("search overshoots the requested list size: {} selected for K = {k}", trace.k_all));
        }
        proportional_quotas_at(curves, &ratios, trace.x)
    };
    if search.strategy == SearchStrategy::FixedStep {
        trace.undershoot = None;
    }
    let choices = choices_at(curves, &ratios, trace.x, &quotas);
    warnings.extend(capped_warnings(&choices));
    Ok(assemble_plan(curves, spec, choices, Some(trace), warnings))
}

fn fixed_step(curves: &CurveSet, ratios: &BTreeMap<String, f64>, x0: f64, k: usize, step: f64) -> SearchTrace {
    let mut j: u64 = 0;
    let mut last = 0usize;
    loop {
        let x = x0 + j as f64 * step;
        let quotas = proportional_quotas_at(curves, ratios, x);
        let total: usize = quotas.values().sum();
        assert!(total >= last, "k_all decreased along the search path");
        last = total;
        if total >= k {
            return SearchTrace { x, k_all: total, steps: j, undershoot: None };
        }
        // smallest x at which some group's next entry becomes admissible
        let next = curves
            .iter()
            .filter(|c| c.positives() > 0 && quotas[&c.group] < c.len())
            .map(|c| c.recall_at(quotas[&c.group] + 1) / ratios[&c.group])
            .fold(f64::INFINITY, f64::min);
        debug_assert!(next.is_finite(), "k <= available guarantees a next breakpoint");
        let jump = ((next - x0) / step).floor();
        j = if jump.is_finite() && jump > j as f64 { jump as u64 } else { j + 1 };
    }
}

fn exact_breakpoint(curves: &CurveSet, ratios: &BTreeMap<String, f64>, x0: f64, k: usize) -> SearchTrace {
    let mut candidates = vec![x0];
    for c in curves.iter().filter(|c| c.positives() > 0) {
        let r = ratios[&c.group];
        candidates.extend(c.recall_levels().map(|v| v / r).filter(|&x| x > x0));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let idx = candidates.partition_point(|&x| k_all(curves, ratios, x) < k);
    let idx = idx.min(candidates.len() - 1);
    let x = candidates[idx];
    let undershoot = (idx > 0).then(|| {
        let below = candidates[idx - 1];
        let quotas = proportional_quotas_at(curves, ratios, below);
        QuotaSnapshot { x: below, total: quotas.values().sum(), quotas }
    });
    SearchTrace { x, k_all: k_all(curves, ratios, x), steps: candidates.len() as u64, undershoot }
}
