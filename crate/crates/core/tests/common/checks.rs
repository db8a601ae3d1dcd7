//! Randomized instance checks shared by the integration tests and the
//! acceptance runner. Each returns `Err` describing the first mismatch.

use std::collections::BTreeMap;

use fairquota::balancer::{balance, BalanceError, BalanceSpec, CurveSet, SearchStrategy, SelectionPlan};
use fairquota::group_metrics::{audit_selection, audit_top_k, AuditReport, Metric, Rate};
use fairquota::ranking::TieBreak;
use fairquota::ScoredExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{self, q, to_f64, Q};
use super::{cohort, examples, pick_reference, pick_target, random_rows, ATTR};

pub const STEP: f64 = 1e-4;

fn step_q() -> Q {
    q(1, 10_000)
}

fn expect_quotas(
    what: &str,
    got: Result<SelectionPlan, BalanceError>,
    want: Option<oracle::Quotas>,
) -> Result<(), String> {
    match (got, want) {
        (Ok(plan), Some(want)) if plan.quotas() == want => Ok(()),
        (Ok(plan), Some(want)) => Err(format!("{what}: quotas {:?}, oracle {want:?}", plan.quotas())),
        (Err(BalanceError::ListSizeTooLarge { .. }), None) => Ok(()),
        (Ok(plan), None) => Err(format!("{what}: expected an error, got {:?}", plan.quotas())),
        (Err(e), want) => Err(format!("{what}: error {e}, oracle {want:?}")),
    }
}

fn close(a: f64, b: Q, tol: f64) -> bool {
    (a - to_f64(b)).abs() <= tol
}

/// All four balancing branches against the exhaustive oracle.
pub fn balancer_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = examples(&random_rows(&mut rng, 30, 3));
    let c = cohort(xs.clone());
    let gs = oracle::groups(&xs, ATTR);
    let curves = CurveSet::build(&c, ATTR, TieBreak::EntityId).map_err(|e| e.to_string())?;
    let available: usize = gs.iter().filter(|g| g.y() > 0).map(|g| g.n()).sum();

    let target = pick_target(&mut rng, &gs);
    expect_quotas(
        "equalized/recall",
        balance(&curves, &BalanceSpec::equalized_by_recall(to_f64(target))),
        Some(oracle::equalized_by_recall(&gs, target)),
    )?;

    let k = rng.random_range(0..=available + 1);
    expect_quotas(
        "equalized/size",
        balance(&curves, &BalanceSpec::equalized_by_size(k)),
        oracle::equalized_by_size(&gs, k),
    )?;

    let Some(reference) = pick_reference(&mut rng, &gs) else {
        let spec = BalanceSpec::proportional_by_ref_recall(gs[0].name.clone(), 0.5);
        return match balance(&curves, &spec) {
            Err(BalanceError::ZeroPrevalenceReference(_)) => Ok(()),
            other => Err(format!("zero-prevalence reference accepted: {other:?}")),
        };
    };

    let r_ref = pick_target(&mut rng, &gs);
    let spec = BalanceSpec::proportional_by_ref_recall(reference.clone(), to_f64(r_ref));
    let plan = balance(&curves, &spec);
    if let Ok(p) = &plan {
        let ratios = oracle::ratios(&gs, &reference);
        for g in &p.groups {
            let want = (ratios[&g.group] * r_ref).min(q(1, 1));
            if !g.target_recall.is_some_and(|t| close(t, want, 1e-12)) {
                return Err(format!(
                    "proportional/recall: target {:?} for {}, oracle {want}",
                    g.target_recall, g.group
                ));
            }
        }
    }
    expect_quotas("proportional/recall", plan, Some(oracle::proportional_by_ref_recall(&gs, &reference, r_ref)))?;

    let k = rng.random_range(0..=available + 1);
    let fixed = BalanceSpec::proportional_by_size(reference.clone(), k).with_step(STEP);
    let got = balance(&curves, &fixed);
    let want = oracle::proportional_by_size_fixed(&gs, &reference, k, step_q());
    if let (Ok(p), Some(w)) = (&got, &want) {
        let trace = p.search.as_ref().ok_or("fixed step: no trace")?;
        if trace.steps != w.steps || !close(trace.x, w.x, 1e-9) {
            return Err(format!(
                "fixed step: stopped at j={} x={}, oracle j={} x={}",
                trace.steps, trace.x, w.steps, w.x
            ));
        }
    }
    expect_quotas("proportional/size fixed-step", got, want.map(|w| w.quotas))?;

    let exact = fixed.clone().with_search(SearchStrategy::ExactBreakpoint);
    let got = balance(&curves, &exact);
    let want = oracle::proportional_by_size_exact(&gs, &reference, k);
    if let (Ok(p), Some(w)) = (&got, &want) {
        let x = p.search.as_ref().ok_or("exact: no trace")?.x;
        if !close(x, w.x, 1e-12) {
            return Err(format!("exact breakpoint: x={x}, oracle {}", w.x));
        }
    }
    expect_quotas("proportional/size exact", got, want.map(|w| w.quotas))
}

fn rate_matches(name: &str, got: Option<Rate>, num: u64, den: u64) -> Result<(), String> {
    match got {
        None if den == 0 => Ok(()),
        Some(r) if den > 0 && u128::from(r.num) * u128::from(den) == u128::from(num) * u128::from(r.den) => Ok(()),
        other => Err(format!("{name}: got {other:?}, oracle {num}/{den}")),
    }
}

fn oracle_rates(c: [u64; 4]) -> BTreeMap<Metric, (u64, u64)> {
    let [tp, fp, fn_, tn] = c;
    let n = tp + fp + fn_ + tn;
    BTreeMap::from([
        (Metric::Recall, (tp, tp + fn_)),
        (Metric::Precision, (tp, tp + fp)),
        (Metric::Fdr, (fp, tp + fp)),
        (Metric::Fpr, (fp, fp + tn)),
        (Metric::Fnr, (fn_, tp + fn_)),
        (Metric::For, (fn_, fn_ + tn)),
        (Metric::FpOverGroupSize, (fp, n)),
        (Metric::FnOverGroupSize, (fn_, n)),
    ])
}

/// Compares an audit with the double-loop oracle for `selected`.
pub fn audit_matches(xs: &[ScoredExample], selected: &[String], audit: &AuditReport) -> Result<(), String> {
    let want = oracle::confusion(xs, ATTR, selected);
    if audit.groups.len() != want.len() {
        return Err(format!("{} groups audited, oracle has {}", audit.groups.len(), want.len()));
    }
    let ref_rates = oracle_rates(want[&audit.reference_group]);
    let (mut tp_all, mut sel_all) = (0, 0);
    for g in &audit.groups {
        let c = want[&g.stats.group];
        let got = [g.confusion.tp, g.confusion.fp, g.confusion.fn_, g.confusion.tn];
        if got != c {
            return Err(format!("group {}: confusion {got:?}, oracle {c:?}", g.stats.group));
        }
        if g.stats.n != c.iter().sum::<u64>() || g.stats.positives != c[0] + c[2] {
            return Err(format!("group {}: stats {:?}", g.stats.group, g.stats));
        }
        tp_all += c[0];
        sel_all += c[0] + c[1];
        for (m, (num, den)) in oracle_rates(c) {
            rate_matches(&format!("{} {m}", g.stats.group), g.metrics.get(m), num, den)?;
            let (rn, rd) = ref_rates[&m];
            let want_ratio = if g.stats.group == audit.reference_group {
                (den > 0).then_some(1.0)
            } else {
                (den > 0 && rd > 0 && rn > 0).then(|| to_f64(q(num as i128 * rd as i128, den as i128 * rn as i128)))
            };
            let got_ratio = g.ratios[&m];
            let ok = match (got_ratio, want_ratio) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                _ => false,
            };
            if !ok {
                return Err(format!("group {} ratio {m}: got {got_ratio:?}, oracle {want_ratio:?}", g.stats.group));
            }
        }
    }
    let want_precision = (sel_all > 0).then(|| tp_all as f64 / sel_all as f64);
    if audit.overall_precision != want_precision {
        return Err(format!("overall precision {:?}, oracle {want_precision:?}", audit.overall_precision));
    }
    Ok(())
}

/// Audits of top-k lists and arbitrary subsets against the oracle.
pub fn metrics_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = examples(&random_rows(&mut rng, 200, 4));
    let c = cohort(xs.clone());
    let k = rng.random_range(0..=xs.len());
    let groups: Vec<String> = c.categories(ATTR).map_err(|e| e.to_string())?;
    let reference = groups[rng.random_range(0..groups.len())].clone();

    let audit = audit_top_k(&c, ATTR, k, TieBreak::EntityId, Some(&reference)).map_err(|e| e.to_string())?;
    audit_matches(&xs, &oracle::top_k_ids(&xs, k), &audit).map_err(|e| format!("top-{k}: {e}"))?;

    let subset: Vec<String> = xs.iter().filter(|_| rng.random_bool(0.4)).map(|e| e.entity_id.clone()).collect();
    let audit = audit_selection(&c, ATTR, &subset, None).map_err(|e| e.to_string())?;
    audit_matches(&xs, &subset, &audit).map_err(|e| format!("subset: {e}"))
}

/// Fixed-step and exact-breakpoint searches agree except for entries whose
/// threshold lies within one step above the exact stopping point.
pub fn search_consistency_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = examples(&random_rows(&mut rng, 30, 3));
    let c = cohort(xs.clone());
    let gs = oracle::groups(&xs, ATTR);
    let Some(reference) = pick_reference(&mut rng, &gs) else {
        return Ok(());
    };
    let curves = CurveSet::build(&c, ATTR, TieBreak::EntityId).map_err(|e| e.to_string())?;
    let available: usize = gs.iter().filter(|g| g.y() > 0).map(|g| g.n()).sum();
    let k = rng.random_range(0..=available);

    let spec = BalanceSpec::proportional_by_size(reference, k).with_step(STEP);
    let fixed = balance(&curves, &spec).map_err(|e| e.to_string())?;
    let exact =
        balance(&curves, &spec.clone().with_search(SearchStrategy::ExactBreakpoint)).map_err(|e| e.to_string())?;
    let (xf, xe) = (fixed.search.as_ref().unwrap().x, exact.search.as_ref().unwrap().x);
    if !(xf >= xe - 1e-12 && xf < xe + STEP + 1e-12) {
        return Err(format!("fixed-step x {xf} is not within one step above exact x {xe}"));
    }
    for (gf, ge) in fixed.groups.iter().zip(&exact.groups) {
        if gf.k_g < ge.k_g {
            return Err(format!("group {}: fixed {} below exact {}", gf.group, gf.k_g, ge.k_g));
        }
        let curve = curves.get(&gf.group).unwrap();
        let r_g = gf.r_g.unwrap_or(0.0);
        for n in ge.k_g + 1..=gf.k_g {
            let t = curve.recall_at(n) / r_g;
            if !(t > xe - 1e-12 && t <= xf + 1e-12) {
                return Err(format!("group {} entry {n}: threshold {t} outside ({xe}, {xf}]", gf.group));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DeskSummary {
    pub disparity: f64,
    pub top_precision: f64,
    pub equalized_gap: f64,
    pub gap_bound: f64,
    pub fixed_precision: [f64; 2],
    pub expanded_totals: [usize; 2],
    pub worst_ratio_error: f64,
}

/// The desk-scale reproduction on the synthetic 50,000-person cohort.
pub fn desk_scale(seed: u64) -> Result<DeskSummary, String> {
    use fairquota::reporting::{build_tradeoff_menu, MenuOptions, ScenarioLabel};
    use fairquota::synth::{generate_population, SynthSpec};

    let c = generate_population(&SynthSpec::desk_scale(seed)).map_err(|e| e.to_string())?;
    let positives = c.examples().iter().filter(|e| e.label).count();
    if c.len() != 50_000 || positives != 2_200 {
        return Err(format!("cohort has {} rows and {positives} positives", c.len()));
    }
    let menu = build_tradeoff_menu(&c, ATTR, 150, None, MenuOptions::default()).map_err(|e| e.to_string())?;
    let top = menu.scenario(ScenarioLabel::TopKUnadjusted);
    let disparity = top.audit.recall_disparity().ok_or("no recall defined")?.ratio();
    if disparity < 1.5 {
        return Err(format!("top-150 recall disparity {disparity} is below 1.5"));
    }
    let top_precision = top.overall_precision.ok_or("empty top-150")?;

    let eq = menu.scenario(ScenarioLabel::CurrentScaleEqualized);
    let plan = eq.plan.as_ref().ok_or("no equalized plan")?;
    let min_y = plan.groups.iter().map(|g| g.positives).filter(|&y| y > 0).min().ok_or("no positives")?;
    let gap_bound = 1.0 / min_y as f64;
    let equalized_gap = plan.recall_gap();
    if equalized_gap > gap_bound + 1e-12 {
        return Err(format!("equalized recall gap {equalized_gap} exceeds {gap_bound}"));
    }

    let mut fixed_precision = [0.0; 2];
    for (slot, label) in
        [ScenarioLabel::CurrentScaleEqualized, ScenarioLabel::CurrentScaleProportional].into_iter().enumerate()
    {
        let s = menu.scenario(label);
        let p = s.overall_precision.ok_or("empty plan")?;
        if s.total != 150 || p > top_precision {
            return Err(format!("{}: total {} precision {p} vs top-150 {top_precision}", label.name(), s.total));
        }
        fixed_precision[slot] = p;
    }

    let mut expanded_totals = [0; 2];
    for (slot, label) in [ScenarioLabel::ExpandedEqualized, ScenarioLabel::ExpandedProportional].into_iter().enumerate()
    {
        let total = menu.scenario(label).total;
        if total <= 150 {
            return Err(format!("{} did not expand: {total}", label.name()));
        }
        expanded_totals[slot] = total;
    }

    let mut worst_ratio_error: f64 = 0.0;
    for label in [ScenarioLabel::ExpandedProportional, ScenarioLabel::CurrentScaleProportional] {
        let plan = menu.scenario(label).plan.as_ref().ok_or("no proportional plan")?;
        let reference = plan.group(&menu.reference_group).ok_or("reference missing")?;
        let p_ref = reference.positives as f64 / reference.n as f64;
        let t_ref = reference.target_recall.ok_or("no reference target")?;
        for g in plan.groups.iter().filter(|g| !g.capped) {
            let want = (g.positives as f64 / g.n as f64) / p_ref;
            let got = g.target_recall.ok_or("no target")? / t_ref;
            worst_ratio_error = worst_ratio_error.max((got - want).abs());
        }
    }
    if worst_ratio_error > 1e-9 {
        return Err(format!("proportional target ratios off by {worst_ratio_error}"));
    }
    Ok(DeskSummary {
        disparity,
        top_precision,
        equalized_gap,
        gap_bound,
        fixed_precision,
        expanded_totals,
        worst_ratio_error,
    })
}

/// The temporal fixture: 11 splits from 2012-01-01 to 2017-01-01, and the
/// two scored windows evaluated at k = 150.
pub fn temporal_fixture(fixture_dir: &std::path::Path) -> Result<(usize, f64, f64), String> {
    use chrono::NaiveDate;
    use fairquota::data_model::{parse_score_file, IngestConfig};
    use fairquota::temporal::{evaluate_split, generate_splits, TemporalConfig};

    let cfg = TemporalConfig {
        start_date: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
        end_date: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
        interval_months: 6,
        label_window_months: 6,
        k: 150,
    };
    let splits = generate_splits(&cfg).map_err(|e| e.to_string())?;
    for s in &splits {
        if s.window_start < s.modeling_date || s.window_end <= s.window_start {
            return Err(format!("leaky window {s:?}"));
        }
    }
    let mut precisions = Vec::new();
    for name in ["scores_2016-01-01.csv", "scores_2016-07-01.csv"] {
        let text = std::fs::read(fixture_dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let c = parse_score_file(text.as_slice(), &IngestConfig::default(), name).map_err(|e| e.to_string())?;
        let date = c.examples()[0].as_of_date.ok_or("fixture without dates")?;
        let split = splits.iter().find(|s| s.modeling_date == date).ok_or("fixture date is not a modeling date")?;
        let e = evaluate_split("m_final", c.examples(), split, 150, TieBreak::EntityId, false)
            .map_err(|e| e.to_string())?;
        precisions.push(e.precision_at_k);
    }
    Ok((splits.len(), precisions[0], precisions[1]))
}

/// One spec per balancing branch, parameterized from the data.
pub fn branch_specs(c: &fairquota::Cohort, tie: TieBreak) -> Vec<BalanceSpec> {
    let curves = CurveSet::build(c, ATTR, tie).unwrap();
    let available: usize = curves.iter().filter(|c| c.positives() > 0).map(|c| c.len()).sum();
    let mut out = vec![BalanceSpec::equalized_by_recall(0.5), BalanceSpec::equalized_by_size(available / 2)];
    if let Some(r) = curves.iter().find(|c| c.positives() > 0) {
        out.push(BalanceSpec::proportional_by_ref_recall(r.group.clone(), 0.4));
        out.push(BalanceSpec::proportional_by_size(r.group.clone(), available / 2));
    }
    out.into_iter().map(|s| s.with_tie_break(tie)).collect()
}

/// Every branch's plan with its realized selection, as JSON, plus the
/// audit of the top third.
pub fn fingerprint(c: &fairquota::Cohort, tie: TieBreak) -> Vec<String> {
    use fairquota::balancer::realize_selection;
    let curves = CurveSet::build(c, ATTR, tie).unwrap();
    let mut out: Vec<String> = branch_specs(c, tie)
        .iter()
        .map(|s| {
            let plan = balance(&curves, s).unwrap();
            let ids = realize_selection(&plan, &curves).unwrap();
            format!("{}|{:?}", serde_json::to_string(&plan).unwrap(), ids)
        })
        .collect();
    let k = c.len() / 3;
    out.push(serde_json::to_string(&audit_top_k(c, ATTR, k, tie, None).unwrap()).unwrap());
    out
}

pub fn transformed(xs: &[ScoredExample], f: fn(f64) -> f64) -> Vec<ScoredExample> {
    xs.iter().map(|e| ScoredExample { score: f(e.score), ..e.clone() }).collect()
}

/// Monotone rolling recall, invariance of every output under strictly
/// increasing score transforms and input permutation, and the confusion
/// identities on a random selection.
pub fn invariance_case(seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1417);
    let rows = random_rows(&mut rng, 30, 3);
    let xs = examples(&rows);
    let c = cohort(xs.clone());
    let ties = [TieBreak::EntityId, TieBreak::Seeded { seed: rng.random() }];
    for tie in ties {
        for curve in CurveSet::build(&c, ATTR, tie).unwrap().iter() {
            let e = curve.entries();
            if !e.windows(2).all(|w| w[0].rolling_recall <= w[1].rolling_recall) {
                return Err(format!("{}: rolling recall decreases", curve.group));
            }
        }
        let base = fingerprint(&c, tie);
        let cubic = fingerprint(&cohort(transformed(&xs, |s| 5.0 * s * s * s + 2.0 * s - 7.0)), tie);
        let exp = fingerprint(&cohort(transformed(&xs, |s| (3.0 * s).exp() * 100.0)), tie);
        if base != cubic || base != exp {
            return Err(format!("{tie:?}: outputs change under a monotone transform"));
        }
        let mut shuffled = xs.clone();
        shuffled.shuffle(&mut rng);
        if fingerprint(&cohort(shuffled), tie) != base {
            return Err(format!("{tie:?}: outputs depend on input order"));
        }
    }
    let selected: Vec<String> = xs.iter().filter(|_| rng.random_bool(0.4)).map(|e| e.entity_id.clone()).collect();
    let audit = audit_selection(&c, ATTR, &selected, None).map_err(|e| e.to_string())?;
    for g in &audit.groups {
        let cf = g.confusion;
        let m = &g.metrics;
        let recall_ok = match (m.recall, m.fnr) {
            (Some(r), Some(f)) => r.num + f.num == r.den && r.den == f.den,
            (None, None) => g.stats.positives == 0,
            _ => false,
        };
        if cf.tp + cf.fp + cf.fn_ + cf.tn != g.stats.n || cf.tp + cf.fn_ != g.stats.positives || !recall_ok {
            return Err(format!("{}: confusion identities fail: {cf:?}", g.stats.group));
        }
    }
    Ok(())
}

/// Every valid questionnaire context against the expected leaf table.
/// Returns the number of distinct leaves.
pub fn tree_table() -> Result<usize, String> {
    use fairquota::fairness_tree::{FairnessContext, Focus, Nature, ParityMetric, ProgramScale, RuleTable};
    use std::collections::BTreeSet;
    use Focus::*;
    use ParityMetric::*;

    let small = Some(ProgramScale::SmallFractionOfNeed);
    let big = Some(ProgramScale::Substantial);
    let p = |focus, metric| (FairnessContext { nature: Nature::Punitive, scale: None, focus: Some(focus) }, metric);
    let a = |scale, focus, metric| (FairnessContext { nature: Nature::Assistive, scale, focus }, metric);
    let expected = [
        p(Everyone, FpGsParity),
        p(IntervenedOrServed, FdrParity),
        p(ActualNeedOrUnwarranted, FprParity),
        a(small, None, RecallParity),
        a(small, Some(Everyone), RecallParity),
        a(small, Some(IntervenedOrServed), RecallParity),
        a(small, Some(NotIntervenedOrUnserved), RecallParity),
        a(small, Some(ActualNeedOrUnwarranted), RecallParity),
        a(big, Some(Everyone), FnGsParity),
        a(big, Some(NotIntervenedOrUnserved), ForParity),
        a(big, Some(ActualNeedOrUnwarranted), FnrParity),
    ];
    let table = RuleTable::standard();
    let contexts = table.valid_contexts();
    if contexts.len() != expected.len() {
        return Err(format!("{} valid contexts, expected {}", contexts.len(), expected.len()));
    }
    for (ctx, metric) in &expected {
        if !contexts.contains(ctx) {
            return Err(format!("{ctx:?} is not a valid context"));
        }
        let got = table.recommend(ctx).map_err(|e| format!("{ctx:?}: {e}"))?.metric;
        if got != *metric {
            return Err(format!("{ctx:?}: got {got}, expected {metric}"));
        }
    }
    let leaves: BTreeSet<String> = expected.iter().map(|(_, m)| m.to_string()).collect();
    Ok(leaves.len())
}
