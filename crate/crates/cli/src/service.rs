//! Request handling shared by the command line and the HTTP API.
//!
//! Both front ends parse their input into the request types below and render
//! the returned reports with [`fairquota::emit`], which is what makes their
//! outputs byte-identical.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use fairquota::balancer::{realize_selection, DEFAULT_STEP};
use fairquota::data_model::partition_by_group;
use fairquota::group_metrics::{default_reference, group_stats, MetricsError};
use fairquota::ranking::{rank_indices, DEFAULT_SEED};
use fairquota::reporting::{fmt_float, ReportError};
use fairquota::{
    audit_selection, audit_top_k, balance, build_tradeoff_menu, AuditReport, BalanceError, BalanceMode, BalanceReport,
    BalanceSpec, Cohort, Constraint, CurveSet, GroupStats, IngestError, MenuOptions, Report, SearchStrategy, TieBreak,
    TradeoffMenu,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of K values a single curve request may ask for.
pub const MAX_CURVE_POINTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ServiceError {
    /// Bad parameters. HTTP 400, exit code 1.
    #[error("{0}")]
    Invalid(String),
    /// Well-formed request the data cannot satisfy. HTTP 422, exit code 2.
    #[error("{0}")]
    Unprocessable(String),
}

impl ServiceError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ServiceError::Invalid(_) => 1,
            ServiceError::Unprocessable(_) => 2,
        }
    }
}

impl From<BalanceError> for ServiceError {
    fn from(e: BalanceError) -> Self {
        use BalanceError::*;
        match e {
            RecallOutOfRange(_)
            | InvalidStep(_)
            | InvalidConstraint { .. }
            | MissingReference
            | UnexpectedReference
            | UnknownAttribute(_)
            | UnknownReference(_) => ServiceError::Invalid(e.to_string()),
            EmptyGroup(_)
            | ListSizeTooLarge { .. }
            | ZeroPrevalenceReference(_)
            | TieBreakMismatch { .. }
            | GroupMismatch { .. } => ServiceError::Unprocessable(e.to_string()),
        }
    }
}

impl From<MetricsError> for ServiceError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::UnknownAttribute(_) | MetricsError::UnknownReference(_) | MetricsError::KTooLarge { .. } => {
                ServiceError::Invalid(e.to_string())
            }
            _ => ServiceError::Unprocessable(e.to_string()),
        }
    }
}

impl From<ReportError> for ServiceError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Metrics(m) => m.into(),
            ReportError::Balance(b) => b.into(),
            ReportError::Unsupported { .. } => ServiceError::Invalid(e.to_string()),
            other => ServiceError::Unprocessable(other.to_string()),
        }
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::UnknownAttribute(_) | IngestError::Config(_) => ServiceError::Invalid(e.to_string()),
            other => ServiceError::Unprocessable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreakKind {
    EntityId,
    Seeded,
}

/// `seeded` uses `seed` or [`DEFAULT_SEED`]. A seed given without a kind
/// selects `seeded`; with neither, ties go by entity id.
pub fn resolve_tie(kind: Option<TieBreakKind>, seed: Option<u64>) -> TieBreak {
    match (kind, seed) {
        (Some(TieBreakKind::EntityId), _) | (None, None) => TieBreak::EntityId,
        (Some(TieBreakKind::Seeded), s) => TieBreak::Seeded { seed: s.unwrap_or(DEFAULT_SEED) },
        (None, Some(seed)) => TieBreak::Seeded { seed },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditQuery {
    pub attribute: Option<String>,
    pub k: usize,
    pub reference: Option<String>,
    pub tie_break: Option<TieBreakKind>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffQuery {
    pub attribute: Option<String>,
    pub k: usize,
    pub reference: Option<String>,
    #[serde(default)]
    pub trim: bool,
    pub tie_break: Option<TieBreakKind>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveQuery {
    pub attribute: Option<String>,
    pub kmin: Option<usize>,
    pub kmax: Option<usize>,
    pub stride: Option<usize>,
    pub tie_break: Option<TieBreakKind>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceOptions {
    pub step_size: Option<f64>,
    pub search_strategy: Option<SearchStrategy>,
    #[serde(default)]
    pub trim: bool,
    #[serde(default)]
    pub fill_to_budget: bool,
    pub tie_break: Option<TieBreakKind>,
    pub seed: Option<u64>,
}

/// Body of `POST /api/balance`. The constraint is given either as
/// `constraint` (`{"list_size": 150}` and so on) or as exactly one of the
/// `k`, `recall` and `ref_recall` shorthands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceRequest {
    pub attribute: Option<String>,
    pub mode: BalanceMode,
    pub constraint: Option<Constraint>,
    pub k: Option<usize>,
    pub recall: Option<f64>,
    pub ref_recall: Option<f64>,
    pub reference_group: Option<String>,
    #[serde(default)]
    pub options: BalanceOptions,
}

impl BalanceRequest {
    pub fn new(mode: BalanceMode) -> Self {
        Self {
            attribute: None,
            mode,
            constraint: None,
            k: None,
            recall: None,
            ref_recall: None,
            reference_group: None,
            options: BalanceOptions::default(),
        }
    }

    fn constraint(&self) -> Result<Constraint, ServiceError> {
        let given = [
            self.constraint,
            self.k.map(Constraint::ListSize),
            self.recall.map(Constraint::RecallTarget),
            self.ref_recall.map(Constraint::ReferenceRecall),
        ];
        let mut set = given.into_iter().flatten();
        match (set.next(), set.next()) {
            (Some(c), None) => Ok(c),
            (None, _) => Err(ServiceError::Invalid("a constraint is required: one of k, recall or ref_recall".into())),
            (Some(_), Some(_)) => {
                Err(ServiceError::Invalid("give exactly one constraint: k, recall or ref_recall".into()))
            }
        }
    }
}

/// Per-group counts for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeSummary {
    pub attribute: String,
    /// Largest group, used when no reference is given.
    pub default_reference: String,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub version: String,
    pub source: String,
    pub rows: usize,
    pub positives: usize,
    pub attributes: Vec<AttributeSummary>,
}

impl Report for DatasetSummary {
    const KIND: &'static str = "dataset";

    fn table(&self) -> Option<(Vec<&'static str>, Vec<Vec<String>>)> {
        let mut rows = Vec::new();
        for a in &self.attributes {
            for g in &a.groups {
                rows.push(vec![
                    a.attribute.clone(),
                    g.group.clone(),
                    g.n.to_string(),
                    g.positives.to_string(),
                    fmt_float(Some(g.prevalence)),
                ]);
            }
        }
        Some((vec!["attribute", "group", "n", "positives", "prevalence"], rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveGroupPoint {
    pub selected: usize,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub overall_precision: Option<f64>,
    pub groups: BTreeMap<String, CurveGroupPoint>,
}

/// Unadjusted top-K precision and group recalls over a range of K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveReport {
    pub attribute: String,
    #[serde(flatten)]
    pub tie_break: TieBreak,
    pub kmin: usize,
    pub kmax: usize,
    pub stride: usize,
    pub points: Vec<CurvePoint>,
}

impl Report for CurveReport {
    const KIND: &'static str = "curve";

    fn table(&self) -> Option<(Vec<&'static str>, Vec<Vec<String>>)> {
        let mut rows = Vec::new();
        for p in &self.points {
            for (g, v) in &p.groups {
                rows.push(vec![
                    p.k.to_string(),
                    g.clone(),
                    v.selected.to_string(),
                    fmt_float(v.recall),
                    fmt_float(p.overall_precision),
                ]);
            }
        }
        Some((vec!["k", "group", "selected", "recall", "overall_precision"], rows))
    }

    fn plotdata(&self) -> Option<(Vec<&'static str>, Vec<Vec<String>>)> {
        let mut rows = Vec::new();
        for p in &self.points {
            let k = p.k.to_string();
            rows.push(vec![k.clone(), "overall".into(), "precision".into(), fmt_float(p.overall_precision)]);
            for (g, v) in &p.groups {
                rows.push(vec![k.clone(), g.clone(), "recall".into(), fmt_float(v.recall)]);
                rows.push(vec![k.clone(), g.clone(), "count".into(), v.selected.to_string()]);
            }
        }
        Some((vec!["k", "group", "metric", "value"], rows))
    }
}

/// A loaded cohort plus entity-id curves and ranking for every attribute.
/// Never mutated after construction.
#[derive(Debug)]
pub struct DatasetSnapshot {
    cohort: Cohort,
    curves: BTreeMap<String, Arc<CurveSet>>,
    order: Vec<usize>,
    summary: DatasetSummary,
}

impl DatasetSnapshot {
    pub fn new(cohort: Cohort) -> Result<Self, ServiceError> {
        let mut curves = BTreeMap::new();
        let mut attributes = Vec::new();
        for attr in cohort.attributes() {
            let set = CurveSet::build(&cohort, attr, TieBreak::EntityId)?;
            let groups = group_stats(&partition_by_group(&cohort, attr)?);
            let default_reference = default_reference(&groups).map(|g| g.group.clone()).unwrap_or_default();
            attributes.push(AttributeSummary { attribute: attr.clone(), default_reference, groups });
            curves.insert(attr.clone(), Arc::new(set));
        }
        let order = rank_indices(cohort.examples(), TieBreak::EntityId);
        let summary = DatasetSummary {
            version: version_tag(&cohort),
            source: cohort.provenance().source.clone(),
            rows: cohort.len(),
            positives: cohort.examples().iter().filter(|e| e.label).count(),
            attributes,
        };
        Ok(Self { cohort, curves, order, summary })
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    pub fn version(&self) -> &str {
        &self.summary.version
    }

    pub fn summary(&self) -> &DatasetSummary {
        &self.summary
    }

    /// The named attribute, or the only one when the cohort has just one.
    pub fn attribute<'a>(&'a self, requested: Option<&'a str>) -> Result<&'a str, ServiceError> {
        let attrs = self.cohort.attributes();
        match requested {
            Some(a) if self.cohort.has_attribute(a) => Ok(a),
            Some(a) => Err(ServiceError::Invalid(format!("unknown attribute `{a}` (available: {})", attrs.join(", ")))),
            None if attrs.len() == 1 => Ok(&attrs[0]),
            None => Err(ServiceError::Invalid(format!("attribute is required (available: {})", attrs.join(", ")))),
        }
    }

    fn curves(&self, attribute: &str, tie: TieBreak) -> Result<Arc<CurveSet>, ServiceError> {
        match (tie, self.curves.get(attribute)) {
            (TieBreak::EntityId, Some(c)) => Ok(Arc::clone(c)),
            _ => Ok(Arc::new(CurveSet::build(&self.cohort, attribute, tie)?)),
        }
    }

    pub fn audit(&self, q: &AuditQuery) -> Result<AuditReport, ServiceError> {
        let attr = self.attribute(q.attribute.as_deref())?;
        let tie = resolve_tie(q.tie_break, q.seed);
        Ok(audit_top_k(&self.cohort, attr, q.k, tie, q.reference.as_deref())?)
    }

    pub fn balance(&self, r: &BalanceRequest) -> Result<BalanceReport, ServiceError> {
        let attr = self.attribute(r.attribute.as_deref())?;
        let o = &r.options;
        let tie = resolve_tie(o.tie_break, o.seed);
        let spec = BalanceSpec {
            mode: r.mode,
            constraint: r.constraint()?,
            reference_group: r.reference_group.clone(),
            step_size: o.step_size.unwrap_or(DEFAULT_STEP),
            search_strategy: o.search_strategy.unwrap_or_default(),
            tie_break: tie,
            trim_trailing_negatives: o.trim,
            fill_to_budget: o.fill_to_budget,
        };
        if spec.validate() == Err(BalanceError::MissingReference) {
            let largest =
                &self.summary.attributes.iter().find(|a| a.attribute == attr).expect("known").default_reference;
            return Err(ServiceError::Invalid(format!(
                "{}; pick one with reference_group (the largest group is `{largest}`)",
                BalanceError::MissingReference
            )));
        }
        let curves = self.curves(attr, tie)?;
        let plan = balance(&curves, &spec)?;
        let ids = realize_selection(&plan, &curves)?;
        let audit = audit_selection(&self.cohort, attr, &ids, plan.spec.reference_group.as_deref())?;
        Ok(BalanceReport { plan, audit })
    }

    pub fn tradeoff(&self, q: &TradeoffQuery) -> Result<TradeoffMenu, ServiceError> {
        let attr = self.attribute(q.attribute.as_deref())?;
        let opts = MenuOptions { tie_break: resolve_tie(q.tie_break, q.seed), trim: q.trim };
        if q.k > self.cohort.len() {
            return Err(MetricsError::KTooLarge { k: q.k, n: self.cohort.len() }.into());
        }
        Ok(build_tradeoff_menu(&self.cohort, attr, q.k, q.reference.as_deref(), opts)?)
    }

    /// Walks the ranking once, recording a point every `stride` K values
    /// from `kmin` to `kmax` (default 1 and the cohort size).
    pub fn curve(&self, q: &CurveQuery) -> Result<CurveReport, ServiceError> {
        let attr = self.attribute(q.attribute.as_deref())?;
        let n = self.cohort.len();
        let kmin = q.kmin.unwrap_or(1.min(n));
        let kmax = q.kmax.unwrap_or(n);
        let stride = q.stride.unwrap_or(1);
        if stride == 0 {
            return Err(ServiceError::Invalid("stride must be positive".into()));
        }
        if kmin > kmax || kmax > n {
            return Err(ServiceError::Invalid(format!("need kmin <= kmax <= {n}, got kmin={kmin} kmax={kmax}")));
        }
        let points = (kmax - kmin) / stride + 1;
        if points > MAX_CURVE_POINTS {
            return Err(ServiceError::Invalid(format!(
                "{points} points requested; at most {MAX_CURVE_POINTS} (raise stride)"
            )));
        }
        let tie = resolve_tie(q.tie_break, q.seed);
        let seeded;
        let order = match tie {
            TieBreak::EntityId => &self.order,
            TieBreak::Seeded { .. } => {
                seeded = rank_indices(self.cohort.examples(), tie);
                &seeded
            }
        };
        let stats = &self.summary.attributes.iter().find(|a| a.attribute == attr).expect("known").groups;
        let mut counts: BTreeMap<&str, (usize, u64)> = stats.iter().map(|g| (g.group.as_str(), (0, 0))).collect();
        let mut tp = 0u64;
        let mut out = Vec::with_capacity(points);
        let examples = self.cohort.examples();
        for k in 0..=kmax {
            if k >= kmin && (k - kmin).is_multiple_of(stride) {
                let groups = stats
                    .iter()
                    .map(|g| {
                        let (sel, hits) = counts[g.group.as_str()];
                        let recall = (g.positives > 0).then(|| hits as f64 / g.positives as f64);
                        (g.group.clone(), CurveGroupPoint { selected: sel, recall })
                    })
                    .collect();
                let overall_precision = (k > 0).then(|| tp as f64 / k as f64);
                out.push(CurvePoint { k, overall_precision, groups });
            }
            if k < kmax {
                let e = &examples[order[k]];
                let g = e.group(attr).unwrap_or(fairquota::data_model::UNKNOWN_CATEGORY);
                let c = counts.get_mut(g).expect("every category is counted");
                c.0 += 1;
                if e.label {
                    c.1 += 1;
                    tp += 1;
                }
            }
        }
        Ok(CurveReport { attribute: attr.to_string(), tie_break: tie, kmin, kmax, stride, points: out })
    }
}

/// Hash of every example field, hex encoded. Stable for a given build.
fn version_tag(cohort: &Cohort) -> String {
    let mut h = DefaultHasher::new();
    for e in cohort.examples() {
        e.entity_id.hash(&mut h);
        e.score.to_bits().hash(&mut h);
        e.label.hash(&mut h);
        e.group_values.hash(&mut h);
        e.as_of_date.hash(&mut h);
        e.model_id.hash(&mut h);
    }
    format!("{:016x}", h.finish())
}
