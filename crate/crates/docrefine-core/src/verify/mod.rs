//! Fidelity and consistency verification.
//!
//! Computes the three pipeline scores — semantic consistency (SCS), layout
//! fidelity (LFI), instruction adherence (IAR) — plus per-op verdicts and
//! routed corrective feedback. All metric code here is pure apart from
//! embedding/judgment backend calls, and everything aggregates
//! deterministically.
//!
//! Score definitions (frozen so runs are comparable):
//! - SCS: mean over changed textual elements of `max(0, cos(new, intent))`
//!   where `intent` is the owning op's goal concatenated with the original
//!   text; untargeted changed elements contribute 0; no changes means 1.0.
//! - LFI: `0.6 * G + 0.4 * S` where `G` is mean bounding-box IoU over
//!   untargeted elements (missing element counts 0) and `S` is mean SSIM
//!   over supplied page rasters; without rasters, `G` alone.
//! - IAR: exactly `satisfied / total` over per-op verdicts (1.0 for no
//!   ops). Unverifiable counts as not satisfied.

pub mod ssim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::schema::{JudgmentResponse, JudgmentVerdict};
use crate::backend::{Backend, BackendError, BackendRequest, SchemaId, StageTag};
use crate::ir::{diff_ir, DocumentIR, ElementDiff, ElementId, ElementKind};
use crate::plan::{AtomicOp, Instruction, OpAction, OpKind, OpTarget};
use crate::refine::created_id;
use crate::semantics::{SemanticRep, TableGrid};
pub use ssim::{ssim, GrayImage, SsimError, DEFAULT_WINDOW, DYNAMIC_RANGE_8BIT};

/// Geometric vs raster weight in LFI when rasters are supplied.
pub const LFI_GEOMETRIC_WEIGHT: f64 = 0.6;
pub const LFI_RASTER_WEIGHT: f64 = 0.4;

/// Metric failure.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("vectors differ in dimension: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ssim(#[from] SsimError),
}

/// Cosine similarity `dot(u, v) / (|u| |v|)`, in `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok(dot / (nu * nv))
}

/// Intersection-over-union of two boxes; 0 across different pages.
pub fn iou(a: &crate::ir::BBox, b: &crate::ir::BBox) -> f64 {
    if a.page_index != b.page_index {
        return 0.0;
    }
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Per-op verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated(String),
    Unverifiable(String),
}

impl Verdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Verdict::Satisfied)
    }
}

/// Feedback category (the observed failure-mode taxonomy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackCategory {
    SemanticInaccuracy,
    LayoutDistortion,
    PartialAdherence,
    NuanceMisread,
    Hallucination,
}

/// Agent a feedback item is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentRoute {
    #[serde(rename = "CRA")]
    Cra,
    #[serde(rename = "SGA")]
    Sga,
    #[serde(rename = "IDA")]
    Ida,
    #[serde(rename = "MCU")]
    Mcu,
    #[serde(rename = "LSA")]
    Lsa,
}

/// The category -> admissible-routes table. Routing outside these sets is a
/// bug; [`FeedbackItem::new`] enforces it.
pub fn allowed_routes(category: FeedbackCategory) -> &'static [AgentRoute] {
    match category {
        FeedbackCategory::SemanticInaccuracy => &[AgentRoute::Cra, AgentRoute::Sga, AgentRoute::Mcu],
        FeedbackCategory::LayoutDistortion => &[AgentRoute::Lsa, AgentRoute::Cra],
        FeedbackCategory::PartialAdherence => &[AgentRoute::Ida],
        FeedbackCategory::NuanceMisread => &[AgentRoute::Mcu, AgentRoute::Ida],
        FeedbackCategory::Hallucination => &[AgentRoute::Cra, AgentRoute::Sga],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

/// What a feedback item points at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTarget {
    Element(ElementId),
    Op(u32),
}

/// One routed corrective feedback item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub category: FeedbackCategory,
    pub route_to: AgentRoute,
    pub target: FeedbackTarget,
    pub message: String,
    pub severity: Severity,
}

impl FeedbackItem {
    pub fn new(
        category: FeedbackCategory,
        route_to: AgentRoute,
        target: FeedbackTarget,
        message: impl Into<String>,
        severity: Severity,
    ) -> Self {
        assert!(
            allowed_routes(category).contains(&route_to),
            "route {route_to:?} not admissible for {category:?}"
        );
        Self {
            category,
            route_to,
            target,
            message: message.into(),
            severity,
        }
    }
}

/// Verification scores plus per-op verdicts and feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub scs: f64,
    pub lfi: f64,
    pub iar: f64,
    pub per_op: BTreeMap<u32, Verdict>,
    pub feedback: Vec<FeedbackItem>,
}

impl VerificationReport {
    /// Sum of the three scores; the closed loop keeps the best iteration by
    /// this value.
    pub fn score_sum(&self) -> f64 {
        self.scs + self.lfi + self.iar
    }

    pub fn meets(&self, thresholds: &Thresholds) -> bool {
        self.scs >= thresholds.scs && self.lfi >= thresholds.lfi && self.iar >= thresholds.iar
    }
}

/// IAR from a verdict collection: exactly `satisfied / total`, 1.0 when
/// there are no ops (vacuous adherence).
pub fn iar_from_verdicts<'a>(verdicts: impl ExactSizeIterator<Item = &'a Verdict>) -> f64 {
    let total = verdicts.len();
    if total == 0 {
        return 1.0;
    }
    let satisfied = verdicts.filter(|v| v.is_satisfied()).count();
    satisfied as f64 / total as f64
}

/// Score thresholds used for pass/fail and feedback generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub scs: f64,
    pub lfi: f64,
    pub iar: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            scs: 0.85,
            lfi: 0.90,
            iar: 0.85,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("scs", self.scs), ("lfi", self.lfi), ("iar", self.iar)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("threshold {name}={v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Inputs controlling one verification run.
pub struct VerifyParams<'a> {
    /// Embedding provider (and judge, when enabled).
    pub backend: &'a dyn Backend,
    /// Enable the model judgment for rewrite-style ops. Without it those
    /// ops verify as Unverifiable, which counts against adherence.
    pub judge: bool,
    pub thresholds: Thresholds,
    /// Summaries produced by refinement, for summary-op verification.
    pub summaries: Option<&'a BTreeMap<u32, String>>,
    /// Optional (original, modified) page raster pairs for raster fidelity.
    pub rasters: Option<&'a [(GrayImage, GrayImage)]>,
}

impl<'a> VerifyParams<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Self {
            backend,
            judge: false,
            thresholds: Thresholds::default(),
            summaries: None,
            rasters: None,
        }
    }
}

/// Builds the yes/no judgment request for a rewrite-style op.
pub fn judgment_request(
    op: &AtomicOp,
    instruction: &Instruction,
    before: &str,
    after: &str,
) -> BackendRequest {
    BackendRequest::new(StageTag::Fcv, SchemaId::Judgment)
        .system(
            "Judge whether the edited text satisfies the stated goal while \
             preserving the original meaning where not targeted. Respond with \
             JSON: {\"verdict\": \"yes\"|\"no\", \"reason\": \"...\"}.",
        )
        .text(format!("user instruction: {}", instruction.text))
        .text(format!(
            "op {} ({}): goal: {}",
            op.op_id,
            op.kind(),
            op.goal_text().unwrap_or("(none)")
        ))
        .text(format!("before: {before}"))
        .text(format!("after: {after}"))
}

/// The element ids `ops` target, including ids created by insert ops.
pub fn targeted_ids(ops: &[AtomicOp], orig_ir: &DocumentIR) -> BTreeSet<ElementId> {
    let mut out = BTreeSet::new();
    for op in ops {
        if let Some(id) = op.target_element() {
            out.insert(id.clone());
        }
        if matches!(op.action, OpAction::InsertText { .. }) {
            out.insert(created_id(orig_ir, op.op_id));
        }
    }
    out
}

fn last_goal_for<'a>(ops: &'a [AtomicOp], id: &ElementId, orig_ir: &DocumentIR) -> Option<&'a str> {
    ops.iter()
        .filter(|op| {
            op.target_element() == Some(id)
                || (matches!(op.action, OpAction::InsertText { .. })
                    && &created_id(orig_ir, op.op_id) == id)
        })
        .max_by_key(|op| op.op_id)
        .and_then(|op| op.goal_text())
}

/// Per-element semantic-consistency contributions. Exposed for feedback
/// targeting; [`compute_scs`] is the mean.
fn scs_contributions(
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    ops: &[AtomicOp],
    diff: &ElementDiff,
    backend: &dyn Backend,
) -> Result<Vec<(ElementId, f64)>, MetricError> {
    let targeted = targeted_ids(ops, orig_ir);
    let deleted_by_op: BTreeSet<&ElementId> = ops
        .iter()
        .filter(|op| op.kind() == OpKind::DeleteText)
        .filter_map(|op| op.target_element())
        .collect();

    // Changed textual elements; intentional deletions are adherence matter,
    // not semantic drift, and stay out of the mean.
    let mut pending: Vec<(ElementId, Option<(String, String)>)> = Vec::new();
    let mut consider = |id: &ElementId| {
        let kind = orig_ir
            .element(id)
            .or_else(|| mod_ir.element(id))
            .map(|e| e.kind);
        if !kind.is_some_and(ElementKind::is_textual) {
            return;
        }
        if diff.removed.contains(id) {
            if !deleted_by_op.contains(id) {
                pending.push((id.clone(), None)); // untargeted removal: 0
            }
            return;
        }
        let new_text = mod_ir.element(id).map(|e| e.text.clone()).unwrap_or_default();
        match (targeted.contains(id), last_goal_for(ops, id, orig_ir)) {
            (true, Some(goal)) => {
                let original = orig_ir.element(id).map(|e| e.text.as_str()).unwrap_or("");
                let intent = if original.is_empty() {
                    goal.to_string()
                } else {
                    format!("{goal} {original}")
                };
                pending.push((id.clone(), Some((new_text, intent))));
            }
            // Targeted without a textual goal, or untargeted: counts zero.
            _ => pending.push((id.clone(), None)),
        }
    };
    for id in diff.changed_text.iter().chain(&diff.added).chain(&diff.removed) {
        consider(id);
    }

    let texts: Vec<String> = pending
        .iter()
        .filter_map(|(_, pair)| pair.as_ref())
        .flat_map(|(new, intent)| [new.clone(), intent.clone()])
        .collect();
    let embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        backend.embed(&texts)?
    };

    let mut out = Vec::new();
    let mut cursor = 0;
    for (id, pair) in pending {
        let score = match pair {
            None => 0.0,
            Some(_) => {
                let new = &embeddings[cursor];
                let intent = &embeddings[cursor + 1];
                cursor += 2;
                cosine(new.values(), intent.values())?.max(0.0)
            }
        };
        out.push((id, score));
    }
    Ok(out)
}

/// Semantic Consistency Score. See the module docs for the frozen
/// definition.
pub fn compute_scs(
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    ops: &[AtomicOp],
    diff: &ElementDiff,
    backend: &dyn Backend,
) -> Result<f64, MetricError> {
    let contributions = scs_contributions(orig_ir, mod_ir, ops, diff, backend)?;
    if contributions.is_empty() {
        return Ok(1.0);
    }
    Ok(contributions.iter().map(|(_, s)| s).sum::<f64>() / contributions.len() as f64)
}

fn lfi_geometry(
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    targeted: &BTreeSet<ElementId>,
) -> Vec<(ElementId, f64)> {
    orig_ir
        .elements
        .iter()
        .filter(|el| !targeted.contains(&el.id))
        .map(|el| {
            let value = mod_ir
                .element(&el.id)
                .map_or(0.0, |m| iou(&el.bbox, &m.bbox));
            (el.id.clone(), value)
        })
        .collect()
}

/// Layout Fidelity Index. `targeted` elements are exempt from the geometric
/// term (edits are allowed to change what they target); raster pairs, when
/// supplied, contribute SSIM with the complementary weight.
pub fn compute_lfi(
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    targeted: &BTreeSet<ElementId>,
    rasters: Option<&[(GrayImage, GrayImage)]>,
) -> Result<f64, MetricError> {
    let geometry = lfi_geometry(orig_ir, mod_ir, targeted);
    let g = if geometry.is_empty() {
        1.0
    } else {
        geometry.iter().map(|(_, v)| v).sum::<f64>() / geometry.len() as f64
    };
    match rasters {
        None | Some([]) => Ok(g),
        Some(pairs) => {
            let mut total = 0.0;
            for (a, b) in pairs {
                total += ssim(a, b, DEFAULT_WINDOW, DYNAMIC_RANGE_8BIT)?.max(0.0);
            }
            let s = total / pairs.len() as f64;
            Ok(LFI_GEOMETRIC_WEIGHT * g + LFI_RASTER_WEIGHT * s)
        }
    }
}

/// Rule-based (plus optional judged) verification of one op against the
/// original and modified documents. Never fails: judge errors degrade to
/// `Unverifiable`.
pub fn check_op(
    op: &AtomicOp,
    instruction: &Instruction,
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    mod_sem: &SemanticRep,
    summaries: Option<&BTreeMap<u32, String>>,
    judge: Option<&dyn Backend>,
) -> Verdict {
    match &op.action {
        OpAction::DeleteText => {
            let id = op.target_element().expect("delete targets an element");
            if mod_ir.element(id).is_none() {
                Verdict::Satisfied
            } else {
                Verdict::Violated("target not deleted".into())
            }
        }
        OpAction::CorrectTableCell { value } => {
            let OpTarget::TableCell { table, row, col } = &op.target else {
                return Verdict::Violated("malformed table-cell target".into());
            };
            let grid = mod_sem.table_grids.get(table).cloned().or_else(|| {
                mod_ir
                    .element(table)
                    .and_then(|el| TableGrid::from_text(&el.text))
            });
            match grid.as_ref().and_then(|g| g.cell(*row, *col)) {
                Some(cell) if cell == value => Verdict::Satisfied,
                Some(cell) => Verdict::Violated(format!(
                    "cell ({row}, {col}) is {cell:?}, expected {value:?}"
                )),
                None => Verdict::Violated(format!("cell ({row}, {col}) not found")),
            }
        }
        OpAction::UpdateCaption { required_keys, .. } => {
            let id = op.target_element().expect("caption target");
            let before = orig_ir.element(id).map(|e| e.text.as_str()).unwrap_or("");
            let Some(after) = mod_ir.element(id).map(|e| e.text.as_str()) else {
                return Verdict::Violated("caption missing from modified document".into());
            };
            if before == after {
                return Verdict::Violated("caption text unchanged".into());
            }
            let lowered = after.to_lowercase();
            let missing: Vec<&str> = required_keys
                .iter()
                .filter(|k| !lowered.contains(&k.to_lowercase()))
                .map(String::as_str)
                .collect();
            if missing.is_empty() {
                Verdict::Satisfied
            } else {
                Verdict::Violated(format!(
                    "caption does not mention: {}",
                    missing.join(", ")
                ))
            }
        }
        OpAction::GenerateSummary { constraints, .. } => {
            let Some(summaries) = summaries else {
                return Verdict::Unverifiable("no summaries available to check".into());
            };
            match summaries.get(&op.op_id) {
                None => Verdict::Violated("summary not produced".into()),
                Some(text) if text.trim().is_empty() => {
                    Verdict::Violated("summary is empty".into())
                }
                Some(text) => {
                    if let Some(max) = constraints.as_ref().and_then(|c| c.max_length) {
                        let words = text.split_whitespace().count();
                        if words > max {
                            return Verdict::Violated(format!(
                                "summary runs {words} words, limit {max}"
                            ));
                        }
                    }
                    Verdict::Satisfied
                }
            }
        }
        OpAction::InsertText { .. } => {
            let id = created_id(orig_ir, op.op_id);
            match mod_ir.element(&id) {
                Some(el) if !el.text.trim().is_empty() => Verdict::Satisfied,
                Some(_) => Verdict::Violated("inserted element is empty".into()),
                None => Verdict::Violated("inserted element missing".into()),
            }
        }
        OpAction::ReorderElements { order } => {
            let member: BTreeSet<&ElementId> = order.iter().collect();
            let observed: Vec<&ElementId> = mod_ir
                .reading_order
                .iter()
                .filter(|id| member.contains(id))
                .collect();
            if observed == order.iter().collect::<Vec<_>>() {
                Verdict::Satisfied
            } else {
                Verdict::Violated("reading order does not match the requested order".into())
            }
        }
        OpAction::RewriteText { .. } | OpAction::FormatUnify { .. } | OpAction::CrossModalFix { .. } => {
            let id = op.target_element().expect("element target");
            let before = orig_ir.element(id).map(|e| e.text.as_str()).unwrap_or("");
            let Some(after) = mod_ir.element(id).map(|e| e.text.as_str()) else {
                return Verdict::Violated("target missing from modified document".into());
            };
            if before == after {
                return Verdict::Violated("target text unchanged".into());
            }
            let Some(judge) = judge else {
                return Verdict::Unverifiable("no judge configured".into());
            };
            let req = judgment_request(op, instruction, before, after);
            match judge
                .complete(&req)
                .and_then(|resp| resp.parse_as::<JudgmentResponse>())
            {
                Ok(JudgmentResponse {
                    verdict: JudgmentVerdict::Yes,
                    ..
                }) => Verdict::Satisfied,
                Ok(JudgmentResponse { reason, .. }) => Verdict::Violated(if reason.is_empty() {
                    "judge rejected the edit".into()
                } else {
                    reason
                }),
                Err(e) => Verdict::Unverifiable(format!("judge failed: {e}")),
            }
        }
    }
}

fn element_label(ir: &DocumentIR, id: &ElementId) -> String {
    match ir.element(id) {
        Some(el) => format!("{} {}", el.kind, id),
        None => format!("element {id}"),
    }
}

/// Verifies a refinement: scores, per-op verdicts, and corrective feedback
/// for every violated op and every score under its threshold.
pub fn verify(
    orig_ir: &DocumentIR,
    mod_ir: &DocumentIR,
    _orig_sem: &SemanticRep,
    mod_sem: &SemanticRep,
    instruction: &Instruction,
    ops: &[AtomicOp],
    params: &VerifyParams<'_>,
) -> Result<VerificationReport, MetricError> {
    let judge = params.judge.then_some(params.backend);
    let mut per_op = BTreeMap::new();
    for op in ops {
        per_op.insert(
            op.op_id,
            check_op(op, instruction, orig_ir, mod_ir, mod_sem, params.summaries, judge),
        );
    }
    let iar = iar_from_verdicts(per_op.values());

    let diff = diff_ir(orig_ir, mod_ir);
    let targeted = targeted_ids(ops, orig_ir);
    let contributions = scs_contributions(orig_ir, mod_ir, ops, &diff, params.backend)?;
    let scs = if contributions.is_empty() {
        1.0
    } else {
        contributions.iter().map(|(_, s)| s).sum::<f64>() / contributions.len() as f64
    };
    let geometry = lfi_geometry(orig_ir, mod_ir, &targeted);
    let lfi = compute_lfi(orig_ir, mod_ir, &targeted, params.rasters)?;

    let mut feedback = Vec::new();

    // Violated ops.
    for op in ops {
        let Some(Verdict::Violated(reason)) = per_op.get(&op.op_id) else {
            continue;
        };
        let label = op
            .target_element()
            .map(|id| element_label(orig_ir, id))
            .unwrap_or_else(|| "the document".to_string());
        match op.kind() {
            OpKind::DeleteText | OpKind::InsertText | OpKind::ReorderElements => {
                feedback.push(FeedbackItem::new(
                    FeedbackCategory::PartialAdherence,
                    AgentRoute::Ida,
                    FeedbackTarget::Op(op.op_id),
                    format!("Op {} on {label} was not carried out: {reason}", op.op_id),
                    Severity::Medium,
                ));
            }
            OpKind::GenerateSummary => {
                feedback.push(FeedbackItem::new(
                    FeedbackCategory::SemanticInaccuracy,
                    AgentRoute::Sga,
                    FeedbackTarget::Op(op.op_id),
                    format!("The summary for op {} is unacceptable: {reason}", op.op_id),
                    Severity::Medium,
                ));
            }
            _ => {
                let target = op
                    .target_element()
                    .map(|id| FeedbackTarget::Element(id.clone()))
                    .unwrap_or(FeedbackTarget::Op(op.op_id));
                feedback.push(FeedbackItem::new(
                    FeedbackCategory::SemanticInaccuracy,
                    AgentRoute::Cra,
                    target,
                    format!("{label} does not satisfy op {}: {reason}", op.op_id),
                    Severity::Medium,
                ));
            }
        }
    }

    // Untargeted mutations: the unmodified-region pledge was broken.
    for id in diff.all_ids() {
        if targeted.contains(&id) {
            continue;
        }
        let label = element_label(orig_ir, &id);
        if diff.added.contains(&id) {
            feedback.push(FeedbackItem::new(
                FeedbackCategory::Hallucination,
                AgentRoute::Cra,
                FeedbackTarget::Element(id.clone()),
                format!("{label} appeared without any op requesting it"),
                Severity::High,
            ));
        } else if diff.changed_text.contains(&id) {
            feedback.push(FeedbackItem::new(
                FeedbackCategory::SemanticInaccuracy,
                AgentRoute::Cra,
                FeedbackTarget::Element(id.clone()),
                format!("{label} was modified although no op targeted it"),
                Severity::High,
            ));
        } else {
            // Pure geometry change or removal.
            feedback.push(FeedbackItem::new(
                FeedbackCategory::LayoutDistortion,
                AgentRoute::Lsa,
                FeedbackTarget::Element(id.clone()),
                format!("{label} moved or disappeared although no op targeted it"),
                Severity::High,
            ));
        }
    }

    // Scores under threshold.
    let t = &params.thresholds;
    if scs < t.scs {
        if let Some((worst, value)) = contributions
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        {
            let severity = if scs < t.scs / 2.0 {
                Severity::High
            } else {
                Severity::Medium
            };
            feedback.push(FeedbackItem::new(
                FeedbackCategory::SemanticInaccuracy,
                AgentRoute::Cra,
                FeedbackTarget::Element(worst.clone()),
                format!(
                    "Semantic consistency {scs:.3} is under the {:.2} threshold; {} agrees least with its intent ({value:.3})",
                    t.scs,
                    element_label(orig_ir, worst),
                ),
                severity,
            ));
        }
    }
    if lfi < t.lfi {
        let worst = geometry
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if let Some((worst, value)) = worst {
            let severity = if lfi < t.lfi / 2.0 {
                Severity::High
            } else {
                Severity::Medium
            };
            feedback.push(FeedbackItem::new(
                FeedbackCategory::LayoutDistortion,
                AgentRoute::Lsa,
                FeedbackTarget::Element(worst.clone()),
                format!(
                    "Layout fidelity {lfi:.3} is under the {:.2} threshold; {} has box overlap {value:.3}",
                    t.lfi,
                    element_label(orig_ir, worst),
                ),
                severity,
            ));
        }
    }
    if iar < t.iar {
        let unsatisfied: Vec<String> = per_op
            .iter()
            .filter(|(_, v)| !v.is_satisfied())
            .map(|(id, _)| format!("op {id}"))
            .collect();
        if let Some((first, _)) = per_op.iter().find(|(_, v)| !v.is_satisfied()) {
            let severity = if iar < t.iar / 2.0 {
                Severity::High
            } else {
                Severity::Medium
            };
            feedback.push(FeedbackItem::new(
                FeedbackCategory::PartialAdherence,
                AgentRoute::Ida,
                FeedbackTarget::Op(*first),
                format!(
                    "Instruction adherence {iar:.3} is under the {:.2} threshold; unsatisfied: {}",
                    t.iar,
                    unsatisfied.join(", ")
                ),
                severity,
            ));
        }
    }

    let report = VerificationReport {
        scs,
        lfi,
        iar,
        per_op,
        feedback,
    };
    debug_assert!((0.0..=1.0).contains(&report.scs));
    debug_assert!((0.0..=1.0).contains(&report.lfi));
    debug_assert!((0.0..=1.0).contains(&report.iar));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{mock_embedding, MockBackend, MockScript};
    use crate::ir::{BBox, Element, PageSize};
    use crate::semantics;

    fn element(id: &str, kind: ElementKind, text: &str, y: f64) -> Element {
        Element {
            id: ElementId::from(id),
            kind,
            bbox: BBox::new(0, 72.0, y, 540.0, y + 30.0),
            text: text.to_string(),
            heading_level: (kind == ElementKind::Heading).then_some(1),
            raster_ref: None,
        }
    }

    fn doc() -> DocumentIR {
        let elements = vec![
            element("p1", ElementKind::Paragraph, "Alpha paragraph text.", 72.0),
            element("p2", ElementKind::Paragraph, "Beta paragraph text.", 120.0),
        ];
        let reading_order = elements.iter().map(|e| e.id.clone()).collect();
        DocumentIR {
            pages: vec![PageSize::US_LETTER],
            elements,
            reading_order,
            hierarchy: vec![],
            associations: vec![],
        }
    }

    fn rewrite_op(op_id: u32, id: &str, goal: &str) -> AtomicOp {
        AtomicOp {
            op_id,
            target: OpTarget::Element { id: id.into() },
            action: OpAction::RewriteText { goal: goal.into() },
            rationale: String::new(),
        }
    }

    #[test]
    fn cosine_basis_vectors() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MetricError::ZeroVector)
        ));
    }

    #[test]
    fn cosine_matches_direct_formula_on_random_pairs() {
        // Oracle: the formula computed inline, independently.
        let mut state = 42u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for _ in 0..100 {
            let u: Vec<f64> = (0..16).map(|_| next()).collect();
            let v: Vec<f64> = (0..16).map(|_| next()).collect();
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            let expected =
                dot / (u.iter().map(|x| x * x).sum::<f64>().sqrt()
                    * v.iter().map(|x| x * x).sum::<f64>().sqrt());
            assert!((cosine(&u, &v).unwrap() - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn iar_enumerates_exactly() {
        // Every verdict vector with up to 4 ops.
        let choices = [
            Verdict::Satisfied,
            Verdict::Violated("v".into()),
            Verdict::Unverifiable("u".into()),
        ];
        for n in 1usize..=4 {
            for mut code in 0..3usize.pow(n as u32) {
                let mut verdicts = Vec::new();
                for _ in 0..n {
                    verdicts.push(choices[code % 3].clone());
                    code /= 3;
                }
                let satisfied = verdicts.iter().filter(|v| v.is_satisfied()).count();
                let expected = satisfied as f64 / n as f64;
                assert_eq!(iar_from_verdicts(verdicts.iter()), expected);
            }
        }
        assert_eq!(iar_from_verdicts([].iter()), 1.0);
    }

    #[test]
    fn identity_verify_is_all_ones_and_silent() {
        let ir = doc();
        let sem = semantics::structural(&ir);
        let backend = MockBackend::embedder_only();
        let report = verify(
            &ir,
            &ir,
            &sem,
            &sem,
            &Instruction::new("nothing"),
            &[],
            &VerifyParams::new(&backend),
        )
        .unwrap();
        assert_eq!(report.scs, 1.0);
        assert_eq!(report.lfi, 1.0);
        assert_eq!(report.iar, 1.0);
        assert!(report.feedback.is_empty());
    }

    #[test]
    fn scs_averages_precomputed_mock_cosines() {
        let ir = doc();
        let mut modified = ir.clone();
        modified.element_mut(&"p1".into()).unwrap().text = "Rewritten alpha body.".into();
        modified.element_mut(&"p2".into()).unwrap().text = "Rewritten beta body.".into();
        let ops = vec![
            rewrite_op(1, "p1", "tighten the alpha paragraph"),
            rewrite_op(2, "p2", "tighten the beta paragraph"),
        ];

        // Oracle: hand dot-product on the mock embeddings.
        let dot = |a: &str, b: &str| -> f64 {
            let (va, vb) = (mock_embedding(a), mock_embedding(b));
            va.values().iter().zip(vb.values()).map(|(x, y)| x * y).sum()
        };
        let c1 = dot(
            "Rewritten alpha body.",
            "tighten the alpha paragraph Alpha paragraph text.",
        )
        .max(0.0);
        let c2 = dot(
            "Rewritten beta body.",
            "tighten the beta paragraph Beta paragraph text.",
        )
        .max(0.0);
        let expected = (c1 + c2) / 2.0;

        let backend = MockBackend::embedder_only();
        let diff = diff_ir(&ir, &modified);
        let scs = compute_scs(&ir, &modified, &ops, &diff, &backend).unwrap();
        assert!((scs - expected).abs() <= 1e-12, "{scs} vs {expected}");
    }

    #[test]
    fn scs_of_identical_intent_text_is_one() {
        let ir = doc();
        let mut modified = ir.clone();
        // New text exactly equals goal + " " + original.
        let goal = "polish";
        let intent = format!("{goal} Alpha paragraph text.");
        modified.element_mut(&"p1".into()).unwrap().text = intent;
        let ops = vec![rewrite_op(1, "p1", goal)];
        let diff = diff_ir(&ir, &modified);
        let backend = MockBackend::embedder_only();
        let scs = compute_scs(&ir, &modified, &ops, &diff, &backend).unwrap();
        assert!((scs - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn lfi_geometric_half_on_one_of_two_moved() {
        let ir = doc();
        let mut modified = ir.clone();
        // Translate p2 clear of its original box: IoU 0.
        modified.element_mut(&"p2".into()).unwrap().bbox = BBox::new(0, 72.0, 400.0, 540.0, 430.0);

        // Oracle: hand IoU on the fixture geometry.
        assert_eq!(
            iou(
                &ir.element(&"p2".into()).unwrap().bbox,
                &modified.element(&"p2".into()).unwrap().bbox
            ),
            0.0
        );

        let lfi = compute_lfi(&ir, &modified, &BTreeSet::new(), None).unwrap();
        assert!((lfi - 0.5).abs() <= 1e-12, "G = (1 + 0) / 2, got {lfi}");
    }

    #[test]
    fn lfi_blends_raster_term_when_supplied() {
        let ir = doc();
        let raster = GrayImage::new(16, 16, vec![128; 256]).unwrap();
        let pairs = vec![(raster.clone(), raster)];
        let lfi = compute_lfi(&ir, &ir, &BTreeSet::new(), Some(&pairs)).unwrap();
        // S = 1 on identical rasters, G = 1: LFI = 0.6 + 0.4.
        assert!((lfi - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn check_correct_table_cell() {
        let mut table = element("t1", ElementKind::Table, "a\tb\nc\td", 200.0);
        table.heading_level = None;
        let mut ir = doc();
        ir.elements.push(table);
        ir.reading_order.push("t1".into());
        let mut modified = ir.clone();
        let mut sem = semantics::structural(&modified);
        sem.table_grids
            .get_mut(&"t1".into())
            .unwrap()
            .set_cell(1, 1, "0.85");
        modified.element_mut(&"t1".into()).unwrap().text = sem.table_grids[&ElementId::from("t1")].to_text();

        let op = AtomicOp {
            op_id: 1,
            target: OpTarget::TableCell {
                table: "t1".into(),
                row: 1,
                col: 1,
            },
            action: OpAction::CorrectTableCell {
                value: "0.85".into(),
            },
            rationale: String::new(),
        };
        let verdict = check_op(
            &op,
            &Instruction::new("fix"),
            &ir,
            &modified,
            &sem,
            None,
            None,
        );
        assert_eq!(verdict, Verdict::Satisfied);
    }

    #[test]
    fn check_delete_still_present_is_violated() {
        let ir = doc();
        let op = AtomicOp {
            op_id: 1,
            target: OpTarget::Element { id: "p1".into() },
            action: OpAction::DeleteText,
            rationale: String::new(),
        };
        let sem = semantics::structural(&ir);
        let verdict = check_op(&op, &Instruction::new("x"), &ir, &ir, &sem, None, None);
        assert_eq!(verdict, Verdict::Violated("target not deleted".into()));
    }

    #[test]
    fn rewrite_without_judge_is_unverifiable() {
        let ir = doc();
        let mut modified = ir.clone();
        modified.element_mut(&"p1".into()).unwrap().text = "Different.".into();
        let sem = semantics::structural(&ir);
        let verdict = check_op(
            &rewrite_op(1, "p1", "g"),
            &Instruction::new("x"),
            &ir,
            &modified,
            &sem,
            None,
            None,
        );
        assert_eq!(verdict, Verdict::Unverifiable("no judge configured".into()));
    }

    #[test]
    fn rewrite_with_yes_judge_is_satisfied() {
        let ir = doc();
        let mut modified = ir.clone();
        modified.element_mut(&"p1".into()).unwrap().text = "Different.".into();
        let sem = semantics::structural(&ir);
        let mut script = MockScript::new();
        script.set_default(StageTag::Fcv, r#"{"verdict": "yes"}"#);
        let judge = MockBackend::new(script);
        let verdict = check_op(
            &rewrite_op(1, "p1", "g"),
            &Instruction::new("x"),
            &ir,
            &modified,
            &sem,
            None,
            Some(&judge),
        );
        assert_eq!(verdict, Verdict::Satisfied);
    }

    #[test]
    fn untargeted_change_produces_high_severity_feedback() {
        let ir = doc();
        let mut modified = ir.clone();
        modified.element_mut(&"p2".into()).unwrap().text = "Sneaky edit.".into();
        let sem = semantics::structural(&ir);
        let backend = MockBackend::embedder_only();
        let report = verify(
            &ir,
            &modified,
            &sem,
            &sem,
            &Instruction::new("nothing"),
            &[],
            &VerifyParams::new(&backend),
        )
        .unwrap();
        let item = report
            .feedback
            .iter()
            .find(|f| f.target == FeedbackTarget::Element("p2".into()))
            .expect("feedback for the sneaky edit");
        assert_eq!(item.severity, Severity::High);
        assert!(matches!(
            item.category,
            FeedbackCategory::SemanticInaccuracy | FeedbackCategory::LayoutDistortion
        ));
    }

    #[test]
    fn verdict_mix_gives_exact_iar_and_routed_feedback() {
        let ir = doc();
        let mut modified = ir.clone();
        modified.element_mut(&"p1".into()).unwrap().text = "Edited one.".into();
        modified.element_mut(&"p2".into()).unwrap().text = "Edited two.".into();
        let sem = semantics::structural(&ir);
        // Judge says yes for op 1's text, no for op 2's: key by digest.
        let op1 = rewrite_op(1, "p1", "first goal");
        let op2 = rewrite_op(2, "p2", "second goal");
        let instruction = Instruction::new("edit both");
        let mut script = MockScript::new();
        script.insert_for(
            &judgment_request(&op1, &instruction, "Alpha paragraph text.", "Edited one."),
            r#"{"verdict": "yes"}"#,
        );
        script.insert_for(
            &judgment_request(&op2, &instruction, "Beta paragraph text.", "Edited two."),
            r#"{"verdict": "no", "reason": "meaning drifted"}"#,
        );
        let backend = MockBackend::new(script);
        let mut params = VerifyParams::new(&backend);
        params.judge = true;
        let report = verify(&ir, &modified, &sem, &sem, &instruction, &[op1, op2], &params).unwrap();
        assert_eq!(report.iar, 0.5);
        let routed: Vec<&FeedbackItem> = report
            .feedback
            .iter()
            .filter(|f| f.category == FeedbackCategory::SemanticInaccuracy)
            .collect();
        assert!(!routed.is_empty());
        for item in &report.feedback {
            assert!(allowed_routes(item.category).contains(&item.route_to));
        }
    }

    #[test]
    #[should_panic(expected = "not admissible")]
    fn misrouted_feedback_panics() {
        let _ = FeedbackItem::new(
            FeedbackCategory::PartialAdherence,
            AgentRoute::Lsa,
            FeedbackTarget::Op(1),
            "bad route",
            Severity::Low,
        );
    }
}
