//! Content refinement and text generation.
//!
//! Executes validated [`AtomicOp`]s against a document and its semantic
//! representation. Text-producing kinds call the backend under the rewrite
//! schema; cell corrections, deletions, and reorders are direct structural
//! edits; summaries go through [`generate_summary`]. The layout-preservation
//! policy is strict: bounding boxes never move, text that does not fit its
//! box raises an [`OverflowWarning`] instead of displacing neighbors, and a
//! hard guard verifies that every element outside the target set is
//! byte-identical after application.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::schema::TextResponse;
use crate::backend::{Backend, BackendError, BackendRequest, SchemaId, StageTag};
use crate::ir::{diff_ir, DocumentIR, Element, ElementId, ElementKind, Violation};
use crate::plan::{
    validate_ops, AtomicOp, InstructionConstraints, OpAction, OpTarget, Placement,
};
use crate::semantics::{SemanticRep, TableGrid};

/// Nominal font size used by the line-capacity estimate, points.
pub const NOMINAL_FONT_SIZE: f64 = 10.0;
/// Nominal glyph width: half the font size. Crude but deterministic; true
/// text shaping is out of scope.
pub const NOMINAL_GLYPH_WIDTH: f64 = 0.5 * NOMINAL_FONT_SIZE;
/// Nominal line height.
pub const NOMINAL_LINE_HEIGHT: f64 = 1.2 * NOMINAL_FONT_SIZE;

/// Raised when rewritten text likely exceeds its box's line capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowWarning {
    pub element: ElementId,
    pub lines_needed: usize,
    pub capacity: usize,
}

/// Output of [`apply_ops`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub new_ir: DocumentIR,
    pub new_sem: SemanticRep,
    /// Exactly the ids `diff_ir(old, new)` mentions.
    pub changed_ids: BTreeSet<ElementId>,
    /// Generated summaries keyed by op id.
    pub summaries: BTreeMap<u32, String>,
    pub warnings: Vec<OverflowWarning>,
}

/// Refinement failure.
#[derive(Debug, Error)]
pub enum RefineError {
    #[error("op list failed validation: {0:?}")]
    InvalidOps(Vec<Violation>),
    #[error("backend failure at op {op_id}: {source}")]
    Backend {
        op_id: u32,
        #[source]
        source: BackendError,
    },
    #[error("op {op_id}: model returned empty text after one retry")]
    EmptyGeneration { op_id: u32 },
    /// An element outside the target set changed — an internal bug.
    #[error("untargeted elements changed during refinement: {ids:?}")]
    GuardViolation { ids: BTreeSet<ElementId> },
}

/// Context shipped with a rewrite request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewriteContext {
    /// Text of the preceding textual element in reading order.
    pub prev_text: Option<String>,
    /// Text of the following textual element in reading order.
    pub next_text: Option<String>,
    /// Figure grounding for cross-modal fixes.
    pub grounding: Option<String>,
}

/// Derives the rewrite context the engine sends for `op` on `element`.
pub fn rewrite_context(ir: &DocumentIR, sem: &SemanticRep, op: &AtomicOp) -> RewriteContext {
    let mut ctx = RewriteContext::default();
    if let Some(id) = op.target_element() {
        let position = ir.reading_order.iter().position(|x| x == id);
        if let Some(pos) = position {
            ctx.prev_text = ir.reading_order[..pos]
                .iter()
                .rev()
                .filter_map(|i| ir.element(i))
                .find(|e| e.kind.is_textual() && !e.text.is_empty())
                .map(|e| e.text.clone());
            ctx.next_text = ir.reading_order[pos + 1..]
                .iter()
                .filter_map(|i| ir.element(i))
                .find(|e| e.kind.is_textual() && !e.text.is_empty())
                .map(|e| e.text.clone());
        }
    }
    if let OpAction::CrossModalFix { figure, .. } = &op.action {
        ctx.grounding = sem.figure_descs.get(figure).map(|d| {
            let mut g = d.description.clone();
            if !d.axis_labels.is_empty() {
                g.push_str(&format!("; axes: {}", d.axis_labels.join(", ")));
            }
            if !d.legend_entries.is_empty() {
                g.push_str(&format!("; legend: {}", d.legend_entries.join(", ")));
            }
            g
        });
    }
    ctx
}

/// Builds the backend request for a text-producing op.
pub fn rewrite_request(op: &AtomicOp, element: &Element, ctx: &RewriteContext) -> BackendRequest {
    let task = match &op.action {
        OpAction::RewriteText { goal } => format!("Rewrite the element text. Goal: {goal}"),
        OpAction::FormatUnify { style } => {
            format!("Reformat the element text to match this convention: {style}")
        }
        OpAction::UpdateCaption { goal, required_keys } => format!(
            "Update the caption. Goal: {goal}. The new caption must mention: {}",
            required_keys.join(", ")
        ),
        OpAction::CrossModalFix { goal, figure } => format!(
            "Fix the text so it agrees with figure {figure}. Goal: {goal}"
        ),
        OpAction::InsertText { goal, placement } => format!(
            "Write a new paragraph to insert {} the shown element. Goal: {goal}",
            match placement {
                Placement::Before => "before",
                Placement::After => "after",
            }
        ),
        other => unreachable!("rewrite_request on non-text op {other:?}"),
    };
    let mut req = BackendRequest::new(StageTag::Cra, SchemaId::Rewrite)
        .system(
            "You edit one document element. Keep the result stylistically \
             consistent with the surrounding document and similar in length to \
             the original. Respond with JSON: {\"text\": \"...\"}.",
        )
        .text(task)
        .text(format!("element {} current text: {}", element.id, element.text));
    if let Some(prev) = &ctx.prev_text {
        req = req.text(format!("preceding context: {prev}"));
    }
    if let Some(next) = &ctx.next_text {
        req = req.text(format!("following context: {next}"));
    }
    if let Some(grounding) = &ctx.grounding {
        req = req.text(format!("figure content: {grounding}"));
    }
    req
}

fn complete_text(
    backend: &dyn Backend,
    req: &BackendRequest,
    op_id: u32,
) -> Result<String, RefineError> {
    let wrap = |source| RefineError::Backend { op_id, source };
    let mut resp = backend.complete(req).map_err(wrap)?;
    let mut parsed: TextResponse = resp.parse_as().map_err(wrap)?;
    if parsed.text.trim().is_empty() {
        // One retry; a blank answer twice is a hard failure.
        resp = backend.complete(req).map_err(wrap)?;
        parsed = resp.parse_as().map_err(wrap)?;
        if parsed.text.trim().is_empty() {
            return Err(RefineError::EmptyGeneration { op_id });
        }
    }
    Ok(parsed.text)
}

/// Applies `ops` (in op-id order) to a document.
///
/// Elements not targeted by any op are byte-identical in the output — a
/// hard guard checked through [`diff_ir`], not a best-effort promise.
pub fn apply_ops(
    ir: &DocumentIR,
    sem: &SemanticRep,
    ops: &[AtomicOp],
    backend: &dyn Backend,
) -> Result<RefinementResult, RefineError> {
    let violations = validate_ops(ops, ir, sem);
    if !violations.is_empty() {
        return Err(RefineError::InvalidOps(violations));
    }
    let mut ordered: Vec<&AtomicOp> = ops.iter().collect();
    ordered.sort_by_key(|op| op.op_id);

    let mut new_ir = ir.clone();
    let mut new_sem = sem.clone();
    let mut summaries = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut created: BTreeSet<ElementId> = BTreeSet::new();

    for op in ordered {
        match &op.action {
            OpAction::RewriteText { .. }
            | OpAction::FormatUnify { .. }
            | OpAction::UpdateCaption { .. }
            | OpAction::CrossModalFix { .. } => {
                let id = op.target_element().expect("validated element target");
                let ctx = rewrite_context(&new_ir, &new_sem, op);
                let element = new_ir
                    .element(id)
                    .expect("validated element exists")
                    .clone();
                let text = complete_text(backend, &rewrite_request(op, &element, &ctx), op.op_id)?;
                let (updated, warning) = reflow(&new_ir, id, &text);
                new_ir = updated;
                warnings.extend(warning);
            }
            OpAction::InsertText { placement, .. } => {
                let anchor_id = op.target_element().expect("validated anchor").clone();
                let ctx = rewrite_context(&new_ir, &new_sem, op);
                let anchor = new_ir
                    .element(&anchor_id)
                    .expect("validated anchor exists")
                    .clone();
                let text = complete_text(backend, &rewrite_request(op, &anchor, &ctx), op.op_id)?;
                let id = insert_element(&mut new_ir, op.op_id, &anchor_id, *placement, text);
                created.insert(id);
            }
            OpAction::DeleteText => {
                let id = op.target_element().expect("validated element target");
                delete_element(&mut new_ir, &mut new_sem, id);
            }
            OpAction::CorrectTableCell { value } => {
                let OpTarget::TableCell { table, row, col } = &op.target else {
                    unreachable!("validated target shape");
                };
                let grid = new_sem.table_grids.entry(table.clone()).or_insert_with(|| {
                    let el = new_ir.element(table).expect("validated table exists");
                    TableGrid::from_text(&el.text).expect("validated grid availability")
                });
                grid.set_cell(*row, *col, value);
                let rendered = grid.to_text();
                let el = new_ir.element_mut(table).expect("validated table exists");
                // Raster-only tables keep an empty text body; the grid in the
                // semantic representation is their source of truth.
                if !el.text.is_empty() {
                    el.text = rendered;
                }
            }
            OpAction::ReorderElements { order } => {
                reorder_reading(&mut new_ir.reading_order, order);
            }
            OpAction::GenerateSummary {
                constraints,
                guidance,
            } => {
                let scope = SummaryScope::from_target(&op.target)
                    .expect("validated summary scope");
                let text = generate_summary(
                    &new_ir,
                    &new_sem,
                    &scope,
                    constraints.as_ref(),
                    guidance.as_deref(),
                    backend,
                )
                .map_err(|e| match e {
                    SummaryError::Backend(source) => RefineError::Backend {
                        op_id: op.op_id,
                        source,
                    },
                    SummaryError::EmptyGeneration => {
                        RefineError::EmptyGeneration { op_id: op.op_id }
                    }
                })?;
                summaries.insert(op.op_id, text);
            }
        }
    }

    // Drop facts/entities sourced from elements whose content changed; they
    // describe text that no longer exists.
    let diff = diff_ir(ir, &new_ir);
    let stale: BTreeSet<&ElementId> = diff
        .changed_text
        .iter()
        .chain(&diff.removed)
        .collect();
    new_sem.facts.retain(|f| !stale.contains(&f.source));
    new_sem.entities.retain(|e| !stale.contains(&e.source));

    // Hard guard: nothing outside the target set may have changed.
    let mut allowed: BTreeSet<ElementId> = created.clone();
    for op in ops {
        if let Some(id) = op.target_element() {
            allowed.insert(id.clone());
        }
    }
    let out_of_bounds: BTreeSet<ElementId> = diff
        .all_ids()
        .into_iter()
        .filter(|id| !allowed.contains(id))
        .collect();
    if !out_of_bounds.is_empty() {
        return Err(RefineError::GuardViolation { ids: out_of_bounds });
    }

    Ok(RefinementResult {
        changed_ids: diff.all_ids(),
        new_ir,
        new_sem,
        summaries,
        warnings,
    })
}

/// Deterministic id for an element created by an insert op.
pub fn created_id(ir: &DocumentIR, op_id: u32) -> ElementId {
    let base = format!("ins{op_id}");
    if ir.element(&ElementId::new(base.clone())).is_none() {
        return ElementId::new(base);
    }
    let mut n = 2;
    loop {
        let candidate = ElementId::new(format!("{base}-{n}"));
        if ir.element(&candidate).is_none() {
            return candidate;
        }
        n += 1;
    }
}

fn insert_element(
    ir: &mut DocumentIR,
    op_id: u32,
    anchor_id: &ElementId,
    placement: Placement,
    text: String,
) -> ElementId {
    let id = created_id(ir, op_id);
    let anchor = ir.element(anchor_id).expect("validated anchor").clone();
    let page = ir.pages[anchor.bbox.page_index];

    let width = anchor.bbox.width().max(NOMINAL_GLYPH_WIDTH);
    let chars_per_line = (width / NOMINAL_GLYPH_WIDTH).floor().max(1.0) as usize;
    let lines = text.chars().count().div_ceil(chars_per_line).max(1);
    let height = (lines as f64 * NOMINAL_LINE_HEIGHT).min(page.height);

    let gap = 4.0;
    let y0 = match placement {
        Placement::After => anchor.bbox.y1 + gap,
        Placement::Before => anchor.bbox.y0 - gap - height,
    };
    let y0 = y0.clamp(0.0, (page.height - height).max(0.0));
    let bbox = crate::ir::BBox::new(
        anchor.bbox.page_index,
        anchor.bbox.x0,
        y0,
        anchor.bbox.x1,
        y0 + height,
    );

    ir.elements.push(Element {
        id: id.clone(),
        kind: ElementKind::Paragraph,
        bbox,
        text,
        heading_level: None,
        raster_ref: None,
    });
    let pos = ir
        .reading_order
        .iter()
        .position(|x| x == anchor_id)
        .expect("anchor ordered");
    let insert_at = match placement {
        Placement::After => pos + 1,
        Placement::Before => pos,
    };
    ir.reading_order.insert(insert_at, id.clone());
    // Same section as the anchor.
    if let Some(parent) = ir
        .hierarchy
        .iter()
        .find(|e| &e.child == anchor_id)
        .map(|e| e.parent.clone())
    {
        ir.hierarchy.push(crate::ir::HierarchyEdge {
            parent,
            child: id.clone(),
        });
    }
    id
}

fn delete_element(ir: &mut DocumentIR, sem: &mut SemanticRep, id: &ElementId) {
    let own_parent = ir
        .hierarchy
        .iter()
        .find(|e| &e.child == id)
        .map(|e| e.parent.clone());
    ir.elements.retain(|e| &e.id != id);
    ir.reading_order.retain(|x| x != id);
    // Orphaned children climb to the deleted element's parent.
    let mut reparented = Vec::new();
    ir.hierarchy.retain(|e| {
        if &e.parent == id {
            if let Some(parent) = &own_parent {
                reparented.push(crate::ir::HierarchyEdge {
                    parent: parent.clone(),
                    child: e.child.clone(),
                });
            }
            false
        } else {
            &e.child != id
        }
    });
    ir.hierarchy.extend(reparented);
    ir.associations
        .retain(|a| &a.caption != id && &a.target != id);
    sem.table_grids.remove(id);
    sem.figure_descs.remove(id);
    sem.section_digests.remove(id);
    sem.facts.retain(|f| &f.source != id);
    sem.entities.retain(|e| &e.source != id);
}

/// Rewrites the listed positions of `reading` so the listed ids appear in
/// the order given; all other positions are untouched.
fn reorder_reading(reading: &mut [ElementId], order: &[ElementId]) {
    let member: BTreeSet<&ElementId> = order.iter().collect();
    let positions: Vec<usize> = reading
        .iter()
        .enumerate()
        .filter(|(_, id)| member.contains(id))
        .map(|(i, _)| i)
        .collect();
    for (slot, id) in positions.into_iter().zip(order.iter()) {
        reading[slot] = id.clone();
    }
}

/// Replaces one element's text, keeping its bounding box fixed.
///
/// When the estimated rendered line count exceeds the box's capacity (at the
/// nominal glyph width and line height) the result carries an
/// [`OverflowWarning`] — neighbors are never moved to make text fit.
pub fn reflow(
    ir: &DocumentIR,
    id: &ElementId,
    new_text: &str,
) -> (DocumentIR, Option<OverflowWarning>) {
    let mut out = ir.clone();
    let Some(el) = out.element_mut(id) else {
        return (out, None);
    };
    if el.text == new_text {
        return (ir.clone(), None);
    }
    el.text = new_text.to_string();

    let chars_per_line = (el.bbox.width() / NOMINAL_GLYPH_WIDTH).floor().max(1.0) as usize;
    let lines_needed = new_text.chars().count().div_ceil(chars_per_line).max(1);
    let capacity = ((el.bbox.height() / NOMINAL_LINE_HEIGHT).floor() as usize).max(1);
    let warning = (lines_needed > capacity).then(|| OverflowWarning {
        element: id.clone(),
        lines_needed,
        capacity,
    });
    (out, warning)
}

/// Scope of a summary request.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryScope {
    Document,
    Section(ElementId),
}

impl SummaryScope {
    pub fn from_target(target: &OpTarget) -> Option<Self> {
        match target {
            OpTarget::Document => Some(SummaryScope::Document),
            OpTarget::Section { heading } => Some(SummaryScope::Section(heading.clone())),
            _ => None,
        }
    }
}

/// Summary failure (converted into [`RefineError`] by `apply_ops`).
#[derive(Debug, Error)]
pub enum SummaryError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("model returned empty summary text after one retry")]
    EmptyGeneration,
}

/// Builds the summary request from pre-gathered scope content.
pub fn summary_request(
    scope_label: &str,
    body: &str,
    constraints: Option<&InstructionConstraints>,
    guidance: Option<&str>,
) -> BackendRequest {
    let mut req = BackendRequest::new(StageTag::Sga, SchemaId::Summary).system(
        "Summarize the given material faithfully; do not introduce facts that \
         are not present. Respond with JSON: {\"text\": \"...\"}.",
    );
    req = req.text(format!("scope: {scope_label}"));
    if let Some(c) = constraints {
        req = req.text(format!(
            "constraints: max_length={:?} words, style={:?}",
            c.max_length, c.style
        ));
    }
    if let Some(g) = guidance {
        req = req.text(format!("corrective guidance: {g}"));
    }
    req.text(format!("material:\n{body}"))
}

/// Elements inside a summary scope: the whole document, or a heading plus
/// its hierarchy descendants.
pub fn scope_members(ir: &DocumentIR, scope: &SummaryScope) -> BTreeSet<ElementId> {
    match scope {
        SummaryScope::Document => ir.ids(),
        SummaryScope::Section(heading) => {
            let mut members = BTreeSet::from([heading.clone()]);
            let mut frontier = vec![heading.clone()];
            while let Some(current) = frontier.pop() {
                for edge in &ir.hierarchy {
                    if edge.parent == current && members.insert(edge.child.clone()) {
                        frontier.push(edge.child.clone());
                    }
                }
            }
            members
        }
    }
}

/// Generates summary text for a scope from its facts and section digests,
/// honoring the word-length constraint (truncation happens at a sentence
/// boundary, never mid-word).
pub fn generate_summary(
    ir: &DocumentIR,
    sem: &SemanticRep,
    scope: &SummaryScope,
    constraints: Option<&InstructionConstraints>,
    guidance: Option<&str>,
    backend: &dyn Backend,
) -> Result<String, SummaryError> {
    let members = scope_members(ir, scope);
    let mut body = String::new();
    for (heading, digest) in &sem.section_digests {
        if members.contains(heading) {
            body.push_str(&format!("digest: {digest}\n"));
        }
    }
    for fact in &sem.facts {
        if members.contains(&fact.source) {
            body.push_str(&format!(
                "fact: {} | {} | {}\n",
                fact.subject, fact.predicate, fact.object
            ));
        }
    }
    let label = match scope {
        SummaryScope::Document => "whole document".to_string(),
        SummaryScope::Section(id) => {
            let title = ir.element(id).map(|e| e.text.as_str()).unwrap_or("");
            format!("section {id} ({title})")
        }
    };

    let req = summary_request(&label, &body, constraints, guidance);
    let mut resp = backend.complete(&req)?;
    let mut parsed: TextResponse = resp.parse_as()?;
    if parsed.text.trim().is_empty() {
        resp = backend.complete(&req)?;
        parsed = resp.parse_as()?;
        if parsed.text.trim().is_empty() {
            return Err(SummaryError::EmptyGeneration);
        }
    }
    let mut text = parsed.text;
    if let Some(max_words) = constraints.and_then(|c| c.max_length) {
        text = trim_to_words(&text, max_words);
    }
    Ok(text)
}

/// Trims `text` to at most `max_words` words, cutting at the last sentence
/// boundary that fits; when not even the first sentence fits, cuts at a word
/// boundary instead. Never cuts mid-word.
pub fn trim_to_words(text: &str, max_words: usize) -> String {
    let total = text.split_whitespace().count();
    if total <= max_words {
        return text.to_string();
    }

    let sentences = split_sentences(text);
    let mut kept = String::new();
    let mut words = 0;
    for sentence in &sentences {
        let count = sentence.split_whitespace().count();
        if words + count > max_words {
            break;
        }
        if !kept.is_empty() {
            kept.push(' ');
        }
        kept.push_str(sentence.trim());
        words += count;
    }
    if !kept.is_empty() {
        return kept;
    }
    // The first sentence alone exceeds the limit: word-boundary cut.
    text.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') {
            let at_end = i + 1 == bytes.len();
            let followed_by_space = bytes.get(i + 1).is_some_and(|c| c.is_ascii_whitespace());
            if at_end || followed_by_space {
                out.push(text[start..=i].trim());
                start = i + 1;
            }
        }
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        out.push(text[start..].trim());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockScript};
    use crate::ir::{BBox, PageSize};
    use crate::semantics;

    fn element(id: &str, kind: ElementKind, text: &str, y: f64, h: f64) -> Element {
        Element {
            id: ElementId::from(id),
            kind,
            bbox: BBox::new(0, 72.0, y, 412.0, y + h),
            text: text.to_string(),
            heading_level: (kind == ElementKind::Heading).then_some(1),
            raster_ref: None,
        }
    }

    fn fixture() -> (DocumentIR, SemanticRep) {
        let elements = vec![
            element("p1", ElementKind::Paragraph, "First paragraph.", 72.0, 36.0),
            element("p2", ElementKind::Paragraph, "Second paragraph.", 120.0, 36.0),
            element(
                "t1",
                ElementKind::Table,
                "h1\th2\th3\th4\nr1a\tr1b\tr1c\tr1d\nr2a\tr2b\tr2c\tr2d",
                170.0,
                60.0,
            ),
        ];
        let reading_order = elements.iter().map(|e| e.id.clone()).collect();
        let ir = DocumentIR {
            pages: vec![PageSize::US_LETTER],
            elements,
            reading_order,
            hierarchy: vec![],
            associations: vec![],
        };
        let sem = semantics::structural(&ir);
        (ir, sem)
    }

    fn cra_echo(text: &str) -> MockBackend {
        let mut script = MockScript::new();
        script.set_default(StageTag::Cra, format!(r#"{{"text": "{text}"}}"#));
        MockBackend::new(script)
    }

    #[test]
    fn empty_op_list_is_identity() {
        let (ir, sem) = fixture();
        let backend = MockBackend::embedder_only();
        let result = apply_ops(&ir, &sem, &[], &backend).unwrap();
        assert!(result.new_ir.structurally_equal(&ir));
        assert!(result.changed_ids.is_empty());
        assert!(result.warnings.is_empty());
    }

    #[test]
    fn rewrite_applies_mock_text_and_marks_only_target() {
        let (ir, sem) = fixture();
        let ops = vec![AtomicOp {
            op_id: 1,
            target: OpTarget::Element { id: "p2".into() },
            action: OpAction::RewriteText {
                goal: "polish".into(),
            },
            rationale: String::new(),
        }];
        let result = apply_ops(&ir, &sem, &ops, &cra_echo("Polished text.")).unwrap();
        assert_eq!(
            result.new_ir.element(&"p2".into()).unwrap().text,
            "Polished text."
        );
        assert_eq!(result.changed_ids, BTreeSet::from(["p2".into()]));
        // Bbox untouched.
        assert_eq!(
            result.new_ir.element(&"p2".into()).unwrap().bbox,
            ir.element(&"p2".into()).unwrap().bbox
        );
    }

    #[test]
    fn correct_table_cell_touches_exactly_one_cell() {
        let (ir, sem) = fixture();
        let ops = vec![AtomicOp {
            op_id: 1,
            target: OpTarget::TableCell {
                table: "t1".into(),
                row: 2,
                col: 3,
            },
            action: OpAction::CorrectTableCell {
                value: "0.85".into(),
            },
            rationale: String::new(),
        }];
        let backend = MockBackend::embedder_only();
        let result = apply_ops(&ir, &sem, &ops, &backend).unwrap();
        let before = &sem.table_grids[&ElementId::from("t1")];
        let after = &result.new_sem.table_grids[&ElementId::from("t1")];

        // Oracle: cell-wise comparison of the grids.
        let mut differing = Vec::new();
        for r in 0..before.n_rows {
            for c in 0..before.n_cols {
                if before.cell(r, c) != after.cell(r, c) {
                    differing.push((r, c));
                }
            }
        }
        assert_eq!(differing, vec![(2, 3)]);
        assert_eq!(after.cell(2, 3), Some("0.85"));
        // The rendered table text changed with it.
        assert!(result
            .new_ir
            .element(&"t1".into())
            .unwrap()
            .text
            .contains("0.85"));
    }

    #[test]
    fn later_op_wins_on_the_same_element() {
        let (ir, sem) = fixture();
        let make = |op_id: u32, goal: &str| AtomicOp {
            op_id,
            target: OpTarget::Element { id: "p1".into() },
            action: OpAction::RewriteText { goal: goal.into() },
            rationale: String::new(),
        };
        let first = make(1, "first goal");
        let second = make(2, "second goal");

        // Different goals produce different requests, so both responses can
        // be scripted by digest. The second request sees the first rewrite's
        // text, which the test reproduces through the public builders.
        let mut script = MockScript::new();
        let ctx = rewrite_context(&ir, &sem, &first);
        let el = ir.element(&"p1".into()).unwrap().clone();
        script.insert_for(&rewrite_request(&first, &el, &ctx), r#"{"text": "After one."}"#);
        let mut mid = el.clone();
        mid.text = "After one.".into();
        script.insert_for(&rewrite_request(&second, &mid, &ctx), r#"{"text": "After two."}"#);

        let result = apply_ops(&ir, &sem, &[first, second], &MockBackend::new(script)).unwrap();
        assert_eq!(result.new_ir.element(&"p1".into()).unwrap().text, "After two.");
    }

    #[test]
    fn delete_and_insert_update_structure() {
        let (ir, sem) = fixture();
        let ops = vec![
            AtomicOp {
                op_id: 1,
                target: OpTarget::Element { id: "p1".into() },
                action: OpAction::DeleteText,
                rationale: String::new(),
            },
            AtomicOp {
                op_id: 2,
                target: OpTarget::Element { id: "p2".into() },
                action: OpAction::InsertText {
                    goal: "add a transition".into(),
                    placement: Placement::After,
                },
                rationale: String::new(),
            },
        ];
        let result = apply_ops(&ir, &sem, &ops, &cra_echo("A new paragraph.")).unwrap();
        assert!(result.new_ir.element(&"p1".into()).is_none());
        let inserted = result.new_ir.element(&"ins2".into()).unwrap();
        assert_eq!(inserted.text, "A new paragraph.");
        let order = &result.new_ir.reading_order;
        let p2_pos = order.iter().position(|i| i == &ElementId::from("p2")).unwrap();
        assert_eq!(order[p2_pos + 1], "ins2".into());
        assert!(crate::ir::validate_ir(&result.new_ir).is_empty());
        assert_eq!(
            result.changed_ids,
            BTreeSet::from(["p1".into(), "ins2".into()])
        );
    }

    #[test]
    fn reorder_swaps_reading_positions_only() {
        let (ir, sem) = fixture();
        let ops = vec![AtomicOp {
            op_id: 1,
            target: OpTarget::Document,
            action: OpAction::ReorderElements {
                order: vec!["p2".into(), "p1".into()],
            },
            rationale: String::new(),
        }];
        let backend = MockBackend::embedder_only();
        let result = apply_ops(&ir, &sem, &ops, &backend).unwrap();
        assert_eq!(
            result.new_ir.reading_order,
            vec!["p2".into(), "p1".into(), "t1".into()]
        );
        assert!(result.changed_ids.is_empty(), "no element content changed");
    }

    #[test]
    fn reflow_keeps_bbox_and_warns_on_overflow() {
        let (ir, _) = fixture();
        // p1: width 340 -> 68 chars/line; height 36 -> 3 lines capacity.
        let short = "Tiny.";
        let (updated, warning) = reflow(&ir, &"p1".into(), short);
        assert!(warning.is_none());
        assert_eq!(
            updated.element(&"p1".into()).unwrap().bbox,
            ir.element(&"p1".into()).unwrap().bbox
        );

        // Oracle: capacity formula applied by hand. chars_per_line =
        // floor(340/5) = 68, capacity = floor(36/12) = 3, so 68*3 = 204
        // chars fit; 3x that cannot.
        let long = "x".repeat(68 * 3 * 3);
        let (_, warning) = reflow(&ir, &"p1".into(), &long);
        let warning = warning.expect("overflow expected");
        assert_eq!(warning.element, "p1".into());
        assert_eq!(warning.capacity, 3);
        assert_eq!(warning.lines_needed, 9);
    }

    #[test]
    fn reflow_identical_text_is_a_no_op() {
        let (ir, _) = fixture();
        let (updated, warning) = reflow(&ir, &"p1".into(), "First paragraph.");
        assert!(warning.is_none());
        assert_eq!(updated, ir);
    }

    fn sga(text: &str) -> MockBackend {
        let mut script = MockScript::new();
        script.set_default(StageTag::Sga, format!(r#"{{"text": "{text}"}}"#));
        MockBackend::new(script)
    }

    #[test]
    fn summary_under_limit_is_verbatim() {
        let (ir, sem) = fixture();
        let text = generate_summary(
            &ir,
            &sem,
            &SummaryScope::Document,
            Some(&InstructionConstraints {
                max_length: Some(10),
                style: None,
            }),
            None,
            &sga("Key finding: A beats B."),
        )
        .unwrap();
        assert_eq!(text, "Key finding: A beats B.");
    }

    #[test]
    fn summary_trims_at_sentence_boundary() {
        let (ir, sem) = fixture();
        // 5 sentences x 10 words = 50 words.
        let sentence = "alpha beta gamma delta epsilon zeta eta theta iota kappa.";
        let fifty = [sentence; 5].join(" ");
        let text = generate_summary(
            &ir,
            &sem,
            &SummaryScope::Document,
            Some(&InstructionConstraints {
                max_length: Some(20),
                style: None,
            }),
            None,
            &sga(&fifty),
        )
        .unwrap();
        // Oracle: word count + boundary check on the fixture.
        assert!(text.split_whitespace().count() <= 20);
        assert!(text.ends_with('.'), "ends at a sentence boundary: {text:?}");
        assert_eq!(text, [sentence; 2].join(" "));
    }

    #[test]
    fn blank_summary_twice_is_empty_generation() {
        let (ir, sem) = fixture();
        let err = generate_summary(
            &ir,
            &sem,
            &SummaryScope::Document,
            None,
            None,
            &sga(""),
        )
        .unwrap_err();
        assert!(matches!(err, SummaryError::EmptyGeneration));
    }

    #[test]
    fn trim_falls_back_to_word_boundary() {
        let long = "one two three four five six seven eight nine ten eleven";
        assert_eq!(trim_to_words(long, 4), "one two three four");
    }

    #[test]
    fn result_changed_ids_match_diff_exactly() {
        let (ir, sem) = fixture();
        let ops = vec![AtomicOp {
            op_id: 1,
            target: OpTarget::Element { id: "p1".into() },
            action: OpAction::RewriteText { goal: "g".into() },
            rationale: String::new(),
        }];
        let result = apply_ops(&ir, &sem, &ops, &cra_echo("Changed.")).unwrap();
        assert_eq!(result.changed_ids, diff_ir(&ir, &result.new_ir).all_ids());
    }
}
