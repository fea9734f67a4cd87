//! Instruction decomposition.
//!
//! Turns a natural-language instruction into a validated sequence of
//! [`AtomicOp`]s — the only currency the refinement engine accepts. The op
//! kind set is closed so every kind has a per-kind verifier downstream;
//! free-form actions would be unverifiable. Ambiguities the model surfaces
//! are resolved deterministically (first candidate) and recorded, never
//! silently interpreted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::schema::{PlanResponse, PlannedOp};
use crate::backend::{Backend, BackendError, BackendRequest, SchemaId, StageTag};
use crate::ir::{DocumentIR, ElementId, ElementKind, Violation};
use crate::semantics::{SemanticRep, TableGrid};

/// Length/style constraints attached to an instruction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionConstraints {
    /// Maximum output length in words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    /// Style tag, e.g. "concise" or "formal".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
}

/// A user instruction. `text` must be non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<InstructionConstraints>,
}

impl Instruction {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            constraints: None,
        }
    }

    pub fn with_constraints(mut self, constraints: InstructionConstraints) -> Self {
        self.constraints = Some(constraints);
        self
    }
}

/// Where an op applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpTarget {
    Element { id: ElementId },
    TableCell { table: ElementId, row: usize, col: usize },
    Section { heading: ElementId },
    Document,
}

/// Placement of inserted content relative to its anchor element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Before,
    After,
}

/// Kind-specific payload of an op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum OpAction {
    /// Rewrite the target element's text toward `goal`.
    RewriteText { goal: String },
    /// Generate a new element next to the anchor target.
    InsertText { goal: String, placement: Placement },
    /// Remove the target element.
    DeleteText,
    /// Set one table cell to `value`.
    CorrectTableCell { value: String },
    /// Rewrite a caption toward `goal`; the result must mention every
    /// required key.
    UpdateCaption {
        goal: String,
        #[serde(default)]
        required_keys: Vec<String>,
    },
    /// Produce a summary of the target scope; stored in the result's
    /// summary map, the document itself is untouched.
    GenerateSummary {
        #[serde(default)]
        constraints: Option<InstructionConstraints>,
        /// Corrective guidance from a previous verification round.
        #[serde(default)]
        guidance: Option<String>,
    },
    /// Permute the listed elements within the reading order.
    ReorderElements { order: Vec<ElementId> },
    /// Rewrite the target to match a formatting/style convention.
    FormatUnify { style: String },
    /// Rewrite the target text so it agrees with the named figure,
    /// grounded on the figure's extracted description.
    CrossModalFix { goal: String, figure: ElementId },
}

/// Discriminant of [`OpAction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    RewriteText,
    InsertText,
    DeleteText,
    CorrectTableCell,
    UpdateCaption,
    GenerateSummary,
    ReorderElements,
    FormatUnify,
    CrossModalFix,
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

/// One executable edit or generation action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicOp {
    /// 1-based sequence index; application order.
    pub op_id: u32,
    pub target: OpTarget,
    #[serde(flatten)]
    pub action: OpAction,
    #[serde(default)]
    pub rationale: String,
}

impl AtomicOp {
    pub fn kind(&self) -> OpKind {
        match self.action {
            OpAction::RewriteText { .. } => OpKind::RewriteText,
            OpAction::InsertText { .. } => OpKind::InsertText,
            OpAction::DeleteText => OpKind::DeleteText,
            OpAction::CorrectTableCell { .. } => OpKind::CorrectTableCell,
            OpAction::UpdateCaption { .. } => OpKind::UpdateCaption,
            OpAction::GenerateSummary { .. } => OpKind::GenerateSummary,
            OpAction::ReorderElements { .. } => OpKind::ReorderElements,
            OpAction::FormatUnify { .. } => OpKind::FormatUnify,
            OpAction::CrossModalFix { .. } => OpKind::CrossModalFix,
        }
    }

    /// The element id this op touches, when it names one directly.
    pub fn target_element(&self) -> Option<&ElementId> {
        match &self.target {
            OpTarget::Element { id } => Some(id),
            OpTarget::TableCell { table, .. } => Some(table),
            OpTarget::Section { heading } => Some(heading),
            OpTarget::Document => None,
        }
    }

    /// The textual intent of the op, used as the embedding anchor when
    /// scoring semantic consistency.
    pub fn goal_text(&self) -> Option<&str> {
        match &self.action {
            OpAction::RewriteText { goal }
            | OpAction::InsertText { goal, .. }
            | OpAction::UpdateCaption { goal, .. }
            | OpAction::CrossModalFix { goal, .. } => Some(goal),
            OpAction::CorrectTableCell { value } => Some(value),
            OpAction::FormatUnify { style } => Some(style),
            OpAction::GenerateSummary { .. }
            | OpAction::DeleteText
            | OpAction::ReorderElements { .. } => None,
        }
    }

    /// Whether applying this op mutates the document IR (as opposed to
    /// producing side output such as a summary).
    pub fn mutates_ir(&self) -> bool {
        !matches!(self.action, OpAction::GenerateSummary { .. })
    }
}

/// A recorded ambiguity resolution: which reading was chosen and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityNote {
    pub span: String,
    pub candidates: Vec<String>,
    /// Index of the interpretation used. Policy: always the first.
    pub chosen: usize,
    pub reason: String,
}

/// Decomposition failure.
#[derive(Debug, Error)]
pub enum PlanError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("op {op_id} targets unknown element {id}")]
    UnresolvableTarget { op_id: u32, id: ElementId },
    #[error("decomposition failed validation: {0:?}")]
    InvalidPlan(Vec<Violation>),
    #[error("ambiguity for {span:?} carries no candidate interpretations")]
    InvalidAmbiguity { span: String },
}

/// Compact document outline sent to the model: one line per element in
/// reading order with id, kind, heading level, and a text prefix.
pub fn document_outline(ir: &DocumentIR) -> String {
    let mut out = String::new();
    for id in &ir.reading_order {
        let Some(el) = ir.element(id) else { continue };
        let prefix: String = el.text.chars().take(60).collect();
        let level = el
            .heading_level
            .map_or(String::new(), |l| format!(" level={l}"));
        out.push_str(&format!("{}\t{}{}\t{}\n", el.id, el.kind, level, prefix));
    }
    out
}

/// Builds the decomposition request for an instruction over a document.
pub fn decompose_request(instruction: &Instruction, ir: &DocumentIR) -> BackendRequest {
    let mut req = BackendRequest::new(StageTag::Ida, SchemaId::OpPlan).system(
        "Decompose the user instruction into atomic document operations. Think \
         step by step: locate the affected elements in the outline, then emit one \
         operation per atomic change. Allowed kinds: RewriteText, InsertText, \
         DeleteText, CorrectTableCell, UpdateCaption, GenerateSummary, \
         ReorderElements, FormatUnify, CrossModalFix. Targets must use element ids \
         from the outline. If the instruction is ambiguous, list candidate \
         interpretations under `ambiguities`. Respond with JSON: \
         {\"ops\": [{\"kind\", \"target\", \"payload\", \"rationale\"}], \"ambiguities\": []}.",
    );
    req = req.text(format!("instruction: {}", instruction.text));
    if let Some(constraints) = &instruction.constraints {
        req = req.text(format!(
            "constraints: max_length={:?} style={:?}",
            constraints.max_length, constraints.style
        ));
    }
    req.text(format!("document outline:\n{}", document_outline(ir)))
}

/// Decomposes an instruction into validated atomic operations.
///
/// The backend is called once under the op-plan schema; its output is
/// re-validated with [`validate_ops`] and rejected loudly on any violation.
/// Op ids are assigned 1..k in order. Every surfaced ambiguity becomes an
/// [`AmbiguityNote`] resolved to the first candidate.
pub fn decompose(
    instruction: &Instruction,
    sem: &SemanticRep,
    ir: &DocumentIR,
    backend: &dyn Backend,
) -> Result<(Vec<AtomicOp>, Vec<AmbiguityNote>), PlanError> {
    if instruction.text.trim().is_empty() {
        return Err(PlanError::EmptyInstruction);
    }
    let resp = backend.complete(&decompose_request(instruction, ir))?;
    let parsed: PlanResponse = resp.parse_as()?;

    let ops: Vec<AtomicOp> = parsed
        .ops
        .into_iter()
        .enumerate()
        .map(|(i, p): (usize, PlannedOp)| AtomicOp {
            op_id: i as u32 + 1,
            target: p.target,
            action: p.action,
            rationale: p.rationale,
        })
        .collect();

    let mut notes = Vec::new();
    for amb in parsed.ambiguities {
        if amb.candidates.is_empty() {
            return Err(PlanError::InvalidAmbiguity { span: amb.span });
        }
        notes.push(AmbiguityNote {
            span: amb.span,
            candidates: amb.candidates,
            chosen: 0,
            reason: if amb.reason.is_empty() {
                "first interpretation chosen by policy".to_string()
            } else {
                amb.reason
            },
        });
    }

    // Unresolvable targets get their dedicated error before full validation.
    let known = ir.ids();
    for op in &ops {
        if let Some(id) = op.target_element() {
            if !known.contains(id) {
                return Err(PlanError::UnresolvableTarget {
                    op_id: op.op_id,
                    id: id.clone(),
                });
            }
        }
    }
    let violations = validate_ops(&ops, ir, sem);
    if !violations.is_empty() {
        return Err(PlanError::InvalidPlan(violations));
    }
    Ok((ops, notes))
}

fn violation(op: &AtomicOp, rule: &str, message: String) -> Violation {
    Violation {
        element: op.target_element().cloned(),
        rule: rule.to_string(),
        message: format!("op {}: {}", op.op_id, message),
    }
}

/// Checks an op list against a document: target existence, table coordinate
/// ranges, kind/target compatibility, and delete/edit conflicts. Violations
/// are data, not failures.
pub fn validate_ops(ops: &[AtomicOp], ir: &DocumentIR, sem: &SemanticRep) -> Vec<Violation> {
    let mut out = Vec::new();

    for op in ops {
        // Existence.
        let target_el = match &op.target {
            OpTarget::Document => None,
            OpTarget::Element { id }
            | OpTarget::TableCell { table: id, .. }
            | OpTarget::Section { heading: id } => match ir.element(id) {
                Some(el) => Some(el),
                None => {
                    out.push(violation(
                        op,
                        "op.target.exists",
                        format!("unknown element {id}"),
                    ));
                    continue;
                }
            },
        };

        // Kind/target compatibility.
        match (&op.action, &op.target) {
            (OpAction::RewriteText { .. } | OpAction::FormatUnify { .. }, OpTarget::Element { .. }) => {
                let el = target_el.unwrap();
                if !el.kind.is_free_text() {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("{} cannot target a {} element", op.kind(), el.kind),
                    ));
                }
            }
            (OpAction::InsertText { .. }, OpTarget::Element { .. }) => {}
            (OpAction::DeleteText, OpTarget::Element { .. }) => {
                let el = target_el.unwrap();
                if !el.kind.is_textual() {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("DeleteText cannot target a {} element", el.kind),
                    ));
                }
            }
            (OpAction::CorrectTableCell { .. }, OpTarget::TableCell { table, row, col }) => {
                let el = target_el.unwrap();
                if el.kind != ElementKind::Table {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("CorrectTableCell targets a {} element", el.kind),
                    ));
                } else {
                    let grid = sem
                        .table_grids
                        .get(table)
                        .cloned()
                        .or_else(|| TableGrid::from_text(&el.text));
                    match grid {
                        None => out.push(violation(
                            op,
                            "op.table.grid_missing",
                            format!("no grid available for table {table}"),
                        )),
                        Some(grid) if *row >= grid.n_rows || *col >= grid.n_cols => {
                            out.push(violation(
                                op,
                                "op.table.cell_range",
                                format!(
                                    "cell ({row}, {col}) outside {}x{} grid",
                                    grid.n_rows, grid.n_cols
                                ),
                            ))
                        }
                        Some(_) => {}
                    }
                }
            }
            (OpAction::UpdateCaption { .. }, OpTarget::Element { .. }) => {
                let el = target_el.unwrap();
                if el.kind != ElementKind::Caption {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("UpdateCaption targets a {} element", el.kind),
                    ));
                }
            }
            (OpAction::GenerateSummary { .. }, OpTarget::Section { .. }) => {
                let el = target_el.unwrap();
                if el.kind != ElementKind::Heading {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("summary scope must be a heading, got {}", el.kind),
                    ));
                }
            }
            (OpAction::GenerateSummary { .. }, OpTarget::Document) => {}
            (OpAction::ReorderElements { order }, OpTarget::Document | OpTarget::Section { .. }) => {
                if order.is_empty() {
                    out.push(violation(op, "op.reorder.empty", "empty order list".into()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for id in order {
                    if ir.element(id).is_none() {
                        out.push(violation(
                            op,
                            "op.reorder.unknown_id",
                            format!("order names unknown element {id}"),
                        ));
                    }
                    if !seen.insert(id) {
                        out.push(violation(
                            op,
                            "op.reorder.duplicate",
                            format!("order repeats element {id}"),
                        ));
                    }
                }
            }
            (OpAction::CrossModalFix { figure, .. }, OpTarget::Element { .. }) => {
                let el = target_el.unwrap();
                if !el.kind.is_free_text() {
                    out.push(violation(
                        op,
                        "op.target.kind",
                        format!("CrossModalFix cannot target a {} element", el.kind),
                    ));
                }
                match ir.element(figure) {
                    None => out.push(violation(
                        op,
                        "op.figure.exists",
                        format!("unknown figure {figure}"),
                    )),
                    Some(f) if f.kind != ElementKind::Figure => out.push(violation(
                        op,
                        "op.figure.kind",
                        format!("{figure} is a {} element, not a figure", f.kind),
                    )),
                    Some(_) => {}
                }
            }
            _ => {
                out.push(violation(
                    op,
                    "op.target.shape",
                    format!("{} is incompatible with target {:?}", op.kind(), op.target),
                ));
            }
        }
    }

    // Delete conflicts: a deleted element may not be edited by any other op.
    for (i, a) in ops.iter().enumerate() {
        if a.kind() != OpKind::DeleteText {
            continue;
        }
        let Some(deleted) = a.target_element() else { continue };
        for b in ops.iter().skip(i + 1).chain(ops.iter().take(i)) {
            if b.op_id == a.op_id || !b.mutates_ir() {
                continue;
            }
            if b.target_element() == Some(deleted) {
                // Emit once per ordered pair (delete op first).
                out.push(violation(
                    a,
                    "op.conflict.delete",
                    format!(
                        "op {} deletes {deleted} while op {} edits it",
                        a.op_id, b.op_id
                    ),
                ));
            }
        }
    }

    out
}
