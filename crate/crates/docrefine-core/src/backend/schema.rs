//! Structured-output schema registry.
//!
//! Every stage declares the shape it expects from the model by a
//! [`SchemaId`]; responses are validated here before any stage consumes
//! them. The typed response structs are the single source of truth for
//! those shapes.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ir::ElementId;
use crate::plan::{OpAction, OpTarget};

/// Identifier of an expected structured-output shape. The set is closed:
/// free-form responses are not accepted anywhere in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    /// Instruction decomposition: a list of atomic operations.
    OpPlan,
    /// A rewritten or freshly generated text fragment.
    Rewrite,
    /// Table content as a row-major grid.
    TableGrid,
    /// Figure description with axis labels and legend entries.
    FigureDesc,
    /// Per-section facts, entities, and a short digest.
    SectionFacts,
    /// Generated summary text.
    Summary,
    /// Yes/no judgment with a reason.
    Judgment,
    /// Figure-or-table classification of a raster region.
    RegionLabel,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::OpPlan => "op_plan",
            SchemaId::Rewrite => "rewrite",
            SchemaId::TableGrid => "table_grid",
            SchemaId::FigureDesc => "figure_desc",
            SchemaId::SectionFacts => "section_facts",
            SchemaId::Summary => "summary",
            SchemaId::Judgment => "judgment",
            SchemaId::RegionLabel => "region_label",
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One operation as planned by the model, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedOp {
    pub target: OpTarget,
    #[serde(flatten)]
    pub action: OpAction,
    #[serde(default)]
    pub rationale: String,
}

/// One ambiguity the model surfaced while decomposing an instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAmbiguity {
    /// The instruction span that was ambiguous.
    pub span: String,
    /// Candidate interpretations, most plausible first.
    pub candidates: Vec<String>,
    #[serde(default)]
    pub reason: String,
}

/// `op_plan` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub ops: Vec<PlannedOp>,
    #[serde(default)]
    pub ambiguities: Vec<PlannedAmbiguity>,
}

/// `rewrite` / `summary` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

/// `table_grid` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResponse {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major cells, length `n_rows * n_cols`.
    pub cells: Vec<String>,
    #[serde(default)]
    pub header_rows: usize,
}

/// `figure_desc` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureDescResponse {
    pub description: String,
    #[serde(default)]
    pub axis_labels: Vec<String>,
    #[serde(default)]
    pub legend_entries: Vec<String>,
}

/// One extracted fact; `source` indexes the element list sent in the prompt,
/// which makes invented provenance impossible to express.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactItem {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub source: usize,
}

/// One recognized entity, `source`-indexed like [`FactItem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityItem {
    pub surface: String,
    pub category: String,
    pub source: usize,
}

/// `section_facts` response body.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionFactsResponse {
    #[serde(default)]
    pub digest: String,
    #[serde(default)]
    pub facts: Vec<FactItem>,
    #[serde(default)]
    pub entities: Vec<EntityItem>,
}

/// `judgment` verdict value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgmentVerdict {
    Yes,
    No,
}

/// `judgment` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentResponse {
    pub verdict: JudgmentVerdict,
    #[serde(default)]
    pub reason: String,
}

/// Raster region classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Figure,
    Table,
}

/// `region_label` response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLabelResponse {
    pub kind: RegionKind,
}

/// Validates `value` against the named schema. Returns a human-readable
/// description of the first mismatch.
pub fn validate(schema: SchemaId, value: &Value) -> Result<(), String> {
    fn typed<T: serde::de::DeserializeOwned>(value: &Value) -> Result<T, String> {
        serde_json::from_value(value.clone()).map_err(|e| e.to_string())
    }
    match schema {
        SchemaId::OpPlan => {
            typed::<PlanResponse>(value)?;
        }
        SchemaId::Rewrite | SchemaId::Summary => {
            typed::<TextResponse>(value)?;
        }
        SchemaId::TableGrid => {
            let grid: GridResponse = typed(value)?;
            if grid.n_rows == 0 || grid.n_cols == 0 {
                return Err("grid dimensions must be positive".into());
            }
            if grid.cells.len() != grid.n_rows * grid.n_cols {
                return Err(format!(
                    "cell count {} does not match {}x{}",
                    grid.cells.len(),
                    grid.n_rows,
                    grid.n_cols
                ));
            }
            if grid.header_rows > grid.n_rows {
                return Err(format!(
                    "header_rows {} exceeds n_rows {}",
                    grid.header_rows, grid.n_rows
                ));
            }
        }
        SchemaId::FigureDesc => {
            let desc: FigureDescResponse = typed(value)?;
            if desc.description.trim().is_empty() {
                return Err("description must be non-empty".into());
            }
        }
        SchemaId::SectionFacts => {
            typed::<SectionFactsResponse>(value)?;
        }
        SchemaId::Judgment => {
            typed::<JudgmentResponse>(value)?;
        }
        SchemaId::RegionLabel => {
            typed::<RegionLabelResponse>(value)?;
        }
    }
    Ok(())
}

/// Convenience used by stage prompts: the element id a planned op touches,
/// if it names one directly.
pub fn planned_target_id(op: &PlannedOp) -> Option<&ElementId> {
    match &op.target {
        OpTarget::Element { id } => Some(id),
        OpTarget::TableCell { table, .. } => Some(table),
        OpTarget::Section { heading } => Some(heading),
        OpTarget::Document => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_cell_count_must_match_dimensions() {
        let bad = json!({"n_rows": 2, "n_cols": 2, "cells": ["a", "b", "c"]});
        assert!(validate(SchemaId::TableGrid, &bad).is_err());
        let good = json!({"n_rows": 2, "n_cols": 2, "cells": ["a", "b", "c", "d"]});
        assert!(validate(SchemaId::TableGrid, &good).is_ok());
    }

    #[test]
    fn figure_description_must_be_non_empty() {
        assert!(validate(SchemaId::FigureDesc, &json!({"description": "  "})).is_err());
        assert!(validate(SchemaId::FigureDesc, &json!({"description": "bar chart"})).is_ok());
    }

    #[test]
    fn judgment_requires_yes_or_no() {
        assert!(validate(SchemaId::Judgment, &json!({"verdict": "maybe"})).is_err());
        assert!(validate(SchemaId::Judgment, &json!({"verdict": "yes"})).is_ok());
    }

    #[test]
    fn op_plan_accepts_empty_list() {
        assert!(validate(SchemaId::OpPlan, &json!({"ops": []})).is_ok());
    }
}
