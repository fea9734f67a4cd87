//! Multimodal content understanding.
//!
//! Builds the provenance-linked semantic representation of a document from
//! its IR: structured table grids, figure descriptions, and per-section
//! facts/entities. Fact provenance is expressed by the model as an index
//! into the element list each request carries, so invented element ids are
//! unrepresentable; out-of-range indices are rejected loudly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::schema::{
    FigureDescResponse, GridResponse, SectionFactsResponse,
};
use crate::backend::{Backend, BackendError, BackendRequest, SchemaId, StageTag};
use crate::ir::{DocumentIR, Element, ElementId, ElementKind};

/// Structured table content, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major cells, length `n_rows * n_cols`.
    pub cells: Vec<String>,
    pub header_rows: usize,
}

impl TableGrid {
    pub fn new(n_rows: usize, n_cols: usize, cells: Vec<String>, header_rows: usize) -> Self {
        assert!(n_rows > 0 && n_cols > 0, "grid dimensions must be positive");
        assert_eq!(cells.len(), n_rows * n_cols, "cell count mismatch");
        assert!(header_rows <= n_rows, "header_rows exceeds n_rows");
        Self {
            n_rows,
            n_cols,
            cells,
            header_rows,
        }
    }

    /// Structural parse of tab/newline-delimited text. Rows split on
    /// newlines, cells on tabs; ragged rows are padded with empty strings to
    /// the widest row. Returns `None` for empty text.
    pub fn from_text(text: &str) -> Option<Self> {
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        if trimmed.is_empty() {
            return None;
        }
        let rows: Vec<Vec<&str>> = trimmed.split('\n').map(|r| r.split('\t').collect()).collect();
        let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut cells = Vec::with_capacity(rows.len() * n_cols);
        for row in &rows {
            for i in 0..n_cols {
                cells.push(row.get(i).copied().unwrap_or("").to_string());
            }
        }
        Some(Self::new(rows.len(), n_cols, cells, 0))
    }

    /// Renders the grid back to tab/newline-delimited text, the inverse of
    /// [`TableGrid::from_text`] for sanitized cells.
    pub fn to_text(&self) -> String {
        self.cells
            .chunks(self.n_cols)
            .map(|row| row.join("\t"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        (row < self.n_rows && col < self.n_cols)
            .then(|| self.cells[row * self.n_cols + col].as_str())
    }

    /// Writes a cell; tabs and newlines in the value are flattened to spaces
    /// so the text rendering stays parseable.
    pub fn set_cell(&mut self, row: usize, col: usize, value: &str) -> bool {
        if row >= self.n_rows || col >= self.n_cols {
            return false;
        }
        self.cells[row * self.n_cols + col] =
            value.replace(['\t', '\n'], " ");
        true
    }
}

/// Figure interpretation extracted by the vision pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureDesc {
    pub description: String,
    pub axis_labels: Vec<String>,
    pub legend_entries: Vec<String>,
}

/// One (subject, predicate, object) fact with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub source: ElementId,
}

/// One recognized entity with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub category: String,
    pub source: ElementId,
}

/// Provenance-linked semantic representation of one document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticRep {
    pub facts: Vec<Fact>,
    pub entities: Vec<Entity>,
    pub table_grids: BTreeMap<ElementId, TableGrid>,
    pub figure_descs: BTreeMap<ElementId, FigureDesc>,
    pub section_digests: BTreeMap<ElementId, String>,
}

impl SemanticRep {
    /// Checks the representation's invariants against its originating IR.
    /// Returns human-readable problems; empty means consistent.
    pub fn consistency_errors(&self, ir: &DocumentIR) -> Vec<String> {
        let mut out = Vec::new();
        let ids = ir.ids();
        for fact in &self.facts {
            if !ids.contains(&fact.source) {
                out.push(format!("fact sourced from unknown element {}", fact.source));
            }
        }
        for entity in &self.entities {
            if !ids.contains(&entity.source) {
                out.push(format!(
                    "entity sourced from unknown element {}",
                    entity.source
                ));
            }
        }
        for (id, _) in &self.table_grids {
            match ir.element(id) {
                Some(el) if el.kind == ElementKind::Table => {}
                Some(el) => out.push(format!("grid keyed by {} element {id}", el.kind)),
                None => out.push(format!("grid keyed by unknown element {id}")),
            }
        }
        for (id, _) in &self.figure_descs {
            match ir.element(id) {
                Some(el) if el.kind == ElementKind::Figure => {}
                Some(el) => out.push(format!("figure desc keyed by {} element {id}", el.kind)),
                None => out.push(format!("figure desc keyed by unknown element {id}")),
            }
        }
        for (id, _) in &self.section_digests {
            if !ids.contains(id) {
                out.push(format!("section digest keyed by unknown element {id}"));
            }
        }
        out
    }
}

/// Understanding failure, tagged with the element being processed.
#[derive(Debug, Error)]
pub enum UnderstandError {
    #[error("backend failure at element {element}: {source}")]
    Backend {
        element: ElementId,
        #[source]
        source: BackendError,
    },
}

fn backend_err(element: &ElementId) -> impl FnOnce(BackendError) -> UnderstandError + '_ {
    move |source| UnderstandError::Backend {
        element: element.clone(),
        source,
    }
}

/// Builds the grid-extraction request for a table without text content.
pub fn table_grid_request(el: &Element) -> BackendRequest {
    let mut req = BackendRequest::new(StageTag::Mcu, SchemaId::TableGrid)
        .system(
            "Extract the table's underlying data content as a row-major grid. \
             Respond with JSON: {\"n_rows\", \"n_cols\", \"cells\", \"header_rows\"}.",
        )
        .text(format!("table element {} on page {}", el.id, el.bbox.page_index));
    if let Some(raster) = &el.raster_ref {
        req = req.image(raster.clone());
    }
    req
}

/// Builds the figure-description request.
pub fn figure_desc_request(el: &Element, caption_text: Option<&str>) -> BackendRequest {
    let mut req = BackendRequest::new(StageTag::Mcu, SchemaId::FigureDesc).system(
        "Describe the figure: what it shows, its axis labels and legend entries. \
         Respond with JSON: {\"description\", \"axis_labels\", \"legend_entries\"}.",
    );
    req = req.text(format!("figure element {} on page {}", el.id, el.bbox.page_index));
    if let Some(caption) = caption_text {
        req = req.text(format!("caption: {caption}"));
    }
    if let Some(raster) = &el.raster_ref {
        req = req.image(raster.clone());
    }
    req
}

/// Builds the per-section fact/entity extraction request. `members` pairs
/// each element with the index the model must cite as provenance.
pub fn section_facts_request(section_label: &str, members: &[(usize, &Element)]) -> BackendRequest {
    let mut listing = String::new();
    for (index, el) in members {
        listing.push_str(&format!("[{index}] {} {}: {}\n", el.kind, el.id, el.text));
    }
    BackendRequest::new(StageTag::Mcu, SchemaId::SectionFacts)
        .system(
            "Extract key facts as (subject, predicate, object) triplets and named \
             entities from the section. Cite the bracketed element index as `source` \
             for each. Also produce a one-sentence `digest` of the section. \
             Respond with JSON: {\"digest\", \"facts\", \"entities\"}.",
        )
        .text(format!("section: {section_label}"))
        .text(listing)
}

/// Builds the semantic representation of a valid document.
///
/// Every table gets a grid (structural parse when its text is present,
/// otherwise one backend vision call), every figure a description (backend),
/// and facts/entities are extracted per section in reading order. With a
/// fixed mock script the result is byte-deterministic.
pub fn understand(ir: &DocumentIR, backend: &dyn Backend) -> Result<SemanticRep, UnderstandError> {
    let mut sem = SemanticRep::default();
    let by_id: BTreeMap<&ElementId, &Element> = ir.elements.iter().map(|e| (&e.id, e)).collect();
    let ordered: Vec<&Element> = ir
        .reading_order
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();

    // Caption text lookup for figure grounding.
    let caption_of: BTreeMap<&ElementId, &str> = ir
        .associations
        .iter()
        .filter_map(|a| {
            ir.element(&a.caption)
                .map(|c| (&a.target, c.text.as_str()))
        })
        .collect();

    for el in &ordered {
        match el.kind {
            ElementKind::Table => {
                let grid = table_to_grid(el, backend)?;
                sem.table_grids.insert(el.id.clone(), grid);
            }
            ElementKind::Figure => {
                let req = figure_desc_request(el, caption_of.get(&el.id).copied());
                let resp = backend.complete(&req).map_err(backend_err(&el.id))?;
                let desc: FigureDescResponse = resp.parse_as().map_err(backend_err(&el.id))?;
                sem.figure_descs.insert(
                    el.id.clone(),
                    FigureDesc {
                        description: desc.description,
                        axis_labels: desc.axis_labels,
                        legend_entries: desc.legend_entries,
                    },
                );
            }
            _ => {}
        }
    }

    // Sections: a heading starts a section; elements before the first
    // heading form an unlabeled preamble.
    let mut sections: Vec<(Option<&Element>, Vec<&Element>)> = vec![(None, Vec::new())];
    for el in &ordered {
        if el.kind == ElementKind::Heading {
            sections.push((Some(el), Vec::new()));
        } else {
            sections.last_mut().unwrap().1.push(el);
        }
    }

    for (heading, members) in &sections {
        let textual: Vec<(usize, &Element)> = heading
            .iter()
            .copied()
            .chain(members.iter().copied())
            .filter(|e| e.kind.is_textual() && !e.text.is_empty())
            .enumerate()
            .collect();
        if textual.is_empty() {
            continue;
        }
        let label = heading.map_or("(preamble)".to_string(), |h| h.text.clone());
        let anchor = textual[0].1.id.clone();
        let req = section_facts_request(&label, &textual);
        let resp = backend.complete(&req).map_err(backend_err(&anchor))?;
        let parsed: SectionFactsResponse = resp.parse_as().map_err(backend_err(&anchor))?;

        let resolve = |index: usize| -> Result<ElementId, UnderstandError> {
            textual
                .iter()
                .find(|(i, _)| *i == index)
                .map(|(_, el)| el.id.clone())
                .ok_or_else(|| UnderstandError::Backend {
                    element: anchor.clone(),
                    source: BackendError::Schema {
                        schema: SchemaId::SectionFacts,
                        message: format!(
                            "source index {index} out of range ({} elements listed)",
                            textual.len()
                        ),
                        raw_text: resp.raw_text.clone(),
                    },
                })
        };
        for fact in parsed.facts {
            sem.facts.push(Fact {
                subject: fact.subject,
                predicate: fact.predicate,
                object: fact.object,
                source: resolve(fact.source)?,
            });
        }
        for entity in parsed.entities {
            sem.entities.push(Entity {
                surface: entity.surface,
                category: entity.category,
                source: resolve(entity.source)?,
            });
        }
        if let Some(h) = heading {
            if !parsed.digest.trim().is_empty() {
                sem.section_digests.insert(h.id.clone(), parsed.digest);
            }
        }
    }

    debug_assert!(sem.consistency_errors(ir).is_empty());
    Ok(sem)
}

/// Converts one table element to a grid: structural parse when text is
/// present, otherwise a backend vision call.
pub fn table_to_grid(el: &Element, backend: &dyn Backend) -> Result<TableGrid, UnderstandError> {
    debug_assert_eq!(el.kind, ElementKind::Table);
    if let Some(grid) = TableGrid::from_text(&el.text) {
        return Ok(grid);
    }
    let resp = backend
        .complete(&table_grid_request(el))
        .map_err(backend_err(&el.id))?;
    let grid: GridResponse = resp.parse_as().map_err(backend_err(&el.id))?;
    Ok(TableGrid::new(
        grid.n_rows,
        grid.n_cols,
        grid.cells,
        grid.header_rows,
    ))
}

/// Structural-only understanding: table grids parsed from text, nothing
/// else. Pure; used where no backend is available (e.g. standalone verify).
pub fn structural(ir: &DocumentIR) -> SemanticRep {
    let mut sem = SemanticRep::default();
    for el in &ir.elements {
        if el.kind == ElementKind::Table {
            if let Some(grid) = TableGrid::from_text(&el.text) {
                sem.table_grids.insert(el.id.clone(), grid);
            }
        }
    }
    sem
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockScript};
    use crate::ir::{BBox, PageSize};

    fn element(id: &str, kind: ElementKind, text: &str) -> Element {
        Element {
            id: ElementId::from(id),
            kind,
            bbox: BBox::new(0, 72.0, 72.0, 300.0, 120.0),
            text: text.to_string(),
            heading_level: (kind == ElementKind::Heading).then_some(1),
            raster_ref: None,
        }
    }

    fn doc(elements: Vec<Element>) -> DocumentIR {
        let reading_order = elements.iter().map(|e| e.id.clone()).collect();
        DocumentIR {
            pages: vec![PageSize::US_LETTER],
            elements,
            reading_order,
            hierarchy: vec![],
            associations: vec![],
        }
    }

    #[test]
    fn tab_newline_text_parses_structurally() {
        let grid = TableGrid::from_text("a\tb\nc\td").unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (2, 2));
        assert_eq!(grid.cells, ["a", "b", "c", "d"]);
    }

    #[test]
    fn ragged_rows_pad_to_widest() {
        // Oracle: the documented padding rule applied by hand —
        // rows ["a","b"] and ["c"], widest = 2, so the grid is
        // [a, b, c, ""] with 2x2 dimensions.
        let grid = TableGrid::from_text("a\tb\nc").unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (2, 2));
        assert_eq!(grid.cells, ["a", "b", "c", ""]);
    }

    #[test]
    fn grid_text_round_trips() {
        let grid = TableGrid::from_text("a\tb\nc\td").unwrap();
        assert_eq!(TableGrid::from_text(&grid.to_text()).unwrap(), grid);
    }

    #[test]
    fn textual_table_never_calls_the_backend() {
        let el = element("t1", ElementKind::Table, "x\ty\n1\t2\n3\t4");
        // An empty mock: any completion would be a MockMiss.
        let backend = MockBackend::embedder_only();
        let grid = table_to_grid(&el, &backend).unwrap();
        assert_eq!((grid.n_rows, grid.n_cols), (3, 2));
    }

    #[test]
    fn empty_table_text_goes_through_the_backend() {
        let el = element("t1", ElementKind::Table, "");
        let mut script = MockScript::new();
        script.set_schema_default(
            StageTag::Mcu,
            SchemaId::TableGrid,
            r#"{"n_rows": 1, "n_cols": 1, "cells": ["42"]}"#,
        );
        let backend = MockBackend::new(script);
        let grid = table_to_grid(&el, &backend).unwrap();
        assert_eq!(grid.cells, ["42"]);
    }

    #[test]
    fn understand_collects_facts_with_provenance() {
        let ir = doc(vec![element("p1", ElementKind::Paragraph, "A beats B.")]);
        let mut script = MockScript::new();
        script.set_schema_default(
            StageTag::Mcu,
            SchemaId::SectionFacts,
            r#"{"digest": "", "facts": [
                {"subject": "A", "predicate": "beats", "object": "B", "source": 0},
                {"subject": "B", "predicate": "loses to", "object": "A", "source": 0}
            ], "entities": []}"#,
        );
        let backend = MockBackend::new(script);
        let sem = understand(&ir, &backend).unwrap();
        assert_eq!(sem.facts.len(), 2);
        assert!(sem.facts.iter().all(|f| f.source == "p1".into()));
        assert!(sem.consistency_errors(&ir).is_empty());
    }

    #[test]
    fn out_of_range_provenance_is_rejected() {
        let ir = doc(vec![element("p1", ElementKind::Paragraph, "text")]);
        let mut script = MockScript::new();
        script.set_schema_default(
            StageTag::Mcu,
            SchemaId::SectionFacts,
            r#"{"facts": [{"subject": "x", "predicate": "y", "object": "z", "source": 7}],
                "entities": []}"#,
        );
        let backend = MockBackend::new(script);
        let err = understand(&ir, &backend).unwrap_err();
        let UnderstandError::Backend { element, source } = err;
        assert_eq!(element, "p1".into());
        assert!(matches!(source, BackendError::Schema { .. }));
    }

    #[test]
    fn figure_description_lands_under_the_figure_id() {
        let mut fig = element("f1", ElementKind::Figure, "");
        fig.heading_level = None;
        let ir = doc(vec![fig]);
        let mut script = MockScript::new();
        script.set_schema_default(
            StageTag::Mcu,
            SchemaId::FigureDesc,
            r#"{"description": "bar chart of X", "axis_labels": ["year"], "legend_entries": []}"#,
        );
        let backend = MockBackend::new(script);
        let sem = understand(&ir, &backend).unwrap();
        assert_eq!(sem.figure_descs[&ElementId::from("f1")].description, "bar chart of X");
    }

    #[test]
    fn structural_understanding_is_pure_and_table_only() {
        let ir = doc(vec![
            element("t1", ElementKind::Table, "a\tb"),
            element("p1", ElementKind::Paragraph, "text"),
        ]);
        let sem = structural(&ir);
        assert_eq!(sem.table_grids.len(), 1);
        assert!(sem.facts.is_empty());
        assert!(sem.consistency_errors(&ir).is_empty());
    }
}
