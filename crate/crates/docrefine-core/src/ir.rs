//! Document intermediate representation.
//!
//! A [`DocumentIR`] is a layout-annotated element graph for one document:
//! page geometry, typed elements with bounding boxes, a total reading order,
//! a heading hierarchy, and caption associations. Values are immutable after
//! construction; pipeline stages produce whole new IRs rather than mutating
//! in place, so they are safe to share across threads.
//!
//! The canonical interchange format is JSON (`*.ir.json`) with sorted keys
//! and 3-decimal coordinates; see [`serialize_ir`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon;

/// Opaque element identifier, unique within one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ElementId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Page size in points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageSize {
    pub width: f64,
    pub height: f64,
}

impl PageSize {
    pub const US_LETTER: PageSize = PageSize {
        width: 612.0,
        height: 792.0,
    };
}

/// Axis-aligned bounding box in page coordinates, points, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub page_index: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Builds a box snapped to the canonical 3-decimal coordinate grid.
    pub fn new(page_index: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            page_index,
            x0: canon::quantize(x0),
            y0: canon::quantize(y0),
            x1: canon::quantize(x1),
            y1: canon::quantize(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }
}

/// Element category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Heading,
    Paragraph,
    ListItem,
    Table,
    Figure,
    Formula,
    Footnote,
    Caption,
}

impl ElementKind {
    /// Elements whose `text` field carries meaningful content.
    /// Figures are pure raster; their text lives in the caption.
    pub fn is_textual(self) -> bool {
        !matches!(self, ElementKind::Figure)
    }

    /// Elements a free-text rewrite may target. Tables are excluded: their
    /// text is a rendered grid and must be edited cell-wise.
    pub fn is_free_text(self) -> bool {
        self.is_textual() && !matches!(self, ElementKind::Table)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One document element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub id: ElementId,
    pub kind: ElementKind,
    pub bbox: BBox,
    /// Text content; empty for pure-raster elements.
    #[serde(default)]
    pub text: String,
    /// Present iff `kind == Heading`; 1 is the top level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_level: Option<u32>,
    /// Path to an image payload; only for Figure or Table elements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster_ref: Option<String>,
}

/// Caption association role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssociationRole {
    #[serde(rename = "figure-caption")]
    FigureCaption,
    #[serde(rename = "table-caption")]
    TableCaption,
}

/// Parent/child edge of the heading hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyEdge {
    pub parent: ElementId,
    pub child: ElementId,
}

/// Caption-to-target association edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Association {
    pub caption: ElementId,
    pub target: ElementId,
    pub role: AssociationRole,
}

/// Layout-annotated element graph of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentIR {
    pub pages: Vec<PageSize>,
    pub elements: Vec<Element>,
    pub reading_order: Vec<ElementId>,
    #[serde(default)]
    pub hierarchy: Vec<HierarchyEdge>,
    #[serde(default)]
    pub associations: Vec<Association>,
}

impl DocumentIR {
    /// An empty single-page document.
    pub fn empty() -> Self {
        Self {
            pages: vec![PageSize::US_LETTER],
            elements: Vec::new(),
            reading_order: Vec::new(),
            hierarchy: Vec::new(),
            associations: Vec::new(),
        }
    }

    pub fn element(&self, id: &ElementId) -> Option<&Element> {
        self.elements.iter().find(|e| &e.id == id)
    }

    pub fn element_mut(&mut self, id: &ElementId) -> Option<&mut Element> {
        self.elements.iter_mut().find(|e| &e.id == id)
    }

    pub fn ids(&self) -> BTreeSet<ElementId> {
        self.elements.iter().map(|e| e.id.clone()).collect()
    }

    /// Reorders the element, hierarchy, and association lists into their
    /// canonical (id-sorted) form. Reading order is semantic and untouched.
    pub fn canonical(&self) -> Self {
        let mut out = self.clone();
        out.elements.sort_by(|a, b| a.id.cmp(&b.id));
        out.hierarchy.sort();
        out.associations.sort();
        out
    }

    /// Structural equality: element identity by id, list order irrelevant
    /// except for `reading_order`.
    pub fn structurally_equal(&self, other: &DocumentIR) -> bool {
        self.canonical() == other.canonical()
    }
}

/// One invariant violation found by [`validate_ir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending element, when one can be named.
    pub element: Option<ElementId>,
    /// Short rule identifier, e.g. `"reading_order.permutation"`.
    pub rule: String,
    pub message: String,
}

impl Violation {
    fn new(element: Option<ElementId>, rule: &str, message: impl Into<String>) -> Self {
        Self {
            element,
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.element {
            Some(id) => write!(f, "[{}] {}: {}", self.rule, id, self.message),
            None => write!(f, "[{}]: {}", self.rule, self.message),
        }
    }
}

/// Checks every [`DocumentIR`] invariant. Returns an empty list iff the
/// document is valid; violations are data, not failures.
pub fn validate_ir(ir: &DocumentIR) -> Vec<Violation> {
    let mut out = Vec::new();

    // Unique ids.
    let mut seen = BTreeSet::new();
    for el in &ir.elements {
        if !seen.insert(el.id.clone()) {
            out.push(Violation::new(
                Some(el.id.clone()),
                "element.id.unique",
                format!("duplicate element id {:?}", el.id.as_str()),
            ));
        }
    }
    let ids: BTreeSet<ElementId> = seen;

    // Per-element geometry and field invariants.
    for el in &ir.elements {
        let b = &el.bbox;
        let finite = [b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite());
        if !finite || b.x0 >= b.x1 || b.y0 >= b.y1 {
            out.push(Violation::new(
                Some(el.id.clone()),
                "bbox.order",
                format!(
                    "degenerate box (x0={}, y0={}, x1={}, y1={})",
                    b.x0, b.y0, b.x1, b.y1
                ),
            ));
        } else if let Some(page) = ir.pages.get(b.page_index) {
            if b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > page.width || b.y1 > page.height {
                out.push(Violation::new(
                    Some(el.id.clone()),
                    "bbox.within_page",
                    format!(
                        "box exceeds page {} bounds {}x{}",
                        b.page_index, page.width, page.height
                    ),
                ));
            }
        }
        if ir.pages.get(b.page_index).is_none() {
            out.push(Violation::new(
                Some(el.id.clone()),
                "bbox.page_index",
                format!("page_index {} out of range", b.page_index),
            ));
        }
        match (el.kind, el.heading_level) {
            (ElementKind::Heading, None) => out.push(Violation::new(
                Some(el.id.clone()),
                "heading_level.required",
                "heading without heading_level",
            )),
            (ElementKind::Heading, Some(0)) => out.push(Violation::new(
                Some(el.id.clone()),
                "heading_level.positive",
                "heading_level must be >= 1",
            )),
            (k, Some(_)) if k != ElementKind::Heading => out.push(Violation::new(
                Some(el.id.clone()),
                "heading_level.forbidden",
                format!("heading_level on {k} element"),
            )),
            _ => {}
        }
        if el.raster_ref.is_some()
            && !matches!(el.kind, ElementKind::Figure | ElementKind::Table)
        {
            out.push(Violation::new(
                Some(el.id.clone()),
                "raster_ref.forbidden",
                format!("raster_ref on {} element", el.kind),
            ));
        }
    }

    // Reading order is a permutation of all element ids.
    let order_set: BTreeSet<&ElementId> = ir.reading_order.iter().collect();
    if order_set.len() != ir.reading_order.len()
        || order_set.len() != ids.len()
        || !order_set.iter().all(|id| ids.contains(id))
    {
        out.push(Violation::new(
            None,
            "reading_order.permutation",
            format!(
                "reading_order ({} entries) is not a permutation of the {} element ids",
                ir.reading_order.len(),
                ids.len()
            ),
        ));
    }

    // Hierarchy forms a forest: known ids, at most one parent, no cycles.
    let mut parent: BTreeMap<&ElementId, &ElementId> = BTreeMap::new();
    for edge in &ir.hierarchy {
        for id in [&edge.parent, &edge.child] {
            if !ids.contains(id) {
                out.push(Violation::new(
                    Some(id.clone()),
                    "hierarchy.unknown_id",
                    "hierarchy edge names an unknown element",
                ));
            }
        }
        if parent.insert(&edge.child, &edge.parent).is_some() {
            out.push(Violation::new(
                Some(edge.child.clone()),
                "hierarchy.single_parent",
                "element has more than one parent",
            ));
        }
    }
    let mut cleared: BTreeSet<&ElementId> = BTreeSet::new();
    for start in parent.keys() {
        if cleared.contains(*start) {
            continue;
        }
        let mut path: Vec<&ElementId> = Vec::new();
        let mut cur = *start;
        loop {
            if let Some(pos) = path.iter().position(|id| *id == cur) {
                let cycle: Vec<&str> = path[pos..].iter().map(|id| id.as_str()).collect();
                out.push(Violation::new(
                    Some(cur.clone()),
                    "hierarchy.cycle",
                    format!("hierarchy contains cycle through {}", cycle.join(" -> ")),
                ));
                break;
            }
            if cleared.contains(cur) {
                break;
            }
            path.push(cur);
            match parent.get(cur) {
                Some(next) => cur = next,
                None => break,
            }
        }
        cleared.extend(path);
    }

    // Associations pair a caption with a figure/table of the matching role.
    for assoc in &ir.associations {
        match ir.element(&assoc.caption) {
            None => out.push(Violation::new(
                Some(assoc.caption.clone()),
                "association.unknown_caption",
                "association names an unknown caption element",
            )),
            Some(el) if el.kind != ElementKind::Caption => out.push(Violation::new(
                Some(assoc.caption.clone()),
                "association.caption_kind",
                format!("association caption is a {} element", el.kind),
            )),
            _ => {}
        }
        match ir.element(&assoc.target) {
            None => out.push(Violation::new(
                Some(assoc.target.clone()),
                "association.unknown_target",
                "association names an unknown target element",
            )),
            Some(el) => {
                let ok = match assoc.role {
                    AssociationRole::FigureCaption => el.kind == ElementKind::Figure,
                    AssociationRole::TableCaption => el.kind == ElementKind::Table,
                };
                if !ok {
                    out.push(Violation::new(
                        Some(assoc.target.clone()),
                        "association.target_kind",
                        format!("{:?} association targets a {} element", assoc.role, el.kind),
                    ));
                }
            }
        }
    }

    out
}

/// Serialization failure.
#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("refusing to serialize an invalid document: {0:?}")]
    InvalidIr(Vec<Violation>),
    #[error("encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Deserialization failure, addressed by a JSON path.
#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct DeserializeError {
    pub path: String,
    pub message: String,
}

/// Encodes a valid document to canonical JSON bytes.
///
/// Canonical means: element/hierarchy/association lists id-sorted, object
/// keys sorted, coordinates at fixed 3-decimal precision. Structurally equal
/// documents yield identical bytes regardless of construction order.
pub fn serialize_ir(ir: &DocumentIR) -> Result<Vec<u8>, SerializeError> {
    let violations = validate_ir(ir);
    if !violations.is_empty() {
        return Err(SerializeError::InvalidIr(violations));
    }
    Ok(canon::to_canonical_json(&ir.canonical())?)
}

/// Decodes canonical IR JSON.
///
/// Rejects unknown element kinds, malformed geometry, and duplicate ids with
/// path-addressed errors. Domain-level invariants beyond those (reading
/// order, hierarchy shape, associations) are the province of [`validate_ir`].
pub fn deserialize_ir(bytes: &[u8]) -> Result<DocumentIR, DeserializeError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let ir: DocumentIR =
        serde_path_to_error::deserialize(&mut de).map_err(|e| DeserializeError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, el) in ir.elements.iter().enumerate() {
        if seen.insert(el.id.as_str(), i).is_some() {
            return Err(DeserializeError {
                path: format!("elements[{i}].id"),
                message: format!("duplicate element id {:?}", el.id.as_str()),
            });
        }
        let b = &el.bbox;
        let finite = [b.x0, b.y0, b.x1, b.y1].iter().all(|v| v.is_finite());
        if !finite || b.x0 >= b.x1 || b.y0 >= b.y1 {
            return Err(DeserializeError {
                path: format!("elements[{i}].bbox"),
                message: format!(
                    "malformed geometry (x0={}, y0={}, x1={}, y1={})",
                    b.x0, b.y0, b.x1, b.y1
                ),
            });
        }
        if b.page_index >= ir.pages.len() {
            return Err(DeserializeError {
                path: format!("elements[{i}].bbox.page_index"),
                message: format!(
                    "page_index {} out of range ({} pages)",
                    b.page_index,
                    ir.pages.len()
                ),
            });
        }
    }
    Ok(ir)
}

/// Element-level difference between two documents.
///
/// `changed_text` and `changed_bbox` may overlap; `added` and `removed` are
/// disjoint from everything else.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementDiff {
    pub changed_text: BTreeSet<ElementId>,
    pub changed_bbox: BTreeSet<ElementId>,
    pub added: BTreeSet<ElementId>,
    pub removed: BTreeSet<ElementId>,
}

impl ElementDiff {
    pub fn is_empty(&self) -> bool {
        self.changed_text.is_empty()
            && self.changed_bbox.is_empty()
            && self.added.is_empty()
            && self.removed.is_empty()
    }

    /// Union of every element id the diff mentions.
    pub fn all_ids(&self) -> BTreeSet<ElementId> {
        self.changed_text
            .iter()
            .chain(&self.changed_bbox)
            .chain(&self.added)
            .chain(&self.removed)
            .cloned()
            .collect()
    }
}

/// Structural diff of two documents. Elements are matched by id; text is
/// compared byte-wise, boxes exactly. Content attribute changes (kind,
/// heading level, raster ref) count as text changes so that no mutation can
/// slip past the unmodified-region guard.
pub fn diff_ir(before: &DocumentIR, after: &DocumentIR) -> ElementDiff {
    let mut diff = ElementDiff::default();
    let before_map: BTreeMap<&ElementId, &Element> =
        before.elements.iter().map(|e| (&e.id, e)).collect();
    let after_map: BTreeMap<&ElementId, &Element> =
        after.elements.iter().map(|e| (&e.id, e)).collect();

    for (id, b) in &before_map {
        match after_map.get(id) {
            None => {
                diff.removed.insert((*id).clone());
            }
            Some(a) => {
                let content_changed = b.text != a.text
                    || b.kind != a.kind
                    || b.heading_level != a.heading_level
                    || b.raster_ref != a.raster_ref;
                if content_changed {
                    diff.changed_text.insert((*id).clone());
                }
                if b.bbox != a.bbox {
                    diff.changed_bbox.insert((*id).clone());
                }
            }
        }
    }
    for id in after_map.keys() {
        if !before_map.contains_key(*id) {
            diff.added.insert((*id).clone());
        }
    }
    diff
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(id: &str, page: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> Element {
        Element {
            id: ElementId::from(id),
            kind: ElementKind::Paragraph,
            bbox: BBox::new(page, x0, y0, x1, y1),
            text: format!("text of {id}"),
            heading_level: None,
            raster_ref: None,
        }
    }

    fn two_para_doc() -> DocumentIR {
        DocumentIR {
            pages: vec![PageSize::US_LETTER],
            elements: vec![
                para("a", 0, 72.0, 72.0, 540.0, 100.0),
                para("b", 0, 72.0, 110.0, 540.0, 140.0),
            ],
            reading_order: vec!["a".into(), "b".into()],
            hierarchy: vec![],
            associations: vec![],
        }
    }

    #[test]
    fn empty_document_is_valid() {
        assert!(validate_ir(&DocumentIR::empty()).is_empty());
    }

    #[test]
    fn missing_reading_order_entry_is_flagged() {
        let mut ir = two_para_doc();
        ir.reading_order.pop();
        let violations = validate_ir(&ir);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].rule, "reading_order.permutation");
    }

    // Oracle for the cycle case: an explicit DFS cycle detector, independent
    // of the validator's parent-walk.
    fn dfs_has_cycle(edges: &[(&str, &str)]) -> bool {
        fn visit(
            node: &str,
            edges: &[(&str, &str)],
            visiting: &mut Vec<String>,
            done: &mut Vec<String>,
        ) -> bool {
            if done.iter().any(|d| d == node) {
                return false;
            }
            if visiting.iter().any(|v| v == node) {
                return true;
            }
            visiting.push(node.to_string());
            for (p, c) in edges {
                if *p == node && visit(c, edges, visiting, done) {
                    return true;
                }
            }
            visiting.retain(|v| v != node);
            done.push(node.to_string());
            false
        }
        let mut done = Vec::new();
        edges
            .iter()
            .any(|(p, _)| visit(p, edges, &mut Vec::new(), &mut done))
    }

    #[test]
    fn hierarchy_cycle_is_flagged_and_names_members() {
        let mut ir = two_para_doc();
        ir.hierarchy = vec![
            HierarchyEdge {
                parent: "a".into(),
                child: "b".into(),
            },
            HierarchyEdge {
                parent: "b".into(),
                child: "a".into(),
            },
        ];
        assert!(dfs_has_cycle(&[("a", "b"), ("b", "a")]), "oracle agrees");
        let violations = validate_ir(&ir);
        let cycle: Vec<_> = violations
            .iter()
            .filter(|v| v.rule == "hierarchy.cycle")
            .collect();
        assert_eq!(cycle.len(), 1);
        assert!(cycle[0].message.contains('a') && cycle[0].message.contains('b'));
    }

    #[test]
    fn empty_document_round_trips() {
        let ir = DocumentIR::empty();
        let bytes = serialize_ir(&ir).unwrap();
        let back = deserialize_ir(&bytes).unwrap();
        assert!(back.structurally_equal(&ir));
    }

    #[test]
    fn permuted_construction_orders_serialize_identically() {
        // Oracle: byte comparison across permuted constructions.
        let ir = two_para_doc();
        let mut permuted = ir.clone();
        permuted.elements.reverse();
        assert_ne!(ir.elements, permuted.elements, "constructions differ");
        assert_eq!(serialize_ir(&ir).unwrap(), serialize_ir(&permuted).unwrap());
    }

    #[test]
    fn unknown_kind_is_rejected_with_path() {
        let json = br#"{
            "pages": [{"width": 612.0, "height": 792.0}],
            "elements": [{
                "id": "e1", "kind": "Chart",
                "bbox": {"page_index": 0, "x0": 0.0, "y0": 0.0, "x1": 10.0, "y1": 10.0},
                "text": ""
            }],
            "reading_order": ["e1"]
        }"#;
        let err = deserialize_ir(json).unwrap_err();
        assert!(err.path.contains("elements[0]"), "path was {}", err.path);
        assert!(err.message.contains("Chart"), "message was {}", err.message);
    }

    #[test]
    fn duplicate_id_is_rejected_with_path() {
        let mut ir = two_para_doc();
        ir.elements[1].id = "a".into();
        ir.reading_order = vec!["a".into(), "a".into()];
        let bytes = canon::to_canonical_json(&ir).unwrap();
        let err = deserialize_ir(&bytes).unwrap_err();
        assert_eq!(err.path, "elements[1].id");
    }

    #[test]
    fn diff_of_identity_is_empty() {
        let ir = two_para_doc();
        assert!(diff_ir(&ir, &ir).is_empty());
    }

    #[test]
    fn diff_detects_single_text_change() {
        let ir = two_para_doc();
        let mut after = ir.clone();
        after.element_mut(&"b".into()).unwrap().text = "rewritten".into();
        let diff = diff_ir(&ir, &after);
        assert_eq!(diff.changed_text, BTreeSet::from(["b".into()]));
        assert!(diff.changed_bbox.is_empty());
        assert!(diff.added.is_empty() && diff.removed.is_empty());
    }

    #[test]
    fn diff_counts_added_and_removed() {
        let ir = two_para_doc();
        let mut after = ir.clone();
        after.elements.remove(0);
        after.elements.push(para("c", 0, 72.0, 150.0, 540.0, 180.0));
        after.elements.push(para("d", 0, 72.0, 190.0, 540.0, 220.0));
        after.reading_order = vec!["b".into(), "c".into(), "d".into()];

        // Brute-force set-comparison oracle.
        let before_ids = ir.ids();
        let after_ids = after.ids();
        let expect_removed: BTreeSet<_> = before_ids.difference(&after_ids).cloned().collect();
        let expect_added: BTreeSet<_> = after_ids.difference(&before_ids).cloned().collect();

        let diff = diff_ir(&ir, &after);
        assert_eq!(diff.removed, expect_removed);
        assert_eq!(diff.added, expect_added);
        assert_eq!(diff.removed.len(), 1);
        assert_eq!(diff.added.len(), 2);
    }

    #[test]
    fn diff_is_antisymmetric() {
        let ir = two_para_doc();
        let mut after = ir.clone();
        after.elements.remove(0);
        after.reading_order = vec!["b".into()];
        after.element_mut(&"b".into()).unwrap().text = "new".into();
        let fwd = diff_ir(&ir, &after);
        let rev = diff_ir(&after, &ir);
        assert_eq!(fwd.added, rev.removed);
        assert_eq!(fwd.removed, rev.added);
        assert_eq!(fwd.changed_text, rev.changed_text);
        assert_eq!(fwd.changed_bbox, rev.changed_bbox);
    }
}
