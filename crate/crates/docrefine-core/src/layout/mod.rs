//! Layout and structure analysis.
//!
//! Turns an ingested document into a validated [`DocumentIR`]: element
//! extraction, reading order (recursive XY-cut), heading hierarchy, and
//! caption association. Two ingestion paths exist: a layout JSON file (the
//! IR schema with order/hierarchy/associations optional — exact) and a PDF
//! file (best-effort native extraction).

pub mod pdf;
pub mod xy_cut;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::backend::{schema, Backend, BackendError, BackendRequest, SchemaId, StageTag};
use crate::ir::{
    validate_ir, Association, AssociationRole, DocumentIR, Element, ElementId, ElementKind,
    HierarchyEdge, PageSize, Violation,
};
pub use xy_cut::{xy_cut_order, DEFAULT_GAP_THRESHOLD};

/// Tunables for layout analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutParams {
    /// Minimum whitespace gap for an XY-cut, points.
    pub gap_threshold: f64,
    /// Maximum vertical caption-to-target distance, points.
    pub caption_max_gap: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            caption_max_gap: 20.0,
        }
    }
}

/// Document source to ingest.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestSource {
    PdfFile(PathBuf),
    LayoutJson(PathBuf),
}

impl IngestSource {
    /// Chooses the variant from the file extension (`.pdf` vs anything else).
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pdf") => IngestSource::PdfFile(path),
            _ => IngestSource::LayoutJson(path),
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            IngestSource::PdfFile(p) | IngestSource::LayoutJson(p) => p,
        }
    }
}

/// Ingestion failure: the source could not be read or parsed.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate element id {0}")]
    DuplicateId(ElementId),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported PDF: {0}")]
    UnsupportedPdf(String),
}

/// Analysis failure.
#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    /// The heuristics produced an invalid IR — an internal bug, surfaced.
    #[error("analysis produced an invalid document: {0:?}")]
    Validation(Vec<Violation>),
    #[error("vision pass failed: {0}")]
    Backend(#[from] BackendError),
}

/// Layout JSON input: the IR schema with the derived parts optional.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    pages: Vec<PageSize>,
    elements: Vec<Element>,
    #[serde(default)]
    reading_order: Option<Vec<ElementId>>,
    #[serde(default)]
    hierarchy: Option<Vec<HierarchyEdge>>,
    #[serde(default)]
    associations: Option<Vec<Association>>,
}

/// Ingests a source and produces a validated document IR.
///
/// `backend` enables the optional vision pass that classifies raster regions
/// found in PDFs as figures or tables; pass `None` for fully deterministic
/// analysis. The returned IR always passes [`validate_ir`].
pub fn analyze(
    src: &IngestSource,
    backend: Option<&dyn Backend>,
    params: &LayoutParams,
) -> Result<DocumentIR, AnalyzeError> {
    let (pages, mut elements, order, hierarchy, associations) = match src {
        IngestSource::LayoutJson(path) => {
            let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
                path: path.clone(),
                source,
            })?;
            let mut de = serde_json::Deserializer::from_slice(&bytes);
            let raw: RawLayout =
                serde_path_to_error::deserialize(&mut de).map_err(|e| IngestError::Parse {
                    path: e.path().to_string(),
                    message: e.inner().to_string(),
                })?;
            (
                raw.pages,
                raw.elements,
                raw.reading_order,
                raw.hierarchy,
                raw.associations,
            )
        }
        IngestSource::PdfFile(path) => {
            let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
                path: path.clone(),
                source,
            })?;
            let extracted = pdf::extract(&bytes)?;
            (extracted.pages, extracted.elements, None, None, None)
        }
    };

    let mut seen = std::collections::BTreeSet::new();
    for el in &elements {
        if !seen.insert(el.id.clone()) {
            return Err(IngestError::DuplicateId(el.id.clone()).into());
        }
    }

    if let (IngestSource::PdfFile(_), Some(backend)) = (src, backend) {
        label_raster_regions(&mut elements, backend)?;
    }

    let reading_order = order.unwrap_or_else(|| xy_cut_order(&elements, params.gap_threshold));
    let by_id: BTreeMap<&ElementId, &Element> = elements.iter().map(|e| (&e.id, e)).collect();
    let ordered: Vec<&Element> = reading_order
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    let hierarchy = hierarchy.unwrap_or_else(|| build_hierarchy(&ordered));
    let associations = associations.unwrap_or_else(|| {
        let (edges, warnings) = link_captions(&elements, params.caption_max_gap);
        for w in warnings {
            log::warn!("{w}");
        }
        edges
    });

    let ir = DocumentIR {
        pages,
        elements,
        reading_order,
        hierarchy,
        associations,
    };
    let violations = validate_ir(&ir);
    if !violations.is_empty() {
        return Err(AnalyzeError::Validation(violations));
    }
    Ok(ir)
}

/// Optional vision pass: asks the backend whether each raster region is a
/// figure or a table and relabels the element accordingly.
fn label_raster_regions(
    elements: &mut [Element],
    backend: &dyn Backend,
) -> Result<(), BackendError> {
    for el in elements.iter_mut() {
        if !matches!(el.kind, ElementKind::Figure | ElementKind::Table) {
            continue;
        }
        let Some(raster) = el.raster_ref.clone() else {
            continue;
        };
        let req = BackendRequest::new(StageTag::Lsa, SchemaId::RegionLabel)
            .system("Classify the raster region as a Figure or a Table.")
            .text(format!("region id {} on page {}", el.id, el.bbox.page_index))
            .image(raster);
        let resp = backend.complete(&req)?;
        let label: schema::RegionLabelResponse = resp.parse_as()?;
        el.kind = match label.kind {
            schema::RegionKind::Figure => ElementKind::Figure,
            schema::RegionKind::Table => ElementKind::Table,
        };
    }
    Ok(())
}

/// Derives the heading hierarchy from a reading-ordered element list.
///
/// Every non-heading element is parented to the nearest preceding heading;
/// a heading is parented to the nearest preceding heading of smaller level.
/// The result is always a forest.
pub fn build_hierarchy(ordered: &[&Element]) -> Vec<HierarchyEdge> {
    let mut edges = Vec::new();
    // Stack of (level, id) with strictly increasing levels.
    let mut stack: Vec<(u32, &ElementId)> = Vec::new();
    for el in ordered {
        match (el.kind, el.heading_level) {
            (ElementKind::Heading, Some(level)) => {
                while stack.last().is_some_and(|(l, _)| *l >= level) {
                    stack.pop();
                }
                if let Some((_, parent)) = stack.last() {
                    edges.push(HierarchyEdge {
                        parent: (*parent).clone(),
                        child: el.id.clone(),
                    });
                }
                stack.push((level, &el.id));
            }
            _ => {
                if let Some((_, parent)) = stack.last() {
                    edges.push(HierarchyEdge {
                        parent: (*parent).clone(),
                        child: el.id.clone(),
                    });
                }
            }
        }
    }
    edges
}

/// Links each caption to the nearest figure/table on the same page within
/// `max_gap` points of vertical distance. Ties break toward the element
/// above the caption (figures are conventionally captioned below). Unlinked
/// captions are reported as warnings.
pub fn link_captions(elements: &[Element], max_gap: f64) -> (Vec<Association>, Vec<String>) {
    let mut edges = Vec::new();
    let mut warnings = Vec::new();

    for caption in elements.iter().filter(|e| e.kind == ElementKind::Caption) {
        let mut best: Option<(f64, bool, &Element)> = None; // (distance, is_above, target)
        for target in elements.iter().filter(|e| {
            matches!(e.kind, ElementKind::Figure | ElementKind::Table)
                && e.bbox.page_index == caption.bbox.page_index
        }) {
            let (distance, is_above) = if target.bbox.y1 <= caption.bbox.y0 {
                (caption.bbox.y0 - target.bbox.y1, true)
            } else if target.bbox.y0 >= caption.bbox.y1 {
                (target.bbox.y0 - caption.bbox.y1, false)
            } else {
                (0.0, true)
            };
            if distance > max_gap {
                continue;
            }
            let better = match &best {
                None => true,
                Some((d, above, _)) => {
                    distance < *d || (distance == *d && is_above && !above)
                }
            };
            if better {
                best = Some((distance, is_above, target));
            }
        }
        match best {
            Some((_, _, target)) => edges.push(Association {
                caption: caption.id.clone(),
                target: target.id.clone(),
                role: if target.kind == ElementKind::Figure {
                    AssociationRole::FigureCaption
                } else {
                    AssociationRole::TableCaption
                },
            }),
            None => warnings.push(format!(
                "caption {} has no figure/table within {max_gap}pt on page {}",
                caption.id, caption.bbox.page_index
            )),
        }
    }
    (edges, warnings)
}
