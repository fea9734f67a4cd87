//! Deterministic synthetic documents and layouts.
//!
//! Seeded generators used by the fuzz/property tests, the benchmark dataset
//! builder, and the browser demo. Everything here is a pure function of its
//! seed, so generated fixtures are reproducible across runs and platforms.

use crate::ir::{
    Association, AssociationRole, BBox, DocumentIR, Element, ElementId, ElementKind, PageSize,
};
use crate::layout::{build_hierarchy, xy_cut_order};

/// SplitMix64: small, seedable, and stable across platforms.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }
}

const WORDS: &[&str] = &[
    "document", "layout", "analysis", "revenue", "quarterly", "results", "method", "figure",
    "table", "section", "summary", "structure", "region", "model", "finding", "baseline",
    "growth", "measured", "error", "margin",
];

fn sentence(rng: &mut Rng, words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(rng.pick(WORDS));
    }
    if let Some(first) = out.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    out.push('.');
    out
}

fn grid_text(rng: &mut Rng, rows: usize, cols: usize) -> String {
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    if r == 0 {
                        format!("col{c}")
                    } else {
                        format!("{}.{:02}", rng.below(9), rng.below(100))
                    }
                })
                .collect::<Vec<_>>()
                .join("\t")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// A random valid document: 1-2 pages, mixed element kinds, derived reading
/// order and hierarchy, captions linked where a figure/table exists.
pub fn random_ir(seed: u64) -> DocumentIR {
    let mut rng = Rng::new(seed);
    let pages = vec![PageSize::US_LETTER; rng.range(1, 2)];
    let n = rng.range(1, 12);

    let mut elements = Vec::new();
    for i in 0..n {
        let page_index = rng.below(pages.len());
        let page = pages[page_index];
        let w = 40.0 + rng.unit() * 300.0;
        let h = 12.0 + rng.unit() * 90.0;
        let x0 = rng.unit() * (page.width - w);
        let y0 = rng.unit() * (page.height - h);
        let kind = *rng.pick(&[
            ElementKind::Paragraph,
            ElementKind::Paragraph,
            ElementKind::Paragraph,
            ElementKind::Heading,
            ElementKind::ListItem,
            ElementKind::Table,
            ElementKind::Figure,
            ElementKind::Caption,
            ElementKind::Footnote,
            ElementKind::Formula,
        ]);
        let text = match kind {
            ElementKind::Figure => String::new(),
            ElementKind::Table => {
                if rng.chance(0.8) {
                    grid_text(&mut rng, rng.range(2, 4), rng.range(2, 4))
                } else {
                    String::new()
                }
            }
            ElementKind::Formula => "E = mc^2".to_string(),
            _ => sentence(&mut rng, rng.range(3, 12)),
        };
        elements.push(Element {
            id: ElementId::new(format!("e{i}")),
            kind,
            bbox: BBox::new(page_index, x0, y0, x0 + w, y0 + h),
            text,
            heading_level: (kind == ElementKind::Heading).then(|| rng.range(1, 3) as u32),
            raster_ref: matches!(kind, ElementKind::Figure | ElementKind::Table)
                .then(|| format!("raster-{i}.png"))
                .filter(|_| rng.chance(0.5)),
        });
    }

    let reading_order = xy_cut_order(&elements, 8.0);
    let by_id: std::collections::BTreeMap<&ElementId, &Element> =
        elements.iter().map(|e| (&e.id, e)).collect();
    let ordered: Vec<&Element> = reading_order
        .iter()
        .filter_map(|id| by_id.get(id).copied())
        .collect();
    let hierarchy = build_hierarchy(&ordered);

    let mut associations = Vec::new();
    let targets: Vec<(ElementId, ElementKind, usize)> = elements
        .iter()
        .filter(|e| matches!(e.kind, ElementKind::Figure | ElementKind::Table))
        .map(|e| (e.id.clone(), e.kind, e.bbox.page_index))
        .collect();
    for el in &elements {
        if el.kind != ElementKind::Caption {
            continue;
        }
        let same_page: Vec<&(ElementId, ElementKind, usize)> = targets
            .iter()
            .filter(|(_, _, page)| *page == el.bbox.page_index)
            .collect();
        if !same_page.is_empty() && rng.chance(0.7) {
            let (target, kind, _) = rng.pick(&same_page);
            associations.push(Association {
                caption: el.id.clone(),
                target: target.clone(),
                role: if *kind == ElementKind::Figure {
                    AssociationRole::FigureCaption
                } else {
                    AssociationRole::TableCaption
                },
            });
        }
    }

    DocumentIR {
        pages,
        elements,
        reading_order,
        hierarchy,
        associations,
    }
}

/// A clean multi-column page: `columns` columns of `rows_per_column` boxes
/// each, column gutters wider than `gutter` points, with vertical jitter.
/// Used by the reading-order oracle tests and the layout demo.
pub fn column_layout(
    seed: u64,
    columns: usize,
    rows_per_column: usize,
    gutter: f64,
    jitter: f64,
) -> (Vec<Element>, PageSize) {
    let mut rng = Rng::new(seed);
    let page = PageSize::US_LETTER;
    let margin = 36.0;
    let usable = page.width - 2.0 * margin;
    let col_width = (usable - gutter * (columns.max(1) as f64 - 1.0)) / columns.max(1) as f64;

    let mut elements = Vec::new();
    for col in 0..columns {
        let x0 = margin + col as f64 * (col_width + gutter);
        let mut y = margin + rng.unit() * jitter;
        for row in 0..rows_per_column {
            let h = 24.0 + rng.unit() * 36.0;
            let dy = 14.0 + rng.unit() * jitter;
            if y + h > page.height - margin {
                break;
            }
            elements.push(Element {
                id: ElementId::new(format!("c{col}r{row}")),
                kind: ElementKind::Paragraph,
                bbox: BBox::new(0, x0, y, x0 + col_width, y + h),
                text: format!("column {col} row {row}"),
                heading_level: None,
                raster_ref: None,
            });
            y += h + dy;
        }
    }
    (elements, page)
}

/// The small showcase document used by the demo and the quickstart: a
/// title, two sections, a data table, and a captioned figure.
pub fn sample_document() -> DocumentIR {
    let elements = vec![
        Element {
            id: "title".into(),
            kind: ElementKind::Heading,
            bbox: BBox::new(0, 72.0, 54.0, 540.0, 82.0),
            text: "Quarterly Performance Report".into(),
            heading_level: Some(1),
            raster_ref: None,
        },
        Element {
            id: "abs".into(),
            kind: ElementKind::Paragraph,
            bbox: BBox::new(0, 72.0, 96.0, 540.0, 150.0),
            text: "This report summarize the performance of all regions. The growth \
                   numbers is presented together with the revenue table and one chart."
                .into(),
            heading_level: None,
            raster_ref: None,
        },
        Element {
            id: "sec-results".into(),
            kind: ElementKind::Heading,
            bbox: BBox::new(0, 72.0, 170.0, 540.0, 186.0),
            text: "Results".into(),
            heading_level: Some(2),
            raster_ref: None,
        },
        Element {
            id: "p-results".into(),
            kind: ElementKind::Paragraph,
            bbox: BBox::new(0, 72.0, 196.0, 540.0, 260.0),
            text: "North region grew fastest in the final quarter. West region stayed \
                   flat while East region recovered from the earlier dip."
                .into(),
            heading_level: None,
            raster_ref: None,
        },
        Element {
            id: "tbl-revenue".into(),
            kind: ElementKind::Table,
            bbox: BBox::new(0, 72.0, 280.0, 400.0, 344.0),
            text: "region\tq3\tq4\nnorth\t0.61\t0.78\nwest\t0.42\t0.41\neast\t0.35\t0.52".into(),
            heading_level: None,
            raster_ref: None,
        },
        Element {
            id: "fig-growth".into(),
            kind: ElementKind::Figure,
            bbox: BBox::new(0, 72.0, 366.0, 400.0, 520.0),
            text: String::new(),
            heading_level: None,
            raster_ref: Some("growth-chart.png".into()),
        },
        Element {
            id: "cap-growth".into(),
            kind: ElementKind::Caption,
            bbox: BBox::new(0, 72.0, 528.0, 400.0, 544.0),
            text: "Figure 1: Growth by region across quarters.".into(),
            heading_level: None,
            raster_ref: None,
        },
    ];
    let reading_order = elements.iter().map(|e| e.id.clone()).collect();
    DocumentIR {
        pages: vec![PageSize::US_LETTER],
        elements,
        reading_order,
        hierarchy: vec![
            crate::ir::HierarchyEdge {
                parent: "title".into(),
                child: "abs".into(),
            },
            crate::ir::HierarchyEdge {
                parent: "title".into(),
                child: "sec-results".into(),
            },
            crate::ir::HierarchyEdge {
                parent: "sec-results".into(),
                child: "p-results".into(),
            },
            crate::ir::HierarchyEdge {
                parent: "sec-results".into(),
                child: "tbl-revenue".into(),
            },
            crate::ir::HierarchyEdge {
                parent: "sec-results".into(),
                child: "fig-growth".into(),
            },
            crate::ir::HierarchyEdge {
                parent: "sec-results".into(),
                child: "cap-growth".into(),
            },
        ],
        associations: vec![Association {
            caption: "cap-growth".into(),
            target: "fig-growth".into(),
            role: AssociationRole::FigureCaption,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate_ir;

    #[test]
    fn random_documents_are_valid() {
        for seed in 0..50 {
            let ir = random_ir(seed);
            let violations = validate_ir(&ir);
            assert!(violations.is_empty(), "seed {seed}: {violations:?}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random_ir(17), random_ir(17));
        let (a, _) = column_layout(5, 2, 4, 32.0, 6.0);
        let (b, _) = column_layout(5, 2, 4, 32.0, 6.0);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_document_is_valid() {
        assert!(validate_ir(&sample_document()).is_empty());
    }
}
