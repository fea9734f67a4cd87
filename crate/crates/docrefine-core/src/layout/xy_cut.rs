//! Recursive XY-cut reading order.
//!
//! Each page is split recursively along the widest whitespace gap at least
//! `gap_threshold` points wide. Vertical cuts (left/right split) are
//! preferred at the top level so that column layouts come out column-major;
//! deeper levels take the wider gap of either axis. Regions with no valid
//! cut fall through to top-left lexicographic order by `(y0, x0)`. Pages are
//! concatenated in index order. The output is always a permutation of the
//! input ids.

use std::collections::BTreeMap;

use crate::ir::{BBox, Element, ElementId};

/// Default minimum whitespace gap, in points, for a cut.
pub const DEFAULT_GAP_THRESHOLD: f64 = 8.0;

/// Computes the logical reading order of `elements`.
pub fn xy_cut_order(elements: &[Element], gap_threshold: f64) -> Vec<ElementId> {
    let mut by_page: BTreeMap<usize, Vec<(&ElementId, &BBox)>> = BTreeMap::new();
    for el in elements {
        by_page
            .entry(el.bbox.page_index)
            .or_default()
            .push((&el.id, &el.bbox));
    }
    let mut order = Vec::with_capacity(elements.len());
    for items in by_page.into_values() {
        recurse(items, gap_threshold, 0, &mut order);
    }
    order
}

#[derive(Clone, Copy)]
enum Axis {
    /// Vertical cut line: splits into left and right.
    X,
    /// Horizontal cut line: splits into top and bottom.
    Y,
}

fn recurse(
    mut items: Vec<(&ElementId, &BBox)>,
    gap_threshold: f64,
    depth: usize,
    out: &mut Vec<ElementId>,
) {
    if items.len() <= 1 {
        out.extend(items.into_iter().map(|(id, _)| id.clone()));
        return;
    }

    let x_gap = widest_gap(&items, Axis::X, gap_threshold);
    let y_gap = widest_gap(&items, Axis::Y, gap_threshold);

    let cut = if depth == 0 {
        // Column-major: take any valid vertical cut before a horizontal one.
        x_gap
            .map(|g| (Axis::X, g))
            .or(y_gap.map(|g| (Axis::Y, g)))
    } else {
        match (x_gap, y_gap) {
            (Some(xg), Some(yg)) => {
                if yg.1 - yg.0 > xg.1 - xg.0 {
                    Some((Axis::Y, yg))
                } else {
                    Some((Axis::X, xg))
                }
            }
            (Some(xg), None) => Some((Axis::X, xg)),
            (None, Some(yg)) => Some((Axis::Y, yg)),
            (None, None) => None,
        }
    };

    match cut {
        None => {
            // Degenerate region: documented fallback order.
            items.sort_by(|(aid, a), (bid, b)| {
                (a.y0, a.x0)
                    .partial_cmp(&(b.y0, b.x0))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| aid.cmp(bid))
            });
            out.extend(items.into_iter().map(|(id, _)| id.clone()));
        }
        Some((axis, (gap_start, _gap_end))) => {
            let (first, second): (Vec<_>, Vec<_>) = items.into_iter().partition(|(_, b)| {
                let hi = match axis {
                    Axis::X => b.x1,
                    Axis::Y => b.y1,
                };
                hi <= gap_start
            });
            // Left before right, top before bottom.
            recurse(first, gap_threshold, depth + 1, out);
            recurse(second, gap_threshold, depth + 1, out);
        }
    }
}

/// Widest interior whitespace gap of at least `threshold` along `axis`,
/// as `(start, end)`. Ties go to the earliest gap.
fn widest_gap(items: &[(&ElementId, &BBox)], axis: Axis, threshold: f64) -> Option<(f64, f64)> {
    let mut intervals: Vec<(f64, f64)> = items
        .iter()
        .map(|(_, b)| match axis {
            Axis::X => (b.x0, b.x1),
            Axis::Y => (b.y0, b.y1),
        })
        .collect();
    intervals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let mut best: Option<(f64, f64)> = None;
    let (mut _run_start, mut run_end) = intervals[0];
    for &(lo, hi) in &intervals[1..] {
        if lo > run_end {
            let width = lo - run_end;
            if width >= threshold && best.map_or(true, |(s, e)| width > e - s) {
                best = Some((run_end, lo));
            }
            _run_start = lo;
        }
        run_end = run_end.max(hi);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ElementKind;

    fn el(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Element {
        Element {
            id: ElementId::from(id),
            kind: ElementKind::Paragraph,
            bbox: BBox::new(0, x0, y0, x1, y1),
            text: String::new(),
            heading_level: None,
            raster_ref: None,
        }
    }

    fn order_of(elements: &[Element]) -> Vec<String> {
        xy_cut_order(elements, DEFAULT_GAP_THRESHOLD)
            .into_iter()
            .map(|id| id.0)
            .collect()
    }

    #[test]
    fn single_element() {
        assert_eq!(order_of(&[el("only", 10.0, 10.0, 50.0, 30.0)]), ["only"]);
    }

    #[test]
    fn two_columns_come_out_column_major() {
        // Left column a1,a2; right column b1,b2; rows aligned so a pure
        // top-to-bottom order would interleave them.
        let els = [
            el("a1", 36.0, 100.0, 290.0, 130.0),
            el("b1", 322.0, 100.0, 576.0, 130.0),
            el("a2", 36.0, 140.0, 290.0, 170.0),
            el("b2", 322.0, 140.0, 576.0, 170.0),
        ];
        assert_eq!(order_of(&els), ["a1", "a2", "b1", "b2"]);
    }

    #[test]
    fn spanning_title_forces_horizontal_cut_first() {
        let els = [
            el("title", 36.0, 40.0, 576.0, 70.0),
            el("left", 36.0, 100.0, 290.0, 130.0),
            el("right", 322.0, 100.0, 576.0, 130.0),
        ];
        // No full-height vertical gap exists, so the top level falls back to
        // the horizontal cut; the body then splits into columns.
        assert_eq!(order_of(&els), ["title", "left", "right"]);
    }

    #[test]
    fn fully_overlapping_boxes_fall_back_to_lexicographic() {
        let els = [
            el("c", 10.0, 20.0, 100.0, 90.0),
            el("a", 10.0, 10.0, 100.0, 80.0),
            el("b", 20.0, 10.0, 110.0, 80.0),
        ];
        assert_eq!(order_of(&els), ["a", "b", "c"]);
    }

    #[test]
    fn gap_below_threshold_is_not_a_cut() {
        // 6 pt column gap with an 8 pt threshold: treated as one region,
        // ordered row-wise by the fallback.
        let els = [
            el("l", 36.0, 100.0, 290.0, 130.0),
            el("r", 296.0, 100.0, 560.0, 130.0),
            el("l2", 36.0, 300.0, 290.0, 330.0),
        ];
        // y-gap (170pt) still cuts; within the top band no x-cut applies.
        assert_eq!(order_of(&els), ["l", "r", "l2"]);
    }

    #[test]
    fn pages_concatenate_in_index_order() {
        let mut p0 = el("second-page", 10.0, 10.0, 50.0, 30.0);
        p0.bbox.page_index = 1;
        let p1 = el("first-page", 10.0, 10.0, 50.0, 30.0);
        assert_eq!(order_of(&[p0, p1]), ["first-page", "second-page"]);
    }

    #[test]
    fn output_is_a_permutation() {
        let els: Vec<Element> = (0..40)
            .map(|i| {
                let x = (i % 8) as f64 * 70.0;
                let y = (i / 8) as f64 * 95.0;
                el(&format!("e{i}"), x, y, x + 60.0, y + 80.0)
            })
            .collect();
        let mut got = order_of(&els);
        got.sort();
        let mut want: Vec<String> = (0..40).map(|i| format!("e{i}")).collect();
        want.sort();
        assert_eq!(got, want);
    }
}
