use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Labels;
use crate::netgraph::GridGeometry;

/// Boundary loops of one region in continuous FOV coordinates, where pixel
/// `(x, y)` covers `[x, x+1) x [y, y+1)`. Loops are closed implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub region: u32,
    pub outer: Vec<[f64; 2]>,
    pub holes: Vec<Vec<[f64; 2]>>,
}

impl Contour {
    pub fn loops(&self) -> impl Iterator<Item = &[[f64; 2]]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }
}

type Vertex = (i64, i64);

/// Grid corner `k` in FOV pixels: cells are `j` wide and centered on the
/// windows that produced them.
pub fn grid_corner_px(geometry: &GridGeometry, k: i64) -> f64 {
    geometry.start_px as f64
        + geometry.receptive_field_px as f64 / 2.0
        + (k as f64 - 0.5) * geometry.output_stride_px as f64
}

/// Continuous FOV coordinate of the center of cell `(row, col)`.
pub fn cell_center_continuous(geometry: &GridGeometry, row: usize, col: usize) -> [f64; 2] {
    let half = geometry.output_stride_px as f64 / 2.0;
    [grid_corner_px(geometry, col as i64) + half, grid_corner_px(geometry, row as i64) + half]
}

/// Follows cell edges around every region. Edges run clockwise on screen
/// (region on the right); at a corner where two diagonal cells of the region
/// meet, the trace turns left so 8-connected cells share one outer loop.
fn trace_grid(labels: &Labels) -> Vec<(u32, Vec<Vertex>, Vec<Vec<Vertex>>)> {
    let inside = |id: u32, r: i64, c: i64| {
        r >= 0 && c >= 0 && (r as usize) < labels.rows && (c as usize) < labels.cols && labels.get(r as usize, c as usize) == id
    };
    let mut out = Vec::new();
    for reg in &labels.regions {
        let id = reg.id;
        let mut edges: Vec<(Vertex, Vertex)> = Vec::new();
        let (r0, c0, r1, c1) = reg.bbox;
        for r in r0 as i64..=r1 as i64 {
            for c in c0 as i64..=c1 as i64 {
                if !inside(id, r, c) {
                    continue;
                }
                if !inside(id, r - 1, c) {
                    edges.push(((c, r), (c + 1, r)));
                }
                if !inside(id, r, c + 1) {
                    edges.push(((c + 1, r), (c + 1, r + 1)));
                }
                if !inside(id, r + 1, c) {
                    edges.push(((c + 1, r + 1), (c, r + 1)));
                }
                if !inside(id, r, c - 1) {
                    edges.push(((c, r + 1), (c, r)));
                }
            }
        }
        let mut outgoing: HashMap<Vertex, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            outgoing.entry(e.0).or_default().push(i);
        }
        let mut used = vec![false; edges.len()];
        let mut outer = None;
        let mut holes = Vec::new();
        for e0 in 0..edges.len() {
            if used[e0] {
                continue;
            }
            let mut pts = vec![edges[e0].0];
            let mut cur = e0;
            loop {
                used[cur] = true;
                let (a, b) = edges[cur];
                let cands = &outgoing[&b];
                let next = if cands.len() == 1 {
                    cands[0]
                } else {
                    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                    let left = (dy, -dx);
                    *cands
                        .iter()
                        .find(|&&k| (edges[k].1 .0 - b.0, edges[k].1 .1 - b.1) == left)
                        .expect("saddle has a left turn")
                };
                if next == e0 {
                    break;
                }
                pts.push(b);
                cur = next;
            }
            let pts = simplify(pts);
            if signed_area2(&pts) > 0 {
                debug_assert!(outer.is_none(), "one outer loop per region");
                outer = Some(pts);
            } else {
                holes.push(pts);
            }
        }
        out.push((id, outer.expect("non-empty region has an outer loop"), holes));
    }
    out
}

fn simplify(pts: Vec<Vertex>) -> Vec<Vertex> {
    let n = pts.len();
    (0..n)
        .filter(|&i| {
            let (p, q, r) = (pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
            (q.0 - p.0) * (r.1 - q.1) - (q.1 - p.1) * (r.0 - q.0) != 0
        })
        .map(|i| pts[i])
        .collect()
}

fn signed_area2(pts: &[Vertex]) -> i64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

/// One outer loop (plus hole loops) per region, in FOV pixel coordinates.
pub fn trace_contours(labels: &Labels, geometry: &GridGeometry) -> Vec<Contour> {
    let map = |v: &Vertex| [grid_corner_px(geometry, v.0), grid_corner_px(geometry, v.1)];
    trace_grid(labels)
        .into_iter()
        .map(|(region, outer, holes)| Contour {
            region,
            outer: outer.iter().map(map).collect(),
            holes: holes.iter().map(|h| h.iter().map(map).collect()).collect(),
        })
        .collect()
}

/// Even-odd rule over any number of loops.
pub fn point_in_loops<'a>(loops: impl IntoIterator<Item = &'a [[f64; 2]]>, p: [f64; 2]) -> bool {
    let mut inside = false;
    for poly in loops {
        let n = poly.len();
        for i in 0..n {
            let ([x1, y1], [x2, y2]) = (poly[i], poly[(i + 1) % n]);
            if (y1 > p[1]) != (y2 > p[1]) && p[0] < x1 + (p[1] - y1) * (x2 - x1) / (y2 - y1) {
                inside = !inside;
            }
        }
    }
    inside
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Maximum pairwise distance, computed over the convex hull.
pub fn feret_diameter(points: &[[f64; 2]]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 2 {
        return 0.0;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let mut best = 0.0f64;
    for i in 0..hull.len() {
        for k in i + 1..hull.len() {
            best = best.max(((hull[i][0] - hull[k][0]).powi(2) + (hull[i][1] - hull[k][1]).powi(2)).sqrt());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusMeasurement {
    pub region_id: u32,
    pub diameter_px: f64,
    pub diameter_mm: f64,
}

/// Feret diameter of the largest region (ties to the lower id), converted
/// with `um_per_px`. `None` when there are no regions.
pub fn measure_largest_focus(labels: &Labels, contours: &[Contour], um_per_px: f64) -> Option<FocusMeasurement> {
    let largest = labels
        .regions
        .iter()
        .fold(None::<&super::Region>, |best, r| match best {
            Some(b) if b.area >= r.area => Some(b),
            _ => Some(r),
        })?;
    let contour = contours.iter().find(|c| c.region == largest.id)?;
    let px = feret_diameter(&contour.outer);
    Some(FocusMeasurement {
        region_id: largest.id,
        diameter_px: px,
        diameter_mm: px * um_per_px / 1000.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{connected_components, Mask};

    fn unit_geometry(j: usize) -> GridGeometry {
        GridGeometry {
            receptive_field_px: j,
            output_stride_px: j,
            offset_px: 0,
            canonical_patch_px: j,
            start_px: 0,
        }
    }

    fn mask(rows: &[&str]) -> Mask {
        let cols = rows[0].len();
        Mask::new(rows.len(), cols, rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect())
    }

    #[test]
    fn single_cell_is_a_square() {
        let l = connected_components(&mask(&["...", ".#.", "..."]));
        let c = trace_contours(&l, &unit_geometry(1));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].outer, vec![[1.0, 1.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0]]);
        let m = measure_largest_focus(&l, &c, 1.0).unwrap();
        assert!((m.diameter_mm - 2f64.sqrt() * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn block_is_a_rectangle() {
        let l = connected_components(&mask(&["##", "##"]));
        let c = trace_contours(&l, &unit_geometry(1));
        assert_eq!(c[0].outer.len(), 4);
        assert!(c[0].holes.is_empty());
    }

    #[test]
    fn ring_has_a_hole_and_diagonals_share_a_loop() {
        let l = connected_components(&mask(&["###", "#.#", "###"]));
        let c = trace_contours(&l, &unit_geometry(1));
        assert_eq!(c[0].holes.len(), 1);
        assert!(!point_in_loops(c[0].loops(), [1.5, 1.5]));
        assert!(point_in_loops(c[0].loops(), [0.5, 1.5]));

        let l = connected_components(&mask(&["#..", ".#.", "..#"]));
        let c = trace_contours(&l, &unit_geometry(1));
        assert_eq!(c.len(), 1);
        assert!(c[0].holes.is_empty());
        for (r, col) in [(0, 0), (1, 1), (2, 2)] {
            assert!(point_in_loops(c[0].loops(), [col as f64 + 0.5, r as f64 + 0.5]));
        }
        assert!(!point_in_loops(c[0].loops(), [1.5, 0.5]));
    }

    #[test]
    fn corners_follow_grid_geometry() {
        let g = GridGeometry {
            receptive_field_px: 30,
            output_stride_px: 4,
            offset_px: 14,
            canonical_patch_px: 30,
            start_px: 0,
        };
        assert_eq!(grid_corner_px(&g, 0), 13.0);
        assert_eq!(cell_center_continuous(&g, 0, 1), [19.0, 15.0]);
    }

    #[test]
    fn feret_of_square_and_segment() {
        assert!((feret_diameter(&[[0.0, 0.0], [3.0, 0.0], [3.0, 4.0], [0.0, 4.0]]) - 5.0).abs() < 1e-12);
        assert_eq!(feret_diameter(&[[1.0, 1.0]]), 0.0);
        assert_eq!(feret_diameter(&[[0.0, 0.0], [0.0, 2.0], [0.0, 1.0]]), 2.0);
    }
}
