use serde::{Deserialize, Serialize};

/// Binary mask on the heatmap grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), rows * cols, "mask size");
        Self { rows, cols, cells }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// 1-based label, assigned in raster order of each region's first cell.
    pub id: u32,
    pub area: usize,
    /// `(row, col)` of the first cell in raster order.
    pub first: (usize, usize),
    /// Inclusive bounds `(min_row, min_col, max_row, max_col)`.
    pub bbox: (usize, usize, usize, usize),
}

/// Per-cell labels (0 = background) and region summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
}

impl Labels {
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.labels[r * self.cols + c]
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// 8-connected labeling by union-find over cells.
pub fn connected_components(mask: &Mask) -> Labels {
    let (rows, cols) = (mask.rows, mask.cols);
    let n = rows * cols;
    let mut parent: Vec<usize> = (0..n).collect();
    for r in 0..rows {
        for c in 0..cols {
            if !mask.get(r, c) {
                continue;
            }
            let i = r * cols + c;
            // Already-visited neighbors: W, NW, N, NE.
            let mut neighbors = Vec::with_capacity(4);
            if c > 0 {
                neighbors.push((r, c - 1));
            }
            if r > 0 {
                if c > 0 {
                    neighbors.push((r - 1, c - 1));
                }
                neighbors.push((r - 1, c));
                if c + 1 < cols {
                    neighbors.push((r - 1, c + 1));
                }
            }
            for (nr, nc) in neighbors {
                if mask.get(nr, nc) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, nr * cols + nc));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut labels = vec![0u32; n];
    let mut root_label = vec![0u32; n];
    let mut regions: Vec<Region> = Vec::new();
    for i in 0..n {
        if !mask.cells[i] {
            continue;
        }
        let root = find(&mut parent, i);
        let (r, c) = (i / cols, i % cols);
        if root_label[root] == 0 {
            regions.push(Region {
                id: regions.len() as u32 + 1,
                area: 0,
                first: (r, c),
                bbox: (r, c, r, c),
            });
            root_label[root] = regions.len() as u32;
        }
        let id = root_label[root];
        labels[i] = id;
        let reg = &mut regions[id as usize - 1];
        reg.area += 1;
        reg.bbox = (reg.bbox.0.min(r), reg.bbox.1.min(c), reg.bbox.2.max(r), reg.bbox.3.max(c));
    }
    Labels {
        rows,
        cols,
        labels,
        regions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> Mask {
        let cols = rows[0].len();
        Mask::new(rows.len(), cols, rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect())
    }

    #[test]
    fn separated_blobs() {
        let l = connected_components(&mask(&["##..", "##..", "...#", "..##"]));
        assert_eq!(l.regions.len(), 2);
        assert_eq!(l.regions[0].area, 4);
        assert_eq!(l.regions[1].first, (2, 3));
    }

    #[test]
    fn diagonal_touch_is_one_component() {
        let l = connected_components(&mask(&["#.", ".#"]));
        assert_eq!(l.regions.len(), 1);
        let l = connected_components(&mask(&[".#", "#."]));
        assert_eq!(l.regions.len(), 1);
    }

    #[test]
    fn u_shape_merges_late() {
        let l = connected_components(&mask(&["#.#", "#.#", "###"]));
        assert_eq!(l.regions.len(), 1);
        assert_eq!(l.regions[0].area, 7);
        assert!(l.labels.iter().all(|&v| v <= 1));
    }
}
