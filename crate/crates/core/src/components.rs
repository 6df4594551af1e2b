//! 8-connected component labeling on cell grids.

use crate::grid::GridDims;

/// Components of the `true` cells, each as a list of row-major indices.
/// Components are ordered by their first cell in raster order, and cells
/// within a component are sorted.
pub fn connected_components(cells: &[bool], dims: GridDims) -> Vec<Vec<usize>> {
    let (rows, cols) = (dims.rows as i64, dims.cols as i64);
    debug_assert_eq!(cells.len(), dims.len());
    let mut seen = vec![false; cells.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (r, c) = ((i as i64) / cols, (i as i64) % cols);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                        continue;
                    }
                    let n = (nr * cols + nc) as usize;
                    if cells[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}
