use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NoiseGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub gamma_t: f64,
    pub kappa_t: f64,
}

pub type Polyline = Vec<BoundaryPoint>;

/// Grid edge carrying a contour vertex: `(i, j, vertical)` where a horizontal
/// edge joins `(i, j)`–`(i + 1, j)` and a vertical edge `(i, j)`–`(i, j + 1)`.
type EdgeKey = (usize, usize, bool);

fn positive(v: f64) -> bool {
    v > 0.0
}

/// Zero contour of `delta[i][j]` (`i` indexes gamma, `j` kappa) by marching
/// squares with linear interpolation along cell edges. Squares touching a
/// non-finite value are skipped. Saddles are split according to the sign of
/// the cell average.
pub fn extract_boundary(delta: &[Vec<f64>], grid: &NoiseGrid) -> Vec<Polyline> {
    let ng = grid.gamma_values.len();
    let nk = grid.kappa_values.len();
    if ng < 2 || nk < 2 || delta.len() != ng || delta.iter().any(|row| row.len() != nk) {
        return Vec::new();
    }
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..ng - 1 {
        for j in 0..nk - 1 {
            let v00 = delta[i][j];
            let v10 = delta[i + 1][j];
            let v01 = delta[i][j + 1];
            let v11 = delta[i + 1][j + 1];
            if ![v00, v10, v01, v11].iter().all(|v| v.is_finite()) {
                continue;
            }
            let bottom = (i, j, false);
            let top = (i, j + 1, false);
            let left = (i, j, true);
            let right = (i + 1, j, true);
            let mut crossed = Vec::with_capacity(4);
            if positive(v00) != positive(v10) {
                crossed.push(bottom);
            }
            if positive(v10) != positive(v11) {
                crossed.push(right);
            }
            if positive(v01) != positive(v11) {
                crossed.push(top);
            }
            if positive(v00) != positive(v01) {
                crossed.push(left);
            }
            match crossed.len() {
                2 => segments.push((crossed[0], crossed[1])),
                4 => {
                    let centre = positive(0.25 * (v00 + v10 + v01 + v11));
                    // the corners sharing the centre's sign are connected,
                    // so the contour cuts off the two opposite corners
                    if positive(v00) == centre {
                        segments.push((bottom, right));
                        segments.push((left, top));
                    } else {
                        segments.push((bottom, left));
                        segments.push((right, top));
                    }
                }
                _ => {}
            }
        }
    }
    chain(segments)
        .into_iter()
        .map(|keys| keys.into_iter().map(|k| edge_point(k, delta, grid)).collect())
        .collect()
}

fn edge_point((i, j, vertical): EdgeKey, delta: &[Vec<f64>], grid: &NoiseGrid) -> BoundaryPoint {
    let (i2, j2) = if vertical { (i, j + 1) } else { (i + 1, j) };
    let a = delta[i][j];
    let b = delta[i2][j2];
    let t = if a == b { 0.5 } else { a / (a - b) };
    let lerp = |x0: f64, x1: f64| x0 + t * (x1 - x0);
    BoundaryPoint {
        gamma_t: lerp(grid.gamma_values[i], grid.gamma_values[i2]),
        kappa_t: lerp(grid.kappa_values[j], grid.kappa_values[j2]),
    }
}

/// Joins segments sharing an edge into ordered polylines: open chains first,
/// then closed loops, each started from its smallest free key.
fn chain(segments: Vec<(EdgeKey, EdgeKey)>) -> Vec<Vec<EdgeKey>> {
    let mut adjacency: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(s);
        adjacency.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let ends: Vec<EdgeKey> = adjacency
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(k, _)| *k)
        .collect();
    let all_keys: Vec<EdgeKey> = adjacency.keys().copied().collect();
    for start in ends.into_iter().chain(all_keys) {
        let Some(&first) = adjacency[&start].iter().find(|&&s| !used[s]) else {
            continue;
        };
        let mut line = vec![start];
        let mut current = start;
        let mut seg = first;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == current { b } else { a };
            line.push(next);
            current = next;
            match adjacency[&current].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        lines.push(line);
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(g: Vec<f64>, k: Vec<f64>) -> NoiseGrid {
        NoiseGrid::new(g, k, "test").unwrap()
    }

    #[test]
    fn constant_field_has_no_boundary() {
        let g = grid(vec![0.01, 0.02, 0.03], vec![1e-4, 2e-4]);
        let d = vec![vec![0.01; 2]; 3];
        assert!(extract_boundary(&d, &g).is_empty());
    }

    #[test]
    fn sign_change_along_gamma_gives_midpoint_segment() {
        let g = grid(vec![0.0, 1.0], vec![0.0, 1.0]);
        // negative at the first gamma column, positive at the second
        let d = vec![vec![-1.0, -1.0], vec![1.0, 1.0]];
        let lines = extract_boundary(&d, &g);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 2);
        for p in &lines[0] {
            assert_eq!(p.gamma_t, 0.5);
        }
        let mut ks: Vec<f64> = lines[0].iter().map(|p| p.kappa_t).collect();
        ks.sort_by(f64::total_cmp);
        assert_eq!(ks, vec![0.0, 1.0]);
    }

    #[test]
    fn interpolation_is_linear() {
        let g = grid(vec![0.0, 4.0], vec![0.0, 1.0]);
        let d = vec![vec![-1.0, -3.0], vec![3.0, 1.0]];
        let line = &extract_boundary(&d, &g)[0];
        let at = |k: f64| line.iter().find(|p| p.kappa_t == k).unwrap().gamma_t;
        assert_eq!(at(0.0), 1.0);
        assert_eq!(at(1.0), 3.0);
    }

    #[test]
    fn saddle_follows_cell_average() {
        let g = grid(vec![0.0, 1.0], vec![0.0, 1.0]);
        // positive diagonal dominates: negative corners are cut off
        let d = vec![vec![2.0, -1.0], vec![-1.0, 2.0]];
        let lines = extract_boundary(&d, &g);
        assert_eq!(lines.len(), 2);
        for line in &lines {
            let corner_is_10 = line.iter().all(|p| p.gamma_t >= 0.5 && p.kappa_t <= 0.5);
            let corner_is_01 = line.iter().all(|p| p.gamma_t <= 0.5 && p.kappa_t >= 0.5);
            assert!(corner_is_10 || corner_is_01);
        }
    }

    #[test]
    fn segments_join_across_cells() {
        let g = grid(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        let d = vec![vec![-1.0; 3], vec![1.0; 3], vec![1.0; 3]];
        let lines = extract_boundary(&d, &g);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 3);
    }

    #[test]
    fn closed_loop_is_closed() {
        let g = grid(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        let mut d = vec![vec![-1.0; 3]; 3];
        d[1][1] = 1.0;
        let lines = extract_boundary(&d, &g);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].first(), lines[0].last());
        assert_eq!(lines[0].len(), 5);
    }

    #[test]
    fn non_finite_cells_are_skipped() {
        let g = grid(vec![0.0, 1.0], vec![0.0, 1.0]);
        let d = vec![vec![-1.0, f64::NAN], vec![1.0, 1.0]];
        assert!(extract_boundary(&d, &g).is_empty());
    }

    proptest! {
        #[test]
        fn vertices_lie_on_sign_changing_edges(
            values in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let gs = vec![0.01, 0.03, 0.06, 0.1, 0.15];
            let ks = vec![1e-4, 1e-3, 3e-3, 7.2e-3];
            let g = grid(gs.clone(), ks.clone());
            let d: Vec<Vec<f64>> = values.chunks(4).map(|c| c.to_vec()).collect();
            for line in extract_boundary(&d, &g) {
                for p in line {
                    let on_edge = (0..5).any(|i| (0..4).any(|j| {
                        let h = i + 1 < 5
                            && p.kappa_t == ks[j]
                            && p.gamma_t >= gs[i] && p.gamma_t <= gs[i + 1]
                            && (d[i][j] > 0.0) != (d[i + 1][j] > 0.0);
                        let v = j + 1 < 4
                            && p.gamma_t == gs[i]
                            && p.kappa_t >= ks[j] && p.kappa_t <= ks[j + 1]
                            && (d[i][j] > 0.0) != (d[i][j + 1] > 0.0);
                        h || v
                    }));
                    prop_assert!(on_edge, "{p:?}");
                }
            }
        }
    }
}
