//! Transportation simplex for general (unequal, non-uniform) marginals.
//!
//! The basis is kept as a spanning tree of `m + n - 1` cells over the bipartite
//! row/column graph, degenerate zero-flow cells included. Potentials come from
//! the tree, the entering cell is the most negative reduced cost (Dantzig rule,
//! lowest index on ties) and the leaving cell is found on the unique cycle the
//! entering cell closes.

use std::collections::VecDeque;

use super::OtError;
use crate::matrix::Matrix;

/// Optimal flow matrix for supplies `supply` (rows) and demands `demand` (columns).
///
/// Callers are expected to have checked shapes and that the totals agree.
pub fn solve_transport(cost: &Matrix, supply: &[f64], demand: &[f64]) -> Result<Matrix, OtError> {
    let (m, n) = (supply.len(), demand.len());
    assert_eq!(cost.shape(), (m, n), "cost shape does not match marginals");
    if m == 0 || n == 0 {
        return Err(OtError::EmptySupport);
    }

    let mut flow = Matrix::zeros(m, n);
    let mut basic = vec![false; m * n];
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);

    // north-west corner start
    let mut rem_supply = supply.to_vec();
    let mut rem_demand = demand.to_vec();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let x = rem_supply[i].min(rem_demand[j]);
        flow[(i, j)] = x;
        basic[i * n + j] = true;
        cells.push((i, j));
        rem_supply[i] -= x;
        rem_demand[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || rem_supply[i] < rem_demand[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(cells.len(), m + n - 1);

    let scale = cost
        .as_slice()
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-12 * scale;
    let max_pivots = 1000 + 50 * m * n;

    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    for _ in 0..max_pivots {
        compute_potentials(cost, &cells, &mut u, &mut v);

        let mut entering = None;
        let mut best = -tol;
        for i in 0..m {
            for j in 0..n {
                if basic[i * n + j] {
                    continue;
                }
                let reduced = cost[(i, j)] - u[i] - v[j];
                if reduced < best {
                    best = reduced;
                    entering = Some((i, j));
                }
            }
        }
        let Some((p, q)) = entering else {
            return Ok(flow);
        };

        // cycle: (p, q) then the tree path from column q back to row p
        let path = tree_path(&cells, m, n, q, p);
        // path[k] are cells; signs alternate starting with minus
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (k, &cell_idx) in path.iter().enumerate() {
            if k % 2 == 0 {
                let (ci, cj) = cells[cell_idx];
                if flow[(ci, cj)] < theta {
                    theta = flow[(ci, cj)];
                    leaving = cell_idx;
                }
            }
        }
        for (k, &cell_idx) in path.iter().enumerate() {
            let (ci, cj) = cells[cell_idx];
            if k % 2 == 0 {
                flow[(ci, cj)] = (flow[(ci, cj)] - theta).max(0.0);
            } else {
                flow[(ci, cj)] += theta;
            }
        }
        let (li, lj) = cells[leaving];
        flow[(li, lj)] = 0.0;
        flow[(p, q)] = theta;
        basic[li * n + lj] = false;
        basic[p * n + q] = true;
        cells[leaving] = (p, q);
    }
    Err(OtError::PivotLimit(max_pivots))
}

fn compute_potentials(cost: &Matrix, cells: &[(usize, usize)], u: &mut [f64], v: &mut [f64]) {
    let (m, n) = (u.len(), v.len());
    let mut row_cells: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut col_cells: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(i, j)) in cells.iter().enumerate() {
        row_cells[i].push(k);
        col_cells[j].push(k);
    }
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    row_done[0] = true;
    queue.push_back(Node::Row(0));
    while let Some(node) = queue.pop_front() {
        match node {
            Node::Row(i) => {
                for &k in &row_cells[i] {
                    let j = cells[k].1;
                    if !col_done[j] {
                        v[j] = cost[(i, j)] - u[i];
                        col_done[j] = true;
                        queue.push_back(Node::Col(j));
                    }
                }
            }
            Node::Col(j) => {
                for &k in &col_cells[j] {
                    let i = cells[k].0;
                    if !row_done[i] {
                        u[i] = cost[(i, j)] - v[j];
                        row_done[i] = true;
                        queue.push_back(Node::Row(i));
                    }
                }
            }
        }
    }
    debug_assert!(
        row_done.iter().all(|&d| d) && col_done.iter().all(|&d| d),
        "basis is not spanning"
    );
}

#[derive(Clone, Copy)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Cells (as indices into `cells`) on the tree path from column `start_col` to row `end_row`.
fn tree_path(
    cells: &[(usize, usize)],
    m: usize,
    n: usize,
    start_col: usize,
    end_row: usize,
) -> Vec<usize> {
    // node ids: rows 0..m, columns m..m+n
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
    for (k, &(i, j)) in cells.iter().enumerate() {
        adjacency[i].push((m + j, k));
        adjacency[m + j].push((i, k));
    }
    let start = m + start_col;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == end_row {
            break;
        }
        for &(next, k) in &adjacency[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, k));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = end_row;
    while node != start {
        let (prev, k) = parent[node].expect("basis tree is disconnected");
        path.push(k);
        node = prev;
    }
    path.reverse();
    path
}
