//! Linear assignment by shortest augmenting paths with dual potentials.
//!
//! O(n^3) for an `n x n` matrix. Rows are inserted one at a time; each insertion
//! runs a Dijkstra-like search over reduced costs and augments along the
//! shortest path found.

use crate::matrix::Matrix;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `assignment` with `assignment[row] = column`. Entries must be finite.
/// Among equal reduced costs the lowest column index is explored first, so the
/// result is deterministic for a given matrix.
pub fn solve_assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "assignment needs a square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.is_finite());

    // 1-based internally; column 0 is the virtual source of each augmentation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0usize;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[col0] = true;
            let r = row_of_col[col0];
            let cost_row = cost.row(r - 1);
            let mut delta = f64::INFINITY;
            let mut next_col = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost_row[col - 1] - u[r] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    next_col = col;
                }
            }
            assert!(
                next_col != 0,
                "assignment search stalled; costs must be finite"
            );
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = next_col;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[row_of_col[col] - 1] = col - 1;
    }
    assignment
}
