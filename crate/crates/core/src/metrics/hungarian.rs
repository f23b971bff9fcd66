//! Shortest-augmenting-path Hungarian algorithm with row/column potentials,
//! O(n³).

use super::{Assignment, CostMatrix};

/// Optimal assignment plus the dual potentials `u` (rows) and `v` (columns).
/// At termination `u[i] + v[j] <= c[i][j]` for every pair, with equality on
/// the matched pairs.
#[derive(Debug, Clone)]
pub struct HungarianSolution {
    pub assignment: Assignment,
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
}

pub fn solve(cost: &CostMatrix) -> HungarianSolution {
    let n = cost.n();
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            perm[owner[j] - 1] = j - 1;
        }
    }
    HungarianSolution {
        assignment: Assignment::from_permutation(cost, perm),
        row_potential: u[1..].to_vec(),
        col_potential: v[1..].to_vec(),
    }
}
