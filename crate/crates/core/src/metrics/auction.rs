//! Forward auction with ε-scaling for the dense assignment problem.
//!
//! Persons (rows) bid for objects (columns) with benefit `-c[i][j]`. Each
//! phase ends with every person assigned and ε-complementary slackness, so the
//! final phase's assignment costs at most `n * eps_final` above optimal.

use super::{Assignment, CostMatrix};

const SCALING: f64 = 5.0;

pub fn solve(cost: &CostMatrix, eps_final: f64) -> Assignment {
    let n = cost.n();
    if n == 1 {
        return Assignment::from_permutation(cost, vec![0]);
    }
    let max_cost = cost.data().iter().cloned().fold(0.0, f64::max);
    let mut eps = (max_cost / 4.0).max(eps_final);
    let mut prices = vec![0.0f64; n];
    let mut person_to_object = vec![usize::MAX; n];
    let mut object_to_person = vec![usize::MAX; n];
    let mut unassigned: Vec<usize> = Vec::with_capacity(n);

    loop {
        person_to_object.fill(usize::MAX);
        object_to_person.fill(usize::MAX);
        unassigned.clear();
        unassigned.extend((0..n).rev());

        while let Some(i) = unassigned.pop() {
            let row = cost.row(i);
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let value = -c - p;
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            prices[best_j] += best - second + eps;
            let previous = object_to_person[best_j];
            if previous != usize::MAX {
                person_to_object[previous] = usize::MAX;
                unassigned.push(previous);
            }
            object_to_person[best_j] = i;
            person_to_object[i] = best_j;
        }

        if eps <= eps_final {
            break;
        }
        eps = (eps / SCALING).max(eps_final);
    }
    Assignment::from_permutation(cost, person_to_object)
}
