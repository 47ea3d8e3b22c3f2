//! Defensive assignment as a linear sum assignment problem.

use serde::{Deserialize, Serialize};

use crate::frame::{distance, PLAYERS_PER_TEAM};

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n^3)). Returns the column assigned to each row.
pub fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|row| row.len() == n));

    // 1-based potentials; column 0 is a sentinel
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Cost of an assignment, summed in row order.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .fold(0.0, |acc, (i, &j)| acc + cost[i][j])
}

/// Optimal assignment that is lexicographically least among all optimal ones.
///
/// Rows are fixed one at a time to the lowest column that still admits a
/// completion within a relative tolerance of the optimum.
pub fn solve_lexicographic(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let best = assignment_cost(cost, &solve(cost));
    let tol = 1e-9 * best.abs().max(1.0);

    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let remaining_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for col in 0..n {
            if fixed.contains(&col) {
                continue;
            }
            let free_cols: Vec<usize> = (0..n).filter(|c| *c != col && !fixed.contains(c)).collect();
            let sub: Vec<Vec<f64>> = remaining_rows
                .iter()
                .map(|&r| free_cols.iter().map(|&c| cost[r][c]).collect())
                .collect();
            let completion = assignment_cost(&sub, &solve(&sub));
            if fixed_cost + cost[row][col] + completion <= best + tol {
                chosen = Some(col);
                break;
            }
        }
        let col = chosen.expect("an optimal completion always exists");
        fixed_cost += cost[row][col];
        fixed.push(col);
    }
    let total = assignment_cost(cost, &fixed);
    (fixed, total)
}

/// Attacker-to-defender matching at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefensiveAssignment {
    pub step: usize,
    /// `defender_of[a]` is the team-local index (0..5) of attacker `a`'s defender.
    pub defender_of: [usize; PLAYERS_PER_TEAM],
    /// Total attacker-defender distance in feet.
    pub cost: f64,
}

/// Matches the five defenders to the five attackers minimizing the summed distance.
pub fn assign_defense(step: usize, attackers: &[[f64; 2]], defenders: &[[f64; 2]]) -> DefensiveAssignment {
    assert_eq!(attackers.len(), PLAYERS_PER_TEAM);
    assert_eq!(defenders.len(), PLAYERS_PER_TEAM);
    let cost: Vec<Vec<f64>> = attackers
        .iter()
        .map(|a| defenders.iter().map(|d| distance(*a, *d)).collect())
        .collect();
    let (perm, total) = solve_lexicographic(&cost);
    let mut defender_of = [0; PLAYERS_PER_TEAM];
    defender_of.copy_from_slice(&perm);
    DefensiveAssignment {
        step,
        defender_of,
        cost: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive oracle: minimum cost, and the lexicographically least optimal permutation.
    fn brute_force(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let mut perms = permutations(cost.len());
        perms.sort();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in perms {
            let c = assignment_cost(cost, &p);
            if best.as_ref().is_none_or(|(_, b)| c < *b) {
                best = Some((p, c));
            }
        }
        best.unwrap()
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(permutations(5).len(), 120);
        for _ in 0..1000 {
            let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0.0..50.0)).collect()).collect();
            let (perm, c) = solve_lexicographic(&cost);
            let (bperm, bc) = brute_force(&cost);
            assert_eq!(c, bc);
            assert_eq!(perm, bperm);
        }
    }

    #[test]
    fn stacked_players_cost_zero() {
        let att: Vec<[f64; 2]> = (0..5).map(|i| [10.0 * i as f64, 60.0]).collect();
        let a = assign_defense(0, &att, &att);
        assert_eq!(a.defender_of, [0, 1, 2, 3, 4]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn ties_resolve_to_lexicographically_least() {
        // all costs equal: every bijection is optimal
        let cost = vec![vec![1.0; 5]; 5];
        assert_eq!(solve_lexicographic(&cost).0, vec![0, 1, 2, 3, 4]);
        // two optimal matchings for rows 0 and 1: {0->1, 1->0} and {0->0, 1->1}
        let mut cost = vec![vec![9.0; 3]; 3];
        cost[0][0] = 2.0;
        cost[0][1] = 1.0;
        cost[1][0] = 1.0;
        cost[1][1] = 2.0;
        cost[2][2] = 0.0;
        cost[0][0] = 1.0;
        cost[1][1] = 1.0;
        let (perm, c) = solve_lexicographic(&cost);
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(c, 2.0);
        // mirrored defenders equidistant from two attackers
        let att = [[0.0, 60.0], [10.0, 60.0], [30.0, 80.0], [40.0, 80.0], [45.0, 55.0]];
        let def = [[5.0, 65.0], [5.0, 55.0], [30.0, 80.0], [40.0, 80.0], [45.0, 55.0]];
        let a = assign_defense(3, &att, &def);
        assert_eq!(a.defender_of, [0, 1, 2, 3, 4]);
        assert_eq!(a.step, 3);
    }
}
