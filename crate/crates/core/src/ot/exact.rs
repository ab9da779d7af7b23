//! Transportation simplex on the bipartite source/target graph.
//!
//! The basis is a spanning tree of `m + n - 1` cells (degenerate zero-flow
//! cells included). Entering and leaving cells follow Bland's rule, which
//! rules out cycling on the heavily degenerate uniform-marginal instances the
//! alignment code produces.

use std::collections::VecDeque;

use super::{validate_marginals, TransportPlan};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Largest `|μ|·|ν|` accepted by [`solve_exact`].
pub const EXACT_CELL_LIMIT: usize = 4096;

pub fn solve_exact(cost: &Matrix, mu: &Vector, nu: &Vector) -> Result<TransportPlan> {
    let cells = cost.rows() * cost.cols();
    if cells > EXACT_CELL_LIMIT {
        return Err(Error::ExactTooLarge {
            cells,
            limit: EXACT_CELL_LIMIT,
        });
    }
    validate_marginals(cost, mu, nu, false)?;

    let mut simplex = Simplex::northwest_corner(cost, mu.as_slice(), nu.as_slice());
    let iterations = simplex.run();

    let mut plan = Matrix::zeros(cost.rows(), cost.cols());
    for (&cell, &flow) in simplex.basis.iter().zip(&simplex.flow) {
        plan.as_mut_slice()[cell] = flow.max(0.0);
    }
    let result = TransportPlan {
        plan,
        row_marginal: mu.clone(),
        col_marginal: nu.clone(),
        col_violation: 0.0,
        iterations,
    };
    let col_violation = result.measured_col_violation();
    Ok(TransportPlan {
        col_violation,
        ..result
    })
}

struct Simplex<'a> {
    cost: &'a Matrix,
    m: usize,
    n: usize,
    /// Basic cells as flat row-major indices, kept sorted.
    basis: Vec<usize>,
    flow: Vec<f64>,
    tol: f64,
}

impl<'a> Simplex<'a> {
    fn northwest_corner(cost: &'a Matrix, mu: &[f64], nu: &[f64]) -> Self {
        let (m, n) = cost.shape();
        let mut supply = mu.to_vec();
        let mut demand = nu.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            supply[i] -= x;
            demand[j] -= x;
            cells.push((i * n + j, x));
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || supply[i] <= demand[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(cells.len(), m + n - 1);
        cells.sort_by_key(|c| c.0);
        let scale = cost.as_slice().iter().fold(1.0f64, |a, c| a.max(c.abs()));
        Self {
            cost,
            m,
            n,
            basis: cells.iter().map(|c| c.0).collect(),
            flow: cells.iter().map(|c| c.1).collect(),
            tol: 1e-12 * scale,
        }
    }

    fn run(&mut self) -> usize {
        let mut pivots = 0;
        while let Some(entering) = self.entering_cell() {
            self.pivot(entering);
            pivots += 1;
        }
        pivots
    }

    /// Tree adjacency: node `i < m` is source row `i`, node `m + j` is target `j`.
    /// Each entry lists (neighbour, basis slot).
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (slot, &cell) in self.basis.iter().enumerate() {
            let (i, j) = (cell / self.n, cell % self.n);
            adj[i].push((self.m + j, slot));
            adj[self.m + j].push((i, slot));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![0.0; self.m];
        let mut v = vec![0.0; self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(node) = queue.pop_front() {
            for &(next, slot) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let c = self.cost.as_slice()[self.basis[slot]];
                if next >= self.m {
                    v[next - self.m] = c - u[node];
                } else {
                    u[next] = c - v[node - self.m];
                }
                queue.push_back(next);
            }
        }
        (u, v)
    }

    /// Lowest-index nonbasic cell with negative reduced cost.
    fn entering_cell(&self) -> Option<usize> {
        let adj = self.adjacency();
        let (u, v) = self.potentials(&adj);
        let mut basic = self.basis.iter().peekable();
        for cell in 0..self.m * self.n {
            if basic.peek() == Some(&&cell) {
                basic.next();
                continue;
            }
            let (i, j) = (cell / self.n, cell % self.n);
            if self.cost.as_slice()[cell] - u[i] - v[j] < -self.tol {
                return Some(cell);
            }
        }
        None
    }

    fn pivot(&mut self, entering: usize) {
        let (ei, ej) = (entering / self.n, entering % self.n);
        let adj = self.adjacency();

        // Tree path from target node `ej` to source node `ei`.
        let start = self.m + ej;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            for &(next, slot) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, slot));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = ei;
        while node != start {
            let (prev, slot) = parent[node].expect("basis is a spanning tree");
            path.push(slot);
            node = prev;
        }
        // `path` runs from the source end back to the target end; the cell
        // adjacent to the entering cell's source gets a minus sign, then signs
        // alternate.
        let minus: Vec<usize> = path.iter().copied().step_by(2).collect();
        let plus: Vec<usize> = path.iter().copied().skip(1).step_by(2).collect();

        let theta = minus
            .iter()
            .map(|&s| self.flow[s])
            .fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&s| self.flow[s] == theta)
            .min_by_key(|&s| self.basis[s])
            .expect("cycle has a minus cell");

        for &s in &minus {
            self.flow[s] -= theta;
        }
        for &s in &plus {
            self.flow[s] += theta;
        }
        self.basis.remove(leaving);
        self.flow.remove(leaving);
        let pos = self.basis.partition_point(|&c| c < entering);
        self.basis.insert(pos, entering);
        self.flow.insert(pos, theta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Vector {
        Vector::uniform(n)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn zero_cost_any_feasible_plan() {
        let cost = Matrix::zeros(3, 4);
        let plan = solve_exact(&cost, &uniform(3), &uniform(4)).unwrap();
        assert_eq!(plan.objective(&cost).unwrap(), 0.0);
        assert!(plan.row_violation() < 1e-12);
        assert!(plan.measured_col_violation() < 1e-12);
    }

    #[test]
    fn two_by_two_identity_matching() {
        let cost = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let plan = solve_exact(&cost, &uniform(2), &uniform(2)).unwrap();
        assert_eq!(plan.plan, Matrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]));
        assert_eq!(plan.objective(&cost).unwrap(), 0.0);
    }

    #[test]
    fn anti_diagonal_needs_a_pivot() {
        let cost = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let plan = solve_exact(&cost, &uniform(2), &uniform(2)).unwrap();
        assert_eq!(plan.plan, Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]));
    }

    #[test]
    fn square_uniform_matches_best_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 4, 5] {
            for _ in 0..20 {
                let cost = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
                let plan = solve_exact(&cost, &uniform(n), &uniform(n)).unwrap();
                let best = permutations(n)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    / n as f64;
                assert!((plan.objective(&cost).unwrap() - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rectangular_general_marginals_beat_random_feasible_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let m = rng.random_range(1..=6);
            let n = rng.random_range(1..=6);
            let cost = Matrix::from_fn(m, n, |_, _| rng.random_range(0.0..3.0));
            let mu = random_simplex(m, &mut rng);
            let nu = random_simplex(n, &mut rng);
            let plan = solve_exact(&cost, &mu, &nu).unwrap();
            assert!(plan.row_violation() < 1e-12);
            assert!(plan.measured_col_violation() < 1e-12);
            let best = plan.objective(&cost).unwrap();
            // independent-coupling and north-west plans are feasible competitors
            let outer = Matrix::from_fn(m, n, |i, j| mu[i] * nu[j]);
            assert!(best <= frobenius_dot(&cost, &outer).unwrap() + 1e-12);
        }
    }

    #[test]
    fn zero_marginal_entries_are_allowed() {
        let cost = Matrix::from_rows(&[[1.0, 2.0], [0.5, 0.1]]);
        let mu = Vector(vec![0.0, 1.0]);
        let nu = Vector(vec![0.25, 0.75]);
        let plan = solve_exact(&cost, &mu, &nu).unwrap();
        assert_eq!(plan.plan.row(0), &[0.0, 0.0]);
        assert!((plan.objective(&cost).unwrap() - (0.25 * 0.5 + 0.75 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn size_guard() {
        let cost = Matrix::zeros(65, 65);
        let err = solve_exact(&cost, &uniform(65), &uniform(65)).unwrap_err();
        assert!(matches!(err, Error::ExactTooLarge { .. }));
        assert!(err.to_string().contains("sinkhorn"));
    }

    #[test]
    fn invalid_marginals_rejected() {
        let cost = Matrix::zeros(2, 2);
        assert!(matches!(
            solve_exact(&cost, &Vector(vec![0.9, 0.9]), &uniform(2)),
            Err(Error::InvalidMarginals(_))
        ));
    }

    #[test]
    fn permuting_rows_permutes_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = 5;
            let cost = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = Matrix::from_fn(n, n, |i, j| cost[(perm[i], j)]);
            let a = solve_exact(&cost, &uniform(n), &uniform(n)).unwrap();
            let b = solve_exact(&permuted, &uniform(n), &uniform(n)).unwrap();
            let oa = a.objective(&cost).unwrap();
            let ob = b.objective(&permuted).unwrap();
            assert!((oa - ob).abs() < 1e-12);
            // continuous random costs have a unique optimum
            for i in 0..n {
                assert_eq!(b.plan.row(i), a.plan.row(perm[i]));
            }
        }
    }

    fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vector {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mut v: Vec<f64> = raw.iter().map(|x| x / s).collect();
        // push rounding residue into the last entry
        let rest: f64 = v[..n - 1].iter().sum();
        v[n - 1] = 1.0 - rest;
        Vector(v)
    }
}
