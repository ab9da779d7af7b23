use super::{validate_marginals, OtConfig, OtMode, TransportPlan};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Entropic OT by alternating dual updates in the log domain.
///
/// Stops once the row-sum error drops below `cfg.convergence_tol` (column sums
/// are exact after every sweep) or after `cfg.max_iters` sweeps. The returned
/// plan is then rescaled row by row so its row sums match `mu`; whatever column
/// error remains is reported in [`TransportPlan::col_violation`].
pub fn solve_sinkhorn(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    cfg: &OtConfig,
) -> Result<TransportPlan> {
    if cfg.mode != OtMode::Sinkhorn {
        return Err(Error::InvalidConfig {
            field: "ot.mode",
            reason: "solve_sinkhorn requires sinkhorn mode".into(),
        });
    }
    cfg.validate()?;
    validate_marginals(cost, mu, nu, true)?;

    let eps = cfg.epsilon.resolve(cost);
    let (m, n) = cost.shape();
    let log_mu: Vec<f64> = mu.0.iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = nu.0.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; m.max(n)];

    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        for i in 0..m {
            for j in 0..n {
                scratch[j] = (g[j] - cost[(i, j)]) / eps;
            }
            f[i] = eps * (log_mu[i] - log_sum_exp(&scratch[..n]));
        }
        for j in 0..n {
            for i in 0..m {
                scratch[i] = (f[i] - cost[(i, j)]) / eps;
            }
            g[j] = eps * (log_nu[j] - log_sum_exp(&scratch[..m]));
        }
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::SinkhornDiverged { epsilon: eps });
        }
        if row_error(cost, &f, &g, eps, mu) < cfg.convergence_tol {
            break;
        }
    }

    let mut plan = Matrix::from_fn(m, n, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    for (i, target) in mu.0.iter().enumerate() {
        let row = plan.row_mut(i);
        let s: f64 = row.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::SinkhornDiverged { epsilon: eps });
        }
        let scale = target / s;
        row.iter_mut().for_each(|v| *v *= scale);
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

fn row_error(cost: &Matrix, f: &[f64], g: &[f64], eps: f64, mu: &Vector) -> f64 {
    let mut worst = 0.0f64;
    for (i, fi) in f.iter().enumerate() {
        let s: f64 = g
            .iter()
            .enumerate()
            .map(|(j, gj)| ((fi + gj - cost[(i, j)]) / eps).exp())
            .sum();
        worst = worst.max((s - mu[i]).abs());
    }
    worst
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{solve_exact, Epsilon};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(rel: f64) -> OtConfig {
        OtConfig {
            max_iters: 100_000,
            ..OtConfig::sinkhorn(Epsilon::Relative(rel))
        }
    }

    #[test]
    fn constant_cost_gives_independent_coupling() {
        let cost = Matrix::filled(3, 4, 2.0);
        let mu = Vector(vec![0.2, 0.3, 0.5]);
        let nu = Vector::uniform(4);
        let plan = solve_sinkhorn(&cost, &mu, &nu, &OtConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((plan.plan[(i, j)] - mu[i] * nu[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_points_concentrate_on_diagonal() {
        let pts: Vec<[f64; 2]> = vec![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
        let a = Matrix::from_rows(&pts);
        let cost = crate::linalg::pairwise_euclidean(&a, &a).unwrap();
        let u = Vector::uniform(4);
        let exact = solve_exact(&cost, &u, &u).unwrap();
        assert_eq!(exact.objective(&cost).unwrap(), 0.0);
        let plan = solve_sinkhorn(&cost, &u, &u, &cfg(0.01)).unwrap();
        let diag: f64 = (0..4).map(|i| plan.plan[(i, i)]).sum();
        assert!(diag > 0.9, "diagonal mass {diag}");
        // exact objective is 0, so the entropic gap is the whole objective
        assert!(plan.objective(&cost).unwrap() < 0.05 * cost.mean());
    }

    #[test]
    fn gap_shrinks_with_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cost = Matrix::from_fn(6, 4, |_, _| rng.random_range(0.0..1.0));
        let (mu, nu) = (Vector::uniform(6), Vector::uniform(4));
        let exact = solve_exact(&cost, &mu, &nu).unwrap().objective(&cost).unwrap();
        let mut prev = f64::INFINITY;
        for rel in [1.0, 0.1, 0.01] {
            let p = solve_sinkhorn(&cost, &mu, &nu, &cfg(rel)).unwrap();
            assert!(p.row_violation() < 1e-12);
            assert!(p.col_violation < 1e-6);
            let obj = p.objective(&cost).unwrap();
            assert!(obj >= exact - 1e-9);
            assert!(obj - exact <= prev);
            prev = obj - exact;
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cost = Matrix::from_fn(5, 5, |_, _| rng.random_range(0.0..1.0));
        let u = Vector::uniform(5);
        let a = solve_sinkhorn(&cost, &u, &u, &OtConfig::default()).unwrap();
        let b = solve_sinkhorn(&cost, &u, &u, &OtConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_epsilon_stays_finite_in_log_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cost = Matrix::from_fn(4, 4, |_, _| rng.random_range(0.0..100.0));
        let u = Vector::uniform(4);
        let p = solve_sinkhorn(&cost, &u, &u, &cfg(1e-4)).unwrap();
        assert!(p.plan.is_finite());
    }

    #[test]
    fn exact_mode_rejected() {
        let cost = Matrix::zeros(2, 2);
        let u = Vector::uniform(2);
        assert!(solve_sinkhorn(&cost, &u, &u, &OtConfig::exact()).is_err());
    }

    #[test]
    fn reports_unconverged_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cost = Matrix::from_fn(6, 6, |_, _| rng.random_range(0.0..1.0));
        let u = Vector::uniform(6);
        let c = OtConfig {
            max_iters: 1,
            ..OtConfig::sinkhorn(Epsilon::Relative(0.001))
        };
        let p = solve_sinkhorn(&cost, &u, &u, &c).unwrap();
        assert_eq!(p.iterations, 1);
        assert!(p.row_violation() < 1e-12);
        assert_eq!(p.col_violation, p.measured_col_violation());
    }
}
