//! Monte Carlo validation of the predicted exponential decay.
//!
//! Simulates the Gaussian vector on the discretized K₁ ∪ K₂ nodes and
//! estimates Ψ(u) = P(X > u on K₁, X < r·u on K₂) over a grid of levels,
//! either crudely or with importance sampling: samples are drawn with the
//! mean shifted to u times the optimal witness profile (the natural tilt,
//! since the conditioned field concentrates on u·x_C) and reweighted by
//! the exact Gaussian likelihood ratio exp(−u·H(ξ) + u²·EH²/2) evaluated
//! through the representer coefficients. The fitted slope of log Ψ against
//! u²/2 is then compared with −D from the rate modules.
//!
//! Randomness comes from a counter-based stream cipher generator
//! (ChaCha12) with one stream per fixed-size batch, so estimates are
//! bit-reproducible for a given seed and independent of thread scheduling.

use crate::error::{Error, Result};
use crate::kernel::CovMatrix;
use crate::primal::{solve_primal, HoleProblem, SolveStatus};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples per independently seeded batch; fixed so that results do not
/// depend on how batches are scheduled across threads.
pub const BATCH_SIZE: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Crude,
    Tilted,
}

/// Monte Carlo configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub samples_per_u: usize,
    pub u_grid: Vec<f64>,
    pub seed: u64,
    pub estimator: Estimator,
}

impl McConfig {
    pub fn new(samples_per_u: usize, u_grid: Vec<f64>, seed: u64, estimator: Estimator) -> Result<Self> {
        if samples_per_u == 0 {
            return Err(Error::domain("sample count must be at least 1"));
        }
        if u_grid.is_empty() || u_grid.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::domain("the u grid must be nonempty and positive"));
        }
        if u_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("the u grid must be increasing"));
        }
        Ok(McConfig {
            samples_per_u,
            u_grid,
            seed,
            estimator,
        })
    }
}

/// Estimate of Ψ at one level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UEstimate {
    pub u: f64,
    pub p_hat: f64,
    pub std_err: f64,
    /// Effective sample size of the (weighted) event indicator.
    pub ess: f64,
    /// Raw event count.
    pub hits: u64,
}

/// Least-squares fit of log Ψ against u²/2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Expected to approach −D.
    pub slope: f64,
    pub intercept: f64,
    /// 1.96 standard errors of the slope.
    pub ci_half_width: f64,
    /// Residual of log Ψ at each fitted level.
    pub per_point_dev: Vec<f64>,
}

/// Full Monte Carlo report for one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McEstimate {
    pub per_u: Vec<UEstimate>,
    pub fit: Option<SlopeFit>,
    /// Rate of the instance from the primal solver, when feasible.
    pub predicted_rate: Option<f64>,
    /// The constraints admit no witness: the event probability decays
    /// faster than any predicted rate, and only crude estimation applies.
    pub infeasible: bool,
}

/// Draws `n` samples of the centered Gaussian vector with the given
/// covariance. Deterministic for a fixed seed.
pub fn sample_field(cov: &CovMatrix, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (chol, _) = cov.factor()?;
    let l = chol.l();
    let dim = cov.len();
    let batches = n.div_ceil(BATCH_SIZE);
    let out: Vec<Vec<Vec<f64>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BATCH_SIZE.min(n - b * BATCH_SIZE);
            let mut chunk = Vec::with_capacity(count);
            let mut z = DVector::zeros(dim);
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let x = &l * &z;
                chunk.push(x.as_slice().to_vec());
            }
            chunk
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Default, Clone, Copy)]
struct BatchSums {
    weight: f64,
    weight_sq: f64,
    hits: u64,
}

/// Estimates Ψ over the configured levels. Tilted estimation uses the
/// primal witness; if the instance is infeasible the estimate falls back
/// to the crude counter with the `infeasible` flag set.
pub fn estimate_psi(problem: &HoleProblem, config: &McConfig) -> Result<McEstimate> {
    let cov = problem.cov_matrix()?;
    let (chol, _) = cov.factor()?;
    let l = chol.l().clone();
    let n_nodes = cov.len();
    let n1 = problem.n1();
    let r = problem.r();

    let primal = solve_primal(problem)?;
    let infeasible = primal.status == SolveStatus::Infeasible;
    let estimator = if infeasible { Estimator::Crude } else { config.estimator };
    let predicted_rate = (!infeasible).then_some(primal.value);

    // tilt data: q = Lᵀc and v = ‖q‖², both with respect to the sampling
    // covariance LLᵀ so the likelihood ratio stays exactly unbiased
    let coeff = DVector::from_column_slice(&primal.coefficients);
    let q = l.transpose() * &coeff;
    let v_tilt = q.dot(&q);
    let mean_dir = &l * &q; // (LLᵀ)c: witness under the sampling covariance

    let mut per_u = Vec::with_capacity(config.u_grid.len());
    for (ui, &u) in config.u_grid.iter().enumerate() {
        let seed_u = config
            .seed
            .wrapping_add((ui as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = config.samples_per_u;
        let batches = n.div_ceil(BATCH_SIZE);
        let sums: Vec<BatchSums> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha12Rng::seed_from_u64(seed_u);
                rng.set_stream(b as u64);
                let count = BATCH_SIZE.min(n - b * BATCH_SIZE);
                let mut acc = BatchSums::default();
                let mut z = DVector::zeros(n_nodes);
                let mut x = DVector::zeros(n_nodes);
                for _ in 0..count {
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(&mut rng);
                    }
                    l.mul_to(&z, &mut x);
                    match estimator {
                        Estimator::Crude => {
                            if event_holds(x.as_slice(), n1, u, r) {
                                acc.weight += 1.0;
                                acc.weight_sq += 1.0;
                                acc.hits += 1;
                            }
                        }
                        Estimator::Tilted => {
                            x.axpy(u, &mean_dir, 1.0);
                            if event_holds(x.as_slice(), n1, u, r) {
                                let log_w = -0.5 * u * u * v_tilt - u * q.dot(&z);
                                let w = log_w.exp();
                                acc.weight += w;
                                acc.weight_sq += w * w;
                                acc.hits += 1;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let total = sums.iter().fold(BatchSums::default(), |a, b| BatchSums {
            weight: a.weight + b.weight,
            weight_sq: a.weight_sq + b.weight_sq,
            hits: a.hits + b.hits,
        });
        let nf = n as f64;
        let p_hat = total.weight / nf;
        let var = ((total.weight_sq - nf * p_hat * p_hat) / (nf - 1.0)).max(0.0);
        let std_err = (var / nf).sqrt();
        let ess = if total.weight_sq > 0.0 {
            total.weight * total.weight / total.weight_sq
        } else {
            0.0 // degenerate estimate: no event was ever hit
        };
        per_u.push(UEstimate {
            u,
            p_hat,
            std_err,
            ess,
            hits: total.hits,
        });
    }

    let fit = fit_rate(&per_u);
    Ok(McEstimate {
        per_u,
        fit,
        predicted_rate,
        infeasible,
    })
}

fn event_holds(x: &[f64], n1: usize, u: f64, r: f64) -> bool {
    for &v in &x[..n1] {
        if v <= u {
            return false;
        }
    }
    for &v in &x[n1..] {
        if v >= r * u {
            return false;
        }
    }
    true
}

/// Ordinary least squares of log Ψ on u²/2 over the levels with nonzero
/// estimates. Needs at least three resolved levels.
pub fn fit_rate(per_u: &[UEstimate]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = per_u
        .iter()
        .filter(|e| e.p_hat > 0.0 && e.p_hat.is_finite())
        .map(|e| (e.u * e.u / 2.0, e.p_hat.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let per_point_dev: Vec<f64> = pts
        .iter()
        .map(|p| p.1 - (intercept + slope * p.0))
        .collect();
    let dof = (pts.len() as f64 - 2.0).max(1.0);
    let resid_var = per_point_dev.iter().map(|d| d * d).sum::<f64>() / dof;
    let ci_half_width = 1.96 * (resid_var / sxx).sqrt();
    Some(SlopeFit {
        slope,
        intercept,
        ci_half_width,
        per_point_dev,
    })
}

/// Convenience constructor for the Gram matrix of a hole instance, also
/// used by the CLI to expose the grid to other tools.
pub fn problem_cov(problem: &HoleProblem) -> Result<DMatrix<f64>> {
    problem.full_gram()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sphere_grid, PointSet};
    use crate::kernel::IsotropicKernel;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn se() -> IsotropicKernel {
        IsotropicKernel::squared_exponential(1.0, 1.0).unwrap()
    }

    fn two_point_problem(r: f64) -> HoleProblem {
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let cov = CovMatrix::from_matrix(pts, m).unwrap();
        HoleProblem::from_matrix(cov, 1, r).unwrap()
    }

    #[test]
    fn standard_normal_sampling_moments() {
        let pts = PointSet::new(1, vec![0.0]).unwrap();
        let cov = CovMatrix::from_matrix(pts, DMatrix::from_element(1, 1, 1.0)).unwrap();
        let samples = sample_field(&cov, 100_000, 42).unwrap();
        let mean: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / 1e5;
        let var: f64 = samples.iter().map(|s| s[0] * s[0]).sum::<f64>() / 1e5 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn correlated_pair_sampling() {
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let cov = CovMatrix::from_matrix(pts, m).unwrap();
        let samples = sample_field(&cov, 100_000, 7).unwrap();
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for s in &samples {
            sxy += s[0] * s[1];
            sxx += s[0] * s[0];
            syy += s[1] * s[1];
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!((corr - 0.8).abs() < 0.02, "empirical correlation {corr}");
    }

    #[test]
    fn empirical_covariance_of_a_grid() {
        // law-of-large-numbers check on a near-singular sphere covariance
        let grid = sphere_grid(2, 1.0, 5).unwrap();
        let cov = CovMatrix::from_kernel(&se(), grid.measure().support()).unwrap();
        let n = 100_000;
        let samples = sample_field(&cov, n, 3).unwrap();
        let dim = cov.len();
        let mut emp = DMatrix::zeros(dim, dim);
        for s in &samples {
            for i in 0..dim {
                for j in 0..dim {
                    emp[(i, j)] += s[i] * s[j];
                }
            }
        }
        emp /= n as f64;
        let mut max_err = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                max_err = max_err.max((emp[(i, j)] - cov.matrix()[(i, j)]).abs());
            }
        }
        assert!(max_err < 0.05, "max covariance error {max_err}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let cov = CovMatrix::from_matrix(pts, m).unwrap();
        let a = sample_field(&cov, 70_000, 99).unwrap();
        let b = sample_field(&cov, 70_000, 99).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y, "samples must be bit-identical for a fixed seed");
        }
    }

    #[test]
    fn single_point_tail_probability() {
        // Ψ(3) for a single standard normal node is 1 − Φ(3)
        let k1 = PointSet::new(1, vec![0.0]).unwrap();
        let problem = HoleProblem::from_kernel(se(), k1, PointSet::empty(1), 0.5).unwrap();
        let config = McConfig::new(400_000, vec![3.0], 11, Estimator::Tilted).unwrap();
        let est = estimate_psi(&problem, &config).unwrap();
        let tail = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(3.0);
        let e = &est.per_u[0];
        assert!(
            (e.p_hat - tail).abs() <= 3.0 * e.std_err,
            "estimate {} vs tail {tail} (se {})",
            e.p_hat,
            e.std_err
        );
        assert!((est.predicted_rate.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_instance_estimates_zero() {
        // the same node in K1 and K2 with r < 1: the event is empty
        let k1 = PointSet::new(1, vec![0.0]).unwrap();
        let k2 = PointSet::new(1, vec![0.0]).unwrap();
        let problem = HoleProblem::from_kernel(se(), k1, k2, 0.5).unwrap();
        let config = McConfig::new(50_000, vec![2.0], 5, Estimator::Tilted).unwrap();
        let est = estimate_psi(&problem, &config).unwrap();
        assert!(est.infeasible);
        assert_eq!(est.per_u[0].p_hat, 0.0);
        assert_eq!(est.per_u[0].hits, 0);
        assert!(est.predicted_rate.is_none());
    }

    /// Numerical-integration oracle for the two-point instance:
    /// Ψ(u) = ∫_u^∞ φ(x)·Φ((ru − ρ₀x)/√(1−ρ₀²)) dx.
    fn two_point_psi_oracle(u: f64, rho0: f64, r: f64) -> f64 {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sigma = (1.0 - rho0 * rho0).sqrt();
        let (nodes, weights) = crate::gauss::gauss_legendre(800);
        // map [-1, 1] to [u, u + 10]
        let half = 5.0;
        let mut acc = 0.0;
        for (&t, &w) in nodes.iter().zip(&weights) {
            let x = u + half * (t + 1.0);
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += w * phi * normal.cdf((r * u - rho0 * x) / sigma);
        }
        acc * half
    }

    #[test]
    fn tilted_estimator_matches_integration_oracle() {
        let problem = two_point_problem(0.5);
        let config = McConfig::new(400_000, vec![3.0, 5.0], 13, Estimator::Tilted).unwrap();
        let est = estimate_psi(&problem, &config).unwrap();
        for e in &est.per_u {
            let truth = two_point_psi_oracle(e.u, 0.8, 0.5);
            assert!(
                (e.p_hat - truth).abs() <= 4.0 * e.std_err.max(1e-3 * truth),
                "u={}: estimate {} vs oracle {truth} (se {})",
                e.u,
                e.p_hat,
                e.std_err
            );
        }
    }

    #[test]
    fn crude_and_tilted_agree_where_crude_resolves() {
        let problem = two_point_problem(0.5);
        let mk = |est| McConfig::new(400_000, vec![2.0], 21, est).unwrap();
        let crude = estimate_psi(&problem, &mk(Estimator::Crude)).unwrap();
        let tilted = estimate_psi(&problem, &mk(Estimator::Tilted)).unwrap();
        let (c, t) = (&crude.per_u[0], &tilted.per_u[0]);
        assert!(c.hits >= 50, "crude must resolve at u = 2, got {}", c.hits);
        let joint = (c.std_err * c.std_err + t.std_err * t.std_err).sqrt();
        assert!(
            (c.p_hat - t.p_hat).abs() <= 3.0 * joint,
            "crude {} vs tilted {} (joint se {joint})",
            c.p_hat,
            t.p_hat
        );
    }

    #[test]
    fn synthetic_decay_fits_exactly() {
        let per_u: Vec<UEstimate> = [3.0, 4.0, 5.0]
            .iter()
            .map(|&u| UEstimate {
                u,
                p_hat: (-1.25 * u * u / 2.0).exp(),
                std_err: 0.0,
                ess: 1.0,
                hits: 1,
            })
            .collect();
        let fit = fit_rate(&per_u).unwrap();
        assert!((fit.slope + 1.25).abs() < 1e-12, "slope {}", fit.slope);
        for d in fit.per_point_dev {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn fit_needs_three_resolved_points() {
        let per_u = vec![
            UEstimate { u: 3.0, p_hat: 1e-3, std_err: 0.0, ess: 1.0, hits: 1 },
            UEstimate { u: 4.0, p_hat: 0.0, std_err: 0.0, ess: 0.0, hits: 0 },
            UEstimate { u: 5.0, p_hat: 1e-6, std_err: 0.0, ess: 1.0, hits: 1 },
        ];
        assert!(fit_rate(&per_u).is_none());
    }

    #[test]
    fn two_point_slope_recovers_rate() {
        // fitted slope of the tilted estimator approaches −1.25
        let problem = two_point_problem(0.5);
        let config =
            McConfig::new(300_000, vec![3.0, 4.0, 5.0], 42, Estimator::Tilted).unwrap();
        let est = estimate_psi(&problem, &config).unwrap();
        let fit = est.fit.unwrap();
        assert!(
            fit.slope > -1.45 && fit.slope < -1.05,
            "slope {} outside [-1.45, -1.05]",
            fit.slope
        );
        assert!(fit.slope < 0.0, "decay must be negative");
    }
}
