//! The primal rate problem: minimize E H² over H = Σ cᵢ X(tᵢ) subject to
//! E(X(t)H) ≥ 1 on K₁ and E(X(t)H) ≤ r on K₂.
//!
//! After discretization this is the convex quadratic program
//!
//! ```text
//!   minimize    cᵀ Σ c
//!   subject to  (Σc)ᵢ ≥ 1  for i in K₁,   (Σc)ⱼ ≤ r  for j in K₂,
//! ```
//!
//! where Σ is the Gram matrix over the K₁ ∪ K₂ nodes. Restricting H to the
//! span of the constraint representers is exact for the discretized problem:
//! any component orthogonal to the span leaves every constraint unchanged
//! and only adds norm.
//!
//! The KKT conditions force the optimal c to be supported on the active
//! constraints with sign pattern cᵢ ≥ 0 on K₁, cⱼ ≤ 0 on K₂, so the solver
//! is a dual active-set iteration in the style of Lawson–Hanson: grow the
//! active set by the most violated constraint, solve Σ_AA c_A = t_A by an
//! incrementally updated Cholesky factorization, and step back to the first
//! sign crossing whenever the unconstrained sub-solve leaves the sign cone.
//!
//! Feasibility is decided after the solve: the jittered problem always has a
//! minimizer, and the true constraint violation of that minimizer exceeds
//! the phase-1 threshold exactly when the original discretized problem is
//! infeasible (the multipliers then blow up like 1/jitter).

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::kernel::{CovMatrix, IsotropicKernel, JITTER_REL};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Total-violation threshold of the phase-1 feasibility check.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A hole-rate instance: the pair (K₁, K₂) with a depth factor r and a
/// covariance given either by an isotropic kernel over explicit points or
/// by an explicit covariance matrix (for non-isotropic test cases).
#[derive(Debug, Clone)]
pub struct HoleProblem {
    source: Source,
    r: f64,
}

#[derive(Debug, Clone)]
enum Source {
    Kernel {
        kernel: IsotropicKernel,
        k1: PointSet,
        k2: PointSet,
    },
    /// Covariance over the concatenated nodes; the first `n1` are K₁.
    Matrix { cov: CovMatrix, n1: usize },
}

impl HoleProblem {
    pub fn from_kernel(
        kernel: IsotropicKernel,
        k1: PointSet,
        k2: PointSet,
        r: f64,
    ) -> Result<Self> {
        if k1.is_empty() {
            return Err(Error::domain("K1 must be nonempty"));
        }
        if !k2.is_empty() && k2.dim() != k1.dim() {
            return Err(Error::domain("K1 and K2 must share a dimension"));
        }
        check_r(r)?;
        Ok(HoleProblem {
            source: Source::Kernel { kernel, k1, k2 },
            r,
        })
    }

    /// Builds an instance from an explicit covariance matrix over the
    /// concatenated K₁ ∪ K₂ nodes, the first `n1` of which form K₁.
    pub fn from_matrix(cov: CovMatrix, n1: usize, r: f64) -> Result<Self> {
        if n1 == 0 || n1 > cov.len() {
            return Err(Error::domain("need 1 ≤ |K1| ≤ number of nodes"));
        }
        check_r(r)?;
        Ok(HoleProblem {
            source: Source::Matrix { cov, n1 },
        r,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn with_r(&self, r: f64) -> Result<Self> {
        check_r(r)?;
        let mut p = self.clone();
        p.r = r;
        Ok(p)
    }

    pub fn n1(&self) -> usize {
        match &self.source {
            Source::Kernel { k1, .. } => k1.len(),
            Source::Matrix { n1, .. } => *n1,
        }
    }

    pub fn n2(&self) -> usize {
        match &self.source {
            Source::Kernel { k2, .. } => k2.len(),
            Source::Matrix { cov, n1 } => cov.len() - n1,
        }
    }

    pub fn kernel(&self) -> Option<&IsotropicKernel> {
        match &self.source {
            Source::Kernel { kernel, .. } => Some(kernel),
            Source::Matrix { .. } => None,
        }
    }

    /// All nodes, K₁ first (kernel-backed instances only).
    pub fn nodes(&self) -> Option<PointSet> {
        match &self.source {
            Source::Kernel { k1, k2, .. } => k1.concat(k2).ok(),
            Source::Matrix { .. } => None,
        }
    }

    /// Gram matrix over the concatenated nodes (K₁ rows first).
    pub fn full_gram(&self) -> Result<DMatrix<f64>> {
        Ok(self.gram()?.0)
    }

    /// Covariance matrix object over the concatenated nodes.
    pub fn cov_matrix(&self) -> Result<CovMatrix> {
        match &self.source {
            Source::Kernel { kernel, k1, k2 } => {
                let all = k1.concat(k2)?;
                CovMatrix::from_kernel(kernel, &all)
            }
            Source::Matrix { cov, .. } => Ok(cov.clone()),
        }
    }

    /// Gram matrix over the concatenated nodes and the variance scale.
    fn gram(&self) -> Result<(DMatrix<f64>, f64)> {
        match &self.source {
            Source::Kernel { kernel, k1, k2 } => {
                let all = k1.concat(k2)?;
                let cov = CovMatrix::from_kernel(kernel, &all)?;
                Ok((cov.matrix().clone(), kernel.variance()))
            }
            Source::Matrix { cov, .. } => Ok((cov.matrix().clone(), cov.variance())),
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::domain(format!("depth factor r must be in (0, 1], got {r}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

/// Minimizer of the discretized primal problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimalSolution {
    /// E H² at the optimum; `+∞` when infeasible.
    pub value: f64,
    pub status: SolveStatus,
    /// Representer coefficients over the K₁ ∪ K₂ nodes (K₁ first).
    pub coefficients: Vec<f64>,
    /// Witness profile w(tᵢ) = (Σc)ᵢ at every node.
    pub witness: Vec<f64>,
    /// Largest constraint violation of the witness.
    pub max_violation: f64,
}

/// Solves the discretized primal problem.
pub fn solve_primal(problem: &HoleProblem) -> Result<PrimalSolution> {
    let (sigma, variance) = problem.gram()?;
    let n = sigma.nrows();
    let n1 = problem.n1();
    let mut sign = vec![1.0; n];
    let mut target = vec![1.0; n];
    for k in n1..n {
        sign[k] = -1.0;
        target[k] = problem.r;
    }
    let jitter = JITTER_REL * variance;
    let coeffs = solve_sign_constrained(&sigma, &sign, &target, jitter)?;

    // feasibility and value are judged against the unjittered matrix
    let witness: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| sigma[(i, j)] * coeffs[j]).sum())
        .collect();
    let mut max_violation = 0.0f64;
    for k in 0..n {
        let v = sign[k] * (target[k] - witness[k]);
        max_violation = max_violation.max(v);
    }
    if max_violation > FEASIBILITY_TOL {
        return Ok(PrimalSolution {
            value: f64::INFINITY,
            status: SolveStatus::Infeasible,
            coefficients: coeffs,
            witness,
            max_violation,
        });
    }
    let value: f64 = coeffs.iter().zip(&witness).map(|(c, w)| c * w).sum();
    Ok(PrimalSolution {
        value,
        status: SolveStatus::Optimal,
        coefficients: coeffs,
        witness,
        max_violation,
    })
}

/// Evaluates the witness profile w_H(t) = Σ cᵢ R(t, tᵢ) at an arbitrary
/// point (kernel-backed instances only).
pub fn witness_eval(problem: &HoleProblem, solution: &PrimalSolution, t: &[f64]) -> Result<f64> {
    let nodes = problem
        .nodes()
        .ok_or_else(|| Error::domain("witness_eval needs a kernel-backed instance"))?;
    let kernel = problem.kernel().unwrap();
    if t.len() != nodes.dim() {
        return Err(Error::domain("witness_eval: point dimension mismatch"));
    }
    Ok(nodes
        .iter()
        .zip(&solution.coefficients)
        .map(|(p, c)| c * kernel.cov(p, t))
        .sum())
}

/// Minimum of `solve_primal` over a collection of pairs. Infeasible pairs
/// contribute +∞; ties resolve to the lowest index. Returns the minimum
/// value and the argmin index (`None` when every pair is infeasible).
pub fn rate_over_collection(collection: &[HoleProblem]) -> Result<(f64, Option<usize>)> {
    if collection.is_empty() {
        return Err(Error::domain("collection must be nonempty"));
    }
    let solved: Vec<(usize, Result<PrimalSolution>)> = collection
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, solve_primal(p)))
        .collect();
    let mut best = f64::INFINITY;
    let mut arg = None;
    for (i, res) in solved {
        let sol = res.map_err(|e| Error::numerical(format!("pair {i}: {e}")))?;
        if sol.value < best {
            best = sol.value;
            arg = Some(i);
        }
    }
    Ok((best, arg))
}

// ---------------------------------------------------------------------------
// Sign-constrained active-set solver
// ---------------------------------------------------------------------------

/// Incrementally grown Cholesky factor of Σ_PP (+ jitter on the diagonal).
struct GrowingCholesky<'a> {
    sigma: &'a DMatrix<f64>,
    jitter: f64,
    /// active indices, in insertion order
    active: Vec<usize>,
    /// lower-triangular rows; row k holds k+1 entries
    rows: Vec<Vec<f64>>,
}

impl<'a> GrowingCholesky<'a> {
    fn new(sigma: &'a DMatrix<f64>, jitter: f64) -> Self {
        GrowingCholesky {
            sigma,
            jitter,
            active: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.active.len()
    }

    fn push(&mut self, p: usize) {
        let k = self.active.len();
        let mut row = Vec::with_capacity(k + 1);
        // forward solve L l = Σ[active, p]
        for i in 0..k {
            let mut v = self.sigma[(self.active[i], p)];
            for j in 0..i {
                v -= self.rows[i][j] * row[j];
            }
            row.push(v / self.rows[i][i]);
        }
        let mut d2 = self.sigma[(p, p)] + self.jitter;
        for l in &row {
            d2 -= l * l;
        }
        let floor = 1e-14 * (self.sigma[(p, p)].abs() + self.jitter);
        row.push(d2.max(floor).sqrt());
        self.rows.push(row);
        self.active.push(p);
    }

    fn remove(&mut self, pos: usize) {
        self.active.remove(pos);
        let idx = std::mem::take(&mut self.active);
        self.rows.clear();
        for p in idx {
            self.push(p);
        }
    }

    /// Solves Σ_PP z = t_P through the factor.
    fn solve(&self, target: &[f64]) -> Vec<f64> {
        let k = self.len();
        let mut z = vec![0.0; k];
        for i in 0..k {
            let mut v = target[self.active[i]];
            for j in 0..i {
                v -= self.rows[i][j] * z[j];
            }
            z[i] = v / self.rows[i][i];
        }
        for i in (0..k).rev() {
            let mut v = z[i];
            for j in i + 1..k {
                v -= self.rows[j][i] * z[j];
            }
            z[i] = v / self.rows[i][i];
        }
        z
    }
}

/// Solves min cᵀΣc subject to sign_k·((Σc)_k − t_k) ≥ 0 for all k, i.e.
/// lower bounds on K₁ rows and upper bounds on K₂ rows. Returns the full
/// coefficient vector.
fn solve_sign_constrained(
    sigma: &DMatrix<f64>,
    sign: &[f64],
    target: &[f64],
    jitter: f64,
) -> Result<Vec<f64>> {
    let n = sigma.nrows();
    let tol_add = 1e-11;
    let max_outer = 20 * n + 200;

    let mut chol = GrowingCholesky::new(sigma, jitter);
    let mut x: Vec<f64> = Vec::new(); // coefficients on the active set
    let mut in_active = vec![false; n];
    let mut banned = vec![false; n];

    for _ in 0..max_outer {
        // witness of the current iterate and the most violated constraint
        let mut w = vec![0.0; n];
        for (pos, &a) in chol.active.iter().enumerate() {
            let xa = x[pos];
            if xa != 0.0 {
                for i in 0..n {
                    w[i] += sigma[(i, a)] * xa;
                }
            }
        }
        let mut best = tol_add;
        let mut pick = None;
        for k in 0..n {
            if in_active[k] || banned[k] {
                continue;
            }
            let v = sign[k] * (target[k] - w[k]);
            if v > best {
                best = v;
                pick = Some(k);
            }
        }
        let Some(p) = pick else {
            // no violated constraint outside the active set: optimal
            // (sign conditions on the active set hold by construction)
            let mut c = vec![0.0; n];
            for (pos, &a) in chol.active.iter().enumerate() {
                c[a] = x[pos];
            }
            return Ok(c);
        };

        chol.push(p);
        in_active[p] = true;
        x.push(0.0);
        let mut added_survived = true;

        // restore the sign cone, stepping to the first crossing
        for _guard in 0..(4 * n + 16) {
            let z = chol.solve(target);
            let mut alpha = f64::INFINITY;
            let mut any_bad = false;
            for (pos, &a) in chol.active.iter().enumerate() {
                if sign[a] * z[pos] < -1e-13 {
                    any_bad = true;
                    let denom = x[pos] - z[pos];
                    if denom.abs() > 0.0 {
                        alpha = alpha.min((x[pos] / denom).clamp(0.0, 1.0));
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !any_bad {
                x = z;
                break;
            }
            for (pos, xv) in x.iter_mut().enumerate() {
                *xv += alpha * (z[pos] - *xv);
            }
            // drop every active coefficient that has reached the boundary
            let mut pos = 0;
            while pos < chol.len() {
                let a = chol.active[pos];
                if sign[a] * x[pos] <= 1e-15 && (alpha < 1.0 || sign[a] * z[pos] < 0.0) {
                    if a == p {
                        added_survived = false;
                    }
                    in_active[a] = false;
                    chol.remove(pos);
                    x.remove(pos);
                } else {
                    pos += 1;
                }
            }
        }

        if added_survived {
            banned.iter_mut().for_each(|b| *b = false);
        } else {
            // degenerate add/drop; skip this constraint until progress
            banned[p] = true;
        }
    }
    Err(Error::convergence(
        "active-set iteration budget exhausted in the primal solver",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointSet;

    fn two_point_problem(rho0: f64, r: f64) -> HoleProblem {
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, rho0, rho0, 1.0]);
        let cov = CovMatrix::from_matrix(pts, m).unwrap();
        HoleProblem::from_matrix(cov, 1, r).unwrap()
    }

    #[test]
    fn single_exceedance_constraint() {
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let k1 = PointSet::new(1, vec![0.0]).unwrap();
        let p = HoleProblem::from_kernel(k, k1, PointSet::empty(1), 0.5).unwrap();
        let s = solve_primal(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value - 1.0).abs() < 1e-10);
        assert!((s.coefficients[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_point_closed_form() {
        // both constraints active: value = (1 − 2 r ρ₀ + r²)/(1 − ρ₀²)
        let (rho0, r) = (0.8, 0.5);
        let p = two_point_problem(rho0, r);
        let s = solve_primal(&p).unwrap();
        let expect = (1.0 - 2.0 * r * rho0 + r * r) / (1.0 - rho0 * rho0);
        assert!((s.value - expect).abs() < 1e-10, "{} vs {expect}", s.value);
        assert!((s.value - 1.25).abs() < 1e-10);
    }

    #[test]
    fn two_point_matches_grid_search() {
        // independent oracle: coarse grid over c ∈ [−5, 5]² refined twice
        let (rho0, r) = (0.8, 0.5);
        let p = two_point_problem(rho0, r);
        let s = solve_primal(&p).unwrap();

        let obj = |c1: f64, c2: f64| c1 * c1 + 2.0 * rho0 * c1 * c2 + c2 * c2;
        let feas = |c1: f64, c2: f64| {
            c1 + rho0 * c2 >= 1.0 - 1e-9 && rho0 * c1 + c2 <= r + 1e-9
        };
        let mut center = (0.0, 0.0);
        let mut span = 5.0;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let mut arg = center;
            for i in 0..=200 {
                for j in 0..=200 {
                    let c1 = center.0 - span + 2.0 * span * i as f64 / 200.0;
                    let c2 = center.1 - span + 2.0 * span * j as f64 / 200.0;
                    if feas(c1, c2) {
                        let v = obj(c1, c2);
                        if v < best {
                            best = v;
                            arg = (c1, c2);
                        }
                    }
                }
            }
            center = arg;
            span /= 20.0;
        }
        assert!((s.value - best).abs() < 2e-3, "solver {} vs grid {best}", s.value);
    }

    /// The three-point example with X(0) = Y₁, X(1) = r₀Y₁, X(2) = σY₁ + Y₂.
    fn dependent_pair(which: usize, r0: f64, sigma: f64, r: f64) -> HoleProblem {
        let pts = PointSet::new(1, vec![0.0, which as f64]).unwrap();
        let m = match which {
            1 => DMatrix::from_row_slice(2, 2, &[1.0, r0, r0, r0 * r0]),
            _ => DMatrix::from_row_slice(2, 2, &[1.0, sigma, sigma, sigma * sigma + 1.0]),
        };
        let cov = CovMatrix::from_matrix(pts, m).unwrap();
        HoleProblem::from_matrix(cov, 1, r).unwrap()
    }

    #[test]
    fn perfectly_dependent_pair_infeasible_below_r0() {
        let p = dependent_pair(1, 0.5, 0.8, 0.3);
        let s = solve_primal(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.value.is_infinite());
    }

    #[test]
    fn dependent_pair_free_above_r0() {
        let p = dependent_pair(1, 0.5, 0.8, 0.7);
        let s = solve_primal(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn independent_noise_pair_formula() {
        // D over ({0},{2}) at r < σ is 1 + (σ − r)²
        let (r0, sigma) = (0.5, 0.8);
        for r in [0.1f64, 0.3, 0.45] {
            let p = dependent_pair(2, r0, sigma, r);
            let s = solve_primal(&p).unwrap();
            let expect = 1.0 + (sigma - r) * (sigma - r);
            assert!(
                (s.value - expect).abs() < 1e-10 * expect,
                "r={r}: {} vs {expect}",
                s.value
            );
        }
    }

    #[test]
    fn collection_reproduces_piecewise_rate() {
        let (r0, sigma) = (0.5, 0.8);
        for (r, expect, arg) in [
            (0.3, 1.0 + (0.8f64 - 0.3) * (0.8 - 0.3), 1usize),
            (0.7, 1.0, 0),
        ] {
            let pairs = vec![
                dependent_pair(1, r0, sigma, r),
                dependent_pair(2, r0, sigma, r),
            ];
            let (v, idx) = rate_over_collection(&pairs).unwrap();
            assert!((v - expect).abs() < 1e-9, "r={r}: {v} vs {expect}");
            assert_eq!(idx, Some(arg), "r={r}");
        }
    }

    #[test]
    fn collection_single_pair_matches_solve() {
        let p = two_point_problem(0.8, 0.5);
        let (v, idx) = rate_over_collection(std::slice::from_ref(&p)).unwrap();
        let s = solve_primal(&p).unwrap();
        assert_eq!(v, s.value);
        assert_eq!(idx, Some(0));
    }

    #[test]
    fn witness_respects_constraints() {
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let k1 = PointSet::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let k2 = PointSet::new(2, vec![0.4, 0.4]).unwrap();
        let p = HoleProblem::from_kernel(k, k1.clone(), k2.clone(), 0.6).unwrap();
        let s = solve_primal(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        for pt in k1.iter() {
            let w = witness_eval(&p, &s, pt).unwrap();
            assert!(w >= 1.0 - 1e-6, "witness {w} below 1 on K1");
        }
        for pt in k2.iter() {
            let w = witness_eval(&p, &s, pt).unwrap();
            assert!(w <= 0.6 + 1e-6, "witness {w} above r on K2");
        }
    }

    #[test]
    fn witness_at_single_node_is_one() {
        let k = IsotropicKernel::exponential(1.0, 1.0).unwrap();
        let k1 = PointSet::new(1, vec![0.3]).unwrap();
        let p = HoleProblem::from_kernel(k, k1, PointSet::empty(1), 1.0).unwrap();
        let s = solve_primal(&p).unwrap();
        let w = witness_eval(&p, &s, &[0.3]).unwrap();
        assert!((w - 1.0).abs() < 1e-10);
    }

    #[test]
    fn variance_scaling_divides_value() {
        let k1 = PointSet::new(2, vec![0.0, 0.0, 0.8, 0.3]).unwrap();
        let k2 = PointSet::new(2, vec![0.5, 0.5]).unwrap();
        let base = {
            let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
            let p = HoleProblem::from_kernel(k, k1.clone(), k2.clone(), 0.5).unwrap();
            solve_primal(&p).unwrap().value
        };
        for lambda in [0.5, 2.0, 7.5] {
            let k = IsotropicKernel::squared_exponential(1.0, lambda).unwrap();
            let p = HoleProblem::from_kernel(k, k1.clone(), k2.clone(), 0.5).unwrap();
            let v = solve_primal(&p).unwrap().value;
            assert!(
                (v - base / lambda).abs() < 1e-9 * base.max(1.0),
                "lambda={lambda}: {v} vs {}",
                base / lambda
            );
        }
    }

    #[test]
    fn rate_nonincreasing_in_r() {
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let k1 = PointSet::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let k2 = PointSet::new(2, vec![0.5, 0.2]).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..=9 {
            let r = i as f64 / 10.0;
            let p = HoleProblem::from_kernel(k.clone(), k1.clone(), k2.clone(), r).unwrap();
            let v = solve_primal(&p).unwrap().value;
            assert!(v <= prev + 1e-10, "rate must be nonincreasing in r");
            prev = v;
        }
    }

    #[test]
    fn contradictory_duplicate_node_is_infeasible() {
        // same point in K1 and K2 with r < 1 cannot be separated
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let k1 = PointSet::new(1, vec![0.0]).unwrap();
        let k2 = PointSet::new(1, vec![0.0]).unwrap();
        let p = HoleProblem::from_kernel(k, k1, k2, 0.5).unwrap();
        let s = solve_primal(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }
}
