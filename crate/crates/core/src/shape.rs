//! The most likely profile of the conditioned field.
//!
//! Conditioned on exceeding the level on K₁ while dipping below r·u at the
//! hole point b, the rescaled field concentrates on a deterministic
//! profile. With the optimal measure μ of the governing dual minimum the
//! profile is
//!
//! ```text
//!   x(t) = D_C(r) · ∫ R(t, t₁) dμ(t₁)                      (energy case)
//!   x(t) = a(μ) · [ ∫ R(t, t₁) dμ(t₁) − b(μ)·R(t, b) ]     (hole case)
//! ```
//!
//! where the energy case applies when the unconstrained energy minimum
//! governs (first minimum ≤ second) and the hole case otherwise. The
//! scalars are
//!
//! ```text
//!   a(μ) = (R(b,b) − r·∫R(·,b)dμ) / (R(b,b)·∬Rdμdμ − (∫R(·,b)dμ)²)
//!   b(μ) = (r·∬Rdμdμ − ∫R(·,b)dμ) / (r·∫R(·,b)dμ − R(b,b)).
//! ```
//!
//! In the hole case the profile passes through r at the hole exactly; in
//! both cases it is ≥ 1 on the support of μ and its squared RKHS norm is
//! the rate.

use crate::error::{Error, Result};
use crate::geometry::{double_integral, DiscreteMeasure, PointSet};
use crate::kernel::IsotropicKernel;
use serde::{Deserialize, Serialize};

/// Tolerance below which the two dual minima are treated as tied; ties
/// resolve to the energy case, where both formulas coincide.
pub const CASE_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeCase {
    /// The unconstrained energy minimum governs.
    Energy,
    /// The hole-constrained fractional minimum governs; the profile meets
    /// the hole constraint with equality.
    Hole,
    /// Built directly from a primal solution's representer coefficients.
    Generic,
}

/// The limiting profile, evaluable at arbitrary points: a kernel expansion
/// x(t) = Σ cᵢ R(t, tᵢ) over the K₁ nodes (plus the hole point in the hole
/// case).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeFunction {
    pub case: ShapeCase,
    /// Set when the two minima were within [`CASE_TIE_TOL`] of each other.
    pub tie: bool,
    kernel: IsotropicKernel,
    nodes: PointSet,
    coefficients: Vec<f64>,
}

impl ShapeFunction {
    /// Evaluates x(t).
    pub fn eval(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.nodes.dim() {
            return Err(Error::domain("shape evaluation point dimension mismatch"));
        }
        Ok(self
            .nodes
            .iter()
            .zip(&self.coefficients)
            .map(|(p, c)| c * self.kernel.cov(p, t))
            .sum())
    }

    pub fn nodes(&self) -> &PointSet {
        &self.nodes
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Squared RKHS norm of the profile, cᵀΣc over its expansion nodes;
    /// equals the rate of the underlying instance.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let n = self.nodes.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.coefficients[i]
                    * self.coefficients[j]
                    * self.kernel.eval(self.nodes.distance(i, j));
            }
        }
        acc
    }

    /// Profile section along the first coordinate axis: samples x at
    /// (s·ρ, 0, …) for s = t₁/ρ on [0, 2], `samples` points.
    pub fn axis_section(&self, rho: f64, samples: usize) -> Vec<(f64, f64)> {
        let d = self.nodes.dim();
        (0..samples)
            .map(|i| {
                let s = 2.0 * i as f64 / (samples - 1) as f64;
                let mut t = vec![0.0; d];
                t[0] = s * rho;
                (s, self.eval(&t).expect("dimension is consistent"))
            })
            .collect()
    }
}

/// The scalar a(μ) of the hole-case profile. Degenerate (nonpositive
/// denominator) when μ carries no information beyond the hole point.
pub fn hole_scale(
    kernel: &IsotropicKernel,
    mu: &DiscreteMeasure,
    hole: &[f64],
    r: f64,
) -> Result<f64> {
    let (energy, hole_cov, var) = profile_parts(kernel, mu, hole)?;
    let num = var - r * hole_cov;
    let den = var * energy - hole_cov * hole_cov;
    if den <= 0.0 {
        return Err(Error::numerical(
            "hole-case scale is degenerate: the measure concentrates at the hole",
        ));
    }
    Ok(num / den)
}

/// The scalar b(μ) of the hole-case profile. Degenerate when
/// r·∫R(·,b)dμ = R(b,b).
pub fn hole_offset(
    kernel: &IsotropicKernel,
    mu: &DiscreteMeasure,
    hole: &[f64],
    r: f64,
) -> Result<f64> {
    let (energy, hole_cov, var) = profile_parts(kernel, mu, hole)?;
    let den = r * hole_cov - var;
    if den == 0.0 {
        return Err(Error::numerical("hole-case offset has a vanishing denominator"));
    }
    Ok((r * energy - hole_cov) / den)
}

fn profile_parts(
    kernel: &IsotropicKernel,
    mu: &DiscreteMeasure,
    hole: &[f64],
) -> Result<(f64, f64, f64)> {
    if hole.len() != mu.dim() {
        return Err(Error::domain("hole point dimension mismatch"));
    }
    let energy = double_integral(kernel, mu, mu)?;
    let hole_cov: f64 = mu
        .support()
        .iter()
        .zip(mu.weights())
        .map(|(p, &w)| w * kernel.cov(p, hole))
        .sum();
    Ok((energy, hole_cov, kernel.variance()))
}

/// Builds the limiting profile from the optimal measure of the governing
/// dual minimum for the pair (K₁, {hole}). The case is decided by
/// comparing the energy ∬Rdμdμ against the admissible fractional value at
/// μ; ties go to the energy case with a flag (both formulas coincide
/// there).
pub fn limiting_shape(
    kernel: &IsotropicKernel,
    mu: &DiscreteMeasure,
    hole: &[f64],
    r: f64,
) -> Result<ShapeFunction> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::domain("depth factor r must be in (0, 1]"));
    }
    let (energy, hole_cov, var) = profile_parts(kernel, mu, hole)?;

    // admissible fractional value at μ (+∞ when the mass constraint or the
    // denominator fails)
    let second = if hole_cov >= r * energy - 1e-12 {
        let big_a = energy * var - hole_cov * hole_cov;
        let big_b = r * r * energy - 2.0 * r * hole_cov + var;
        if big_b > f64::MIN_POSITIVE {
            big_a / big_b
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };

    let tie = (energy - second).abs() <= CASE_TIE_TOL * energy.abs().max(1.0);
    if energy <= second || tie {
        let d_c = 1.0 / energy;
        let coefficients: Vec<f64> = mu.weights().iter().map(|&w| d_c * w).collect();
        Ok(ShapeFunction {
            case: ShapeCase::Energy,
            tie,
            kernel: kernel.clone(),
            nodes: mu.support().clone(),
            coefficients,
        })
    } else {
        let a = hole_scale(kernel, mu, hole, r)?;
        let b = hole_offset(kernel, mu, hole, r)?;
        let mut coefficients: Vec<f64> = mu.weights().iter().map(|&w| a * w).collect();
        coefficients.push(-a * b);
        let nodes = mu
            .support()
            .concat(&PointSet::new(mu.dim(), hole.to_vec())?)?;
        Ok(ShapeFunction {
            case: ShapeCase::Hole,
            tie,
            kernel: kernel.clone(),
            nodes,
            coefficients,
        })
    }
}

/// Builds the profile directly from a primal solution (witness expansion
/// over all nodes).
pub fn shape_from_primal(
    problem: &crate::primal::HoleProblem,
    solution: &crate::primal::PrimalSolution,
) -> Result<ShapeFunction> {
    let nodes = problem
        .nodes()
        .ok_or_else(|| Error::domain("generic shape needs a kernel-backed instance"))?;
    let kernel = problem.kernel().unwrap().clone();
    Ok(ShapeFunction {
        case: ShapeCase::Generic,
        tie: false,
        kernel,
        nodes,
        coefficients: solution.coefficients.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere_grid;
    use crate::isotropic::{Branch, IsotropicHoleSpec};
    use crate::primal::{solve_primal, HoleProblem};

    fn se() -> IsotropicKernel {
        IsotropicKernel::squared_exponential(1.0, 1.0).unwrap()
    }

    #[test]
    fn hole_scale_point_mass_arithmetic() {
        // single support point correlated 0.8 with the hole, r = 1/2:
        // a = (1 − 0.4)/(1 − 0.64) = 5/3, b = (0.5 − 0.8)/(0.4 − 1) = 1/2
        let d = (-(0.8f64.ln())).sqrt();
        let mu = DiscreteMeasure::point_mass(1, vec![0.0]).unwrap();
        let hole = [d];
        let a = hole_scale(&se(), &mu, &hole, 0.5).unwrap();
        assert!((a - 5.0 / 3.0).abs() < 1e-12, "a = {a}");
        let b = hole_offset(&se(), &mu, &hole, 0.5).unwrap();
        assert!((b - 0.5).abs() < 1e-12, "b = {b}");
    }

    #[test]
    fn hole_scale_numerator_sign() {
        // the numerator R(b,b) − r·∫R(·,b)dμ decreases in r and crosses
        // zero at r = R(b,b)/hole_cov
        let corr = 0.8f64;
        let d = (-corr.ln()).sqrt();
        let mu = DiscreteMeasure::point_mass(1, vec![0.0]).unwrap();
        let a_small = hole_scale(&se(), &mu, &[d], 0.2).unwrap();
        let a_large = hole_scale(&se(), &mu, &[d], 1.0).unwrap();
        assert!(a_small > a_large);
        assert!(a_large > 0.0, "r = 1 < 1/corr keeps the numerator positive");
    }

    #[test]
    fn hole_scale_degenerate_at_hole_support() {
        // measure sitting exactly at the hole: denominator var·1 − var² = 0
        let mu = DiscreteMeasure::point_mass(1, vec![0.7]).unwrap();
        assert!(hole_scale(&se(), &mu, &[0.7], 0.5).is_err());
    }

    #[test]
    fn positive_offset_in_the_binding_regime() {
        // when the mass constraint is strict at μ_h the hole case applies
        // and the offset must be positive (both multipliers positive)
        let grid = sphere_grid(2, 1.0, 256).unwrap();
        let b = hole_offset(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
        assert!(b > 0.0, "offset = {b}");
    }

    #[test]
    fn sphere_shapes_match_the_branch_assignment() {
        // rho = 1 is the binding (hole) case, rho = 2 the energy case
        for (rho, expect_case) in [(1.0, ShapeCase::Hole), (2.0, ShapeCase::Energy)] {
            let spec = IsotropicHoleSpec::new(se(), 2, 0.5, 4.0).unwrap();
            let (_, branch) = spec.rate_reciprocal(rho).unwrap();
            let grid = sphere_grid(2, rho, 256).unwrap();
            let shape = limiting_shape(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
            assert_eq!(shape.case, expect_case, "rho = {rho}");
            match branch {
                Branch::HoleBinding => assert_eq!(shape.case, ShapeCase::Hole),
                Branch::HoleFree => assert_eq!(shape.case, ShapeCase::Energy),
            }

            for p in grid.measure().support().iter() {
                let x = shape.eval(p).unwrap();
                assert!(x >= 1.0 - 1e-5, "rho={rho}: x={x} below 1 on the sphere");
            }
            let x0 = shape.eval(&[0.0, 0.0]).unwrap();
            assert!(x0 <= 0.5 + 1e-5, "rho={rho}: center value {x0}");
            if expect_case == ShapeCase::Hole {
                assert!(
                    (x0 - 0.5).abs() < 1e-5,
                    "binding case meets the hole with equality, got {x0}"
                );
            } else {
                assert!(x0 < 0.5, "energy case stays strictly below r at the center");
            }
        }
    }

    #[test]
    fn shape_norm_equals_rate() {
        for rho in [1.0, 2.0] {
            let grid = sphere_grid(2, rho, 256).unwrap();
            let shape = limiting_shape(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
            let k1 = grid.measure().support().clone();
            let k2 = PointSet::new(2, vec![0.0, 0.0]).unwrap();
            let problem = HoleProblem::from_kernel(se(), k1, k2, 0.5).unwrap();
            let sol = solve_primal(&problem).unwrap();
            let norm_sq = shape.rkhs_norm_sq();
            assert!(
                (norm_sq - sol.value).abs() < 1e-5 * sol.value,
                "rho={rho}: |x|²={norm_sq} vs rate {}",
                sol.value
            );
        }
    }

    #[test]
    fn shape_matches_primal_witness_pointwise() {
        // the measure-built profile equals the primal witness everywhere
        let rho = 1.0;
        let grid = sphere_grid(2, rho, 128).unwrap();
        let shape = limiting_shape(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
        let k1 = grid.measure().support().clone();
        let k2 = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        let problem = HoleProblem::from_kernel(se(), k1, k2, 0.5).unwrap();
        let sol = solve_primal(&problem).unwrap();
        let generic = shape_from_primal(&problem, &sol).unwrap();

        let mut state = 88172645463325252u64;
        let mut next = || {
            // xorshift; cheap deterministic point source for the check
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let t = [4.0 * next() - 2.0, 4.0 * next() - 2.0];
            let a = shape.eval(&t).unwrap();
            let b = generic.eval(&t).unwrap();
            assert!((a - b).abs() < 1e-4, "profiles differ at {t:?}: {a} vs {b}");
        }
    }

    #[test]
    fn shape_is_rotation_invariant() {
        let grid = sphere_grid(2, 1.0, 256).unwrap();
        let shape = limiting_shape(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
        for radius in [0.3, 0.9, 1.5] {
            let reference = shape.eval(&[radius, 0.0]).unwrap();
            for k in 1..8 {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 8.0 + 0.123;
                let v = shape.eval(&[radius * th.cos(), radius * th.sin()]).unwrap();
                assert!(
                    (v - reference).abs() < 1e-6,
                    "radius {radius}, angle {th}: {v} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn axis_section_has_requested_sampling() {
        let grid = sphere_grid(2, 1.0, 64).unwrap();
        let shape = limiting_shape(&se(), grid.measure(), &[0.0, 0.0], 0.5).unwrap();
        let section = shape.axis_section(1.0, 401);
        assert_eq!(section.len(), 401);
        assert_eq!(section[0].0, 0.0);
        assert_eq!(section[400].0, 2.0);
        // the section passes (near) 1 at the sphere itself, s = 1
        let at_sphere = section[200].1;
        assert!((at_sphere - 1.0).abs() < 1e-4, "x at the sphere: {at_sphere}");
    }
}
