//! Stationary isotropic covariance functions and Gram (covariance) matrices.
//!
//! A kernel here is a function `R` of distance with `R(0) = variance > 0`,
//! nonincreasing and nonnegative on `[0, ∞)`. Two closed-form families are
//! provided (squared-exponential `R(t) = v·exp(-(a t)²)` and exponential
//! `R(t) = v·exp(-a t)`), plus a tabulated kernel built from sampled
//! `(distance, value)` pairs with linear interpolation, for experimenting
//! with slowly decaying covariances.

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Relative tolerance for the positive-semidefiniteness check of Gram
/// matrices: all eigenvalues must exceed `-PSD_TOL · ‖M‖`.
pub const PSD_TOL: f64 = 1e-10;

/// Diagonal jitter applied (relative to the variance) when a Cholesky
/// factorization of a Gram matrix fails. Discretized spheres yield
/// near-singular Gram matrices, so RKHS computations need this floor.
pub const JITTER_REL: f64 = 1e-12;

/// A stationary isotropic covariance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IsotropicKernel {
    /// `R(t) = variance · exp(-(scale·t)²)`
    SquaredExponential { scale: f64, variance: f64 },
    /// `R(t) = variance · exp(-scale·t)`
    Exponential { scale: f64, variance: f64 },
    /// Piecewise-linear interpolation of sampled values. Distances must be
    /// strictly increasing starting at 0; values must be nonincreasing and
    /// nonnegative. Beyond the last sample the last value is held.
    Tabulated {
        distances: Vec<f64>,
        values: Vec<f64>,
    },
}

impl IsotropicKernel {
    /// Squared-exponential kernel with unit scale and variance, the main
    /// closed-form family used throughout.
    pub fn squared_exponential(scale: f64, variance: f64) -> Result<Self> {
        check_scale_var(scale, variance)?;
        Ok(IsotropicKernel::SquaredExponential { scale, variance })
    }

    pub fn exponential(scale: f64, variance: f64) -> Result<Self> {
        check_scale_var(scale, variance)?;
        Ok(IsotropicKernel::Exponential { scale, variance })
    }

    /// Builds a tabulated kernel from `(distance, value)` samples.
    pub fn tabulated(distances: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if distances.len() != values.len() || distances.len() < 2 {
            return Err(Error::domain(
                "tabulated kernel needs at least two (distance, value) samples",
            ));
        }
        if distances[0] != 0.0 {
            return Err(Error::domain("tabulated kernel must start at distance 0"));
        }
        if values[0] <= 0.0 {
            return Err(Error::domain("tabulated kernel variance R(0) must be positive"));
        }
        for w in distances.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain("tabulated distances must be strictly increasing"));
            }
        }
        for w in values.windows(2) {
            if w[1] > w[0] + 1e-15 {
                return Err(Error::domain("tabulated values must be nonincreasing"));
            }
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::domain("tabulated values must be finite and nonnegative"));
        }
        Ok(IsotropicKernel::Tabulated { distances, values })
    }

    /// Samples a closure on a grid and wraps it as a tabulated kernel.
    pub fn tabulated_from_fn(f: impl Fn(f64) -> f64, max_distance: f64, n: usize) -> Result<Self> {
        let distances: Vec<f64> = (0..n)
            .map(|i| max_distance * i as f64 / (n - 1) as f64)
            .collect();
        let values: Vec<f64> = distances.iter().map(|&d| f(d)).collect();
        Self::tabulated(distances, values)
    }

    /// `R(0)`, the pointwise variance.
    pub fn variance(&self) -> f64 {
        match self {
            IsotropicKernel::SquaredExponential { variance, .. }
            | IsotropicKernel::Exponential { variance, .. } => *variance,
            IsotropicKernel::Tabulated { values, .. } => values[0],
        }
    }

    /// Evaluates `R(distance)`. Callers must pass a nonnegative distance;
    /// use [`IsotropicKernel::eval_checked`] for untrusted input.
    pub fn eval(&self, distance: f64) -> f64 {
        debug_assert!(distance >= 0.0, "kernel distance must be nonnegative");
        match self {
            IsotropicKernel::SquaredExponential { scale, variance } => {
                let s = scale * distance;
                variance * (-s * s).exp()
            }
            IsotropicKernel::Exponential { scale, variance } => {
                variance * (-scale * distance).exp()
            }
            IsotropicKernel::Tabulated { distances, values } => {
                interp_linear(distances, values, distance)
            }
        }
    }

    /// Evaluates `R(distance)`, rejecting negative distances.
    pub fn eval_checked(&self, distance: f64) -> Result<f64> {
        if !(distance >= 0.0) {
            return Err(Error::domain(format!(
                "kernel distance must be nonnegative, got {distance}"
            )));
        }
        Ok(self.eval(distance))
    }

    /// Covariance between two points: `R(‖s − t‖)`.
    pub fn cov(&self, s: &[f64], t: &[f64]) -> f64 {
        let d2: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        self.eval(d2.sqrt())
    }
}

fn check_scale_var(scale: f64, variance: f64) -> Result<()> {
    if !(scale > 0.0) {
        return Err(Error::domain(format!("kernel scale must be positive, got {scale}")));
    }
    if !(variance > 0.0) {
        return Err(Error::domain(format!(
            "kernel variance must be positive, got {variance}"
        )));
    }
    Ok(())
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    // binary search for the bracketing interval
    let idx = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i,
    };
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let (y0, y1) = (ys[idx - 1], ys[idx]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A symmetric positive-semidefinite covariance matrix over an ordered
/// finite point set.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    points: PointSet,
    matrix: DMatrix<f64>,
    variance: f64,
}

impl CovMatrix {
    /// Assembles the Gram matrix `M[i,j] = R(‖t_i − t_j‖)` over `points`.
    pub fn from_kernel(kernel: &IsotropicKernel, points: &PointSet) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("gram: point set must be nonempty"));
        }
        if !points.coords().iter().all(|c| c.is_finite()) {
            return Err(Error::domain("gram: point coordinates must be finite"));
        }
        let n = points.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = kernel.variance();
            for j in 0..i {
                let v = kernel.eval(points.distance(i, j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let cov = CovMatrix {
            points: points.clone(),
            matrix: m,
            variance: kernel.variance(),
        };
        cov.check_psd()?;
        Ok(cov)
    }

    /// Wraps an explicit covariance matrix (for non-isotropic test cases).
    /// The matrix must be symmetric and PSD within tolerance; `points` gives
    /// the node labels and must match the matrix dimension.
    pub fn from_matrix(points: PointSet, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != points.len() {
            return Err(Error::domain("covariance matrix dimension mismatch"));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * norm_inf(&matrix).max(1.0) {
                    return Err(Error::domain("covariance matrix must be symmetric"));
                }
            }
        }
        let variance = (0..n).map(|i| matrix[(i, i)]).fold(f64::MIN, f64::max);
        if !(variance > 0.0) {
            return Err(Error::domain("covariance matrix must have a positive diagonal"));
        }
        let cov = CovMatrix {
            points,
            matrix,
            variance,
        };
        cov.check_psd()?;
        Ok(cov)
    }

    /// PSD within tolerance: Cholesky of `M + PSD_TOL·‖M‖·I` must succeed,
    /// which bounds every eigenvalue below by `-PSD_TOL·‖M‖`.
    fn check_psd(&self) -> Result<()> {
        let n = self.matrix.nrows();
        let shift = PSD_TOL * norm_inf(&self.matrix).max(f64::MIN_POSITIVE);
        let mut shifted = self.matrix.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if shifted.cholesky().is_none() {
            return Err(Error::numerical(
                "covariance matrix is not positive semidefinite within tolerance",
            ));
        }
        Ok(())
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Cholesky factor of the matrix, retrying with escalating diagonal
    /// jitter (starting at `JITTER_REL · variance`) when the bare
    /// factorization fails. Returns the factorization and the jitter used.
    pub fn factor(&self) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
        if let Some(chol) = self.matrix.clone().cholesky() {
            return Ok((chol, 0.0));
        }
        let mut jitter = JITTER_REL * self.variance;
        for _ in 0..8 {
            let mut m = self.matrix.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                return Ok((chol, jitter));
            }
            jitter *= 10.0;
        }
        Err(Error::numerical(
            "covariance factorization failed even with diagonal jitter",
        ))
    }
}

fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointSet;

    #[test]
    fn se_kernel_at_zero_is_variance() {
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        let k2 = IsotropicKernel::squared_exponential(2.0, 3.5).unwrap();
        assert_eq!(k2.eval(0.0), 3.5);
    }

    #[test]
    fn exponential_kernel_halves_at_ln2() {
        let k = IsotropicKernel::exponential(1.0, 1.0).unwrap();
        assert!((k.eval(std::f64::consts::LN_2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn se_kernel_at_unit_distance() {
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        assert!((k.eval(1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn negative_distance_rejected() {
        let k = IsotropicKernel::exponential(1.0, 1.0).unwrap();
        assert!(k.eval_checked(-0.5).is_err());
        assert!(k.eval_checked(0.5).is_ok());
    }

    #[test]
    fn kernels_are_nonincreasing() {
        let kernels = [
            IsotropicKernel::squared_exponential(0.7, 2.0).unwrap(),
            IsotropicKernel::exponential(1.3, 0.5).unwrap(),
            IsotropicKernel::tabulated_from_fn(|t| (1.0 + t).powf(-1.5), 20.0, 400).unwrap(),
        ];
        for k in &kernels {
            let mut prev = k.eval(0.0);
            for i in 1..=200 {
                let v = k.eval(0.05 * i as f64);
                assert!(v <= prev + 1e-14, "kernel must be nonincreasing");
                assert!(v >= 0.0 && v <= k.variance());
                prev = v;
            }
        }
    }

    #[test]
    fn tabulated_interpolates_and_clamps() {
        let k = IsotropicKernel::tabulated(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert!((k.eval(0.5) - 0.75).abs() < 1e-15);
        assert_eq!(k.eval(1.0), 0.5);
        assert_eq!(k.eval(5.0), 0.25);
    }

    #[test]
    fn tabulated_rejects_bad_tables() {
        assert!(IsotropicKernel::tabulated(vec![0.5, 1.0], vec![1.0, 0.5]).is_err());
        assert!(IsotropicKernel::tabulated(vec![0.0, 0.0], vec![1.0, 0.5]).is_err());
        assert!(IsotropicKernel::tabulated(vec![0.0, 1.0], vec![0.5, 1.0]).is_err());
        assert!(IsotropicKernel::tabulated(vec![0.0, 1.0], vec![-1.0, -2.0]).is_err());
    }

    #[test]
    fn gram_single_point_is_variance() {
        let k = IsotropicKernel::squared_exponential(1.0, 2.0).unwrap();
        let pts = PointSet::new(1, vec![0.3]).unwrap();
        let g = CovMatrix::from_kernel(&k, &pts).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.matrix()[(0, 0)], 2.0);
    }

    #[test]
    fn gram_coincident_points_rank_one() {
        let k = IsotropicKernel::exponential(1.0, 1.0).unwrap();
        let pts = PointSet::new(1, vec![0.7, 0.7]).unwrap();
        let g = CovMatrix::from_kernel(&k, &pts).unwrap();
        for v in g.matrix().iter() {
            assert_eq!(*v, 1.0);
        }
        // rank-1 matrix still factors after jitter
        let (_, jitter) = g.factor().unwrap();
        assert!(jitter > 0.0);
    }

    #[test]
    fn gram_two_points_exponential() {
        let k = IsotropicKernel::exponential(1.0, 1.0).unwrap();
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        let g = CovMatrix::from_kernel(&k, &pts).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g.matrix()[(0, 0)], 1.0);
        assert!((g.matrix()[(0, 1)] - e).abs() < 1e-15);
        assert!((g.matrix()[(1, 0)] - e).abs() < 1e-15);
    }

    #[test]
    fn explicit_matrix_psd_check() {
        let pts = PointSet::new(1, vec![0.0, 1.0]).unwrap();
        // PSD singular matrix passes
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]);
        assert!(CovMatrix::from_matrix(pts.clone(), sing).is_ok());
        // indefinite matrix fails
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CovMatrix::from_matrix(pts.clone(), indef).is_err());
        // asymmetric fails
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.4, 1.0]);
        assert!(CovMatrix::from_matrix(pts, asym).is_err());
    }

    #[test]
    fn sphere_gram_is_psd_within_tolerance() {
        // discretized circles are near-singular; construction must still pass
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let grid = crate::geometry::sphere_grid(2, 1.0, 64).unwrap();
        let g = CovMatrix::from_kernel(&k, grid.measure().support()).unwrap();
        assert!(g.factor().is_ok());
    }
}
