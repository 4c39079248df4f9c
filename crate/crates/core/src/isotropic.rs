//! Closed-form and semi-closed-form rate analysis for spheres.
//!
//! For an isotropic kernel with R(0) = v, a sphere of radius ρ and a hole
//! of depth factor r at its center, the rate is M_ρ(r) = 1/W_ρ(r) with
//!
//! ```text
//!   W_ρ(r) = D(ρ)                                 if R(ρ) ≤ r·D(ρ)
//!   W_ρ(r) = (v·D(ρ) − R(ρ)²)
//!            / (v − 2r·R(ρ) + r²·D(ρ)) = H_ρ(r)   if R(ρ) > r·D(ρ),
//! ```
//!
//! where D(ρ) is the kernel energy of the uniform measure on the sphere.
//! On the first branch the center constraint costs nothing beyond holding
//! the sphere above the level; on the second it binds. H ≤ D always, the
//! two branches agree at the split R(ρ) = r·D(ρ), and H vanishes at ρ = 0:
//! a hole at the peak itself is impossible at any rate.
//!
//! The hole-anywhere analysis works on the unit sphere with the hole at
//! b·e₁, 0 ≤ b ≤ 1 (distances scaled by ρ), through the ratio
//!
//! ```text
//!   V(ρ, b; μ) = (∬R(ρ‖t₁−t₂‖)dμdμ − (∫R(ρ‖t−be₁‖)dμ)²)
//!                / (1 − 2r∫R(ρ‖t−be₁‖)dμ + r²∬R(ρ‖t₁−t₂‖)dμdμ),
//! ```
//!
//! requiring unit variance. The center-hole rate governs the anywhere rate
//! whenever, for every branch-relevant ρ, either the smoothed covariance
//! b ↦ ∫R(ρ‖t−be₁‖)dμ_h is minimized at b = 0, or the cheap mixture
//! family w·δ_{e₁} + (1−w)·μ_h certifies V(ρ, b; ·) ≤ V(ρ, 0; μ_h) with
//! the mass constraint intact. Both certificates are checked numerically.

use crate::dual::{second_minimum_grams, DualOptions};
use crate::error::{Error, Result};
use crate::geometry::{sphere_grid, DiscreteMeasure, SphereGrid};
use crate::kernel::IsotropicKernel;
use serde::{Deserialize, Serialize};

/// Default circle resolution for d = 2 sphere quadrature.
pub const DEFAULT_RESOLUTION_D2: usize = 512;
/// Default Gauss–Legendre polar resolution for d = 3 (times 2n azimuths).
pub const DEFAULT_RESOLUTION_D3: usize = 32;
/// Default number of radius grid points for scans over ρ.
pub const DEFAULT_RHO_GRID: usize = 400;
/// Default number of hole locations probed on [0, 1].
pub const DEFAULT_B_GRID: usize = 201;

/// Which case of the sphere rate applies at a radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// R(ρ) ≤ r·D(ρ): the center hole is free, W = D(ρ).
    HoleFree,
    /// R(ρ) > r·D(ρ): the center hole binds, W = H_ρ(r).
    HoleBinding,
}

/// An isotropic sphere-with-hole analysis configuration.
#[derive(Debug, Clone)]
pub struct IsotropicHoleSpec {
    pub kernel: IsotropicKernel,
    pub dim: usize,
    pub r: f64,
    /// Largest sphere radius considered (the largest ball fitting in the
    /// index set).
    pub rho_max: f64,
    /// Sphere quadrature resolution.
    pub resolution: usize,
    pub rho_grid_points: usize,
    pub b_grid_points: usize,
}

impl IsotropicHoleSpec {
    pub fn new(kernel: IsotropicKernel, dim: usize, r: f64, rho_max: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::domain(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::domain(format!("depth factor r must be in (0, 1], got {r}")));
        }
        if !(rho_max > 0.0) {
            return Err(Error::domain("rho_max must be positive"));
        }
        let resolution = match dim {
            2 => DEFAULT_RESOLUTION_D2,
            3 => DEFAULT_RESOLUTION_D3,
            _ => 2,
        };
        Ok(IsotropicHoleSpec {
            kernel,
            dim,
            r,
            rho_max,
            resolution,
            rho_grid_points: DEFAULT_RHO_GRID,
            b_grid_points: DEFAULT_B_GRID,
        })
    }

    pub fn with_resolution(mut self, n: usize) -> Self {
        self.resolution = n;
        self
    }

    /// R(ρ).
    pub fn cov_at(&self, rho: f64) -> f64 {
        self.kernel.eval(rho)
    }

    /// D(ρ): kernel energy of the uniform measure on the radius-ρ sphere.
    pub fn sphere_energy_at(&self, rho: f64) -> f64 {
        match self.dim {
            1 => 0.5 * (self.kernel.variance() + self.kernel.eval(2.0 * rho)),
            2 => {
                let n = self.resolution;
                let mut acc = 0.0;
                for k in 0..n {
                    let half_angle = std::f64::consts::PI * k as f64 / n as f64;
                    acc += self.kernel.eval(2.0 * rho * half_angle.sin().abs());
                }
                acc / n as f64
            }
            _ => {
                let grid = sphere_grid(3, rho, self.resolution).expect("validated dims");
                crate::geometry::sphere_energy_on_grid(&self.kernel, &grid)
            }
        }
    }

    /// H_ρ(r): the binding-branch formula, evaluated regardless of branch.
    /// Degenerate only at ρ = 0 with r = 1 where it is 0/0.
    pub fn hole_energy(&self, rho: f64) -> Result<f64> {
        let v = self.kernel.variance();
        let d = self.sphere_energy_at(rho);
        let rr = self.cov_at(rho);
        let num = v * d - rr * rr;
        let den = v - 2.0 * self.r * rr + self.r * self.r * d;
        if den <= 0.0 {
            if num.abs() <= 1e-14 * v * v {
                return Err(Error::numerical(
                    "hole energy is degenerate (0/0 at rho = 0 with r = 1)",
                ));
            }
            return Err(Error::numerical("hole energy denominator is nonpositive"));
        }
        Ok(num / den)
    }

    /// W_ρ(r) and the branch that produced it. The reciprocal is the rate
    /// of the sphere-with-center-hole event at this radius.
    pub fn rate_reciprocal(&self, rho: f64) -> Result<(f64, Branch)> {
        let d = self.sphere_energy_at(rho);
        let rr = self.cov_at(rho);
        if rr <= self.r * d {
            Ok((d, Branch::HoleFree))
        } else {
            Ok((self.hole_energy(rho)?, Branch::HoleBinding))
        }
    }

    /// Per-radius profile over a log-spaced grid, for table output.
    pub fn radius_profile(&self) -> Result<RadiusProfile> {
        let rhos = log_grid(1e-3, self.rho_max, self.rho_grid_points);
        let mut rows = Vec::with_capacity(rhos.len());
        for &rho in &rhos {
            let d = self.sphere_energy_at(rho);
            let rr = self.cov_at(rho);
            let h = self.hole_energy(rho).unwrap_or(0.0);
            let (w, branch) = self.rate_reciprocal(rho)?;
            rows.push(RadiusRow {
                rho,
                cov: rr,
                sphere_energy: d,
                hole_energy: h,
                rate_reciprocal: w,
                branch,
            });
        }
        Ok(RadiusProfile { rows })
    }

    /// The radius at which a depth-r center hole is least exponentially
    /// costly: argmax of H over (0, ρ_max], located by a grid scan refined
    /// by golden-section search. Requires 0 < r < 1 (at r = 1 the argmax
    /// degenerates toward ρ = 0 for short-memory kernels).
    pub fn most_likely_radius(&self) -> Result<(f64, f64)> {
        if !(self.r < 1.0) {
            return Err(Error::domain("most likely radius needs 0 < r < 1"));
        }
        let rhos = log_grid(1e-3, self.rho_max, self.rho_grid_points);
        let h = |rho: f64| self.hole_energy(rho).unwrap_or(0.0);
        let mut best_i = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &rho) in rhos.iter().enumerate() {
            let v = h(rho);
            if v > best_v {
                best_v = v;
                best_i = i;
            }
        }
        let lo = if best_i == 0 { rhos[0] * 0.5 } else { rhos[best_i - 1] };
        let hi = if best_i + 1 == rhos.len() {
            self.rho_max
        } else {
            rhos[best_i + 1]
        };
        let (rho_star, h_max) = golden_max(h, lo, hi, 1e-6);
        Ok((rho_star, h_max))
    }

    /// The center-hole rate: minimum over ρ ∈ [0, ρ_max] of 1/W_ρ(r),
    /// found by maximizing W. Returns (rate, argmin radius); the rate is
    /// +∞ when W vanishes identically (a depth-r hole at a single peak
    /// point is impossible).
    pub fn center_rate(&self) -> Result<(f64, f64)> {
        let w_at = |rho: f64| self.rate_reciprocal(rho).map(|p| p.0).unwrap_or(0.0);
        let w0 = if self.r >= 1.0 { self.kernel.variance() } else { 0.0 };
        let rhos = log_grid(1e-3, self.rho_max, self.rho_grid_points);
        let mut best_rho = 0.0;
        let mut best_w = w0;
        let mut best_i = None;
        for (i, &rho) in rhos.iter().enumerate() {
            let w = w_at(rho);
            if w > best_w {
                best_w = w;
                best_rho = rho;
                best_i = Some(i);
            }
        }
        if let Some(i) = best_i {
            let lo = if i == 0 { rhos[0] * 0.5 } else { rhos[i - 1] };
            let hi = if i + 1 == rhos.len() { self.rho_max } else { rhos[i + 1] };
            let (rho_ref, w_ref) = golden_max(w_at, lo, hi, 1e-6);
            if w_ref > best_w {
                best_w = w_ref;
                best_rho = rho_ref;
            }
        }
        if best_w <= 0.0 {
            return Ok((f64::INFINITY, best_rho));
        }
        Ok((1.0 / best_w, best_rho))
    }

    fn require_unit_variance(&self) -> Result<()> {
        if (self.kernel.variance() - 1.0).abs() > 1e-12 {
            return Err(Error::domain(
                "off-center hole analysis assumes a unit-variance kernel",
            ));
        }
        Ok(())
    }

    fn unit_grid(&self) -> Result<SphereGrid> {
        sphere_grid(self.dim, 1.0, self.resolution)
    }

    /// V(ρ, b; μ) for a measure μ on the unit sphere and a hole at b·e₁.
    /// Returns +∞ when the denominator vanishes.
    pub fn v_ratio(&self, rho: f64, b: f64, mu: &DiscreteMeasure) -> Result<f64> {
        self.require_unit_variance()?;
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::domain("hole location b must lie in [0, 1]"));
        }
        if mu.dim() != self.dim {
            return Err(Error::domain("measure dimension mismatch"));
        }
        for p in mu.support().iter() {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::domain("measure support must lie on the unit sphere"));
            }
        }
        let w = mu.weights();
        let pts = mu.support();
        let n = pts.len();
        let mut energy = 0.0;
        for i in 0..n {
            for j in 0..n {
                energy += w[i] * w[j] * self.kernel.eval(rho * pts.distance(i, j));
            }
        }
        let mut hole_cov = 0.0;
        for (p, &wi) in pts.iter().zip(w) {
            hole_cov += wi * self.kernel.eval(rho * dist_to_axis_point(p, b));
        }
        v_from_parts(energy, hole_cov, self.r)
    }

    /// Smoothed covariance to the hole location: g(b) = ∫R(ρ‖t−be₁‖)dμ_h.
    fn mean_cov_profile(&self, grid: &SphereGrid, rho: f64, b: f64) -> f64 {
        let mu = grid.measure();
        let mut acc = 0.0;
        for (p, &w) in mu.support().iter().zip(mu.weights()) {
            acc += w * self.kernel.eval(rho * dist_to_axis_point(p, b));
        }
        acc
    }

    /// Whether the smoothed covariance b ↦ ∫R(ρ‖t−be₁‖)dμ_h over the hole
    /// grid is minimized at the center b = 0 (within 1e-9). When this
    /// holds, the rotation-invariant measure certifies that the center is
    /// the worst hole location at this radius.
    pub fn center_hole_condition(&self, rho: f64) -> Result<bool> {
        self.require_unit_variance()?;
        let grid = self.unit_grid()?;
        let g0 = self.mean_cov_profile(&grid, rho, 0.0);
        let mut min_g = f64::INFINITY;
        let nb = self.b_grid_points.max(2);
        for i in 0..nb {
            let b = i as f64 / (nb - 1) as f64;
            min_g = min_g.min(self.mean_cov_profile(&grid, rho, b));
        }
        Ok(g0 <= min_g + 1e-9)
    }

    /// Smallest radius above which [`Self::center_hole_condition`] holds,
    /// located by a scan and bisection. `None` when no transition occurs
    /// on (0, ρ_max].
    pub fn center_hole_threshold(&self) -> Result<Option<f64>> {
        self.require_unit_variance()?;
        let lo0 = (self.rho_max / 200.0).max(0.02);
        let steps = 80usize;
        let mut prev_rho = lo0;
        let mut prev = self.center_hole_condition(prev_rho)?;
        for i in 1..=steps {
            let rho = lo0 + (self.rho_max - lo0) * i as f64 / steps as f64;
            let cur = self.center_hole_condition(rho)?;
            if !prev && cur {
                let (mut lo, mut hi) = (prev_rho, rho);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if self.center_hole_condition(mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(Some(0.5 * (lo + hi)));
            }
            prev = cur;
            prev_rho = rho;
        }
        Ok(None)
    }

    /// Searches the mixture family w·δ_{e₁} + (1−w)·μ_h for a certificate
    /// that the hole at b·e₁ is no worse than the center hole: w minimizes
    /// the numerator quadratic of V, then the mass constraint (`feasible`)
    /// and the domination V(ρ,b;μ_w) ≤ V(ρ,0;μ_h) (`dominates`) are
    /// checked.
    pub fn mixture_certificate(&self, rho: f64, b: f64) -> Result<MixtureCertificate> {
        self.require_unit_variance()?;
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::domain("hole location b must lie in [0, 1]"));
        }
        let grid = self.unit_grid()?;
        let d_rho = self.sphere_energy_at(rho);
        // cross energy of the point mass at e1 against the uniform measure
        let h_cross = self.mean_cov_profile(&grid, rho, 1.0);
        let g_b = self.mean_cov_profile(&grid, rho, b);
        let e_b = self.kernel.eval(rho * (1.0 - b).abs());

        // numerator N(w) = a(w) − b̃(w)², a quadratic in the mixing weight
        let a_of = |w: f64| w * w + 2.0 * w * (1.0 - w) * h_cross + (1.0 - w) * (1.0 - w) * d_rho;
        let bt_of = |w: f64| w * e_b + (1.0 - w) * g_b;
        let n_of = |w: f64| a_of(w) - bt_of(w) * bt_of(w);
        let quad = (1.0 - 2.0 * h_cross + d_rho) - (e_b - g_b) * (e_b - g_b);
        let lin = 2.0 * (h_cross - d_rho) - 2.0 * g_b * (e_b - g_b);
        let mut candidates = vec![0.0, 1.0];
        if quad > 0.0 {
            let vertex = -lin / (2.0 * quad);
            if (0.0..=1.0).contains(&vertex) {
                candidates.push(vertex);
            }
        }
        let weight = candidates
            .into_iter()
            .min_by(|&x, &y| n_of(x).partial_cmp(&n_of(y)).unwrap())
            .unwrap();

        let a = a_of(weight);
        let bt = bt_of(weight);
        let feasible = bt >= self.r * a - 1e-12;
        let v_mix = v_from_parts(a, bt, self.r)?;
        let v_center = self.hole_energy(rho)?;
        let dominates = v_mix <= v_center + 1e-12;

        // materialize the mixture measure: μ_h scaled plus an atom at e1
        let mu_h = grid.measure();
        let mut e1 = vec![0.0; self.dim];
        e1[0] = 1.0;
        let support = mu_h
            .support()
            .concat(&crate::geometry::PointSet::new(self.dim, e1)?)?;
        let mut weights: Vec<f64> = mu_h.weights().iter().map(|&x| x * (1.0 - weight)).collect();
        weights.push(weight);
        let measure = DiscreteMeasure::new(support, weights)?;

        Ok(MixtureCertificate {
            measure,
            weight,
            feasible,
            dominates,
            v_mixture: v_mix,
            v_center,
        })
    }

    /// The rate of a depth-r hole anywhere inside the ball. When the
    /// hypothesis check succeeds (for every branch-relevant ρ the center
    /// is the worst hole location, certified by the smoothed-covariance
    /// condition or the mixture family), this equals the center rate and
    /// `verified` is true. Otherwise the rate is estimated on a coarse
    /// (ρ, b) grid through the fractional-problem machinery with
    /// `verified = false`.
    pub fn anywhere_rate(&self, mode: AnywhereMode) -> Result<AnywhereRate> {
        self.require_unit_variance()?;
        if mode == AnywhereMode::VerifyHypothesis {
            let mut all_ok = true;
            let rhos = log_grid(1e-3, self.rho_max, self.rho_grid_points.min(160));
            'rho: for &rho in &rhos {
                let d = self.sphere_energy_at(rho);
                if self.cov_at(rho) < self.r * d {
                    continue; // hole-free branch: nothing to certify
                }
                if self.center_hole_condition(rho)? {
                    continue;
                }
                let nb = self.b_grid_points.max(2);
                for i in 0..nb {
                    let b = i as f64 / (nb - 1) as f64;
                    let cert = self.mixture_certificate(rho, b)?;
                    if !(cert.feasible && cert.dominates) {
                        all_ok = false;
                        break 'rho;
                    }
                }
            }
            if all_ok {
                let (value, _) = self.center_rate()?;
                return Ok(AnywhereRate { value, verified: true });
            }
        }

        // fallback: coarse grid over radius and hole location
        let rhos = log_grid(self.rho_max / 50.0, self.rho_max, 24);
        let n_b = 7usize;
        let resolution = if self.dim == 2 { 48 } else { 8 };
        let opts = DualOptions {
            restarts: 3,
            inner_max_iter: 1200,
            compute_primal_gap: false,
            ..DualOptions::default()
        };
        let mut best = f64::NEG_INFINITY;
        for &rho in &rhos {
            let d_rho = self.sphere_energy_at(rho);
            for i in 0..n_b {
                let b = i as f64 / (n_b - 1) as f64;
                let sphere = sphere_grid(self.dim, rho, resolution)?;
                let g1 =
                    crate::kernel::CovMatrix::from_kernel(&self.kernel, sphere.measure().support())?;
                let mut hole = vec![0.0; self.dim];
                hole[0] = b * rho;
                let g12 = nalgebra::DMatrix::from_iterator(
                    sphere.measure().len(),
                    1,
                    sphere
                        .measure()
                        .support()
                        .iter()
                        .map(|p| self.kernel.cov(p, &hole)),
                );
                let g2 = nalgebra::DMatrix::from_element(1, 1, self.kernel.variance());
                let (v_star, _, _) = second_minimum_grams(g1.matrix(), &g12, &g2, self.r, &opts)?;
                let governed = d_rho.min(v_star);
                if governed > best {
                    best = governed;
                }
            }
        }
        if !(best > 0.0) {
            return Ok(AnywhereRate {
                value: f64::INFINITY,
                verified: false,
            });
        }
        Ok(AnywhereRate {
            value: 1.0 / best,
            verified: false,
        })
    }
}

/// How [`IsotropicHoleSpec::anywhere_rate`] establishes its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnywhereMode {
    VerifyHypothesis,
    SkipHypothesis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnywhereRate {
    pub value: f64,
    pub verified: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureCertificate {
    /// The mixture measure w·δ_{e₁} + (1−w)·μ_h on the unit sphere.
    pub measure: DiscreteMeasure,
    pub weight: f64,
    /// Mass constraint b̃ ≥ r·a holds at the mixture.
    pub feasible: bool,
    /// V(ρ, b; μ_w) ≤ V(ρ, 0; μ_h).
    pub dominates: bool,
    pub v_mixture: f64,
    pub v_center: f64,
}

/// One row of the per-radius profile table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadiusRow {
    pub rho: f64,
    pub cov: f64,
    pub sphere_energy: f64,
    pub hole_energy: f64,
    pub rate_reciprocal: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub rows: Vec<RadiusRow>,
}

fn v_from_parts(energy: f64, hole_cov: f64, r: f64) -> Result<f64> {
    let num = energy - hole_cov * hole_cov;
    let den = 1.0 - 2.0 * r * hole_cov + r * r * energy;
    if den <= f64::MIN_POSITIVE {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Distance from a point to b·e₁.
fn dist_to_axis_point(p: &[f64], b: f64) -> f64 {
    let mut s = (p[0] - b) * (p[0] - b);
    for x in &p[1..] {
        s += x * x;
    }
    s.sqrt()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let lo = lo.min(hi * 0.5).max(1e-12);
    let n = n.max(2);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Golden-section maximization of a unimodal function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
