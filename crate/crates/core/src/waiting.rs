//! Stationary densities built on a solved model.
//!
//! Three faces of the same distribution:
//!
//! * the joint remaining-loads density
//!   μ^{c−1}·e^{−μΣv_i + cμ(τ∧min v_i)}·Σ_k δ_k(y_c^k·e)·e^{−cη_k(τ∧min v_i)},
//! * the virtual waiting time: an atom at 0, the spectral density
//!   f(v) = Σ_k a_k·c·e^{−cη_k v} on (0, τ) with a_k = δ_k(y_c^k·e), and
//!   the mass at or beyond τ,
//! * the matrix-exponential form p·v̂·exp[(cμ·e·γ+T)(τ−v)]·e of the same
//!   density, with the coefficient bridge that converts one set of
//!   coefficients into the other and cross-checks them mode by mode.
//!
//! Every emitted value is the real part of a complex sum whose imaginary
//! residue is checked; sums come in conjugate pairs, so anything beyond
//! roundoff flags a solver inconsistency rather than being averaged away.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QueueModel;
use crate::numerics::{matrix_exp, C, CVec, RVec};
use crate::solver::{one_minus_exp_ratio, LoadSolution};

/// Largest imaginary residue tolerated in an emitted real quantity.
pub const REAL_TOL: f64 = 1e-10;
/// Density values in [−NEG_CLAMP, 0) are reported as 0; anything lower
/// is a solver failure, not roundoff.
pub const NEG_CLAMP: f64 = 1e-12;
/// Tolerance on atom + continuous + tail − 1.
pub const MASS_TOL: f64 = 1e-10;
/// Per-mode tolerance of the coefficient bridge cross-check.
pub const BRIDGE_TOL: f64 = 1e-8;

fn real_part(z: C, what: &str) -> Result<f64> {
    if z.im.abs() > REAL_TOL {
        return Err(Error::Numerical(format!(
            "{what} has imaginary residue {:.3e} (> {REAL_TOL:e})",
            z.im.abs()
        )));
    }
    Ok(z.re)
}

fn clamp_density(x: f64, what: &str) -> Result<f64> {
    if x < -NEG_CLAMP {
        return Err(Error::Numerical(format!(
            "{what} is negative beyond roundoff: {x:.3e}"
        )));
    }
    Ok(x.max(0.0))
}

/// Spectral virtual-waiting-time distribution: atom at 0, density
/// coefficients on (0, τ), and the mass at or beyond τ.
#[derive(Debug, Clone)]
pub struct VirtualWaitDistribution {
    /// P(V = 0).
    pub atom0: f64,
    /// a_k = δ_k·(y_c^k·e); the density on (0,τ) is Σ_k a_k·c·e^{−cη_k v}.
    pub coeff: CVec,
    /// cη_k.
    pub rates: CVec,
    /// P(V ≥ τ).
    pub tail: f64,
    pub tau: f64,
    /// Server count, the prefactor of the density modes.
    c_servers: f64,
}

impl VirtualWaitDistribution {
    /// Builds the distribution from a solved model and verifies its mass
    /// and realness/positivity invariants (the latter on a 1000-point
    /// grid).
    pub fn from_solution(sol: &LoadSolution) -> Result<Self> {
        let parts = wait_decomposition(sol)?;
        let m = sol.model.m();
        let cf = sol.model.c as f64;
        let coeff = CVec::from_iterator(m, (0..m).map(|k| mode_coefficient(sol, k)));
        let rates = CVec::from_iterator(m, sol.spectral.eta.iter().map(|&h| h * cf));
        let dist = VirtualWaitDistribution {
            atom0: parts.atom0,
            coeff,
            rates,
            tail: parts.tail,
            tau: sol.model.tau,
            c_servers: cf,
        };

        if !(0.0..=1.0).contains(&dist.atom0) || !(0.0..=1.0).contains(&dist.tail) {
            return Err(Error::Numerical(format!(
                "atom {:.6} or tail {:.6} outside [0, 1]",
                dist.atom0, dist.tail
            )));
        }
        let mass_gap = (dist.atom0 + parts.continuous + dist.tail - 1.0).abs();
        if mass_gap > MASS_TOL {
            return Err(Error::Numerical(format!(
                "total probability mass differs from 1 by {mass_gap:.3e}"
            )));
        }
        for i in 0..1000 {
            let v = dist.tau * (i as f64 + 0.5) / 1000.0;
            dist.density(v)?;
        }
        Ok(dist)
    }

    /// Density at v ∈ (0, τ).
    pub fn density(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v < self.tau) {
            return Err(Error::Dimension(format!(
                "density argument {v} outside (0, {})",
                self.tau
            )));
        }
        let cf: f64 = self.rate_scale();
        let sum: C = self
            .coeff
            .iter()
            .zip(self.rates.iter())
            .map(|(a, r)| a * cf * (-r * v).exp())
            .sum();
        clamp_density(real_part(sum, "virtual-wait density")?, "virtual-wait density")
    }

    /// CDF at x ∈ [0, τ): atom0 + Σ_k a_k·(1 − e^{−cη_k x})/η_k.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(0.0..self.tau).contains(&x) {
            return Err(Error::Dimension(format!(
                "cdf argument {x} outside [0, {})",
                self.tau
            )));
        }
        let cf = self.rate_scale();
        let sum: C = self
            .coeff
            .iter()
            .zip(self.rates.iter())
            .map(|(a, r)| {
                let eta = r / cf;
                a * one_minus_exp_ratio(eta, cf * x)
            })
            .sum();
        let val = self.atom0 + real_part(sum, "virtual-wait cdf")?;
        Ok(val.clamp(0.0, 1.0))
    }

    /// Probability mass of the continuous part on (0, τ).
    pub fn continuous_mass(&self) -> f64 {
        1.0 - self.atom0 - self.tail
    }

    fn rate_scale(&self) -> f64 {
        self.c_servers
    }
}

/// a_k = δ_k·(y_c^k·e).
fn mode_coefficient(sol: &LoadSolution, k: usize) -> C {
    let m = sol.model.m();
    let ones = CVec::from_element(m, C::new(1.0, 0.0));
    sol.delta[k] * (&sol.y[sol.model.c][k] * &ones)[(0, 0)]
}

/// Atom, continuous mass, and tail of the virtual waiting time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaitDecomposition {
    pub atom0: f64,
    pub continuous: f64,
    pub tail: f64,
}

/// Splits unit mass into P(V=0), P(0<V<τ) and P(V≥τ): the normalization
/// equation regrouped term by term.
pub fn wait_decomposition(sol: &LoadSolution) -> Result<WaitDecomposition> {
    let model = &sol.model;
    let m = model.m();
    let c = model.c;
    let cf = c as f64;
    let ones = CVec::from_element(m, C::new(1.0, 0.0));

    let mut atom = C::new(0.0, 0.0);
    let mut cont = C::new(0.0, 0.0);
    let mut tail = C::new(0.0, 0.0);
    for k in 0..m {
        let mut idle_levels = C::new(0.0, 0.0);
        for i in 0..c {
            idle_levels += (&sol.y[i][k] * &ones)[(0, 0)] * binomial(c, i);
        }
        atom += sol.delta[k] * idle_levels;

        let a = mode_coefficient(sol, k);
        let eta = sol.spectral.eta[k];
        cont += a * one_minus_exp_ratio(eta, cf * model.tau);
        tail += a * (-eta * cf * model.tau).exp() / model.mu;
    }

    let atom0 = clamp_density(real_part(atom, "atom at zero")?, "atom at zero")?;
    let continuous = clamp_density(real_part(cont, "continuous mass")?, "continuous mass")?;
    let tail = clamp_density(real_part(tail, "tail mass")?, "tail mass")?;
    let gap = (atom0 + continuous + tail - 1.0).abs();
    if gap > MASS_TOL {
        return Err(Error::Numerical(format!(
            "atom + continuous + tail = 1{gap:+.3e}"
        )));
    }
    Ok(WaitDecomposition {
        atom0,
        continuous,
        tail,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Joint density of the remaining loads at a point with all v_i > 0.
pub fn loads_density(sol: &LoadSolution, v: &[f64]) -> Result<f64> {
    let model = &sol.model;
    if v.len() != model.c {
        return Err(Error::Dimension(format!(
            "expected {} load coordinates, got {}",
            model.c,
            v.len()
        )));
    }
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Dimension(
            "all load coordinates must be strictly positive".into(),
        ));
    }
    let cf = model.c as f64;
    let min_v = v.iter().copied().fold(f64::INFINITY, f64::min);
    let t = model.tau.min(min_v);
    let sum_v: f64 = v.iter().sum();

    let m = model.m();
    let mut modes = C::new(0.0, 0.0);
    for k in 0..m {
        modes += mode_coefficient(sol, k) * (-sol.spectral.eta[k] * cf * t).exp();
    }
    let prefactor = model.mu.powi(model.c as i32 - 1) * (-model.mu * sum_v + cf * model.mu * t).exp();
    let val = real_part(modes * prefactor, "loads density")?;
    clamp_density(val, "loads density")
}

/// Spectral virtual-wait density at v ∈ (0, τ) straight from a solution.
pub fn virtual_density(sol: &LoadSolution, v: f64) -> Result<f64> {
    if !(v > 0.0 && v < sol.model.tau) {
        return Err(Error::Dimension(format!(
            "density argument {v} outside (0, {})",
            sol.model.tau
        )));
    }
    let cf = sol.model.c as f64;
    let m = sol.model.m();
    let mut sum = C::new(0.0, 0.0);
    for k in 0..m {
        sum += mode_coefficient(sol, k) * cf * (-sol.spectral.eta[k] * cf * v).exp();
    }
    clamp_density(real_part(sum, "virtual-wait density")?, "virtual-wait density")
}

/// Matrix-exponential representation of the virtual-wait density:
/// the weighting row v̂ = γ(cμI−T)⁻¹ / γ(cμI−T)⁻¹e and the constant p.
#[derive(Debug, Clone)]
pub struct KTRepresentation {
    /// Probability row vector v̂ (sums to 1).
    pub v_hat: RVec,
    /// Normalizing constant.
    pub p: f64,
}

impl KTRepresentation {
    pub fn new(model: &QueueModel, p: f64) -> Result<Self> {
        let m = model.m();
        let cmu = model.c as f64 * model.mu;
        let mut shifted = -model.ph.t().clone();
        for i in 0..m {
            shifted[(i, i)] += cmu;
        }
        let inv = shifted
            .try_inverse()
            .ok_or_else(|| Error::Numerical("cμI − T is singular".into()))?;
        let row = model.ph.gamma().transpose() * inv;
        let total: f64 = row.iter().sum();
        let v_hat = RVec::from_iterator(m, row.iter().map(|x| x / total));
        let unit_gap = (v_hat.iter().sum::<f64>() - 1.0).abs();
        if unit_gap > 1e-12 {
            return Err(Error::Numerical(format!(
                "v̂ fails to sum to 1 by {unit_gap:.3e}"
            )));
        }
        if !(p > 0.0) {
            return Err(Error::Numerical(format!("normalizing constant p = {p} must be positive")));
        }
        Ok(KTRepresentation { v_hat, p })
    }
}

/// Matrix-exponential density p·v̂·exp[(cμeγ+T)(τ−v)]·e at v ∈ (0, τ).
pub fn kt_density(model: &QueueModel, rep: &KTRepresentation, v: f64) -> Result<f64> {
    if !(v > 0.0 && v < model.tau) {
        return Err(Error::Dimension(format!(
            "density argument {v} outside (0, {})",
            model.tau
        )));
    }
    let m = model.m();
    let cmu = model.c as f64 * model.mu;
    let mut a = model.ph.t().clone();
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] += cmu * model.ph.gamma()[j];
        }
    }
    let e = matrix_exp(&(a * (model.tau - v)))?;
    let weighted = rep.v_hat.transpose() * e;
    let val: f64 = weighted.iter().sum::<f64>() * rep.p;
    clamp_density(val, "matrix-exponential density")
}

/// Per-mode cross-check of the two density representations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientBridge {
    /// p = c·Σ_k a_k·e^{−cη_kτ}.
    pub p: f64,
    /// |a_k − p·e^{cη_kτ}·(v̂F)_k(F⁻¹e)_k/c| / max|a|, per mode.
    pub per_mode_residual: Vec<f64>,
    pub max_residual: f64,
}

/// Builds the matrix-exponential representation from the spectral
/// solution and verifies, coefficient by coefficient, that the two
/// representations describe the same density.
pub fn proposition_bridge(sol: &LoadSolution) -> Result<(KTRepresentation, CoefficientBridge)> {
    let model = &sol.model;
    let m = model.m();
    let cf = model.c as f64;

    let mut p_sum = C::new(0.0, 0.0);
    for k in 0..m {
        p_sum += mode_coefficient(sol, k) * (-sol.spectral.eta[k] * cf * model.tau).exp();
    }
    let p = cf * real_part(p_sum, "normalizing constant p")?;
    let rep = KTRepresentation::new(model, p)?;

    let v_hat_c = CVec::from_iterator(m, rep.v_hat.iter().map(|&x| C::new(x, 0.0)));
    let vf = sol.spectral.f.transpose() * &v_hat_c; // (v̂F)_k as a column
    let ones = CVec::from_element(m, C::new(1.0, 0.0));
    let finv_e = &sol.spectral.finv * &ones;

    let scale = (0..m)
        .map(|k| mode_coefficient(sol, k).norm())
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut per_mode = Vec::with_capacity(m);
    let mut max_res: f64 = 0.0;
    for k in 0..m {
        let a = mode_coefficient(sol, k);
        let growth = (sol.spectral.eta[k] * cf * model.tau).exp();
        let rhs = growth * vf[k] * finv_e[k] * (p / cf);
        let res = (a - rhs).norm() / scale;
        max_res = max_res.max(res);
        per_mode.push(res);
    }
    if max_res > BRIDGE_TOL {
        return Err(Error::Threshold(format!(
            "coefficient bridge residual {max_res:.3e} exceeds {BRIDGE_TOL:e}"
        )));
    }
    Ok((
        rep,
        CoefficientBridge {
            p,
            per_mode_residual: per_mode,
            max_residual: max_res,
        },
    ))
}

fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the density grid CSV: `v,f_spectral,f_matrix_exp`, one row per
/// interior grid point, 17 significant digits.
pub fn write_density_grid<W: Write>(
    sol: &LoadSolution,
    rep: &KTRepresentation,
    grid: usize,
    out: &mut W,
) -> Result<()> {
    writeln!(out, "v,f_spectral,f_matrix_exp")?;
    for i in 1..=grid {
        let v = sol.model.tau * i as f64 / (grid as f64 + 1.0);
        let fs = virtual_density(sol, v)?;
        let fm = kt_density(&sol.model, rep, v)?;
        writeln!(out, "{},{},{}", fmt_g17(v), fmt_g17(fs), fmt_g17(fm))?;
    }
    Ok(())
}
