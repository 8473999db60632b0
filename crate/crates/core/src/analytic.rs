//! Closed-form steady-state scattering of a single photon.
//!
//! With `A = ω − Ω + iγ_a`, `B = ω − ω_c + iγ_c` and
//! `D = A·(B + iΓ) − g²` the amplitudes are
//!
//! ```text
//! t   = (A·B − g²) / D
//! r   = −A·iΓ / D
//! e_c = A·V / D
//! e_a = g·V / D
//! ```
//!
//! for an incident plane wave of unit amplitude. Excitation amplitudes carry
//! the plane-wave normalization, so `(2γ/v_g)·|e|²` is a dissipated flux.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("scattering denominator vanishes at omega = {omega}")]
    DegenerateDenominator { omega: f64 },
    #[error("atom is not excited (e_a = 0); relative phase undefined")]
    AtomNotExcited,
}

/// The four scattering amplitudes at one probe frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringSolution {
    pub omega: f64,
    /// Wave vector relative to the linearization point, `(ω − ω_0)/v_g`.
    pub q: f64,
    pub t: Complex64,
    pub r: Complex64,
    pub e_c: Complex64,
    pub e_a: Complex64,
}

impl ScatteringSolution {
    pub fn transmission(&self) -> f64 {
        self.t.norm_sqr()
    }
    pub fn reflection(&self) -> f64 {
        self.r.norm_sqr()
    }
    pub fn cavity_population(&self) -> f64 {
        self.e_c.norm_sqr()
    }
    pub fn atom_population(&self) -> f64 {
        self.e_a.norm_sqr()
    }
}

/// Amplitudes of the direct-coupled geometry obtained by folding the
/// side-coupled solution about the mirror plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectCoupledSolution {
    pub transmission: Complex64,
    pub reflection: Complex64,
    pub e_c: Complex64,
    pub e_a: Complex64,
    pub phi: f64,
    pub f0: f64,
}

struct Parts {
    a: Complex64,
    n: Complex64,
    d: Complex64,
    dn: Complex64,
    dd: Complex64,
}

// With g = 0 the factor A is common to numerator and denominator and is
// cancelled, leaving the bare side-coupled cavity.
fn parts(p: &SystemParams, omega: f64) -> Result<Parts, AnalyticError> {
    let b = Complex64::new(omega - p.omega_c(), p.gamma_c());
    let gw = I * p.gamma_wg();
    let parts = if p.g() == 0.0 {
        let one = Complex64::new(1.0, 0.0);
        Parts {
            a: one,
            n: b,
            d: b + gw,
            dn: one,
            dd: one,
        }
    } else {
        let a = Complex64::new(omega - p.omega_a(), p.gamma_a());
        let g2 = p.g() * p.g();
        Parts {
            a,
            n: a * b - g2,
            d: a * (b + gw) - g2,
            dn: a + b,
            dd: a + b + gw,
        }
    };
    if !(parts.d.norm() > f64::MIN_POSITIVE) || !parts.d.is_finite() {
        return Err(AnalyticError::DegenerateDenominator { omega });
    }
    Ok(parts)
}

/// Evaluates the closed-form scattering amplitudes at `omega`.
pub fn scatter(params: &SystemParams, omega: f64) -> Result<ScatteringSolution, AnalyticError> {
    let Parts { a, n, d, .. } = parts(params, omega)?;
    let v = params.coupling_v();
    Ok(ScatteringSolution {
        omega,
        q: (omega - params.omega_0()) / params.v_g(),
        t: n / d,
        r: -(a * I * params.gamma_wg()) / d,
        e_c: a * v / d,
        e_a: params.g() * v / d,
    })
}

/// Transmission amplitude at the atomic frequency. For lossless parameters
/// this is exactly one whatever the cavity detuning.
pub fn scatter_detuned_resonance_check(params: &SystemParams) -> Result<Complex64, AnalyticError> {
    scatter(params, params.omega_a()).map(|s| s.t)
}

/// Phase of the cavity excitation relative to the atomic excitation,
/// `arg(e_c/e_a)` in `(−π, π]`.
pub fn relative_phase(sol: &ScatteringSolution) -> Result<f64, AnalyticError> {
    if sol.e_a.norm() == 0.0 {
        return Err(AnalyticError::AtomNotExcited);
    }
    Ok((sol.e_c / sol.e_a).arg())
}

/// `|t|² + |r|² + (2γ_c/v_g)|e_c|² + (2γ_a/v_g)|e_a|² − 1`.
pub fn flux_balance_residual(sol: &ScatteringSolution, params: &SystemParams) -> f64 {
    let vg = params.v_g();
    sol.t.norm_sqr()
        + sol.r.norm_sqr()
        + 2.0 * params.gamma_c() / vg * sol.e_c.norm_sqr()
        + 2.0 * params.gamma_a() / vg * sol.e_a.norm_sqr()
        - 1.0
}

/// Maps a side-coupled solution onto the direct-coupled geometry with mirror
/// phase `phi` and switch-on value `f0` at the origin.
///
/// The photon amplitudes swap roles and pick up `e^{iφ}`; the excitations
/// pick up `e^{−iφ·f0}` from the phase carried by the coupling terms.
pub fn map_direct_coupled(sol: &ScatteringSolution, phi: f64, f0: f64) -> DirectCoupledSolution {
    let mirror = Complex64::from_polar(1.0, phi);
    let coupling = Complex64::from_polar(1.0, -phi * f0);
    DirectCoupledSolution {
        transmission: sol.r * mirror,
        reflection: sol.t * mirror,
        e_c: sol.e_c * coupling,
        e_a: sol.e_a * coupling,
        phi,
        f0,
    }
}

/// `|t|²` and its exact derivative with respect to the probe frequency.
pub fn transmission_and_slope(
    params: &SystemParams,
    omega: f64,
) -> Result<(f64, f64), AnalyticError> {
    let Parts { n, d, dn, dd, .. } = parts(params, omega)?;
    let t = n / d;
    let dt = (dn * d - n * dd) / (d * d);
    Ok((t.norm_sqr(), 2.0 * (t.conj() * dt).re))
}

/// Derivative of `|t|²` with respect to the atom–cavity detuning
/// `δ = Ω − ω_c`, varied by moving the cavity at fixed probe frequency.
pub fn detuning_slope(params: &SystemParams, omega: f64) -> Result<f64, AnalyticError> {
    let Parts { a, n, d, .. } = parts(params, omega)?;
    let t = n / d;
    let dt = a * (d - n) / (d * d);
    Ok(2.0 * (t.conj() * dt).re)
}

/// `|r|²`, the model fitted to direct-coupled transmission data.
pub fn reflection_probability(params: &SystemParams, omega: f64) -> Result<f64, AnalyticError> {
    let Parts { a, d, .. } = parts(params, omega)?;
    Ok((a * params.gamma_wg() / d).norm_sqr())
}
