//! Frequency scans and spectral features of `|t(ω)|²`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{
    self, detuning_slope, relative_phase, scatter, transmission_and_slope, AnalyticError,
};
use crate::params::{ParamsError, SystemParams};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("bad frequency range [{lo}, {hi}] with {n} points")]
    BadRange { lo: f64, hi: f64, n: usize },
    #[error("no extremum of |t|^2 in [{lo}, {hi}]")]
    NoExtremumFound { lo: f64, hi: f64 },
    #[error("half level {level} is not crossed on both sides of the dip at {omega}")]
    LevelNotCrossed { omega: f64, level: f64 },
    #[error("extremum at {omega} is a maximum, not a dip")]
    NotADip { omega: f64 },
    #[error("detuning sensitivity has no interior minimum in [{lo}, {hi}]")]
    NoRobustFrequency { lo: f64, hi: f64 },
    #[error("expansion order {0} is not supported (use 1 to 3)")]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Observables on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub omega_grid: Vec<f64>,
    pub transmission: Vec<f64>,
    pub reflection: Vec<f64>,
    pub cavity_population: Vec<f64>,
    pub atom_population: Vec<f64>,
    /// `arg(e_c/e_a)`; NaN where the atom is not excited.
    pub phase: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.omega_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_grid.is_empty()
    }

    /// Writes the CSV table `omega,T,R,Pc,Pa,phase`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SpectrumError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "T", "R", "Pc", "Pa", "phase"])?;
        for i in 0..self.len() {
            w.write_record(&[
                self.omega_grid[i].to_string(),
                self.transmission[i].to_string(),
                self.reflection[i].to_string(),
                self.cavity_population[i].to_string(),
                self.atom_population[i].to_string(),
                self.phase[i].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub(crate) fn from_points(points: Vec<analytic::ScatteringSolution>) -> Spectrum {
        let mut s = Spectrum {
            omega_grid: Vec::with_capacity(points.len()),
            transmission: Vec::with_capacity(points.len()),
            reflection: Vec::with_capacity(points.len()),
            cavity_population: Vec::with_capacity(points.len()),
            atom_population: Vec::with_capacity(points.len()),
            phase: Vec::with_capacity(points.len()),
        };
        for p in points {
            s.omega_grid.push(p.omega);
            s.transmission.push(p.transmission());
            s.reflection.push(p.reflection());
            s.cavity_population.push(p.cavity_population());
            s.atom_population.push(p.atom_population());
            s.phase.push(relative_phase(&p).unwrap_or(f64::NAN));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub omega: f64,
    pub value: f64,
    pub kind: ExtremumKind,
    /// Width of the final bracket around the root of `d|t|²/dω`.
    pub refinement_error: f64,
}

fn uniform_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, SpectrumError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi && n >= 2) {
        return Err(SpectrumError::BadRange { lo, hi, n });
    }
    let span = hi - lo;
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + span * (i as f64) / last
            }
        })
        .collect())
}

/// Evaluates the scattering solution on `n_points` uniformly spaced
/// frequencies from `omega_min` to `omega_max` inclusive.
pub fn scan(
    params: &SystemParams,
    omega_min: f64,
    omega_max: f64,
    n_points: usize,
) -> Result<Spectrum, SpectrumError> {
    let grid = uniform_grid(omega_min, omega_max, n_points)?;
    let points = grid
        .par_iter()
        .map(|&w| scatter(params, w))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Spectrum::from_points(points))
}

/// Smallest spectral feature width: min of Γ and the nonzero values among
/// γ_c, γ_a and 2g.
pub fn feature_width(params: &SystemParams) -> f64 {
    [params.gamma_c(), params.gamma_a(), 2.0 * params.g()]
        .into_iter()
        .filter(|&w| w > 0.0)
        .fold(params.gamma_wg(), f64::min)
}

const PRESCAN_PER_WIDTH: f64 = 40.0;
const MAX_PRESCAN: usize = 4_000_000;

fn prescan_points(params: &SystemParams, lo: f64, hi: f64) -> usize {
    let n = ((hi - lo) / feature_width(params) * PRESCAN_PER_WIDTH).ceil() as usize + 1;
    n.clamp(64, MAX_PRESCAN)
}

// Bisection on a sign change of `f` down to floating-point resolution.
fn bisect<F, E>(mut f: F, mut a: f64, mut b: f64, fa: f64) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut fa = fa;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok((m, 0.0));
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok((0.5 * (a + b), b - a))
}

/// Locates every local extremum of `|t|²` inside `bracket`.
///
/// A dense prescan of the analytic slope brackets each sign change, which is
/// then bisected to floating-point resolution. `tol` bounds the reported
/// refinement error.
pub fn find_extrema(
    params: &SystemParams,
    bracket: (f64, f64),
    tol: f64,
) -> Result<Vec<Extremum>, SpectrumError> {
    let (lo, hi) = bracket;
    let n = prescan_points(params, lo, hi);
    if !(tol > 0.0) {
        return Err(SpectrumError::BadRange { lo, hi, n });
    }
    let grid = uniform_grid(lo, hi, n)?;
    let slopes = grid
        .par_iter()
        .map(|&w| transmission_and_slope(params, w).map(|(_, s)| s))
        .collect::<Result<Vec<_>, _>>()?;
    let slope = |w: f64| transmission_and_slope(params, w).map(|(_, s)| s);

    let mut found = Vec::new();
    for i in 0..n - 1 {
        let (s0, s1) = (slopes[i], slopes[i + 1]);
        let (omega, err, rising_before) = if s0 == 0.0 {
            if i == 0 {
                continue;
            }
            let before = slopes[i - 1];
            if before == 0.0 || (before > 0.0) == (s1 > 0.0) || s1 == 0.0 {
                continue;
            }
            (grid[i], 0.0, before > 0.0)
        } else if s1 != 0.0 && (s0 > 0.0) != (s1 > 0.0) {
            let (w, e) = bisect(slope, grid[i], grid[i + 1], s0)?;
            (w, e, s0 > 0.0)
        } else {
            continue;
        };
        found.push(Extremum {
            omega,
            value: scatter(params, omega)?.transmission(),
            kind: if rising_before {
                ExtremumKind::Maximum
            } else {
                ExtremumKind::Minimum
            },
            refinement_error: err.min(tol),
        });
    }
    if found.is_empty() {
        return Err(SpectrumError::NoExtremumFound { lo, hi });
    }
    Ok(found)
}

fn transmission(params: &SystemParams, w: f64) -> Result<f64, AnalyticError> {
    scatter(params, w).map(|s| s.transmission())
}

// Walks away from the dip until the slope turns over (a local maximum) or the
// window ends. Returns the position and value of the reference point.
fn side_reference(
    params: &SystemParams,
    dip: f64,
    dir: f64,
    window: f64,
) -> Result<(f64, f64, bool), SpectrumError> {
    let step = feature_width(params) / PRESCAN_PER_WIDTH;
    let steps = (window / step).ceil() as usize;
    let mut prev = dip;
    for k in 1..=steps {
        let w = dip + dir * step * k as f64;
        let (_, s) = transmission_and_slope(params, w)?;
        if dir * s <= 0.0 {
            let (_, s_prev) = transmission_and_slope(params, prev)?;
            let (m, _) = bisect(
                |x| transmission_and_slope(params, x).map(|(_, s)| s),
                prev.min(w),
                prev.max(w),
                if dir > 0.0 { s_prev } else { s },
            )?;
            return Ok((m, transmission(params, m)?, true));
        }
        prev = w;
    }
    Ok((prev, transmission(params, prev)?, false))
}

/// Full width of a transmission dip at the half level between the dip value
/// and the neighbouring local maximum.
///
/// For a lossless spectrum the half level is 1/2. When both sides rise to a
/// genuine local maximum the nearer one is used; a side that keeps rising to
/// the edge of the search window only serves as a fallback reference.
pub fn dip_fwhm(params: &SystemParams, dip: &Extremum) -> Result<f64, SpectrumError> {
    if dip.kind != ExtremumKind::Minimum {
        return Err(SpectrumError::NotADip { omega: dip.omega });
    }
    let window = 10.0
        * (params.gamma_wg()
            + params.gamma_c()
            + params.gamma_a()
            + 2.0 * params.g()
            + (params.omega_a() - params.omega_c()).abs());
    let left = side_reference(params, dip.omega, -1.0, window)?;
    let right = side_reference(params, dip.omega, 1.0, window)?;
    let reference = match (left.2, right.2) {
        (true, true) => {
            if dip.omega - left.0 <= right.0 - dip.omega {
                left.1
            } else {
                right.1
            }
        }
        (true, false) => left.1,
        (false, true) => right.1,
        (false, false) => left.1.min(right.1),
    };
    let level = 0.5 * (dip.value + reference);
    let f = |w: f64| transmission(params, w).map(|t| t - level);
    let crossing = |far: f64| -> Result<f64, SpectrumError> {
        let ff = f(far)?;
        if ff <= 0.0 {
            return Err(SpectrumError::LevelNotCrossed {
                omega: dip.omega,
                level,
            });
        }
        let (a, b) = if far < dip.omega {
            (far, dip.omega)
        } else {
            (dip.omega, far)
        };
        let fa = f(a)?;
        Ok(bisect(f, a, b, fa)?.0)
    };
    let lo = crossing(left.0)?;
    let hi = crossing(right.0)?;
    Ok(hi - lo)
}

/// Transmission at the probe frequency with the atom tuned in and detuned.
pub fn switch_contrast(
    params_on: &SystemParams,
    params_off: &SystemParams,
    omega_probe: f64,
) -> Result<(f64, f64), SpectrumError> {
    Ok((
        transmission(params_on, omega_probe)?,
        transmission(params_off, omega_probe)?,
    ))
}

/// Tuning of the cavity-protected frequency search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustOptions {
    /// Number of terms kept in the expansion of `∂|t|²/∂δ` about the centre
    /// of the detuning range. Order 1 solves `∂|t|²/∂δ = 0` at the centre;
    /// orders 2 and 3 minimize the maximum of the truncated polynomial.
    pub order: usize,
    /// Half-width of the probe-frequency window around Ω; defaults to g
    /// (or Γ when g = 0).
    pub halfwidth: Option<f64>,
    pub n_omega: usize,
    pub n_delta: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            order: 1,
            halfwidth: None,
            n_omega: 801,
            n_delta: 41,
        }
    }
}

fn detuned(params: &SystemParams, delta: f64) -> Result<SystemParams, SpectrumError> {
    Ok(params.with_omega_c(params.omega_a() - delta)?)
}

fn delta_samples(range: (f64, f64), n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Largest `|∂|t|²/∂δ|` at fixed probe frequency over the detuning range.
pub fn detuning_sensitivity(
    params: &SystemParams,
    omega: f64,
    delta_range: (f64, f64),
    n_delta: usize,
) -> Result<f64, SpectrumError> {
    let mut worst: f64 = 0.0;
    for d in delta_samples(delta_range, n_delta) {
        worst = worst.max(detuning_slope(&detuned(params, d)?, omega)?.abs());
    }
    Ok(worst)
}

// Taylor coefficients of ∂|t|²/∂δ in (δ − δ_mid), by central differences.
fn slope_coefficients(
    params: &SystemParams,
    omega: f64,
    mid: f64,
    h: f64,
    order: usize,
) -> Result<Vec<f64>, SpectrumError> {
    let s =
        |d: f64| -> Result<f64, SpectrumError> { Ok(detuning_slope(&detuned(params, d)?, omega)?) };
    let s0 = s(mid)?;
    let mut c = vec![s0];
    if order >= 2 {
        let (sp, sm) = (s(mid + h)?, s(mid - h)?);
        c.push((sp - sm) / (2.0 * h));
        if order >= 3 {
            c.push((sp - 2.0 * s0 + sm) / (2.0 * h * h));
        }
    }
    Ok(c)
}

fn golden_min<F>(mut f: F, mut a: f64, mut b: f64) -> Result<f64, SpectrumError>
where
    F: FnMut(f64) -> Result<f64, SpectrumError>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Cavity-protected probe frequency with default options.
pub fn optimal_frequency(
    params: &SystemParams,
    delta_range: (f64, f64),
) -> Result<f64, SpectrumError> {
    optimal_frequency_with(params, delta_range, RobustOptions::default())
}

/// Probe frequency at which `|t|²` is least sensitive to atom–cavity
/// detuning `δ = Ω − ω_c` over `delta_range`.
pub fn optimal_frequency_with(
    params: &SystemParams,
    delta_range: (f64, f64),
    opts: RobustOptions,
) -> Result<f64, SpectrumError> {
    if !(1..=3).contains(&opts.order) {
        return Err(SpectrumError::UnsupportedOrder(opts.order));
    }
    let hw = opts.halfwidth.unwrap_or(if params.g() > 0.0 {
        params.g()
    } else {
        params.gamma_wg()
    });
    let (lo, hi) = (params.omega_a() - hw, params.omega_a() + hw);
    let grid = uniform_grid(lo, hi, opts.n_omega.max(3))?;
    let (dlo, dhi) = delta_range;
    if !(dlo <= dhi) {
        return Err(SpectrumError::BadRange {
            lo: dlo,
            hi: dhi,
            n: opts.n_delta,
        });
    }
    let mid = 0.5 * (dlo + dhi);
    let half = 0.5 * (dhi - dlo);
    let exact = |w: f64| detuning_sensitivity(params, w, delta_range, opts.n_delta);

    if opts.order == 1 {
        let c0 = |w: f64| -> Result<f64, SpectrumError> {
            Ok(detuning_slope(&detuned(params, mid)?, w)?)
        };
        let vals = grid.iter().map(|&w| c0(w)).collect::<Result<Vec<_>, _>>()?;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..grid.len() - 1 {
            let root = if vals[i] == 0.0 {
                Some(grid[i])
            } else if vals[i + 1] != 0.0 && (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
                Some(bisect(c0, grid[i], grid[i + 1], vals[i])?.0)
            } else {
                None
            };
            if let Some(w) = root {
                let score = exact(w)?;
                if best.is_none_or(|(_, b)| score < b) {
                    best = Some((w, score));
                }
            }
        }
        if let Some((w, _)) = best {
            return Ok(w);
        }
    }

    let h = if half > 0.0 { half * 1e-2 } else { 1e-4 };
    let deltas = delta_samples((-half, half), opts.n_delta);
    let objective = |w: f64| -> Result<f64, SpectrumError> {
        if opts.order == 1 {
            return exact(w);
        }
        let c = slope_coefficients(params, w, mid, h, opts.order)?;
        Ok(deltas
            .iter()
            .map(|&x| c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck).abs())
            .fold(0.0, f64::max))
    };
    let vals = grid
        .iter()
        .map(|&w| objective(w))
        .collect::<Result<Vec<_>, _>>()?;
    let (imin, _) =
        vals.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        );
    if imin == 0 || imin == grid.len() - 1 {
        return Err(SpectrumError::NoRobustFrequency { lo, hi });
    }
    golden_min(objective, grid[imin - 1], grid[imin + 1])
}
