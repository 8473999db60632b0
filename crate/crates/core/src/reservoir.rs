//! A finite bath of oscillators standing in for a Markovian environment.
//!
//! An atom coupled to a dense, flat band of oscillators with spacing `1/ρ`
//! and couplings `η` decays with amplitude rate `γ = πρ|η|²` and has its
//! frequency shifted by the principal-value sum `Δ = Σ |η_j|²/(Ω − ω_j)`.
//! Both effects are what the non-Hermitian substitution `Ω → Ω + Δ − iγ`
//! encodes in the rest of the crate; this module checks that claim against
//! explicit, unitary composite dynamics.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{scatter, AnalyticError};
use crate::params::{ParamsError, SystemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReservoirError {
    #[error("bath half-width {span} is narrower than 20 gamma = {}", 20.0 * gamma)]
    SpanTooNarrow { span: f64, gamma: f64 },
    #[error("{n} oscillators are too few (need at least 100)")]
    TooFewOscillators { n: usize },
    #[error("invalid bath: {0}")]
    InvalidBath(&'static str),
    #[error("t_final = {t_final} exceeds the recurrence horizon pi*rho = {horizon}")]
    RecurrenceHorizonExceeded { t_final: f64, horizon: f64 },
    #[error("time step {dt} does not resolve the bath (need dt <= {limit})")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("series does not decay (fitted rate {rate})")]
    NotDecaying { rate: f64 },
    #[error("series has only {0} usable points")]
    InsufficientData(usize),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("csv output failed: {0}")]
    Csv(String),
}

impl From<csv::Error> for ReservoirError {
    fn from(e: csv::Error) -> Self {
        ReservoirError::Csv(e.to_string())
    }
}

/// Uniformly spaced oscillators with their couplings to the atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bath {
    pub omegas: Vec<f64>,
    pub couplings: Vec<Complex64>,
    /// States per unit frequency.
    pub density: f64,
    /// Half-width of the covered frequency interval.
    pub span: f64,
}

impl Bath {
    /// Oscillators at the midpoints of `n` equal bins covering `[lo, hi]`,
    /// all coupled with the real strength that gives rate `gamma`.
    /// Performs no sanity checks; see [`build_flat_bath`].
    pub fn band_unchecked(gamma: f64, n: usize, lo: f64, hi: f64) -> Bath {
        let density = n as f64 / (hi - lo);
        let eta = (gamma / (PI * density)).sqrt();
        Bath {
            omegas: (0..n).map(|j| lo + (j as f64 + 0.5) / density).collect(),
            couplings: vec![Complex64::new(eta, 0.0); n],
            density,
            span: 0.5 * (hi - lo),
        }
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn lower_edge(&self) -> f64 {
        self.omegas[0] - 0.5 / self.density
    }

    pub fn upper_edge(&self) -> f64 {
        self.omegas[self.len() - 1] + 0.5 / self.density
    }

    /// Damping rate `πρ|η|²` implied at the oscillator nearest `omega`, or
    /// zero outside the band.
    pub fn implied_rate(&self, omega: f64) -> f64 {
        if omega < self.lower_edge() || omega > self.upper_edge() {
            return 0.0;
        }
        PI * self.density * self.couplings[self.nearest(omega)].norm_sqr()
    }

    fn nearest(&self, omega: f64) -> usize {
        let j = ((omega - self.lower_edge()) * self.density - 0.5).round();
        j.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Flat bath of `n` oscillators on `[center − span, center + span]` with the
/// coupling `η = sqrt(γ/(πρ))`, `ρ = n/(2·span)`.
pub fn build_flat_bath(
    gamma_target: f64,
    n_oscillators: usize,
    span_halfwidth: f64,
    omega_center: f64,
) -> Result<Bath, ReservoirError> {
    if !(gamma_target >= 0.0 && gamma_target.is_finite()) {
        return Err(ReservoirError::InvalidBath(
            "gamma must be finite and non-negative",
        ));
    }
    if n_oscillators < 100 {
        return Err(ReservoirError::TooFewOscillators { n: n_oscillators });
    }
    if !(span_halfwidth > 0.0 && span_halfwidth >= 20.0 * gamma_target) {
        return Err(ReservoirError::SpanTooNarrow {
            span: span_halfwidth,
            gamma: gamma_target,
        });
    }
    Ok(Bath::band_unchecked(
        gamma_target,
        n_oscillators,
        omega_center - span_halfwidth,
        omega_center + span_halfwidth,
    ))
}

/// Flat band on `[lo, hi]` with `density` oscillators per unit frequency.
pub fn build_band_bath(
    gamma_target: f64,
    density: f64,
    lo: f64,
    hi: f64,
) -> Result<Bath, ReservoirError> {
    if !(hi > lo && density > 0.0) {
        return Err(ReservoirError::InvalidBath(
            "band needs hi > lo and positive density",
        ));
    }
    let n = ((hi - lo) * density).round() as usize;
    build_flat_bath(gamma_target, n, 0.5 * (hi - lo), 0.5 * (lo + hi))
}

/// Discrete principal-value estimate of the level shift at `omega`.
///
/// The oscillator closest to `omega` is not summed directly. Its term is
/// replaced by the continuum correction `|η|²·(1/δ − πρ·cot(πρδ))`, which
/// removes the comb's discreteness and reduces to plain omission of the
/// bin when `omega` sits on an oscillator.
pub fn lamb_shift_estimate(bath: &Bath, omega: f64) -> f64 {
    if bath.is_empty() {
        return 0.0;
    }
    let inside = omega >= bath.lower_edge() && omega <= bath.upper_edge();
    let near = bath.nearest(omega);
    let mut sum = 0.0;
    for (j, (&w, eta)) in bath.omegas.iter().zip(&bath.couplings).enumerate() {
        if inside && j == near {
            continue;
        }
        sum += eta.norm_sqr() / (omega - w);
    }
    if inside {
        let delta = omega - bath.omegas[near];
        let x = PI * bath.density * delta;
        if x.abs() > 1e-12 {
            let e2 = bath.couplings[near].norm_sqr();
            sum += e2 * (1.0 / delta - PI * bath.density / x.tan());
        }
    }
    sum
}

/// `|e_a(t)|` sampled on a uniform time grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub time: Vec<f64>,
    pub abs_ea: Vec<f64>,
}

impl DecaySeries {
    /// Writes `time,abs_ea`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReservoirError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "abs_ea"])?;
        for (t, a) in self.time.iter().zip(&self.abs_ea) {
            w.write_record(&[t.to_string(), a.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Outcome of the closed evolution, including the norm drift.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeRun {
    pub series: DecaySeries,
    pub max_norm_error: f64,
}

// y = H·x for the arrow-shaped single-excitation Hamiltonian in the frame
// rotating at the atomic frequency.
fn apply_h(detunings: &[f64], couplings: &[Complex64], x: &[Complex64], y: &mut [Complex64]) {
    let mut atom = Complex64::new(0.0, 0.0);
    for j in 0..detunings.len() {
        atom += couplings[j] * x[j + 1];
        y[j + 1] = detunings[j] * x[j + 1] + couplings[j].conj() * x[0];
    }
    y[0] = atom;
}

/// Unitary evolution of an initially excited atom coupled to `bath` alone.
///
/// The state lives in the single-excitation sector (atom plus one amplitude
/// per oscillator) and is propagated with a Taylor series of `exp(−iH·dt)`
/// summed to machine precision. Runs past half the recurrence time `2πρ`
/// are refused, as is a step that does not resolve the band.
pub fn evolve_closed_composite(
    bath: &Bath,
    atom: &SystemParams,
    t_final: f64,
    dt: f64,
) -> Result<CompositeRun, ReservoirError> {
    let horizon = PI * bath.density;
    if t_final > horizon {
        return Err(ReservoirError::RecurrenceHorizonExceeded { t_final, horizon });
    }
    let limit = 0.1 / bath.span;
    if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(ReservoirError::StepTooCoarse { dt, limit });
    }
    evolve_closed_composite_unbounded(bath, atom, t_final, dt)
}

/// Same propagation as [`evolve_closed_composite`] without the horizon and
/// step guards, for exhibiting recurrences of sparse baths.
pub fn evolve_closed_composite_unbounded(
    bath: &Bath,
    atom: &SystemParams,
    t_final: f64,
    dt: f64,
) -> Result<CompositeRun, ReservoirError> {
    if !(dt > 0.0 && t_final >= 0.0) {
        return Err(ReservoirError::StepTooCoarse {
            dt,
            limit: f64::NAN,
        });
    }
    let omega = atom.omega_a();
    let det: Vec<f64> = bath.omegas.iter().map(|w| w - omega).collect();
    let dim = bath.len() + 1;
    let mut psi = vec![Complex64::new(0.0, 0.0); dim];
    psi[0] = Complex64::new(1.0, 0.0);
    let mut term = psi.clone();
    let mut next = psi.clone();
    let steps = (t_final / dt).round() as usize;
    let mut series = DecaySeries {
        time: vec![0.0],
        abs_ea: vec![1.0],
    };
    let mut max_norm_error: f64 = 0.0;
    for n in 1..=steps {
        term.copy_from_slice(&psi);
        for k in 1..200 {
            apply_h(&det, &bath.couplings, &term, &mut next);
            let f = Complex64::new(0.0, -dt / k as f64);
            let mut size = 0.0;
            for (t, nx) in term.iter_mut().zip(&next) {
                *t = f * nx;
                size += t.norm_sqr();
            }
            for (p, t) in psi.iter_mut().zip(&term) {
                *p += t;
            }
            if size < 1e-36 {
                break;
            }
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        max_norm_error = max_norm_error.max((norm - 1.0).abs());
        series.time.push(n as f64 * dt);
        series.abs_ea.push(psi[0].norm());
    }
    Ok(CompositeRun {
        series,
        max_norm_error,
    })
}

fn line_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxy += (a - mt) * (b - my);
        sxx += (a - mt) * (a - mt);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mt)
}

/// Decay rate from a log-linear fit of `|e_a(t)|`.
///
/// A first fit over the whole series sets the scale; the fit is then
/// repeated once over `[0.5/γ, 3/γ]`, clipped to the available times.
/// The returned error is the largest deviation of `ln|e_a|` from the fitted
/// line inside the window, i.e. the relative amplitude misfit.
pub fn effective_decay_rate(series: &DecaySeries) -> Result<(f64, f64), ReservoirError> {
    let (t, y): (Vec<f64>, Vec<f64>) = series
        .time
        .iter()
        .zip(&series.abs_ea)
        .filter(|(_, &a)| a > 1e-8)
        .map(|(&t, &a)| (t, a.ln()))
        .unzip();
    if t.len() < 3 {
        return Err(ReservoirError::InsufficientData(t.len()));
    }
    let (slope, _) = line_fit(&t, &y);
    if !(-slope > 0.0) {
        return Err(ReservoirError::NotDecaying { rate: -slope });
    }
    let g0 = -slope;
    let (lo, hi) = (0.5 / g0, 3.0 / g0);
    let (tw, yw): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(&y)
        .filter(|(&ti, _)| ti >= lo && ti <= hi)
        .map(|(&a, &b)| (a, b))
        .unzip();
    let (tw, yw) = if tw.len() >= 3 { (tw, yw) } else { (t, y) };
    let (slope, icept) = line_fit(&tw, &yw);
    if !(-slope > 0.0) {
        return Err(ReservoirError::NotDecaying { rate: -slope });
    }
    let misfit = tw
        .iter()
        .zip(&yw)
        .map(|(ti, yi)| (yi - (icept + slope * ti)).abs())
        .fold(0.0, f64::max);
    Ok((-slope, misfit))
}

/// Largest difference in `|t(ω)|²` between the effective non-Hermitian
/// model and the same system with the atomic loss supplied by `bath`.
///
/// The bath amplitudes are eliminated exactly, `e_j = η_j*·e_a/(ω − ω_j + i0)`,
/// which dresses the atom with the self-energy `Δ(ω) − iπρ|η(ω)|²`. The
/// principal part is the discrete sum of [`lamb_shift_estimate`]; the
/// retarded prescription supplies the absorptive part inside the band.
pub fn compare_scattering_with_bath(
    params: &SystemParams,
    bath: &Bath,
    omega_list: &[f64],
) -> Result<f64, ReservoirError> {
    let bare = params.with_dissipation(params.gamma_c(), 0.0)?;
    let mut worst: f64 = 0.0;
    for &w in omega_list {
        let effective = scatter(params, w)?.transmission();
        let shift = lamb_shift_estimate(bath, w);
        let dressed = bare
            .with_omega_a(params.omega_a() + shift)?
            .with_dissipation(params.gamma_c(), bath.implied_rate(w))?;
        let composite = scatter(&dressed, w)?.transmission();
        worst = worst.max((effective - composite).abs());
    }
    Ok(worst)
}

/// Decay rate of a flat band of half-width `span` once the band edges are
/// accounted for: the pole of the self-energy sits at `γ/(1 − 2γ/(π·span))`
/// to leading order in `γ/span`.
pub fn finite_band_rate(gamma: f64, span: f64) -> f64 {
    gamma / (1.0 - 2.0 * gamma / (PI * span))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{make_params, RawParams};
    use approx::assert_abs_diff_eq;

    fn atom() -> SystemParams {
        make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap()
    }

    #[test]
    fn flat_bath_arithmetic() {
        let b = build_flat_bath(0.05, 4000, 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(b.density, 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.couplings[0].re, 3.989e-3, epsilon = 1e-6);
        assert_abs_diff_eq!(b.implied_rate(1.0), 0.05, epsilon = 1e-12);
        assert_eq!(b.implied_rate(3.5), 0.0);
        let steps: Vec<f64> = b.omegas.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|s| (s - 1e-3).abs() < 1e-12));
    }

    #[test]
    fn bath_guards() {
        assert!(matches!(
            build_flat_bath(0.05, 4000, 0.005, 1.0),
            Err(ReservoirError::SpanTooNarrow { .. })
        ));
        assert!(matches!(
            build_flat_bath(0.05, 20, 2.0, 1.0),
            Err(ReservoirError::TooFewOscillators { n: 20 })
        ));
    }

    #[test]
    fn symmetric_bath_has_no_shift() {
        let b = build_flat_bath(0.05, 4000, 2.0, 1.0).unwrap();
        assert!(lamb_shift_estimate(&b, 1.0).abs() < 1e-10);
    }

    #[test]
    fn asymmetric_band_shift() {
        let gamma = 0.05;
        let b = build_band_bath(gamma, 1000.0, 0.5, 3.0).unwrap();
        let d = lamb_shift_estimate(&b, 1.0);
        let expect = gamma / PI * (0.5f64 / 2.0).ln();
        assert!(d < 0.0);
        assert!((d - expect).abs() < 0.02 * expect.abs());
        let b2 = build_band_bath(gamma, 2000.0, 0.5, 3.0).unwrap();
        let d2 = lamb_shift_estimate(&b2, 1.0);
        assert!((d2 - d).abs() < 0.01 * d.abs());
    }

    #[test]
    fn principal_value_off_grid() {
        // Probing between oscillators must not pick up the 1/δ spike.
        let gamma = 0.05;
        let b = build_band_bath(gamma, 1000.0, 0.5, 3.0).unwrap();
        for w in [1.00025, 1.0004, 1.2, 2.1] {
            let expect = gamma / PI * ((w - 0.5f64) / (3.0 - w)).ln();
            assert_abs_diff_eq!(lamb_shift_estimate(&b, w), expect, epsilon = 1e-5);
        }
        let outside = lamb_shift_estimate(&b, 4.0);
        assert_abs_diff_eq!(outside, gamma / PI * (3.5f64 / 1.0).ln(), epsilon = 1e-4);
    }

    #[test]
    fn synthetic_exponential_rate() {
        let time: Vec<f64> = (0..=800).map(|i| i as f64 * 0.1).collect();
        let abs_ea = time.iter().map(|t| (-0.05 * t).exp()).collect();
        let (g, err) = effective_decay_rate(&DecaySeries { time, abs_ea }).unwrap();
        assert_abs_diff_eq!(g, 0.05, epsilon = 1e-10);
        assert!(err < 1e-10);
    }

    #[test]
    fn constant_series_does_not_decay() {
        let time: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = DecaySeries {
            abs_ea: vec![1.0; time.len()],
            time,
        };
        assert!(matches!(
            effective_decay_rate(&s),
            Err(ReservoirError::NotDecaying { .. })
        ));
    }

    #[test]
    fn closed_evolution_guards() {
        let b = build_flat_bath(0.05, 400, 2.0, 1.0).unwrap();
        assert!(matches!(
            evolve_closed_composite(&b, &atom(), 400.0, 0.05),
            Err(ReservoirError::RecurrenceHorizonExceeded { .. })
        ));
        assert!(matches!(
            evolve_closed_composite(&b, &atom(), 10.0, 0.1),
            Err(ReservoirError::StepTooCoarse { .. })
        ));
    }

    #[test]
    fn empty_bath_scattering_is_identical() {
        let b = build_flat_bath(0.0, 4000, 2.0, 1.0).unwrap();
        let ws: Vec<f64> = (0..21).map(|i| 0.0 + 0.1 * i as f64).collect();
        assert!(compare_scattering_with_bath(&atom(), &b, &ws).unwrap() < 1e-12);
    }

    #[test]
    fn decay_series_csv() {
        let s = DecaySeries {
            time: vec![0.0, 0.5],
            abs_ea: vec![1.0, 0.9],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,abs_ea\n0,1\n0.5,0.9\n"
        );
    }
}
