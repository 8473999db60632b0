//! Least-squares fitting of measured transmission spectra.
//!
//! The model is either the side-coupled transmission `|t(ω)|²` or the
//! direct-coupled transmission, which equals the side-coupled reflection
//! `|r(ω)|²`, times an overall amplitude scale. Minimization runs a coarse
//! grid search over cavity frequency and coupling, then refines the best
//! candidates with a simplex search in dimensionless coordinates.

mod nelder_mead;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nelder_mead::{minimize, SimplexOptions, SimplexResult};

use crate::params::{make_params_in, FrequencyUnit, ParamsError, RawParams, SystemParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("spectrum has {n} points, at least {MIN_POINTS} are needed")]
    TooFewPoints { n: usize },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("coupling g = {g} is not resolved by the data (spacing {spacing})")]
    DegenerateFit { g: f64, spacing: f64 },
    #[error("fit stopped after {} iterations without converging", .0.n_iterations)]
    DidNotConverge(Box<FitResult>),
    #[error("no resolved pair of peaks")]
    PeaksNotResolved,
    #[error("noise level must be finite and non-negative (got {0})")]
    BadNoise(f64),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("i/o failed: {0}")]
    Io(String),
}

pub const MIN_POINTS: usize = 8;

/// Sampled transmission data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpectrum {
    pub omega: Vec<f64>,
    #[serde(rename = "T_measured")]
    pub t_measured: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    pub unit_scale: FrequencyUnit,
    /// Set when the rows had to be reordered on load.
    #[serde(default)]
    pub reordered: bool,
}

impl MeasuredSpectrum {
    /// Validates and wraps sample arrays. `omega` must be strictly increasing.
    pub fn new(
        omega: Vec<f64>,
        t_measured: Vec<f64>,
        sigma: Option<Vec<f64>>,
        unit_scale: FrequencyUnit,
    ) -> Result<Self, FitError> {
        let n = omega.len();
        if t_measured.len() != n || sigma.as_ref().is_some_and(|s| s.len() != n) {
            return Err(FitError::InvalidSpectrum("column lengths differ".into()));
        }
        if n < MIN_POINTS {
            return Err(FitError::TooFewPoints { n });
        }
        if omega.iter().chain(&t_measured).any(|v| !v.is_finite()) {
            return Err(FitError::InvalidSpectrum("non-finite sample".into()));
        }
        if let Some(s) = &sigma {
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(FitError::InvalidSpectrum(
                    "uncertainties must be positive".into(),
                ));
            }
        }
        if omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitError::InvalidSpectrum(
                "frequencies must be strictly increasing".into(),
            ));
        }
        Ok(MeasuredSpectrum {
            omega,
            t_measured,
            sigma,
            unit_scale,
            reordered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.sigma.as_ref().map_or(1.0, |s| 1.0 / (s[i] * s[i]))
    }

    /// Mean spacing of the frequency samples.
    pub fn spacing(&self) -> f64 {
        (self.omega[self.len() - 1] - self.omega[0]) / (self.len() - 1) as f64
    }
}

/// Reads a spectrum with header `omega,T` or `omega,T,sigma`.
///
/// Rows out of order are sorted and the `reordered` flag is raised.
pub fn load_spectrum_csv(path: impl AsRef<Path>) -> Result<MeasuredSpectrum, FitError> {
    let mut text = String::new();
    File::open(path.as_ref())
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| FitError::Io(e.to_string()))?;
    parse_spectrum_csv(&text)
}

/// Parses CSV text in the format accepted by [`load_spectrum_csv`].
pub fn parse_spectrum_csv(text: &str) -> Result<MeasuredSpectrum, FitError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| FitError::ParseError {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let with_sigma = match header
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["omega", "T"] => false,
        ["omega", "T", "sigma"] => true,
        _ => {
            return Err(FitError::ParseError {
                line: 1,
                message: format!(
                    "expected header omega,T[,sigma], found {}",
                    header.join(",")
                ),
            })
        }
    };
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| FitError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, FitError> {
            rec[i].parse::<f64>().map_err(|e| FitError::ParseError {
                line,
                message: format!("column {}: {e}", header[i]),
            })
        };
        let sigma = if with_sigma { field(2)? } else { 1.0 };
        rows.push((field(0)?, field(1)?, sigma));
    }
    if rows.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints { n: rows.len() });
    }
    let reordered = rows.windows(2).any(|w| w[1].0 <= w[0].0);
    if reordered {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let mut m = MeasuredSpectrum::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        with_sigma.then(|| rows.iter().map(|r| r.2).collect()),
        FrequencyUnit::BASE,
    )?;
    m.reordered = reordered;
    Ok(m)
}

/// Which transmission the measured data represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "side_coupled_T")]
    SideCoupledT,
    #[serde(rename = "direct_coupled_T")]
    DirectCoupledT,
}

const N_FULL: usize = 7;
const NAMES: [&str; N_FULL] = [
    "omega_c",
    "omega_a",
    "g",
    "gamma_wg",
    "gamma_c",
    "gamma_a",
    "amplitude_scale",
];

/// Model parameter vector `[ω_c, Ω, g, Γ, γ_c, γ_a, scale]`.
type Full = [f64; N_FULL];

fn model_value(model: Model, p: &Full, omega: f64) -> f64 {
    let a = Complex64::new(omega - p[1], p[5]);
    let b = Complex64::new(omega - p[0], p[4]);
    let d = a * (b + Complex64::new(0.0, p[3])) - p[2] * p[2];
    let num = match model {
        Model::SideCoupledT => (a * b - p[2] * p[2]).norm_sqr(),
        Model::DirectCoupledT => (a * p[3]).norm_sqr(),
    };
    p[6] * num / d.norm_sqr()
}

fn full_from(params: &SystemParams, scale: f64) -> Full {
    [
        params.omega_c(),
        params.omega_a(),
        params.g(),
        params.gamma_wg(),
        params.gamma_c(),
        params.gamma_a(),
        scale,
    ]
}

fn params_from(template: &SystemParams, p: &Full) -> Result<SystemParams, ParamsError> {
    let raw = RawParams {
        omega_c: p[0],
        omega_a: p[1],
        g: p[2],
        gamma_wg: p[3],
        gamma_c: p[4],
        gamma_a: p[5],
        v_g: template.v_g(),
        omega_0: Some(template.omega_0()),
    };
    make_params_in(raw, template.unit())
}

/// Model curve at the given frequencies.
pub fn model_curve(
    params: &SystemParams,
    model: Model,
    amplitude_scale: f64,
    omega: &[f64],
) -> Vec<f64> {
    let p = full_from(params, amplitude_scale);
    omega.iter().map(|&w| model_value(model, &p, w)).collect()
}

/// Synthetic direct-coupled measurement, `|r(ω)|²` plus Gaussian noise,
/// clipped at zero.
pub fn synthesize_measurement(
    params: &SystemParams,
    omega_grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<MeasuredSpectrum, FitError> {
    synthesize_with(
        params,
        Model::DirectCoupledT,
        1.0,
        omega_grid,
        noise_sigma,
        seed,
    )
}

/// Synthetic measurement of either model with an explicit amplitude scale.
pub fn synthesize_with(
    params: &SystemParams,
    model: Model,
    amplitude_scale: f64,
    omega_grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<MeasuredSpectrum, FitError> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(FitError::BadNoise(noise_sigma));
    }
    let mut t = model_curve(params, model, amplitude_scale, omega_grid);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|_| FitError::BadNoise(noise_sigma))?;
        for v in t.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    MeasuredSpectrum::new(omega_grid.to_vec(), t, None, params.unit())
}

/// `n` evenly spaced frequencies covering `center ± halfwidth`.
pub fn linspace(center: f64, halfwidth: f64, n: usize) -> Vec<f64> {
    let step = 2.0 * halfwidth / (n.max(2) - 1) as f64;
    (0..n)
        .map(|i| center - halfwidth + step * i as f64)
        .collect()
}

/// Distance between the two strongest maxima of the direct-coupled
/// transmission `|r(ω)|²` within four couplings of the resonances.
pub fn peak_separation(params: &SystemParams) -> Result<f64, FitError> {
    let p = full_from(params, 1.0);
    let f = |w: f64| model_value(Model::DirectCoupledT, &p, w);
    let center = 0.5 * (p[0] + p[1]);
    let half = 4.0 * p[2].max(p[3] + p[4] + p[5]);
    let n = 8001;
    let grid = linspace(center, half, n);
    let vals: Vec<f64> = grid.iter().map(|&w| f(w)).collect();
    let step = grid[1] - grid[0];
    let mut peaks: Vec<(f64, f64)> = (1..n - 1)
        .filter(|&i| vals[i] > vals[i - 1] && vals[i] >= vals[i + 1])
        .map(|i| golden_max(&f, grid[i] - step, grid[i] + step))
        .collect();
    if peaks.len() < 2 {
        return Err(FitError::PeaksNotResolved);
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok((peaks[0].0 - peaks[1].0).abs())
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Which of `ω_c, Ω, g, Γ, γ_c, γ_a, amplitude_scale` the fit may vary.
///
/// The default frees the frequencies, the coupling, the waveguide rate and
/// atomic loss, keeping cavity loss and amplitude scale at their initial
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeMask {
    pub omega_c: bool,
    pub omega_a: bool,
    pub g: bool,
    pub gamma_wg: bool,
    pub gamma_c: bool,
    pub gamma_a: bool,
    pub amplitude_scale: bool,
}

impl Default for FreeMask {
    fn default() -> Self {
        FreeMask {
            omega_c: true,
            omega_a: true,
            g: true,
            gamma_wg: true,
            gamma_c: false,
            gamma_a: true,
            amplitude_scale: false,
        }
    }
}

impl FreeMask {
    pub fn none() -> Self {
        FreeMask {
            omega_c: false,
            omega_a: false,
            g: false,
            gamma_wg: false,
            gamma_c: false,
            gamma_a: false,
            amplitude_scale: false,
        }
    }

    pub fn all() -> Self {
        FreeMask {
            omega_c: true,
            omega_a: true,
            g: true,
            gamma_wg: true,
            gamma_c: true,
            gamma_a: true,
            amplitude_scale: true,
        }
    }

    fn flags(&self) -> [bool; N_FULL] {
        [
            self.omega_c,
            self.omega_a,
            self.g,
            self.gamma_wg,
            self.gamma_c,
            self.gamma_a,
            self.amplitude_scale,
        ]
    }
}

/// Search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Holds the atomic frequency equal to the cavity frequency.
    pub tie_atom_to_cavity: bool,
    pub grid_omega: usize,
    pub grid_g: usize,
    /// Number of grid candidates refined by the simplex search.
    pub starts: usize,
    pub max_iter: usize,
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tie_atom_to_cavity: false,
            grid_omega: 41,
            grid_g: 41,
            starts: 4,
            max_iter: 20_000,
            xtol: 1e-8,
        }
    }
}

/// Outcome of a fit.
///
/// `covariance_estimate` is indexed by the free parameters in the order
/// `omega_c, omega_a, g, gamma_wg, gamma_c, gamma_a, amplitude_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SystemParams,
    pub amplitude_scale: f64,
    pub covariance_estimate: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub n_iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// Turns an unconverged result into [`FitError::DidNotConverge`].
    pub fn require_converged(self) -> Result<FitResult, FitError> {
        if self.converged {
            Ok(self)
        } else {
            Err(FitError::DidNotConverge(Box::new(self)))
        }
    }
}

/// Names of the free parameters, in covariance order.
pub fn free_parameter_names(mask: &FreeMask, opts: &FitOptions) -> Vec<&'static str> {
    free_indices(mask, opts)
        .into_iter()
        .map(|i| NAMES[i])
        .collect()
}

fn free_indices(mask: &FreeMask, opts: &FitOptions) -> Vec<usize> {
    let flags = mask.flags();
    (0..N_FULL)
        .filter(|&i| flags[i] && !(i == 1 && opts.tie_atom_to_cavity))
        .collect()
}

// Dimensionless coordinates: frequencies relative to the data window, log
// for strictly positive rates, square roots for non-negative losses.
struct Coords {
    center: f64,
    width: f64,
    free: Vec<usize>,
    base: Full,
    tie: bool,
}

impl Coords {
    fn encode(&self, i: usize, v: f64) -> f64 {
        match i {
            0 | 1 => (v - self.center) / self.width,
            2 | 3 => (v.max(1e-9 * self.width) / self.width).ln(),
            4 | 5 => (v / self.width).sqrt(),
            _ => v,
        }
    }

    fn decode(&self, i: usize, x: f64) -> f64 {
        match i {
            0 | 1 => self.center + self.width * x,
            2 | 3 => self.width * x.exp(),
            4 | 5 => self.width * x * x,
            _ => x,
        }
    }

    fn step(&self, i: usize, x: f64) -> f64 {
        match i {
            0 | 1 => 0.01,
            2 | 3 => 0.1,
            4 | 5 => (0.2 * x.abs()).max(0.02),
            _ => 0.05,
        }
    }

    fn full(&self, x: &[f64]) -> Full {
        let mut p = self.base;
        for (&i, &xi) in self.free.iter().zip(x) {
            p[i] = self.decode(i, xi);
        }
        if self.tie {
            p[1] = p[0];
        }
        p
    }

    fn point(&self, p: &Full) -> Vec<f64> {
        self.free.iter().map(|&i| self.encode(i, p[i])).collect()
    }
}

fn chi2(m: &MeasuredSpectrum, model: Model, p: &Full) -> f64 {
    let s: f64 = (0..m.len())
        .map(|i| {
            let r = model_value(model, p, m.omega[i]) - m.t_measured[i];
            m.weight(i) * r * r
        })
        .sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Fits `model` to `measured`, starting from `initial` with amplitude
/// scale 1.
pub fn fit_parameters(
    measured: &MeasuredSpectrum,
    initial: &SystemParams,
    free_mask: &FreeMask,
    model: Model,
) -> Result<FitResult, FitError> {
    fit_parameters_with(
        measured,
        initial,
        1.0,
        free_mask,
        model,
        &FitOptions::default(),
    )
}

/// [`fit_parameters`] with an explicit initial amplitude scale and options.
///
/// A run that exhausts its iteration budget returns the best point found
/// with `converged = false`.
pub fn fit_parameters_with(
    measured: &MeasuredSpectrum,
    initial: &SystemParams,
    amplitude_scale: f64,
    free_mask: &FreeMask,
    model: Model,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    initial.unit().ensure_same(&measured.unit_scale)?;
    let lo = measured.omega[0];
    let hi = measured.omega[measured.len() - 1];
    let mut base = full_from(initial, amplitude_scale);
    if opts.tie_atom_to_cavity {
        base[1] = base[0];
    }
    let coords = Coords {
        center: 0.5 * (lo + hi),
        width: hi - lo,
        free: free_indices(free_mask, opts),
        base,
        tie: opts.tie_atom_to_cavity,
    };
    let objective = |x: &[f64]| chi2(measured, model, &coords.full(x));

    let mut starts = vec![coords.point(&base)];
    starts.extend(grid_candidates(measured, model, &coords, opts));
    let simplex = SimplexOptions {
        max_iter: opts.max_iter,
        xtol: opts.xtol,
        ..Default::default()
    };
    let best = starts
        .par_iter()
        .map(|x0| {
            let steps: Vec<f64> = coords
                .free
                .iter()
                .zip(x0)
                .map(|(&i, &x)| coords.step(i, x))
                .collect();
            minimize(objective, x0, &steps, &simplex)
        })
        .min_by(|a, b| a.fx.total_cmp(&b.fx))
        .expect("at least one start");

    let p = coords.full(&best.x);
    let params = params_from(initial, &p)?;
    if free_mask.g {
        let spacing = measured.spacing();
        let g_min = grid_g_min(coords.width);
        if p[2] < spacing.max(g_min) {
            return Err(FitError::DegenerateFit { g: p[2], spacing });
        }
    }
    let wsum: f64 = (0..measured.len()).map(|i| measured.weight(i)).sum();
    Ok(FitResult {
        params,
        amplitude_scale: p[6],
        covariance_estimate: covariance(measured, model, &coords, &p, best.fx),
        residual_rms: (best.fx / wsum).sqrt(),
        n_iterations: best.iterations,
        converged: best.converged,
    })
}

fn grid_g_min(width: f64) -> f64 {
    width / 100.0
}

// Coarse search over cavity frequency and coupling, with the atom in tune.
fn grid_candidates(
    m: &MeasuredSpectrum,
    model: Model,
    coords: &Coords,
    opts: &FitOptions,
) -> Vec<Vec<f64>> {
    let free_wc = coords.free.contains(&0);
    let free_g = coords.free.contains(&2);
    if !(free_wc || free_g) || opts.starts == 0 {
        return Vec::new();
    }
    let lo = m.omega[0];
    let w = coords.width;
    let wcs: Vec<f64> = if free_wc {
        (0..opts.grid_omega)
            .map(|i| lo + w * (i as f64 + 0.5) / opts.grid_omega as f64)
            .collect()
    } else {
        vec![coords.base[0]]
    };
    let gs: Vec<f64> = if free_g {
        let (a, b) = (grid_g_min(w).ln(), (0.5 * w).ln());
        (0..opts.grid_g)
            .map(|j| (a + (b - a) * j as f64 / (opts.grid_g.max(2) - 1) as f64).exp())
            .collect()
    } else {
        vec![coords.base[2]]
    };
    let mut scored: Vec<(f64, Full)> = wcs
        .par_iter()
        .flat_map_iter(|&wc| {
            gs.iter().map(move |&g| {
                let mut p = coords.base;
                p[0] = wc;
                p[1] = wc;
                p[2] = g;
                (chi2(m, model, &p), p)
            })
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored
        .iter()
        .take(opts.starts)
        .map(|(_, p)| coords.point(p))
        .collect()
}

fn covariance(
    m: &MeasuredSpectrum,
    model: Model,
    coords: &Coords,
    p: &Full,
    chi2_min: f64,
) -> Vec<Vec<f64>> {
    let k = coords.free.len();
    if k == 0 {
        return Vec::new();
    }
    let n = m.len();
    let mut jac = DMatrix::<f64>::zeros(n, k);
    for (col, &i) in coords.free.iter().enumerate() {
        let h = match i {
            0 | 1 => 1e-6 * coords.width,
            6 => 1e-6 * p[6].abs().max(1.0),
            _ => 1e-6 * p[i].max(1e-3 * coords.width),
        };
        let shifted = |d: f64| {
            let mut q = *p;
            q[i] += d;
            if i == 0 && coords.tie {
                q[1] = q[0];
            }
            q
        };
        let (lo, hi, span) = if p[i] - h < 0.0 && (2..6).contains(&i) {
            (shifted(0.0), shifted(h), h)
        } else {
            (shifted(-h), shifted(h), 2.0 * h)
        };
        for row in 0..n {
            let d = model_value(model, &hi, m.omega[row]) - model_value(model, &lo, m.omega[row]);
            jac[(row, col)] = d / span * m.weight(row).sqrt();
        }
    }
    let jtj = jac.transpose() * &jac;
    let inv = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-300).ok())
        .unwrap_or_else(|| DMatrix::zeros(k, k));
    let s2 = chi2_min / (n.saturating_sub(k)).max(1) as f64;
    (0..k)
        .map(|r| (0..k).map(|c| s2 * inv[(r, c)]).collect())
        .collect()
}

/// Superconducting-circuit parameters in rad/ns.
#[cfg(test)]
pub(crate) fn circuit_params() -> SystemParams {
    use std::f64::consts::TAU;
    crate::params::make_params(RawParams {
        omega_c: TAU * 6.0446,
        omega_a: TAU * 6.0444,
        g: TAU * 5.73e-3,
        gamma_wg: TAU * 0.361e-3,
        gamma_c: 0.0,
        gamma_a: TAU * 0.86e-3,
        v_g: 1.0,
        omega_0: None,
    })
    .unwrap()
}
