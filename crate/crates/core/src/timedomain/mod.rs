//! Time-domain propagation of single-photon wave packets.
//!
//! The photon is described by right- and left-moving envelopes on a uniform
//! grid together with the cavity and atom amplitudes. The carrier rotation at
//! `ω_0` is factored out, so envelopes move rigidly at `v_g` between
//! interactions with the cavity at `x = 0`.
//!
//! The integrator ties the time step to the grid, `dt = dx/v_g`, so the
//! transport part is an exact shift by one cell. Each step is a symmetric
//! splitting: half a step of the cavity–atom subsystem, an exact unitary
//! exchange between the cavity and the two field bins meeting at the
//! coupling point, a second half step, and the shift.

mod propagator;
mod transport;

use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::params::{ParamsError, SystemParams};

pub use propagator::{evolve, step, Propagator, Recording, StepAudit, TimeSeries};
pub use transport::{
    measure_transport, run_packet, slowest_decay_rate, spectrum_from_packets, PacketConfig,
    PacketPlan, PacketSpectrum, TransportResult,
};

/// Amplitude above which a field leaving the domain aborts the run.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeDomainError {
    #[error("bad domain [{x_min}, {x_max}] with {n_cells} cells: {reason}")]
    BadDomain {
        x_min: f64,
        x_max: f64,
        n_cells: usize,
        reason: &'static str,
    },
    #[error("packet at x0 = {x0} with width {sigma_x} overlaps the coupling point")]
    PacketOverlapsCoupling { x0: f64, sigma_x: f64 },
    #[error("packet width {sigma_x} is under-resolved by dx = {dx} (need sigma_x >= 8 dx)")]
    UnderResolved { sigma_x: f64, dx: f64 },
    #[error("time step {dt} exceeds the transport limit dx/v_g = {limit}")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("time step {dt} must equal dx/v_g = {required} in magnitude")]
    StepMismatch { dt: f64, required: f64 },
    #[error("field amplitude {amplitude} reached the domain boundary at t = {time}")]
    BoundaryReached { time: f64, amplitude: f64 },
    #[error("packet has not cleared the coupling point (remaining {remaining})")]
    NotConverged { remaining: f64 },
    #[error("cannot reach t = {t_final} from t = {time} with dt = {dt}")]
    BadDuration { time: f64, t_final: f64, dt: f64 },
    #[error("field arrays have length {got}, grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("csv output failed: {0}")]
    Csv(String),
}

impl From<csv::Error> for TimeDomainError {
    fn from(e: csv::Error) -> Self {
        TimeDomainError::Csv(e.to_string())
    }
}

/// Uniform cell grid. Cell `i` covers `[x_min + i·dx, x_min + (i+1)·dx)`.
///
/// The coupling point sits on the cell edge with index `coupling_index`:
/// cells below it lie to the left of the cavity, cells from it onward to the
/// right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub dx: f64,
    pub coupling_index: usize,
}

pub fn build_grid(x_min: f64, x_max: f64, n_cells: usize) -> Result<Grid, TimeDomainError> {
    let bad = |reason| TimeDomainError::BadDomain {
        x_min,
        x_max,
        n_cells,
        reason,
    };
    if !(x_min.is_finite() && x_max.is_finite()) {
        return Err(bad("non-finite bounds"));
    }
    if !(x_min < 0.0 && 0.0 < x_max) {
        return Err(bad("origin must be interior"));
    }
    if n_cells < 16 {
        return Err(bad("at least 16 cells required"));
    }
    let dx = (x_max - x_min) / n_cells as f64;
    let k = (-x_min / dx).round() as usize;
    Ok(Grid {
        x_min,
        x_max,
        n_cells,
        dx,
        coupling_index: k.clamp(1, n_cells - 1),
    })
}

impl Grid {
    /// Centre of cell `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    /// Position of the coupling edge (zero up to half a cell).
    pub fn coupling_x(&self) -> f64 {
        self.x_min + self.coupling_index as f64 * self.dx
    }

    /// Index of the cell containing `x`, if inside the domain.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let i = ((x - self.x_min) / self.dx).floor();
        (i >= 0.0 && (i as usize) < self.n_cells).then_some(i as usize)
    }
}

/// Photon fields plus cavity and atom amplitudes at one instant.
///
/// The fields are stored in ring buffers so that the transport shift is a
/// change of offset rather than a copy.
#[derive(Debug, Clone)]
pub struct WavePacketState {
    grid: Grid,
    buf_r: Vec<Complex64>,
    buf_l: Vec<Complex64>,
    off_r: usize,
    off_l: usize,
    // Σ|φ|² over both buffers, without the cell width.
    field_sum: f64,
    pub ec: Complex64,
    pub ea: Complex64,
    pub time: f64,
    dissipated: f64,
    escaped: f64,
    initial_norm: f64,
}

impl WavePacketState {
    /// Builds a state from raw field arrays indexed by cell.
    pub fn from_fields(
        grid: Grid,
        phi_r: Vec<Complex64>,
        phi_l: Vec<Complex64>,
        ec: Complex64,
        ea: Complex64,
    ) -> Result<Self, TimeDomainError> {
        for v in [&phi_r, &phi_l] {
            if v.len() != grid.n_cells {
                return Err(TimeDomainError::LengthMismatch {
                    expected: grid.n_cells,
                    got: v.len(),
                });
            }
        }
        let field_sum = phi_r.iter().chain(&phi_l).map(|z| z.norm_sqr()).sum();
        let mut s = WavePacketState {
            grid,
            buf_r: phi_r,
            buf_l: phi_l,
            off_r: 0,
            off_l: 0,
            field_sum,
            ec,
            ea,
            time: 0.0,
            dissipated: 0.0,
            escaped: 0.0,
            initial_norm: 0.0,
        };
        s.initial_norm = s.norm();
        Ok(s)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn pos_r(&self, i: usize) -> usize {
        let n = self.grid.n_cells;
        (i + n - self.off_r) % n
    }

    #[inline]
    fn pos_l(&self, i: usize) -> usize {
        (i + self.off_l) % self.grid.n_cells
    }

    pub fn phi_r(&self, i: usize) -> Complex64 {
        self.buf_r[self.pos_r(i)]
    }

    pub fn phi_l(&self, i: usize) -> Complex64 {
        self.buf_l[self.pos_l(i)]
    }

    pub fn phi_r_vec(&self) -> Vec<Complex64> {
        (0..self.grid.n_cells).map(|i| self.phi_r(i)).collect()
    }

    pub fn phi_l_vec(&self) -> Vec<Complex64> {
        (0..self.grid.n_cells).map(|i| self.phi_l(i)).collect()
    }

    /// Total probability, tracked incrementally (O(1)).
    pub fn norm(&self) -> f64 {
        self.field_sum * self.grid.dx + self.ec.norm_sqr() + self.ea.norm_sqr()
    }

    /// Total probability summed afresh over the grid.
    pub fn norm_exact(&self) -> f64 {
        let s: f64 = self
            .buf_r
            .iter()
            .chain(&self.buf_l)
            .map(|z| z.norm_sqr())
            .sum();
        s * self.grid.dx + self.ec.norm_sqr() + self.ea.norm_sqr()
    }

    /// Probability removed by intrinsic cavity and atom losses so far.
    pub fn dissipated(&self) -> f64 {
        self.dissipated
    }

    /// Probability dropped at the boundaries (below the abort threshold).
    pub fn escaped(&self) -> f64 {
        self.escaped
    }

    pub fn initial_norm(&self) -> f64 {
        self.initial_norm
    }

    /// Instantaneous loss rate `2γ_c|e_c|² + 2γ_a|e_a|²`.
    pub fn loss_rate(&self, params: &SystemParams) -> f64 {
        2.0 * params.gamma_c() * self.ec.norm_sqr() + 2.0 * params.gamma_a() * self.ea.norm_sqr()
    }

    /// `(Σ_{x>0} |φ_R|² dx, Σ_{x<0} |φ_L|² dx)`.
    pub fn outgoing(&self) -> (f64, f64) {
        let k = self.grid.coupling_index;
        let t: f64 = (k..self.grid.n_cells)
            .map(|i| self.phi_r(i).norm_sqr())
            .sum();
        let r: f64 = (0..k).map(|i| self.phi_l(i).norm_sqr()).sum();
        (t * self.grid.dx, r * self.grid.dx)
    }

    /// Probability still travelling towards the cavity.
    pub fn incoming(&self) -> f64 {
        let k = self.grid.coupling_index;
        let a: f64 = (0..k).map(|i| self.phi_r(i).norm_sqr()).sum();
        let b: f64 = (k..self.grid.n_cells)
            .map(|i| self.phi_l(i).norm_sqr())
            .sum();
        (a + b) * self.grid.dx
    }

    /// Probability-weighted mean position of `|φ_R|²`.
    pub fn centroid_r(&self) -> f64 {
        let mut w = 0.0;
        let mut m = 0.0;
        for i in 0..self.grid.n_cells {
            let p = self.phi_r(i).norm_sqr();
            w += p;
            m += p * self.grid.x(i);
        }
        m / w
    }

    /// Writes the snapshot table `x,Re_phiR,Im_phiR,Re_phiL,Im_phiL`.
    pub fn write_snapshot_csv<W: Write>(&self, out: W) -> Result<(), TimeDomainError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "Re_phiR", "Im_phiR", "Re_phiL", "Im_phiL"])?;
        for i in 0..self.grid.n_cells {
            let (r, l) = (self.phi_r(i), self.phi_l(i));
            w.write_record(&[
                self.grid.x(i).to_string(),
                r.re.to_string(),
                r.im.to_string(),
                l.re.to_string(),
                l.im.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    // Replaces the value at a buffer slot, keeping the norm sum current.
    #[inline]
    fn set_slot_r(&mut self, slot: usize, v: Complex64) {
        self.field_sum += v.norm_sqr() - self.buf_r[slot].norm_sqr();
        self.buf_r[slot] = v;
    }

    #[inline]
    fn set_slot_l(&mut self, slot: usize, v: Complex64) {
        self.field_sum += v.norm_sqr() - self.buf_l[slot].norm_sqr();
        self.buf_l[slot] = v;
    }
}

/// Normalized Gaussian right-moving packet,
/// `φ_R(x) ∝ exp(−(x−x0)²/(4σ_x²))·exp(iqx)` with `q = (ω − ω_0)/v_g`.
/// The cavity is empty and the atom in its ground state.
pub fn init_gaussian_packet(
    grid: &Grid,
    params: &SystemParams,
    x0: f64,
    sigma_x: f64,
    omega_carrier: f64,
) -> Result<WavePacketState, TimeDomainError> {
    if !(sigma_x >= 8.0 * grid.dx) {
        return Err(TimeDomainError::UnderResolved {
            sigma_x,
            dx: grid.dx,
        });
    }
    if !(x0 + 4.0 * sigma_x < grid.coupling_x()) {
        return Err(TimeDomainError::PacketOverlapsCoupling { x0, sigma_x });
    }
    let q = (omega_carrier - params.omega_0()) / params.v_g();
    let mut phi: Vec<Complex64> = (0..grid.n_cells)
        .map(|i| {
            let x = grid.x(i);
            let env = (-(x - x0).powi(2) / (4.0 * sigma_x * sigma_x)).exp();
            Complex64::from_polar(env, q * x)
        })
        .collect();
    let norm: f64 = phi.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx;
    let scale = norm.sqrt().recip();
    phi.iter_mut().for_each(|z| *z *= scale);
    let zero = Complex64::new(0.0, 0.0);
    WavePacketState::from_fields(*grid, phi, vec![zero; grid.n_cells], zero, zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{make_params, RawParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_arithmetic() {
        let g = build_grid(-400.0, 400.0, 8192).unwrap();
        assert_eq!(g.dx, 0.09765625);
        assert_eq!(g.coupling_index, 4096);
        assert_eq!(g.coupling_x(), 0.0);
    }

    #[test]
    fn grid_guards() {
        assert!(matches!(
            build_grid(-1.0, -0.5, 100),
            Err(TimeDomainError::BadDomain { .. })
        ));
        assert!(matches!(
            build_grid(-400.0, 400.0, 8),
            Err(TimeDomainError::BadDomain { .. })
        ));
    }

    #[test]
    fn gaussian_packet_is_normalized() {
        let grid = build_grid(-400.0, 400.0, 8192).unwrap();
        let p = make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap();
        let s = init_gaussian_packet(&grid, &p, -200.0, 40.0, 1.0).unwrap();
        assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.norm_exact(), 1.0, epsilon = 1e-12);
        assert_eq!(s.ec, Complex64::new(0.0, 0.0));
        assert_eq!(s.ea, Complex64::new(0.0, 0.0));
        assert_abs_diff_eq!(s.centroid_r(), -200.0, epsilon = 1e-3);
    }

    #[test]
    fn packet_spectral_width() {
        // |φ(k)|² ∝ exp(−2σ_x²(k−q)²): the spectral standard deviation is 1/(2σ_x).
        let grid = build_grid(-400.0, 400.0, 8192).unwrap();
        let p = make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap();
        let s = init_gaussian_packet(&grid, &p, -200.0, 40.0, 1.0).unwrap();
        let phi = s.phi_r_vec();
        let (mut w, mut m2) = (0.0, 0.0);
        for j in -400..=400 {
            let k = j as f64 * 2.5e-4;
            let amp: Complex64 = (0..grid.n_cells)
                .map(|i| phi[i] * Complex64::from_polar(1.0, -k * grid.x(i)))
                .sum();
            w += amp.norm_sqr();
            m2 += amp.norm_sqr() * k * k;
        }
        assert_abs_diff_eq!((m2 / w).sqrt(), 0.0125, epsilon = 1e-5);
    }

    #[test]
    fn packet_guards() {
        let grid = build_grid(-400.0, 400.0, 8192).unwrap();
        let p = make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap();
        assert!(matches!(
            init_gaussian_packet(&grid, &p, -50.0, 40.0, 1.0),
            Err(TimeDomainError::PacketOverlapsCoupling { .. })
        ));
        assert!(matches!(
            init_gaussian_packet(&grid, &p, -200.0, 0.5, 1.0),
            Err(TimeDomainError::UnderResolved { .. })
        ));
    }
}
