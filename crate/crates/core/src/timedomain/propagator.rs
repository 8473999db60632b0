use std::io::Write;

use num_complex::Complex64;

use super::{Grid, TimeDomainError, WavePacketState, BOUNDARY_TOLERANCE};
use crate::params::SystemParams;

type Mat2 = [[Complex64; 2]; 2];

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `exp(M)` for a complex 2×2 matrix via the traceless decomposition
/// `M = μI + B`, `B² = s²I`.
fn expm2(m: Mat2) -> Mat2 {
    let mu = (m[0][0] + m[1][1]) * 0.5;
    let b00 = m[0][0] - mu;
    let s2 = b00 * b00 + m[0][1] * m[1][0];
    let (ch, sh) = if s2.norm() < 1e-8 {
        (
            1.0 + s2 / 2.0 + s2 * s2 / 24.0,
            1.0 + s2 / 6.0 + s2 * s2 / 120.0,
        )
    } else {
        let s = s2.sqrt();
        (s.cosh(), s.sinh() / s)
    };
    let e = mu.exp();
    [
        [e * (ch + sh * b00), e * sh * m[0][1]],
        [e * sh * m[1][0], e * (ch - sh * b00)],
    ]
}

/// Per-step bookkeeping used to audit the norm against the loss rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAudit {
    pub dt: f64,
    pub norm_before: f64,
    pub norm_after: f64,
    /// Loss rate averaged over the two sides of the exchange at mid-step.
    pub rate_mid: f64,
}

impl StepAudit {
    /// `ΔN + dt·rate`, which vanishes to third order in `dt`.
    pub fn residual(&self) -> f64 {
        self.norm_after - self.norm_before + self.dt * self.rate_mid
    }
}

/// Precomputed single-step map for one parameter set and grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    params: SystemParams,
    dt: f64,
    half: Mat2,
    cos: f64,
    sin: f64,
    sqrt_dx: f64,
}

impl Propagator {
    /// `dt` must equal `±dx/v_g`; negative steps run the dynamics backwards.
    pub fn new(params: &SystemParams, grid: &Grid, dt: f64) -> Result<Self, TimeDomainError> {
        let required = grid.dx / params.v_g();
        let mismatch = (dt.abs() - required) / required;
        if !dt.is_finite() || mismatch > 1e-12 {
            return Err(TimeDomainError::UnstableStep {
                dt,
                limit: required,
            });
        }
        if mismatch < -1e-12 {
            return Err(TimeDomainError::StepMismatch { dt, required });
        }
        let w0 = params.omega_0();
        let h = [
            [
                Complex64::new(params.omega_c() - w0, -params.gamma_c()),
                Complex64::new(params.g(), 0.0),
            ],
            [
                Complex64::new(params.g(), 0.0),
                Complex64::new(params.omega_a() - w0, -params.gamma_a()),
            ],
        ];
        let f = -I * (dt / 2.0);
        let m = [[f * h[0][0], f * h[0][1]], [f * h[1][0], f * h[1][1]]];
        let theta = (-params.gamma_wg() * dt.abs()).exp().acos() * dt.signum();
        Ok(Propagator {
            params: *params,
            dt,
            half: expm2(m),
            cos: theta.cos(),
            sin: theta.sin(),
            sqrt_dx: grid.dx.sqrt(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    fn half_step(&self, s: &mut WavePacketState) {
        let before = s.ec.norm_sqr() + s.ea.norm_sqr();
        let m = &self.half;
        let ec = m[0][0] * s.ec + m[0][1] * s.ea;
        let ea = m[1][0] * s.ec + m[1][1] * s.ea;
        s.ec = ec;
        s.ea = ea;
        s.dissipated += before - (ec.norm_sqr() + ea.norm_sqr());
    }

    // Unitary exchange between the cavity and the symmetric combination of
    // the two bins meeting at the coupling edge.
    fn exchange(&self, s: &mut WavePacketState) {
        let k = s.grid.coupling_index;
        let slot_r = s.pos_r(k - 1);
        let slot_l = s.pos_l(k);
        let ur = s.buf_r[slot_r] * self.sqrt_dx;
        let ul = s.buf_l[slot_l] * self.sqrt_dx;
        let r2 = std::f64::consts::FRAC_1_SQRT_2;
        let sym = (ur + ul) * r2;
        let diff = (ur - ul) * r2;
        let ec = self.cos * s.ec - I * self.sin * sym;
        let sym = -I * self.sin * s.ec + self.cos * sym;
        s.ec = ec;
        s.set_slot_r(slot_r, (sym + diff) * r2 / self.sqrt_dx);
        s.set_slot_l(slot_l, (sym - diff) * r2 / self.sqrt_dx);
    }

    fn drop_r(s: &mut WavePacketState, slot: usize) -> Result<(), TimeDomainError> {
        let v = s.buf_r[slot];
        if v.norm() > BOUNDARY_TOLERANCE {
            return Err(TimeDomainError::BoundaryReached {
                time: s.time,
                amplitude: v.norm(),
            });
        }
        s.escaped += v.norm_sqr() * s.grid.dx;
        s.set_slot_r(slot, Complex64::new(0.0, 0.0));
        Ok(())
    }

    fn drop_l(s: &mut WavePacketState, slot: usize) -> Result<(), TimeDomainError> {
        let v = s.buf_l[slot];
        if v.norm() > BOUNDARY_TOLERANCE {
            return Err(TimeDomainError::BoundaryReached {
                time: s.time,
                amplitude: v.norm(),
            });
        }
        s.escaped += v.norm_sqr() * s.grid.dx;
        s.set_slot_l(slot, Complex64::new(0.0, 0.0));
        Ok(())
    }

    // Moves right-movers one cell right and left-movers one cell left.
    fn shift(s: &mut WavePacketState) -> Result<(), TimeDomainError> {
        let n = s.grid.n_cells;
        let out_r = s.pos_r(n - 1);
        let out_l = s.pos_l(0);
        Self::drop_r(s, out_r)?;
        Self::drop_l(s, out_l)?;
        s.off_r = (s.off_r + 1) % n;
        s.off_l = (s.off_l + 1) % n;
        Ok(())
    }

    fn unshift(s: &mut WavePacketState) -> Result<(), TimeDomainError> {
        let n = s.grid.n_cells;
        let out_r = s.pos_r(0);
        let out_l = s.pos_l(n - 1);
        Self::drop_r(s, out_r)?;
        Self::drop_l(s, out_l)?;
        s.off_r = (s.off_r + n - 1) % n;
        s.off_l = (s.off_l + n - 1) % n;
        Ok(())
    }

    /// Advances the state by one step.
    pub fn step(&self, s: &mut WavePacketState) -> Result<(), TimeDomainError> {
        self.step_audited(s).map(|_| ())
    }

    /// Advances the state by one step and reports the norm audit.
    pub fn step_audited(&self, s: &mut WavePacketState) -> Result<StepAudit, TimeDomainError> {
        let norm_before = s.norm();
        if self.dt < 0.0 {
            Self::unshift(s)?;
        }
        self.half_step(s);
        let r1 = s.loss_rate(&self.params);
        self.exchange(s);
        let r2 = s.loss_rate(&self.params);
        self.half_step(s);
        if self.dt > 0.0 {
            Self::shift(s)?;
        }
        s.time += self.dt;
        Ok(StepAudit {
            dt: self.dt,
            norm_before,
            norm_after: s.norm(),
            rate_mid: 0.5 * (r1 + r2),
        })
    }
}

/// One step of the coupled field–cavity–atom dynamics.
pub fn step(
    state: &mut WavePacketState,
    params: &SystemParams,
    dt: f64,
) -> Result<(), TimeDomainError> {
    Propagator::new(params, &state.grid, dt)?.step(state)
}

/// What to record while evolving.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    /// Record every `every`-th step (0 disables recording).
    pub every: usize,
    /// Positions at which the net flux `v_g(|φ_R|² − |φ_L|²)` is recorded.
    pub probes: Vec<f64>,
}

impl Recording {
    pub fn none() -> Self {
        Recording::default()
    }

    pub fn every(every: usize) -> Self {
        Recording {
            every,
            probes: Vec::new(),
        }
    }
}

/// Observables recorded during evolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub norm: Vec<f64>,
    pub cavity_population: Vec<f64>,
    pub atom_population: Vec<f64>,
    /// One row per record, one column per probe.
    pub probe_flux: Vec<Vec<f64>>,
}

impl TimeSeries {
    fn record(&mut self, s: &WavePacketState, probes: &[Option<usize>], vg: f64) {
        self.time.push(s.time);
        self.norm.push(s.norm());
        self.cavity_population.push(s.ec.norm_sqr());
        self.atom_population.push(s.ea.norm_sqr());
        if !probes.is_empty() {
            self.probe_flux.push(
                probes
                    .iter()
                    .map(|c| {
                        c.map_or(f64::NAN, |i| {
                            vg * (s.phi_r(i).norm_sqr() - s.phi_l(i).norm_sqr())
                        })
                    })
                    .collect(),
            );
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Writes `time,N,Pc,Pa`, followed by `flux_0, flux_1, …` when probes
    /// were recorded.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TimeDomainError> {
        let mut w = csv::Writer::from_writer(out);
        let n_probes = self.probe_flux.first().map_or(0, |r| r.len());
        let mut header: Vec<String> = ["time", "N", "Pc", "Pa"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n_probes).map(|i| format!("flux_{i}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.time[i].to_string(),
                self.norm[i].to_string(),
                self.cavity_population[i].to_string(),
                self.atom_population[i].to_string(),
            ];
            if n_probes > 0 {
                row.extend(self.probe_flux[i].iter().map(|f| f.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Steps from `state.time` to `t_final` (which may lie in the past when `dt`
/// is negative), recording observables as requested.
pub fn evolve(
    mut state: WavePacketState,
    params: &SystemParams,
    t_final: f64,
    dt: f64,
    recording: &Recording,
) -> Result<(WavePacketState, TimeSeries), TimeDomainError> {
    let prop = Propagator::new(params, &state.grid, dt)?;
    let steps = (t_final - state.time) / dt;
    if !(steps.is_finite() && steps > -0.5) {
        return Err(TimeDomainError::BadDuration {
            time: state.time,
            t_final,
            dt,
        });
    }
    let steps = steps.round() as usize;
    let probes: Vec<Option<usize>> = recording
        .probes
        .iter()
        .map(|&x| state.grid.cell_of(x))
        .collect();
    let mut series = TimeSeries::default();
    let vg = params.v_g();
    if recording.every > 0 {
        series.record(&state, &probes, vg);
    }
    for n in 1..=steps {
        prop.step(&mut state)?;
        if recording.every > 0 && (n % recording.every == 0 || n == steps) {
            series.record(&state, &probes, vg);
        }
    }
    Ok((state, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{make_params, RawParams};
    use crate::timedomain::{build_grid, init_gaussian_packet};
    use approx::assert_abs_diff_eq;

    fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
        let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    #[test]
    fn expm2_against_taylor_series() {
        let m = [
            [Complex64::new(0.1, -0.3), Complex64::new(0.2, 0.05)],
            [Complex64::new(-0.4, 0.1), Complex64::new(-0.2, 0.7)],
        ];
        let mut term = [
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        ];
        let mut sum = term;
        for k in 1..40 {
            term = mat_mul(term, m);
            for row in term.iter_mut() {
                for z in row.iter_mut() {
                    *z /= k as f64;
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        let e = expm2(m);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[i][j] - sum[i][j]).norm() < 1e-14);
            }
        }
        let tiny = [
            [Complex64::new(0.3, 0.0), Complex64::new(1e-6, 0.0)],
            [Complex64::new(1e-6, 0.0), Complex64::new(0.3, 0.0)],
        ];
        let e = expm2(tiny);
        assert_abs_diff_eq!(e[0][1].re, 0.3f64.exp() * 1e-6, epsilon = 1e-18);
    }

    fn lossless() -> SystemParams {
        make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap()
    }

    #[test]
    fn step_must_match_grid() {
        let grid = build_grid(-100.0, 100.0, 2000).unwrap();
        assert!(matches!(
            Propagator::new(&lossless(), &grid, 0.2),
            Err(TimeDomainError::UnstableStep { .. })
        ));
        assert!(matches!(
            Propagator::new(&lossless(), &grid, 0.05),
            Err(TimeDomainError::StepMismatch { .. })
        ));
        assert!(Propagator::new(&lossless(), &grid, -0.1).is_ok());
    }

    #[test]
    fn free_packet_moves_rigidly() {
        let p = lossless()
            .with_gamma_wg(1e-300)
            .unwrap()
            .with_g(0.0)
            .unwrap();
        let grid = build_grid(-200.0, 200.0, 4000).unwrap();
        let s = init_gaussian_packet(&grid, &p, -100.0, 10.0, 1.0).unwrap();
        let (s, _) = evolve(s, &p, 150.0, 0.1, &Recording::none()).unwrap();
        assert_abs_diff_eq!(s.centroid_r(), 50.0, epsilon = 0.1);
        assert_abs_diff_eq!(s.norm_exact(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_contact_aborts() {
        let p = lossless();
        let grid = build_grid(-100.0, 100.0, 2000).unwrap();
        let s = init_gaussian_packet(&grid, &p, -50.0, 10.0, 1.4).unwrap();
        let err = evolve(s, &p, 500.0, 0.1, &Recording::none()).unwrap_err();
        assert!(matches!(err, TimeDomainError::BoundaryReached { .. }));
    }

    #[test]
    fn recording_and_csv() {
        let p = lossless().with_dissipation(0.0, 0.05).unwrap();
        let grid = build_grid(-100.0, 100.0, 2000).unwrap();
        let s = init_gaussian_packet(&grid, &p, -50.0, 10.0, 1.0).unwrap();
        let rec = Recording {
            every: 10,
            probes: vec![-20.0, 20.0],
        };
        let (_, ts) = evolve(s, &p, 20.0, 0.1, &rec).unwrap();
        assert_eq!(ts.len(), 21);
        assert_eq!(ts.probe_flux[0].len(), 2);
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,N,Pc,Pa,flux_0,flux_1\n"));
        assert_eq!(text.lines().count(), 22);
    }
}
