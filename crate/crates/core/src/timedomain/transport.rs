use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_grid, evolve, init_gaussian_packet, Grid, Recording, TimeDomainError, WavePacketState,
};
use crate::params::SystemParams;

/// Where the probability of a scattered packet ended up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    #[serde(rename = "T")]
    pub transmitted: f64,
    #[serde(rename = "R")]
    pub reflected: f64,
    pub loss: f64,
    pub residual_cavity: f64,
    pub residual_atom: f64,
    pub center_frequency: f64,
}

impl TransportResult {
    pub fn total(&self) -> f64 {
        self.transmitted + self.reflected + self.loss + self.residual_cavity + self.residual_atom
    }
}

const CLEARANCE: f64 = 1e-6;

/// Splits the final state into transmitted, reflected, dissipated and
/// leftover probability.
///
/// Fails with `NotConverged` while probability is still headed for the
/// cavity or the fields at the coupling point exceed `1e-6` of their peak.
pub fn measure_transport(
    state: &WavePacketState,
    center_frequency: f64,
) -> Result<TransportResult, TimeDomainError> {
    let incoming = state.incoming();
    let grid = state.grid();
    let k = grid.coupling_index;
    let peak = (0..grid.n_cells)
        .map(|i| state.phi_r(i).norm().max(state.phi_l(i).norm()))
        .fold(0.0, f64::max);
    let near = [
        state.phi_r(k - 1),
        state.phi_r(k),
        state.phi_l(k - 1),
        state.phi_l(k),
    ]
    .iter()
    .map(|z| z.norm())
    .fold(0.0, f64::max);
    if incoming > CLEARANCE * state.initial_norm() || near > CLEARANCE * peak {
        return Err(TimeDomainError::NotConverged {
            remaining: incoming.max(near),
        });
    }
    let (transmitted, reflected) = state.outgoing();
    Ok(TransportResult {
        transmitted,
        reflected,
        loss: state.dissipated(),
        residual_cavity: state.ec.norm_sqr(),
        residual_atom: state.ea.norm_sqr(),
        center_frequency,
    })
}

/// Packet width and resolution for transport runs.
///
/// The domain, start position and run time are derived from the packet
/// width and the slowest cavity–atom decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketConfig {
    pub sigma_x: f64,
    pub dx: f64,
    /// Initial distance of the packet centre from the cavity, in widths.
    #[serde(default = "default_lead")]
    pub lead_sigmas: f64,
    /// Extra room beyond the packet centre at the domain edges, in widths.
    #[serde(default = "default_margin")]
    pub margin_sigmas: f64,
    /// Upper bound on the ring-down allowance, in widths.
    #[serde(default = "default_ringdown_cap")]
    pub ringdown_cap_sigmas: f64,
}

fn default_lead() -> f64 {
    8.0
}
fn default_margin() -> f64 {
    9.0
}
fn default_ringdown_cap() -> f64 {
    50.0
}

impl Default for PacketConfig {
    fn default() -> Self {
        PacketConfig {
            sigma_x: 200.0,
            dx: 0.1,
            lead_sigmas: default_lead(),
            margin_sigmas: default_margin(),
            ringdown_cap_sigmas: default_ringdown_cap(),
        }
    }
}

/// A concrete run derived from a [`PacketConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketPlan {
    pub grid: Grid,
    pub x0: f64,
    pub sigma_x: f64,
    pub dt: f64,
    pub t_final: f64,
}

/// Slowest amplitude decay rate of the driven cavity–atom subsystem.
pub fn slowest_decay_rate(params: &SystemParams) -> f64 {
    let a = Complex64::new(params.omega_c(), -(params.gamma_c() + params.gamma_wg()));
    let d = Complex64::new(params.omega_a(), -params.gamma_a());
    if params.g() == 0.0 {
        return -a.im;
    }
    let mu = (a + d) * 0.5;
    let root = (((a - d) * 0.5).powi(2) + params.g() * params.g()).sqrt();
    (-(mu + root).im).min(-(mu - root).im)
}

impl PacketConfig {
    pub fn with_sigma(sigma_x: f64, dx: f64) -> Self {
        PacketConfig {
            sigma_x,
            dx,
            ..Default::default()
        }
    }

    pub fn plan(&self, params: &SystemParams) -> Result<PacketPlan, TimeDomainError> {
        let vg = params.v_g();
        let cap = self.ringdown_cap_sigmas * self.sigma_x / vg;
        let kappa = slowest_decay_rate(params);
        let ringdown = if kappa > 0.0 {
            (1e8f64.ln() / kappa).min(cap)
        } else {
            cap
        };
        let t_final = (2.0 * self.lead_sigmas * self.sigma_x) / vg + ringdown;
        let half = (self.lead_sigmas + self.margin_sigmas) * self.sigma_x + ringdown * vg;
        let mut n = (2.0 * half / self.dx).ceil() as usize;
        n += n % 2;
        let half = n as f64 * self.dx / 2.0;
        let grid = build_grid(-half, half, n)?;
        Ok(PacketPlan {
            grid,
            x0: -self.lead_sigmas * self.sigma_x,
            sigma_x: self.sigma_x,
            dt: grid.dx / vg,
            t_final,
        })
    }
}

/// Sends one Gaussian packet at the cavity and measures where it went.
pub fn run_packet(
    params: &SystemParams,
    carrier: f64,
    cfg: &PacketConfig,
) -> Result<TransportResult, TimeDomainError> {
    let plan = cfg.plan(params)?;
    let state = init_gaussian_packet(&plan.grid, params, plan.x0, plan.sigma_x, carrier)?;
    let (state, _) = evolve(state, params, plan.t_final, plan.dt, &Recording::none())?;
    measure_transport(&state, carrier)
}

/// Transport results for a set of carrier frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSpectrum {
    pub omega: Vec<f64>,
    pub results: Vec<TransportResult>,
}

impl PacketSpectrum {
    pub fn transmission(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.transmitted).collect()
    }
}

/// Runs one packet per carrier, in parallel.
pub fn spectrum_from_packets(
    params: &SystemParams,
    omega_list: &[f64],
    cfg: &PacketConfig,
) -> Result<PacketSpectrum, TimeDomainError> {
    let results = omega_list
        .par_iter()
        .map(|&w| run_packet(params, w, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PacketSpectrum {
        omega: omega_list.to_vec(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::scatter;
    use crate::params::{make_params, RawParams};
    use approx::assert_abs_diff_eq;

    fn base() -> SystemParams {
        make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap()
    }

    #[test]
    fn free_transport_passes_everything() {
        let p = base().with_g(0.0).unwrap().with_gamma_wg(1e-300).unwrap();
        let cfg = PacketConfig {
            ringdown_cap_sigmas: 1.0,
            ..PacketConfig::with_sigma(20.0, 0.5)
        };
        let r = run_packet(&p, 1.2, &cfg).unwrap();
        assert_abs_diff_eq!(r.transmitted, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.reflected, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.loss, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn bare_cavity_lorentzian() {
        let p = base().with_g(0.0).unwrap();
        for w in [0.95, 1.0, 1.05, 1.1] {
            let r = run_packet(&p, w, &PacketConfig::with_sigma(200.0, 0.2)).unwrap();
            let expect = (w - 1.0f64).powi(2) / ((w - 1.0f64).powi(2) + 0.0081);
            assert_abs_diff_eq!(r.transmitted, expect, epsilon = 1e-2);
            assert_abs_diff_eq!(r.total(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn lossless_runs_conserve_probability() {
        let p = base().with_omega_c(1.1).unwrap();
        for w in [0.6, 1.0, 1.45] {
            let r = run_packet(&p, w, &PacketConfig::with_sigma(60.0, 0.25)).unwrap();
            assert_abs_diff_eq!(r.transmitted + r.reflected, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn atom_loss_matches_flux_balance() {
        let p = base().with_dissipation(0.0, 0.05).unwrap();
        let r = run_packet(&p, 1.0, &PacketConfig::default()).unwrap();
        let s = scatter(&p, 1.0).unwrap();
        let expect = 1.0 - s.transmission() - s.reflection();
        assert_abs_diff_eq!(expect, 0.0347, epsilon = 2e-4);
        assert_abs_diff_eq!(r.loss, expect, epsilon = 2e-2);
        assert_abs_diff_eq!(r.total(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn premature_measurement_is_refused() {
        let p = base();
        let plan = PacketConfig::with_sigma(40.0, 0.5).plan(&p).unwrap();
        let s = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.0).unwrap();
        assert!(matches!(
            measure_transport(&s, 1.0),
            Err(TimeDomainError::NotConverged { .. })
        ));
    }

    #[test]
    fn decay_rate_of_subsystem() {
        assert_abs_diff_eq!(slowest_decay_rate(&base()), 0.045, epsilon = 1e-12);
        let bare = base()
            .with_g(0.0)
            .unwrap()
            .with_dissipation(0.01, 0.0)
            .unwrap();
        assert_abs_diff_eq!(slowest_decay_rate(&bare), 0.1, epsilon = 1e-15);
    }
}
