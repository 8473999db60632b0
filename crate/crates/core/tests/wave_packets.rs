use num_complex::Complex64;
use wqed::timedomain::{
    evolve, init_gaussian_packet, measure_transport, run_packet, spectrum_from_packets,
    PacketConfig, Propagator, Recording, WavePacketState,
};
use wqed::{make_params, scatter, RawParams, SystemParams};

fn base_raw() -> SystemParams {
    make_params(RawParams::lossless(1.0, 0.5, 0.09)).unwrap()
}

// |t(ω)|² averaged over the power spectrum of a Gaussian packet of
// position width sigma_x.
fn band_averaged_transmission(p: &SystemParams, carrier: f64, sigma_x: f64) -> f64 {
    let sw = p.v_g() / (2.0 * sigma_x);
    let n = 4001;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let w = carrier + 8.0 * sw * (2.0 * i as f64 / (n - 1) as f64 - 1.0);
        let weight = (-(w - carrier).powi(2) / (2.0 * sw * sw)).exp();
        num += weight * scatter(p, w).unwrap().transmission();
        den += weight;
    }
    num / den
}

fn distance(a: &WavePacketState, b: &WavePacketState) -> f64 {
    let dx = a.grid().dx;
    let fields: f64 = (0..a.grid().n_cells)
        .map(|i| (a.phi_r(i) - b.phi_r(i)).norm_sqr() + (a.phi_l(i) - b.phi_l(i)).norm_sqr())
        .sum::<f64>()
        * dx;
    (fields + (a.ec - b.ec).norm_sqr() + (a.ea - b.ea).norm_sqr()).sqrt()
}

#[test]
fn in_tune_carrier_is_transmitted() {
    let r = run_packet(&base_raw(), 1.0, &PacketConfig::default()).unwrap();
    assert!(r.transmitted >= 0.98, "{r:?}");
}

#[test]
fn rabi_dip_carrier_is_reflected() {
    let r = run_packet(&base_raw(), 1.5, &PacketConfig::default()).unwrap();
    assert!(r.transmitted <= 0.02 && r.reflected >= 0.97, "{r:?}");
}

#[test]
fn lossy_cavity_stays_dark_at_atom_frequency() {
    let p = base_raw().with_dissipation(0.05, 0.0).unwrap();
    let cfg = PacketConfig::default();
    let plan = cfg.plan(&p).unwrap();
    let s = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.0).unwrap();
    let (s, series) = evolve(s, &p, plan.t_final, plan.dt, &Recording::every(10)).unwrap();
    let r = measure_transport(&s, 1.0).unwrap();
    assert!((r.transmitted - 1.0).abs() < 1e-2, "{r:?}");
    let peak = series.cavity_population.iter().cloned().fold(0.0, f64::max);
    assert!(peak < 1e-3, "{peak}");
}

#[test]
fn detuned_atom_frequency_passes() {
    let p = base_raw().with_omega_c(1.1).unwrap();
    let s = spectrum_from_packets(&p, &[1.0], &PacketConfig::default()).unwrap();
    assert!((s.transmission()[0] - 1.0).abs() < 1e-2);
}

#[test]
fn transport_results_account_for_all_probability() {
    let p = base_raw().with_dissipation(0.03, 0.02).unwrap();
    for w in [0.6, 1.0, 1.47] {
        let r = run_packet(&p, w, &PacketConfig::with_sigma(40.0, 0.25)).unwrap();
        assert!((r.total() - 1.0).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn transmission_error_is_second_order_in_the_step() {
    let p = base_raw().with_dissipation(0.02, 0.03).unwrap();
    let sigma = 20.0;
    for carrier in [0.95, 1.53] {
        let oracle = band_averaged_transmission(&p, carrier, sigma);
        let errs: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&dx| {
                let r = run_packet(&p, carrier, &PacketConfig::with_sigma(sigma, dx)).unwrap();
                (r.transmitted - oracle).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.8, "carrier {carrier}: errors {errs:?}");
        }
    }
}

#[test]
fn norm_loss_tracks_instantaneous_dissipation() {
    let p = base_raw().with_dissipation(0.05, 0.05).unwrap();
    let mut worst = Vec::new();
    for dx in [0.4, 0.2] {
        let plan = PacketConfig::with_sigma(20.0, dx).plan(&p).unwrap();
        let mut s = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.3).unwrap();
        let prop = Propagator::new(&p, &plan.grid, plan.dt).unwrap();
        let steps = (plan.t_final / plan.dt) as usize;
        let mut w: f64 = 0.0;
        for _ in 0..steps {
            w = w.max(prop.step_audited(&mut s).unwrap().residual().abs());
        }
        worst.push(w);
    }
    assert!(worst[0] / worst[1] > 6.0, "{worst:?}");
}

#[test]
fn lossless_norm_is_conserved() {
    let p = base_raw().with_omega_c(1.05).unwrap();
    let plan = PacketConfig::with_sigma(40.0, 0.2).plan(&p).unwrap();
    let s = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.45).unwrap();
    let (s, series) = evolve(s, &p, plan.t_final, plan.dt, &Recording::every(25)).unwrap();
    let drift = series
        .norm
        .iter()
        .map(|n| (n - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-8, "{drift}");
    assert!((s.norm_exact() - 1.0).abs() < 1e-8);
}

#[test]
fn reversed_evolution_retraces_the_scattering() {
    let p = base_raw().with_omega_c(1.1).unwrap();
    let plan = PacketConfig::with_sigma(30.0, 0.25).plan(&p).unwrap();
    let start = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.45).unwrap();
    let midway = -plan.x0 / p.v_g() + 40.0;
    let (forward, _) = evolve(start.clone(), &p, midway, plan.dt, &Recording::none()).unwrap();
    assert!(forward.ec.norm() > 1e-3, "packet should be interacting");
    let (back, _) = evolve(forward, &p, 0.0, -plan.dt, &Recording::none()).unwrap();
    assert!(back.time.abs() < 1e-9);
    let d = distance(&start, &back);
    assert!(d < 1e-6, "{d}");
}

#[test]
fn nothing_outruns_the_light_cone() {
    let p = base_raw();
    let plan = PacketConfig::with_sigma(30.0, 0.25).plan(&p).unwrap();
    let s = init_gaussian_packet(&plan.grid, &p, plan.x0, plan.sigma_x, 1.2).unwrap();
    let front0 = plan.x0 + 8.0 * plan.sigma_x;
    for t in [100.0, 250.0, 400.0] {
        let (s, _) = evolve(s.clone(), &p, t, plan.dt, &Recording::none()).unwrap();
        let g = s.grid();
        let reach = front0 + p.v_g() * t;
        let ahead: f64 = (0..g.n_cells)
            .filter(|&i| g.x(i) > reach + g.dx)
            .map(|i| s.phi_r(i).norm_sqr())
            .sum::<f64>()
            * g.dx;
        let behind: f64 = (0..g.n_cells)
            .filter(|&i| g.x(i) < -(reach + g.dx))
            .map(|i| s.phi_l(i).norm_sqr())
            .sum::<f64>()
            * g.dx;
        assert!(ahead < 1e-8 && behind < 1e-8, "t = {t}: {ahead} {behind}");
    }
}

#[test]
fn raw_arrays_can_be_injected() {
    let p = base_raw();
    let plan = PacketConfig::with_sigma(30.0, 0.25).plan(&p).unwrap();
    let g = plan.grid;
    let phi: Vec<Complex64> = (0..g.n_cells)
        .map(|i| {
            let x = g.x(i) - plan.x0;
            if x.abs() < 60.0 {
                Complex64::new((1.0 - (x / 60.0).powi(2)).powi(2), 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let zero = vec![Complex64::new(0.0, 0.0); g.n_cells];
    let s = WavePacketState::from_fields(
        g,
        phi,
        zero,
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
    )
    .unwrap();
    let n0 = s.norm();
    let (s, _) = evolve(s, &p, plan.t_final, plan.dt, &Recording::none()).unwrap();
    let r = measure_transport(&s, p.omega_0()).unwrap();
    assert!((r.transmitted + r.reflected - n0).abs() < 1e-6 * n0);
}
