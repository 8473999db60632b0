//! Subcommand bodies. Each computes everything first and returns the files
//! to write, so a failure never leaves partial output behind.

use serde::Serialize;
use wqed::fitting::{
    fit_parameters_with, linspace, load_spectrum_csv, synthesize_with, FitOptions, FitResult,
    MeasuredSpectrum,
};
use wqed::reservoir::{
    build_flat_bath, compare_scattering_with_bath, effective_decay_rate, evolve_closed_composite,
};
use wqed::spectrum::{find_extrema, scan, switch_contrast};
use wqed::timedomain::{evolve, init_gaussian_packet, measure_transport, PacketConfig, Recording};

use crate::config::RunConfig;
use crate::CliError;

/// Files produced by a command, plus whether the result is only partial.
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub unconverged: bool,
}

impl Output {
    fn single(name: &str, bytes: Vec<u8>) -> Output {
        Output {
            files: vec![(name.to_owned(), bytes)],
            unconverged: false,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn json(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(numerical)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn spectrum(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = cfg.scan.as_ref().expect("validated");
    let spec = scan(&cfg.params, s.omega_min, s.omega_max, s.n_points).map_err(numerical)?;
    let mut buf = Vec::new();
    spec.write_csv(&mut buf).map_err(numerical)?;
    Ok(Output::single("spectrum.csv", buf))
}

pub fn extrema(cfg: &RunConfig) -> Result<Output, CliError> {
    let e = cfg.extrema.as_ref().expect("validated");
    let p = &cfg.params;
    let [lo, hi] = e
        .bracket
        .unwrap_or([p.omega_a() - 3.0 * p.g(), p.omega_a() + 3.0 * p.g()]);
    let found = find_extrema(p, (lo, hi), e.tol).map_err(numerical)?;
    Ok(Output::single("extrema.json", json(&found)?))
}

pub fn evolve_packet(cfg: &RunConfig) -> Result<Output, CliError> {
    let k = cfg.packet.as_ref().expect("validated");
    let p = &cfg.params;
    let mut packet = PacketConfig::default();
    if let Some(s) = k.sigma_x {
        packet.sigma_x = s;
    }
    if let Some(d) = k.dx {
        packet.dx = d;
    }
    let plan = packet.plan(p).map_err(numerical)?;
    let state =
        init_gaussian_packet(&plan.grid, p, plan.x0, plan.sigma_x, k.carrier).map_err(numerical)?;
    let recording = Recording::every(k.record_every);
    let (state, series) = evolve(state, p, plan.t_final, plan.dt, &recording).map_err(numerical)?;
    let result = measure_transport(&state, k.carrier).map_err(numerical)?;
    let mut out = Output::single("transport.json", json(&result)?);
    if k.record_every > 0 {
        let mut buf = Vec::new();
        series.write_csv(&mut buf).map_err(numerical)?;
        out.files.push(("timeseries.csv".into(), buf));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SwitchReport {
    #[serde(rename = "T_on")]
    t_on: f64,
    #[serde(rename = "T_off")]
    t_off: f64,
    /// `T_on/T_off`; null when the off state is perfectly opaque.
    contrast: Option<f64>,
}

pub fn switch(cfg: &RunConfig) -> Result<Output, CliError> {
    let s = cfg.switch.as_ref().expect("validated");
    let p = &cfg.params;
    let on = p.with_omega_a(p.omega_c()).map_err(numerical)?;
    let off = p.with_omega_a(s.omega_a_off).map_err(numerical)?;
    let probe = s.omega_probe.unwrap_or(p.omega_c());
    let (t_on, t_off) = switch_contrast(&on, &off, probe).map_err(numerical)?;
    let ratio = t_on / t_off;
    let report = SwitchReport {
        t_on,
        t_off,
        contrast: ratio.is_finite().then_some(ratio),
    };
    Ok(Output::single("switch.json", json(&report)?))
}

#[derive(Serialize)]
struct ReservoirReport {
    gamma_target: f64,
    gamma_est: f64,
    fit_error: f64,
    max_scatter_deviation: f64,
}

pub fn reservoir_check(cfg: &RunConfig) -> Result<Output, CliError> {
    let b = cfg.bath.as_ref().expect("validated");
    let p = &cfg.params;
    let gamma = p.gamma_a();
    let center = b.center.unwrap_or(p.omega_a());
    let bath =
        build_flat_bath(gamma, b.n_oscillators, b.span_halfwidth, center).map_err(numerical)?;
    let dt = b.dt.unwrap_or(0.1 / b.span_halfwidth);
    let run = evolve_closed_composite(&bath, p, b.t_final, dt).map_err(numerical)?;
    let (gamma_est, fit_error) = effective_decay_rate(&run.series).map_err(numerical)?;
    let omegas = b
        .omega_list
        .clone()
        .unwrap_or_else(|| linspace(p.omega_a(), 2.0 * p.g(), 21));
    let deviation = compare_scattering_with_bath(p, &bath, &omegas).map_err(numerical)?;
    let report = ReservoirReport {
        gamma_target: gamma,
        gamma_est,
        fit_error,
        max_scatter_deviation: deviation,
    };
    let mut series = Vec::new();
    run.series.write_csv(&mut series).map_err(numerical)?;
    Ok(Output {
        files: vec![
            ("reservoir.json".into(), json(&report)?),
            ("decay.csv".into(), series),
        ],
        unconverged: false,
    })
}

fn measurement_csv(m: &MeasuredSpectrum) -> Vec<u8> {
    let mut s = String::from("omega,T\n");
    for (w, t) in m.omega.iter().zip(&m.t_measured) {
        s.push_str(&format!("{w:e},{t:e}\n"));
    }
    s.into_bytes()
}

pub fn fit(cfg: &RunConfig, seed: u64) -> Result<Output, CliError> {
    let f = cfg.fit.as_ref().expect("validated");
    let p = &cfg.params;
    let mut files = Vec::new();
    let measured = match (&f.data, &f.synthetic) {
        (Some(path), _) => load_spectrum_csv(path).map_err(|e| CliError::Config(e.to_string()))?,
        (None, Some(s)) => {
            let grid = linspace(p.omega_c(), s.halfwidth_g * p.g(), s.n_points);
            let m = synthesize_with(p, f.model, f.amplitude_scale, &grid, s.noise_sigma, seed)
                .map_err(numerical)?;
            files.push(("measurement.csv".to_owned(), measurement_csv(&m)));
            m
        }
        (None, None) => unreachable!("validated"),
    };
    let initial = f.initial.unwrap_or(*p);
    let mut opts = FitOptions {
        tie_atom_to_cavity: f.tie_atom_to_cavity,
        ..Default::default()
    };
    if let Some(n) = f.max_iter {
        opts.max_iter = n;
    }
    let result: FitResult = fit_parameters_with(
        &measured,
        &initial,
        f.amplitude_scale,
        &f.free_mask,
        f.model,
        &opts,
    )
    .map_err(numerical)?;
    let unconverged = !result.converged;
    files.insert(0, ("fit.json".to_owned(), json(&result)?));
    Ok(Output { files, unconverged })
}
