//! Run configuration: one parameter record plus exactly one command block.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wqed::fitting::{FreeMask, Model};
use wqed::SystemParams;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: SystemParams,
    pub scan: Option<ScanBlock>,
    pub extrema: Option<ExtremaBlock>,
    pub packet: Option<PacketBlock>,
    pub switch: Option<SwitchBlock>,
    pub bath: Option<BathBlock>,
    pub fit: Option<FitBlock>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    pub omega_min: f64,
    pub omega_max: f64,
    #[serde(default = "default_points")]
    pub n_points: usize,
}

fn default_points() -> usize {
    1001
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtremaBlock {
    /// Defaults to `Ω ± 3g`.
    pub bracket: Option<[f64; 2]>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketBlock {
    pub carrier: f64,
    pub sigma_x: Option<f64>,
    pub dx: Option<f64>,
    /// Record the time series every this many steps; 0 disables it.
    #[serde(default)]
    pub record_every: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchBlock {
    pub omega_a_off: f64,
    /// Defaults to the cavity frequency.
    pub omega_probe: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathBlock {
    pub n_oscillators: usize,
    pub span_halfwidth: f64,
    /// Band centre; defaults to the atomic frequency.
    pub center: Option<f64>,
    #[serde(default = "default_bath_time")]
    pub t_final: f64,
    /// Defaults to `0.1/span_halfwidth`.
    pub dt: Option<f64>,
    /// Defaults to 21 frequencies across `Ω ± 2g`.
    pub omega_list: Option<Vec<f64>>,
}

fn default_bath_time() -> f64 {
    40.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    /// CSV file with header `omega,T[,sigma]`, relative to the config file.
    pub data: Option<PathBuf>,
    /// Generates the data from `params` instead of reading a file.
    pub synthetic: Option<SyntheticBlock>,
    /// Starting point; defaults to `params`.
    pub initial: Option<SystemParams>,
    #[serde(default = "default_model")]
    pub model: Model,
    #[serde(default)]
    pub free_mask: FreeMask,
    #[serde(default = "default_scale")]
    pub amplitude_scale: f64,
    #[serde(default)]
    pub tie_atom_to_cavity: bool,
    /// Simplex iteration budget.
    pub max_iter: Option<usize>,
}

fn default_model() -> Model {
    Model::DirectCoupledT
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    pub noise_sigma: f64,
    #[serde(default = "default_fit_points")]
    pub n_points: usize,
    /// Window half-width in units of g.
    #[serde(default = "default_window")]
    pub halfwidth_g: f64,
}

fn default_fit_points() -> usize {
    200
}

fn default_window() -> f64 {
    4.0
}

/// Which block a subcommand needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Scan,
    Extrema,
    Packet,
    Switch,
    Bath,
    Fit,
}

impl Block {
    fn key(self) -> &'static str {
        match self {
            Block::Scan => "scan",
            Block::Extrema => "extrema",
            Block::Packet => "packet",
            Block::Switch => "switch",
            Block::Bath => "bath",
            Block::Fit => "fit",
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn finite(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be finite")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be positive")))
    }
}

impl RunConfig {
    /// Reads and validates a configuration for the given block.
    pub fn load(path: &Path, block: Block) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(fit) = cfg.fit.as_mut() {
            if let Some(data) = fit.data.as_mut() {
                if data.is_relative() {
                    *data = base.join(&*data);
                }
            }
        }
        cfg.validate(block)?;
        Ok(cfg)
    }

    fn present(&self) -> Vec<Block> {
        let mut v = Vec::new();
        if self.scan.is_some() {
            v.push(Block::Scan);
        }
        if self.extrema.is_some() {
            v.push(Block::Extrema);
        }
        if self.packet.is_some() {
            v.push(Block::Packet);
        }
        if self.switch.is_some() {
            v.push(Block::Switch);
        }
        if self.bath.is_some() {
            v.push(Block::Bath);
        }
        if self.fit.is_some() {
            v.push(Block::Fit);
        }
        v
    }

    pub fn validate(&self, block: Block) -> Result<(), CliError> {
        let present = self.present();
        if present != [block] {
            let names: Vec<&str> = present.iter().map(|b| b.key()).collect();
            return Err(config_error(format!(
                "expected exactly one `{}` block, found [{}]",
                block.key(),
                names.join(", ")
            )));
        }
        let p = &self.params;
        match block {
            Block::Scan => {
                let s = self.scan.as_ref().expect("checked");
                finite("omega_min", s.omega_min)?;
                finite("omega_max", s.omega_max)?;
                if !(s.omega_min < s.omega_max) {
                    return Err(config_error("scan range is empty"));
                }
                if s.n_points < 2 {
                    return Err(config_error("scan needs at least two points"));
                }
            }
            Block::Extrema => {
                let e = self.extrema.as_ref().expect("checked");
                positive("tol", e.tol)?;
                if let Some([lo, hi]) = e.bracket {
                    finite("bracket", lo)?;
                    finite("bracket", hi)?;
                    if !(lo < hi) {
                        return Err(config_error("bracket is empty"));
                    }
                }
            }
            Block::Packet => {
                let k = self.packet.as_ref().expect("checked");
                finite("carrier", k.carrier)?;
                if let Some(s) = k.sigma_x {
                    positive("sigma_x", s)?;
                }
                if let Some(d) = k.dx {
                    positive("dx", d)?;
                }
            }
            Block::Switch => {
                let s = self.switch.as_ref().expect("checked");
                finite("omega_a_off", s.omega_a_off)?;
                if let Some(w) = s.omega_probe {
                    finite("omega_probe", w)?;
                }
            }
            Block::Bath => {
                let b = self.bath.as_ref().expect("checked");
                positive("params.gamma_a", p.gamma_a())?;
                positive("span_halfwidth", b.span_halfwidth)?;
                positive("t_final", b.t_final)?;
                if let Some(dt) = b.dt {
                    positive("dt", dt)?;
                }
                if let Some(c) = b.center {
                    finite("center", c)?;
                }
                if let Some(list) = &b.omega_list {
                    if list.is_empty() {
                        return Err(config_error("omega_list is empty"));
                    }
                    for &w in list {
                        finite("omega_list", w)?;
                    }
                }
            }
            Block::Fit => {
                let f = self.fit.as_ref().expect("checked");
                match (&f.data, &f.synthetic) {
                    (Some(path), None) => {
                        if !path.is_file() {
                            return Err(config_error(format!(
                                "data file {} does not exist",
                                path.display()
                            )));
                        }
                    }
                    (None, Some(s)) => {
                        if !(s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
                            return Err(config_error(
                                "noise_sigma must be finite and non-negative",
                            ));
                        }
                        positive("halfwidth_g", s.halfwidth_g)?;
                        positive("params.g", p.g())?;
                        if s.n_points < wqed::fitting::MIN_POINTS {
                            return Err(config_error("synthetic spectrum needs at least 8 points"));
                        }
                    }
                    _ => {
                        return Err(config_error(
                            "fit needs exactly one of `data` or `synthetic`",
                        ))
                    }
                }
                positive("amplitude_scale", f.amplitude_scale)?;
            }
        }
        Ok(())
    }
}
