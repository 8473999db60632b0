//! Physical parameters of the waveguide–cavity–atom system.
//!
//! Every frequency-like quantity (cavity and atomic frequencies, couplings,
//! dissipation rates) is stored as an angular frequency in one common unit
//! system. The default system measures frequencies in units of the atomic
//! transition frequency with a unit group velocity, so the published parameter
//! sets read `g = 0.5`, `gamma_wg = 0.09`, and so on.
//!
//! The waveguide coupling is parameterized by the rate `gamma_wg = V²/v_g`
//! rather than by `V` itself; the pointwise coupling `V` is derived on demand.
//! The ground-state energy of the atom is fixed at zero, so the eigenfrequency
//! of a scattering state coincides with the photon frequency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while validating a parameter set.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("{name} must be strictly positive (got {value})")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("{name} must be non-negative (got {value})")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("{name} must be finite (got {value})")]
    NotFinite { name: &'static str, value: f64 },
    #[error("frequency units differ: {left} vs {right}")]
    UnitMismatch { left: f64, right: f64 },
}

/// Tag identifying the frequency unit a value set is expressed in.
///
/// `scale` is the size of one unit measured in the base unit the parameters
/// were originally entered in. Rescaling by `omega_ref` multiplies the scale
/// by `omega_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyUnit {
    pub scale: f64,
}

impl FrequencyUnit {
    pub const BASE: FrequencyUnit = FrequencyUnit { scale: 1.0 };

    pub fn is_base(&self) -> bool {
        self.scale == 1.0
    }

    /// Two tags describe the same unit when their scales agree to roundoff.
    pub fn same_as(&self, other: &FrequencyUnit) -> bool {
        let denom = self.scale.abs().max(other.scale.abs());
        (self.scale - other.scale).abs() <= 1e-12 * denom
    }

    pub fn ensure_same(&self, other: &FrequencyUnit) -> Result<(), ParamsError> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(ParamsError::UnitMismatch {
                left: self.scale,
                right: other.scale,
            })
        }
    }
}

impl Default for FrequencyUnit {
    fn default() -> Self {
        Self::BASE
    }
}

/// Unvalidated parameter record, as read from a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub omega_c: f64,
    pub omega_a: f64,
    pub g: f64,
    pub gamma_wg: f64,
    #[serde(default)]
    pub gamma_c: f64,
    #[serde(default)]
    pub gamma_a: f64,
    #[serde(default = "unit_group_velocity")]
    pub v_g: f64,
    /// Defaults to `omega_c` when absent.
    #[serde(default)]
    pub omega_0: Option<f64>,
}

fn unit_group_velocity() -> f64 {
    1.0
}

impl RawParams {
    /// In-tune, lossless record with unit group velocity.
    pub fn lossless(omega: f64, g: f64, gamma_wg: f64) -> Self {
        RawParams {
            omega_c: omega,
            omega_a: omega,
            g,
            gamma_wg,
            gamma_c: 0.0,
            gamma_a: 0.0,
            v_g: 1.0,
            omega_0: None,
        }
    }
}

/// Validated, immutable parameter set.
///
/// Serializes to a flat JSON record with the field names `omega_c`, `omega_a`,
/// `g`, `gamma_wg`, `gamma_c`, `gamma_a`, `v_g`, `omega_0`. A `unit` entry is
/// only emitted once the set has been rescaled away from its base unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRecord", into = "ParamsRecord")]
pub struct SystemParams {
    omega_c: f64,
    omega_a: f64,
    g: f64,
    gamma_wg: f64,
    gamma_c: f64,
    gamma_a: f64,
    v_g: f64,
    omega_0: f64,
    unit: FrequencyUnit,
}

#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    omega_c: f64,
    omega_a: f64,
    g: f64,
    gamma_wg: f64,
    #[serde(default)]
    gamma_c: f64,
    #[serde(default)]
    gamma_a: f64,
    #[serde(default = "unit_group_velocity")]
    v_g: f64,
    #[serde(default)]
    omega_0: Option<f64>,
    #[serde(default, skip_serializing_if = "FrequencyUnit::is_base")]
    unit: FrequencyUnit,
}

impl TryFrom<ParamsRecord> for SystemParams {
    type Error = ParamsError;

    fn try_from(rec: ParamsRecord) -> Result<Self, ParamsError> {
        let raw = RawParams {
            omega_c: rec.omega_c,
            omega_a: rec.omega_a,
            g: rec.g,
            gamma_wg: rec.gamma_wg,
            gamma_c: rec.gamma_c,
            gamma_a: rec.gamma_a,
            v_g: rec.v_g,
            omega_0: rec.omega_0,
        };
        make_params_in(raw, rec.unit)
    }
}

impl From<SystemParams> for ParamsRecord {
    fn from(p: SystemParams) -> Self {
        ParamsRecord {
            omega_c: p.omega_c,
            omega_a: p.omega_a,
            g: p.g,
            gamma_wg: p.gamma_wg,
            gamma_c: p.gamma_c,
            gamma_a: p.gamma_a,
            v_g: p.v_g,
            omega_0: Some(p.omega_0),
            unit: p.unit,
        }
    }
}

/// Validates a raw record in the base unit system.
pub fn make_params(raw: RawParams) -> Result<SystemParams, ParamsError> {
    make_params_in(raw, FrequencyUnit::BASE)
}

/// Validates a raw record already expressed in `unit`.
pub fn make_params_in(raw: RawParams, unit: FrequencyUnit) -> Result<SystemParams, ParamsError> {
    let omega_0 = raw.omega_0.unwrap_or(raw.omega_c);
    for (name, value) in [
        ("omega_c", raw.omega_c),
        ("omega_a", raw.omega_a),
        ("g", raw.g),
        ("gamma_wg", raw.gamma_wg),
        ("gamma_c", raw.gamma_c),
        ("gamma_a", raw.gamma_a),
        ("v_g", raw.v_g),
        ("omega_0", omega_0),
    ] {
        if !value.is_finite() {
            return Err(ParamsError::NotFinite { name, value });
        }
    }
    if raw.gamma_wg <= 0.0 {
        return Err(ParamsError::NonPositiveRate {
            name: "gamma_wg",
            value: raw.gamma_wg,
        });
    }
    if raw.v_g <= 0.0 {
        return Err(ParamsError::NonPositiveRate {
            name: "v_g",
            value: raw.v_g,
        });
    }
    for (name, value) in [
        ("g", raw.g),
        ("gamma_c", raw.gamma_c),
        ("gamma_a", raw.gamma_a),
    ] {
        if value < 0.0 {
            return Err(ParamsError::NegativeRate { name, value });
        }
    }
    if !(unit.scale.is_finite() && unit.scale > 0.0) {
        return Err(ParamsError::NonPositiveRate {
            name: "unit scale",
            value: unit.scale,
        });
    }
    Ok(SystemParams {
        omega_c: raw.omega_c,
        omega_a: raw.omega_a,
        g: raw.g,
        gamma_wg: raw.gamma_wg,
        gamma_c: raw.gamma_c,
        gamma_a: raw.gamma_a,
        v_g: raw.v_g,
        omega_0,
        unit,
    })
}

/// Expresses every frequency-like field in units of `omega_ref`.
///
/// The group velocity is left alone, so lengths are implicitly rescaled along
/// with times.
pub fn rescale(params: &SystemParams, omega_ref: f64) -> Result<SystemParams, ParamsError> {
    if !(omega_ref > 0.0) || !omega_ref.is_finite() {
        return Err(ParamsError::NonPositiveRate {
            name: "omega_ref",
            value: omega_ref,
        });
    }
    let s = |x: f64| x / omega_ref;
    make_params_in(
        RawParams {
            omega_c: s(params.omega_c),
            omega_a: s(params.omega_a),
            g: s(params.g),
            gamma_wg: s(params.gamma_wg),
            gamma_c: s(params.gamma_c),
            gamma_a: s(params.gamma_a),
            v_g: params.v_g,
            omega_0: Some(s(params.omega_0)),
        },
        FrequencyUnit {
            scale: params.unit.scale * omega_ref,
        },
    )
}

impl SystemParams {
    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }
    pub fn omega_a(&self) -> f64 {
        self.omega_a
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    /// Waveguide-induced cavity decay rate `V²/v_g`.
    pub fn gamma_wg(&self) -> f64 {
        self.gamma_wg
    }
    pub fn gamma_c(&self) -> f64 {
        self.gamma_c
    }
    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }
    pub fn v_g(&self) -> f64 {
        self.v_g
    }
    pub fn omega_0(&self) -> f64 {
        self.omega_0
    }
    pub fn unit(&self) -> FrequencyUnit {
        self.unit
    }

    /// Pointwise cavity–waveguide coupling `V = sqrt(gamma_wg · v_g)`.
    pub fn coupling_v(&self) -> f64 {
        (self.gamma_wg * self.v_g).sqrt()
    }

    pub fn is_lossless(&self) -> bool {
        self.gamma_c == 0.0 && self.gamma_a == 0.0
    }

    pub fn to_raw(&self) -> RawParams {
        RawParams {
            omega_c: self.omega_c,
            omega_a: self.omega_a,
            g: self.g,
            gamma_wg: self.gamma_wg,
            gamma_c: self.gamma_c,
            gamma_a: self.gamma_a,
            v_g: self.v_g,
            omega_0: Some(self.omega_0),
        }
    }

    fn modified(&self, f: impl FnOnce(&mut RawParams)) -> Result<SystemParams, ParamsError> {
        let mut raw = self.to_raw();
        f(&mut raw);
        make_params_in(raw, self.unit)
    }

    pub fn with_omega_c(&self, omega_c: f64) -> Result<SystemParams, ParamsError> {
        self.modified(|r| r.omega_c = omega_c)
    }
    pub fn with_omega_a(&self, omega_a: f64) -> Result<SystemParams, ParamsError> {
        self.modified(|r| r.omega_a = omega_a)
    }
    pub fn with_g(&self, g: f64) -> Result<SystemParams, ParamsError> {
        self.modified(|r| r.g = g)
    }
    pub fn with_gamma_wg(&self, gamma_wg: f64) -> Result<SystemParams, ParamsError> {
        self.modified(|r| r.gamma_wg = gamma_wg)
    }
    pub fn with_dissipation(
        &self,
        gamma_c: f64,
        gamma_a: f64,
    ) -> Result<SystemParams, ParamsError> {
        self.modified(|r| {
            r.gamma_c = gamma_c;
            r.gamma_a = gamma_a;
        })
    }
    pub fn with_omega_0(&self, omega_0: f64) -> Result<SystemParams, ParamsError> {
        self.modified(|r| r.omega_0 = Some(omega_0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_raw() -> RawParams {
        RawParams::lossless(1.0, 0.5, 0.09)
    }

    #[test]
    fn published_parameter_set_is_valid() {
        let p = make_params(base_raw()).unwrap();
        assert_eq!(p.g(), 0.5);
        assert_eq!(p.omega_0(), p.omega_c());
        assert!((p.coupling_v() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_waveguide_coupling_is_rejected() {
        let raw = RawParams {
            gamma_wg: 0.0,
            ..base_raw()
        };
        assert!(matches!(
            make_params(raw),
            Err(ParamsError::NonPositiveRate {
                name: "gamma_wg",
                ..
            })
        ));
        let raw = RawParams {
            v_g: -1.0,
            ..base_raw()
        };
        assert!(matches!(
            make_params(raw),
            Err(ParamsError::NonPositiveRate { name: "v_g", .. })
        ));
    }

    #[test]
    fn negative_dissipation_is_rejected() {
        let raw = RawParams {
            gamma_a: -0.1,
            ..base_raw()
        };
        assert!(matches!(
            make_params(raw),
            Err(ParamsError::NegativeRate {
                name: "gamma_a",
                ..
            })
        ));
    }

    #[test]
    fn rescale_to_cavity_frequency() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let raw = RawParams {
            omega_c: two_pi * 6.0446,
            omega_a: two_pi * 6.0444,
            g: two_pi * 5.73e-3,
            gamma_wg: two_pi * 0.361e-3,
            gamma_c: 0.0,
            gamma_a: two_pi * 0.86e-3,
            v_g: 1.0,
            omega_0: None,
        };
        let p = make_params(raw).unwrap();
        let q = rescale(&p, two_pi * 6.0446).unwrap();
        assert!((q.omega_c() - 1.0).abs() < 1e-15);
        assert!((q.unit().scale - two_pi * 6.0446).abs() < 1e-12);
        assert_eq!(q.v_g(), 1.0);
    }

    #[test]
    fn rescale_by_one_is_identity() {
        let p = make_params(base_raw()).unwrap();
        assert_eq!(rescale(&p, 1.0).unwrap(), p);
        assert!(matches!(
            rescale(&p, 0.0),
            Err(ParamsError::NonPositiveRate { .. })
        ));
    }

    #[test]
    fn json_record_has_plain_field_names() {
        let p = make_params(base_raw()).unwrap();
        let v: serde_json::Value = serde_json::to_value(p).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["g", "gamma_a", "gamma_c", "gamma_wg", "omega_0", "omega_a", "omega_c", "v_g"]
        );
        let back: SystemParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);

        let bad = serde_json::json!({"omega_c": 1.0, "omega_a": 1.0, "g": 0.5, "gamma_wg": 0.0});
        assert!(serde_json::from_value::<SystemParams>(bad).is_err());
    }

    #[test]
    fn unit_tags_are_compared() {
        let p = make_params(base_raw()).unwrap();
        let q = rescale(&p, 2.0).unwrap();
        assert!(p.unit().ensure_same(&q.unit()).is_err());
        let back = rescale(&q, 0.5).unwrap();
        assert!(p.unit().ensure_same(&back.unit()).is_ok());
    }
}
