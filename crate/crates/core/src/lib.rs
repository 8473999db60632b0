//! Single-photon transport through a waveguide side-coupled to a cavity that
//! contains a two-level atom.

pub mod analytic;
pub mod fitting;
pub mod params;
pub mod reservoir;
pub mod spectrum;
pub mod timedomain;

pub use analytic::{scatter, ScatteringSolution};
pub use params::{make_params, rescale, RawParams, SystemParams};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/parameters.md")]
    mod parameters {}
    #[doc = include_str!("../../../book/src/scattering.md")]
    mod scattering {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/wave-packets.md")]
    mod wave_packets {}
    #[doc = include_str!("../../../book/src/reservoir.md")]
    mod reservoir {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
