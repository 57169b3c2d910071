//! Numerical laboratory for Fourier extension operators of compactly
//! supported measures.
//!
//! A measure is discretized into weighted atoms ([`measure`]), densities are
//! extended to fields on a spacetime grid ([`extension`]), and the operator
//! norm `L²(dµ) → L^p` is estimated by a monotone nonlinear power iteration
//! with recentering ([`maximize`]). [`diagnostics`] turns the
//! concentration-compactness bookkeeping into runtime checks and [`cli`]
//! drives the experiments.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod extension;
pub mod maximize;
pub mod measure;
pub mod sum;

pub use error::{LabError, Result};
pub use extension::{
    extend, extend_at, extend_fft, lp_norm, restrict_adjoint, translate_modulate, ExtensionOperator, Field,
    SpaceGrid,
};
pub use measure::{build_custom, build_family, parabolic_rescale, resample, Atom, Density, DiscreteMeasure, Family};
pub use maximize::{maximize_linf, ratio, solve, Init, RunConfig, SolverRun};
