//! Numerical toolkit for periodic Schroedinger operators `L = -Δ + V` on `R^d`.
//!
//! The crate computes Floquet-Bloch band structures (1D transfer matrices and a
//! plane-wave Galerkin solver), Fermi surfaces with their curvature, the
//! oscillatory integrals that show up in the limiting absorption principle,
//! and the resolvent kernels `K^ε`, `K^±`, `K*` built from them.

pub mod checks;
pub mod error;
pub mod fermi;
pub mod floquet;
pub mod hill1d;
pub mod oscillatory;
pub mod planewave;
pub mod quad;
pub mod resolvent;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Volume of the Brillouin zone `B = [-π, π]^d`.
pub fn zone_volume(d: usize) -> f64 {
    (2.0 * std::f64::consts::PI).powi(d as i32)
}

/// Fold a quasimomentum coordinate into `[-π, π)`.
pub fn wrap(kappa: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut k = kappa - two_pi * ((kappa + std::f64::consts::PI) / two_pi).floor();
    if k >= std::f64::consts::PI {
        k -= two_pi;
    }
    k
}

/// Split `κ = k + 2πs` with `k ∈ [-π, π)` and integer `s`.
pub fn split_label(kappa: f64) -> (f64, i64) {
    let k = wrap(kappa);
    let s = ((kappa - k) / (2.0 * std::f64::consts::PI)).round() as i64;
    (k, s)
}

/// Library version, recorded in CLI manifests and cache keys.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
