//! Pseudospectral laboratory for the two-dimensional stochastic Keller-Segel
//! equation
//!
//! ```text
//! dρ = (a²/2 Δρ − χ ∇·(ρ ∇c)) dt + noise,    −Δc = ρ,
//! ```
//!
//! on a periodic box standing in for the plane. Both noise regimes are
//! supported: transport noise `σ ∇ρ · dW` and multiplicative basis noise
//! `Φ(ρ) Σ α_k e_k dW_k`. Around the solver sit diagnostics (mass, second
//! moment, blowup detectors), exact scalar oracles for the moment equations,
//! an interacting-particle simulator and a Monte Carlo ensemble harness.

pub mod diagnostics;
pub mod domain;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod moments;
pub mod noise;
pub mod particles;
pub mod potential;
pub mod solver;
pub mod spectral;

pub use domain::{make_gaussian_field, mass, lp_norm, DomainSpec, Field, ModelParams, RngContext};
pub use error::{Error, Result};
