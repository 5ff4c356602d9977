//! Quantum secure imaging toolkit: a decoy-state BB84 source driving a
//! computational ghost imaging system, with an intercept-resend eavesdropper
//! model and the analytical QBER bound that exposes it.
//!
//! The crate is organized around the data flow of the scheme:
//!
//! - [`decoy`]: closed-form decoy-state math, from Poisson statistics and
//!   yields to gains and the QBER security threshold.
//! - [`attack`]: the eavesdropper's minimum-error statistics for filtered
//!   square-root measurements on the four phase states.
//! - [`sim`]: seeded Monte Carlo engine for decoy-state BB84 sessions with
//!   an optional intercept-resend attacker.
//! - [`cgi`]: pattern generation, bucket counts, correlation reconstruction,
//!   and SNR measurement for the single-pixel imaging side.
//! - [`security`]: turns observables into a secure/compromised verdict and a
//!   secret key rate estimate.
//! - [`config`]: flat key=value run configuration shared by the CLI.
//! - [`image_io`]: PGM and plain-text grid formats for objects and images.

pub mod attack;
pub mod cgi;
pub mod config;
pub mod decoy;
pub mod image_io;
pub mod security;
pub mod sim;
