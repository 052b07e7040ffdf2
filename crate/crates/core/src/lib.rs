//! Simulation and analysis toolkit for NV-center vector magnetometry with an
//! azimuthally polarized (vortex) excitation beam.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`orient_fit`] recovers each NV axis from its confocal scan pattern,
//!    which [`pattern`] synthesizes from the focal field in [`focal_field`].
//! 2. [`spin`] fits the hyperfine-resolved ODMR spectrum of each NV and turns
//!    the two central lines into a field magnitude and a cone angle.
//! 3. [`vector_recon`] intersects the cones of three or more NVs to recover
//!    the field direction.

pub mod bessel;
pub mod crystal;
pub mod error;
pub mod focal_field;
pub mod io;
pub mod orient_fit;
pub mod pattern;
pub mod quadrature;
pub mod simplex;
pub mod spin;
pub mod vector_recon;

pub use error::{Error, ErrorKind, Result};
