//! Sweeps, presets, CSV output and the truncated Fock-space oracle for the
//! nanorotor model, plus the configuration layer of the `nanorotor` CLI.

pub mod cli;
pub mod config;
mod lapack;
pub mod oracle;
pub mod sweep;
