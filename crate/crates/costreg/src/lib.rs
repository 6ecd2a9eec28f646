//! Run artifacts, experiment sweeps, plots, and the `costreg` CLI around the
//! `costreg-core` training loop.
//!
//! A run directory looks like:
//!
//! ```text
//! out/
//!   config.resolved      # full key=value snapshot of the run
//!   metrics.csv          # one row per completed episode
//!   rho_per_dim.csv      # per-dimension scaling means (multi-dim actions)
//!   trace.csv            # acting-time debug trace (when trace=true)
//!   checkpoints/step_N   # binary checkpoint containers
//! ```

pub mod artifact;
pub mod config;
pub mod format;
pub mod plot;
pub mod sweep;
