//! Seeded Monte Carlo sweeps over algorithms and budgets, and exponent
//! fitting of the resulting error rates.

pub mod fit;
pub mod stats;
pub mod sweep;

pub use fit::{fit_exponent, ExponentFit};
pub use sweep::{monte_carlo, Shape, SweepConfig, SweepRow, SweepTable, WORKERS_ENV};
