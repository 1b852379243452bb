//! Best-arm identification for stochastic linear bandits under a passive
//! observer ("copycat") who sees which vectors are played but never the
//! rewards.
//!
//! The crate contains:
//!
//! * [`instance`]: arm sets, hidden parameters, hardness analysis and JSON I/O.
//! * [`design`]: G-optimal designs (Frank-Wolfe on log det with a
//!   Kiefer-Wolfowitz certificate), support reduction and pull allocation.
//! * [`environment`]: the Gaussian reward oracle and the dual-view transcript.
//! * [`secure`]: the coded elimination algorithm (matching, coded play,
//!   decoding chains, correlated-noise ledger, reduced-dimension estimation).
//! * [`baselines`]: OD-LinBAI, single-round and per-entry estimation.
//! * [`attackers`]: copycat strategies over reward-free transcripts and
//!   empirical equivocation curves.
//! * [`harness`]: seeded Monte Carlo sweeps and error-exponent fitting.

pub mod attackers;
pub mod baselines;
pub mod design;
pub mod environment;
pub mod error;
pub mod harness;
pub mod instance;
pub mod linalg;
pub mod secure;
pub mod stream;

pub use error::{Error, Result};
pub use instance::{ArmId, Instance};
