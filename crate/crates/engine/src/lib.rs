//! Stochastic pension-plan modeling engine.
//!
//! The library is organized around one modeling chain:
//!
//! * [`sde`] — closed-form machinery for scalar linear SDEs (solutions,
//!   moments, monthly/annual rescaling) and the calibrated constant set.
//! * [`estimation`] — drift/volatility surface estimation from panel data,
//!   per-slice polynomial fits, smoothing, and constant extraction.
//! * [`index`] — weighted-average diagnostics and the Fenton-Wilkinson
//!   single-SDE approximation of an n-stock index average.
//! * [`mc`] — Euler-Maruyama simulation engine; the independent oracle for
//!   every probability, survival curve, and mean first-passage time.
//! * [`fpe`] — implicit finite-difference solvers for the 2-D accumulation
//!   and 1-D consumption Fokker-Planck equations, with survival and
//!   first-passage extraction.
//! * [`pension`] — the domain layer: implied returns, IRR, pension-size and
//!   survival tables, life-table convolutions, and correlation diagnostics.
//!
//! All operations are deterministic for fixed inputs and seeds.

pub mod estimation;
pub mod fpe;
pub mod index;
pub mod mc;
pub mod pension;
pub mod sde;

pub use sde::CalibratedConstants;
