//! Hybrid averaging for single-mode hybrid systems.
//!
//! A system flows along `F = rate·e₁ + ε(F₁, F₂)` until its guard is crossed,
//! then jumps through a reset. The crate builds the averaged approximant of
//! the slow dynamics, expands the effective reset Jacobian in ε, certifies
//! limit-cycle stability for orthogonal resets, and compares full and averaged
//! return maps across ε.

pub mod averaging;
pub mod error;
pub mod flow;
pub mod models;
pub mod numerics;
pub mod ode;
pub mod report;
pub mod settings;
pub mod stability;
pub mod suite;
pub mod system;

pub use error::{Error, Result};
pub use settings::Settings;
pub use system::{register_system, CrossingDirection, HybridSystemDef, Interval, StateX, SystemHandle};
