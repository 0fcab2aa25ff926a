//! Counterexample where the averaged fixed point is not hyperbolic.
//!
//! `F = (1, −εx₂)`, guard `x₁ = x₁*`, reset `(0, x₂ + εx₁*x₂)`. The reset
//! slope `1 + εx₁*` exactly cancels the first-order contraction of the flow,
//! so `W = 0` and the first-order test says nothing. The full return map has
//! slope `(1 + εx₁*)e^{−εx₁*} = 1 − ε²x₁*²/2 + O(ε³)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::system::{HybridSystemDef, StateX};

pub fn make_nonhyperbolic_example(x1_star: f64) -> Result<HybridSystemDef> {
    if !(x1_star > 0.0 && x1_star.is_finite()) {
        return Err(Error::InvalidParams(format!("x1_star must be positive, got {x1_star}")));
    }
    HybridSystemDef::builder("nonhyperbolic", StateX::scalar(x1_star, 0.0))
        .x1_bounds(-x1_star, 3.0 * x1_star)
        .perturbation(|x, _eps| (0.0, DVector::from_element(1, -x.x2[0])))
        .constant_phase_guard()
        .reset(move |x, eps| StateX::scalar(0.0, x.x2[0] * (1.0 + eps * x1_star)))
        .build()
}

/// Slope of the full return map at the origin.
pub fn full_map_slope(x1_star: f64, eps: f64) -> f64 {
    (1.0 + eps * x1_star) * (-eps * x1_star).exp()
}
