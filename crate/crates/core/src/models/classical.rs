//! Identity-reset system, i.e. classical periodic averaging.
//!
//! `F = (1, ε(−x₂ + sin x₁ + x₂² cos x₁))` on `x₁ ∈ [0, 2π]` with the guard
//! `x₁ = 2π` and reset `(0, x₂)`. Averaging gives `f̄(x₂) = −x₂`; the sine
//! term moves the true fixed point by O(ε).

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::Result;
use crate::system::{HybridSystemDef, StateX};

pub fn make_classical_example() -> Result<HybridSystemDef> {
    HybridSystemDef::builder("classical", StateX::scalar(2.0 * PI, 0.0))
        .x1_bounds(-2.0 * PI, 4.0 * PI)
        .perturbation(|x, _eps| {
            let (s, y) = (x.x1, x.x2[0]);
            (0.0, DVector::from_element(1, -y + s.sin() + y * y * s.cos()))
        })
        .constant_phase_guard()
        .reset(|x, _eps| StateX::new(0.0, x.x2.clone()))
        .build()
}
