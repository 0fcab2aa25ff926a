#![allow(dead_code)]

use hybrid_averager::models::{make_classical_example, make_nonhyperbolic_example, make_vertical_hopper, HopperParams};
use hybrid_averager::{register_system, HybridSystemDef, Settings, StateX, SystemHandle};
use nalgebra::DVector;

pub fn settings() -> Settings {
    Settings::default()
}

pub fn hopper() -> SystemHandle {
    register_system(make_vertical_hopper(HopperParams::default()).unwrap(), &settings()).unwrap()
}

pub fn nonhyperbolic() -> SystemHandle {
    register_system(make_nonhyperbolic_example(1.0).unwrap(), &settings()).unwrap()
}

pub fn classical() -> SystemHandle {
    register_system(make_classical_example().unwrap(), &settings()).unwrap()
}

pub fn all_models() -> Vec<SystemHandle> {
    vec![hopper(), nonhyperbolic(), classical()]
}

/// Constant-phase system with `F₂ ≡ 0` and reset `(0, scale·x₂)` about the origin.
pub fn scaled_reset(x1_star: f64, scale: f64) -> HybridSystemDef {
    HybridSystemDef::builder("scaled", StateX::scalar(x1_star, 0.0))
        .perturbation(|_, _| (0.0, DVector::zeros(1)))
        .constant_phase_guard()
        .reset(move |x, _| StateX::scalar(0.0, scale * x.x2[0]))
        .build()
        .unwrap()
}

pub fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
