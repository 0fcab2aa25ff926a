//! Browser bindings: each export takes a model name and a JSON object of
//! parameter overrides and returns a JSON string.

use std::collections::BTreeMap;

use hybrid_averager::averaging::{self, log_spaced};
use hybrid_averager::models::hopper;
use hybrid_averager::models::Model;
use hybrid_averager::stability;
use hybrid_averager::{flow, register_system, Settings, SystemHandle};
use nalgebra::DVector;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn finite(v: f64) -> Value {
    if v.is_finite() { json!(v) } else { Value::Null }
}

fn finite_vec(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| finite(*x)).collect())
}

fn load(model: &str, params: &str) -> Result<(Model, SystemHandle, Settings), String> {
    let mut m = Model::by_name(model).map_err(|e| e.to_string())?;
    if !params.trim().is_empty() {
        let overrides: BTreeMap<String, f64> = serde_json::from_str(params).map_err(|e| format!("params: {e}"))?;
        for (k, v) in overrides {
            m.set(&k, v).map_err(|e| e.to_string())?;
        }
    }
    let settings = Settings::default();
    let sys = m.system().and_then(|d| register_system(d, &settings)).map_err(|e| e.to_string())?;
    Ok((m, sys, settings))
}

/// Hybrid and averaged slow state along a run of `strides` strides.
pub fn simulate_json(model: &str, params: &str, a_init: f64, strides: usize) -> Result<String, String> {
    let (m, sys, s) = load(model, params)?;
    let eps = m.eps();
    let x0 = DVector::from_element(sys.n, a_init);
    let (t, a, keys) = match &m {
        Model::Hopper(p) => {
            let traj = hopper::simulate_physical_hopper(*p, a_init, strides, &s).map_err(|e| e.to_string())?;
            let keys = hopper::averaging_samples(&traj);
            (traj.times, traj.a, keys)
        }
        _ => {
            let run = flow::simulate_hybrid(&sys, &x0, eps, strides, 40, &s).map_err(|e| e.to_string())?;
            let keys = run.stride.iter().zip(&run.states).map(|(&k, x)| (k, x.x1.max(0.0))).collect();
            (run.times, run.states.iter().map(|x| x.x2[0]).collect(), keys)
        }
    };
    let avg: Vec<f64> = averaging::averaged_hybrid_samples(&sys, &x0, eps, &keys, &s)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|v| v[0])
        .collect();
    Ok(json!({
        "model": m.name(),
        "t": finite_vec(&t),
        "a": finite_vec(&a),
        "a_averaged": finite_vec(&avg),
        "x2_star": sys.x2_star()[0],
    })
    .to_string())
}

/// First-order stability certificate at x₂*.
pub fn certify_json(model: &str, params: &str) -> Result<String, String> {
    let (m, sys, s) = load(model, params)?;
    let e = averaging::extract_taylor_expansion(&sys, &averaging::default_eps_grid(&sys), &sys.slow_samples(), &s)
        .map_err(|e| e.to_string())?;
    let c = stability::certify_orthogonal_reset(&sys, &e, &s).map_err(|e| e.to_string())?;
    Ok(json!({
        "model": m.name(),
        "verdict": c.verdict.as_str(),
        "verdict_expanded": c.verdict_expanded.as_str(),
        "w": finite_vec(c.w.as_slice()),
        "w_expanded": finite_vec(c.w_expanded.as_slice()),
        "s0": finite_vec(c.s0.as_slice()),
        "s1": finite_vec(c.s1.as_slice()),
        "dfbar": finite_vec(c.dfbar.as_slice()),
        "symmetric_part_eigs": finite_vec(&c.symmetric_part_eigs),
        "flags": sys.report.flags,
    })
    .to_string())
}

/// ε-sweep of the eigenvalue gap and fixed-point drift.
pub fn sweep_json(model: &str, params: &str, eps_min: f64, eps_max: f64, points: usize) -> Result<String, String> {
    let (m, sys, s) = load(model, params)?;
    if !(eps_min > 0.0 && eps_max > eps_min) {
        return Err("need 0 < eps_min < eps_max".into());
    }
    let r = stability::epsilon_sweep(&sys, &log_spaced(eps_min, eps_max, points), &s).map_err(|e| e.to_string())?;
    Ok(json!({
        "model": m.name(),
        "eps": finite_vec(&r.eps_values),
        "eig_gap": finite_vec(&r.eig_gaps),
        "drift": finite_vec(&r.fixed_point_drifts),
        "gap_order": r.fitted_gap_order.map(finite).unwrap_or(Value::Null),
        "drift_order": finite(r.fitted_drift_order),
        "drift_below_resolution": r.drift_below_resolution,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn simulate(model: &str, params: &str, a_init: f64, strides: usize) -> Result<String, JsValue> {
    simulate_json(model, params, a_init, strides).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn certify(model: &str, params: &str) -> Result<String, JsValue> {
    certify_json(model, params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sweep(model: &str, params: &str, eps_min: f64, eps_max: f64, points: usize) -> Result<String, JsValue> {
    sweep_json(model, params, eps_min, eps_max, points).map_err(|e| JsValue::from_str(&e))
}
