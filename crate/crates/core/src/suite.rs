//! Property checks run against one registered system.

use nalgebra::{DMatrix, DVector};

use crate::averaging::{self, log_spaced};
use crate::error::Result;
use crate::flow::{self, JacobianMethod, SearchDirection};
use crate::settings::Settings;
use crate::stability::{self, Verdict};
use crate::system::{RegisteredSystem, StateX};

/// Relative tolerance for analytic vs finite-difference derivative pairs.
pub const DERIVATIVE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity compared against `tolerance`; NaN when the check errored.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    /// The check aborted with a numerical error instead of producing a value.
    pub errored: bool,
}

impl PropertyResult {
    fn at_most(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        Self { name, passed: value <= tolerance, value, tolerance, detail, errored: false }
    }

    fn at_least(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        Self { name, passed: value >= tolerance, value, tolerance, detail, errored: false }
    }

    fn from_error(name: &'static str, tolerance: f64, e: crate::Error) -> Self {
        Self { name, passed: false, value: f64::NAN, tolerance, detail: e.to_string(), errored: true }
    }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// ε values for derivative checks: 0.01, 0.1 and the operating ε, inside the validity range.
fn check_eps(sys: &RegisteredSystem, eps: f64) -> Vec<f64> {
    let mut out: Vec<f64> = [0.01, 0.1, eps]
        .into_iter()
        .filter(|e| *e > 0.0 && sys.eps_range.contains(*e))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn run(name: &'static str, tolerance: f64, f: impl FnOnce() -> Result<PropertyResult>) -> PropertyResult {
    f().unwrap_or_else(|e| PropertyResult::from_error(name, tolerance, e))
}

fn event_consistency(sys: &RegisteredSystem, eps_list: &[f64], s: &Settings) -> Result<PropertyResult> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &eps in eps_list {
        for x2 in sys.slow_samples() {
            let c = flow::flow_to_guard_directed(sys, &StateX::new(0.0, x2), eps, SearchDirection::Forward, s)?;
            worst = worst.max(sys.guard(&c.state_at_crossing, eps).abs());
            count += 1;
        }
    }
    Ok(PropertyResult::at_most("event_consistency", worst, s.tol_guard, format!("max |γ| at {count} located crossings")))
}

fn tau_gradient_fd(sys: &RegisteredSystem, x: &StateX, eps: f64, s: &Settings) -> Result<DVector<f64>> {
    let v = x.to_vector();
    let h = 1e-5 * v.norm().max(1.0);
    let mut out = DVector::zeros(v.len());
    for j in 0..v.len() {
        let mut p = v.clone();
        let mut m = v.clone();
        p[j] += h;
        m[j] -= h;
        let tp = flow::flow_to_guard(sys, &StateX::from_vector(&p), eps, s)?.tau;
        let tm = flow::flow_to_guard(sys, &StateX::from_vector(&m), eps, s)?.tau;
        out[j] = (tp - tm) / (2.0 * h);
    }
    Ok(out)
}

fn derivative_pairs(sys: &RegisteredSystem, eps_list: &[f64], s: &Settings) -> [PropertyResult; 4] {
    let reset = run("reset_jacobian_dual", DERIVATIVE_TOL, || {
        let mut worst: f64 = 0.0;
        for &eps in eps_list {
            let a = averaging::effective_reset_jacobian_analytic(sys, eps, s)?;
            let fd = averaging::effective_reset_jacobian_fd(sys, sys.x2_star(), eps, s)?;
            worst = worst.max(rel(&a, &fd));
        }
        Ok(PropertyResult::at_most("reset_jacobian_dual", worst, DERIVATIVE_TOL, "relative error of D R̄ at x₂*".into()))
    });
    let tau = run("time_to_event_gradient", DERIVATIVE_TOL, || {
        let mut worst: f64 = 0.0;
        for &eps in eps_list {
            let start = StateX::new(0.0, sys.x2_star().clone());
            let c = flow::flow_to_guard_directed(sys, &start, eps, SearchDirection::Forward, s)?;
            let g = flow::time_to_event_gradient(sys, &c.state_at_crossing, eps, s)?;
            let fd = tau_gradient_fd(sys, &c.state_at_crossing, eps, s)?;
            worst = worst.max((&g - &fd).norm() / fd.norm().max(f64::MIN_POSITIVE));
        }
        Ok(PropertyResult::at_most("time_to_event_gradient", worst, DERIVATIVE_TOL, "relative error of Dτ at the guard".into()))
    });
    let flow_j = run("flow_jacobian_dual", DERIVATIVE_TOL, || {
        let mut worst: f64 = 0.0;
        for &eps in eps_list {
            let start = StateX::new(0.0, sys.x2_star().clone());
            let t = flow::flow_to_guard_directed(sys, &start, eps, SearchDirection::Forward, s)?.tau;
            let var = flow::flow_jacobian(sys, &start, eps, t, JacobianMethod::Variational, s)?;
            let fd = flow::flow_jacobian(sys, &start, eps, t, JacobianMethod::FiniteDifference, s)?;
            worst = worst.max(rel(&var, &fd));
        }
        Ok(PropertyResult::at_most("flow_jacobian_dual", worst, DERIVATIVE_TOL, "variational vs finite-difference DΦ".into()))
    });
    let poincare = run("poincare_jacobian_dual", DERIVATIVE_TOL, || {
        let mut worst: f64 = 0.0;
        for &eps in eps_list {
            let j = stability::full_poincare_jacobian(sys, sys.x2_star(), eps, s)?;
            worst = worst.max(j.agreement() / j.direct.norm().max(f64::MIN_POSITIVE));
        }
        Ok(PropertyResult::at_most("poincare_jacobian_dual", worst, DERIVATIVE_TOL, "direct vs chain-rule DP".into()))
    });
    [reset, tau, flow_j, poincare]
}

fn flow_time_equivalence(sys: &RegisteredSystem, eps_list: &[f64], s: &Settings) -> Result<PropertyResult> {
    let mut worst: f64 = 0.0;
    for &eps in eps_list {
        for x2 in sys.slow_samples() {
            let a = stability::full_poincare_map(sys, &x2, eps, s)?;
            let b = stability::constant_flow_time_map(sys, &x2, eps, s)?;
            worst = worst.max((a - b).norm());
        }
    }
    Ok(PropertyResult::at_most(
        "flow_time_equivalence",
        worst,
        1e-7,
        "full return map vs constant-flow-time map".into(),
    ))
}

/// Run every property check on `sys`; `eps` is the operating ε of the model.
pub fn run_property_suite(sys: &RegisteredSystem, eps: f64, s: &Settings) -> Vec<PropertyResult> {
    let eps_list = check_eps(sys, eps);
    let mut out = Vec::new();

    let flags = sys.report.flags.len();
    out.push(PropertyResult {
        name: "registration",
        passed: true,
        value: flags as f64,
        tolerance: f64::INFINITY,
        detail: if flags == 0 { "all averageability checks hold".into() } else { sys.report.flags.join("; ") },
        errored: false,
    });

    out.push(run("event_consistency", s.tol_guard, || event_consistency(sys, &eps_list, s)));
    out.extend(derivative_pairs(sys, &eps_list, s));
    out.push(run("flow_time_equivalence", 1e-7, || flow_time_equivalence(sys, &eps_list, s)));

    let grid = averaging::default_eps_grid(sys);
    let expansion = averaging::extract_taylor_expansion(sys, &grid, &sys.slow_samples(), s);
    match &expansion {
        Ok(e) => {
            out.push(PropertyResult::at_least(
                "taylor_remainder_order",
                e.residual_order,
                2.0 - s.order_tol,
                format!("fit residual {:.3e}", e.fit_residual),
            ));
            out.push(PropertyResult::at_most(
                "s0_constancy",
                e.s0_constancy_defect,
                s.tol_s0_const,
                format!("over {} slow samples", e.x2_samples),
            ));
        }
        Err(e) => {
            out.push(PropertyResult::from_error("taylor_remainder_order", 2.0 - s.order_tol, e.clone()));
            out.push(PropertyResult::from_error("s0_constancy", s.tol_s0_const, e.clone()));
        }
    }

    let hi = (0.5f64).min(0.5 * sys.eps_range.hi);
    let sweep = stability::epsilon_sweep(sys, &log_spaced(hi / 50.0, hi, 8), s);
    match sweep {
        Ok(r) => {
            let failed = r.points.iter().filter(|p| p.failure.is_some()).count();
            out.push(PropertyResult::at_least(
                "eig_gap_order",
                r.fitted_gap_order.unwrap_or(f64::NAN),
                2.0 - s.order_tol,
                format!("{failed} of {} sweep points failed", r.points.len()),
            ));
            let worst_fp = r.points.iter().map(|p| p.fp_residual).fold(0.0, f64::max);
            out.push(PropertyResult::at_most(
                "fixed_point_residual",
                if failed > 0 { f64::NAN } else { worst_fp },
                s.newton_tol,
                "max ‖P(x) − x‖ over the sweep".into(),
            ));
            if let Ok(e) = &expansion {
                if let Ok(c) = stability::certify_orthogonal_reset(sys, e, s) {
                    let rho = r.points.iter().map(|p| p.spectral_radius).fold(0.0, f64::max);
                    let sound = c.verdict != Verdict::Stable || rho < 1.0;
                    out.push(PropertyResult {
                        name: "certificate_soundness",
                        passed: sound,
                        value: rho,
                        tolerance: 1.0,
                        detail: format!("verdict {}, max spectral radius over the sweep", c.verdict.as_str()),
                        errored: false,
                    });
                }
            }
        }
        Err(e) => {
            out.push(PropertyResult::from_error("eig_gap_order", 2.0 - s.order_tol, e.clone()));
            out.push(PropertyResult::from_error("fixed_point_residual", s.newton_tol, e));
        }
    }
    out
}
