use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared by every engine.
///
/// The record is plain data so it can be threaded through concurrent
/// computations and reproduced from a settings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub tol_guard: f64,
    pub tol_reset: f64,
    pub tol_transversal: f64,
    pub tol_orth: f64,
    pub order_tol: f64,
    pub margin: f64,

    /// Relative and absolute local error targets of the Runge–Kutta integrator.
    pub ode_rtol: f64,
    pub ode_atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Bracket width (in time) at which event bisection hands over to Newton polishing.
    pub tol_event_time: f64,
    /// Overrides the per-system default of 10·x₁* (phase units) when set.
    pub max_event_time: Option<f64>,

    /// Central-difference step; `None` selects cbrt(machine ε)·max(1, ‖x‖).
    pub fd_step: Option<f64>,

    pub quad_tol: f64,
    pub quad_max_depth: u32,

    pub fit_tol: f64,
    pub tol_s0_const: f64,
    /// Remainders below this magnitude are treated as numerical noise in order fits.
    pub noise_floor: f64,

    pub cond_max: f64,
    pub newton_tol: f64,
    pub newton_iters: usize,
    pub newton_halvings: usize,
    pub jordan_tol: f64,
    /// A fixed point counts as hyperbolic to order ε when σ_min(DP − I) ≥ this · ε.
    pub hyperbolic_frac: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol_guard: 1e-10,
            tol_reset: 1e-9,
            tol_transversal: 1e-8,
            tol_orth: 1e-8,
            order_tol: 0.25,
            margin: 1e-6,
            ode_rtol: 1e-12,
            ode_atol: 1e-14,
            min_step: 1e-14,
            max_steps: 200_000,
            tol_event_time: 1e-9,
            max_event_time: None,
            fd_step: None,
            quad_tol: 1e-10,
            quad_max_depth: 40,
            fit_tol: 1e-6,
            tol_s0_const: 1e-6,
            noise_floor: 1e-9,
            cond_max: 1e8,
            newton_tol: 1e-10,
            newton_iters: 50,
            newton_halvings: 20,
            jordan_tol: 1e-6,
            hyperbolic_frac: 0.1,
        }
    }
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let settings: Settings = toml::from_str(text).map_err(|e| Error::Settings(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_guard", self.tol_guard),
            ("tol_reset", self.tol_reset),
            ("tol_transversal", self.tol_transversal),
            ("tol_orth", self.tol_orth),
            ("ode_rtol", self.ode_rtol),
            ("ode_atol", self.ode_atol),
            ("min_step", self.min_step),
            ("tol_event_time", self.tol_event_time),
            ("quad_tol", self.quad_tol),
            ("fit_tol", self.fit_tol),
            ("newton_tol", self.newton_tol),
            ("cond_max", self.cond_max),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Settings(format!("{name} must be positive and finite")));
            }
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0) {
                return Err(Error::Settings("fd_step must be positive".into()));
            }
        }
        if self.order_tol < 0.0 || self.margin < 0.0 {
            return Err(Error::Settings("order_tol and margin must be non-negative".into()));
        }
        Ok(())
    }

    /// Finite-difference step for a point of the given Euclidean norm.
    pub fn fd_step_for(&self, norm: f64) -> f64 {
        self.fd_step
            .unwrap_or_else(|| f64::EPSILON.cbrt() * norm.max(1.0))
    }
}
