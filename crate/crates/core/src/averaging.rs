//! Averaged vector field, effective (constant-flow-time) reset, and the
//! ε-expansion `D R̄ = S₀ + ε S₁ + O(ε²)` of its Jacobian.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{self, JacobianMethod};
use crate::numerics;
use crate::ode::{self, OdeOptions};
use crate::settings::Settings;
use crate::system::{guard_gradient, HybridSystemDef, StateX};

/// `f̄(x₂) = (1/x₁*) ∫₀^{x₁*} F₂(σ, x₂)|_{ε=0} dσ`, with `F₂` taken per unit phase.
pub fn averaged_field(sys: &HybridSystemDef, x2: &DVector<f64>, settings: &Settings) -> Result<DVector<f64>> {
    sys.check_slow(x2)?;
    let x1_star = sys.x1_star();
    let rate = sys.phase_rate;
    let integral = numerics::adaptive_simpson(
        |s| Ok(sys.perturbation(&StateX::new(s, x2.clone()), 0.0).1 / rate),
        0.0,
        x1_star,
        settings.quad_tol * x1_star.abs().max(1.0),
        settings.quad_max_depth,
    )?;
    Ok(integral / x1_star)
}

/// `Df̄(x₂)`, differentiating the integrand by central differences before averaging.
pub fn averaged_field_jacobian(sys: &HybridSystemDef, x2: &DVector<f64>, settings: &Settings) -> Result<DMatrix<f64>> {
    sys.check_slow(x2)?;
    let n = sys.n;
    let x1_star = sys.x1_star();
    let rate = sys.phase_rate;
    let h = settings.fd_step_for(x2.norm());
    let integrand = |s: f64| {
        let j = numerics::central_jacobian(
            |v| Ok(sys.perturbation(&StateX::new(s, v.clone()), 0.0).1 / rate),
            x2,
            h,
        )?;
        Ok(DVector::from_column_slice(j.as_slice()))
    };
    let integral = numerics::adaptive_simpson(
        integrand,
        0.0,
        x1_star,
        settings.quad_tol * x1_star.abs().max(1.0),
        settings.quad_max_depth,
    )?;
    Ok(DMatrix::from_column_slice(n, n, integral.as_slice()) / x1_star)
}

/// `R̄(x₂) = π₂ R(Φ(τ(x₁*, x₂), (x₁*, x₂)))`; τ may be negative.
pub fn effective_reset(sys: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Result<DVector<f64>> {
    sys.check_slow(x2)?;
    sys.eps_range.check(eps)?;
    let start = StateX::new(sys.x1_star(), x2.clone());
    if sys.constant_flow_time {
        return Ok(sys.reset(&start, eps).x2);
    }
    let crossing = flow::flow_to_guard(sys, &start, eps, settings)?;
    Ok(sys.reset(&crossing.state_at_crossing, eps).x2)
}

/// Central-difference Jacobian of [`effective_reset`].
pub fn effective_reset_jacobian_fd(
    sys: &HybridSystemDef,
    x2: &DVector<f64>,
    eps: f64,
    settings: &Settings,
) -> Result<DMatrix<f64>> {
    let h = settings.fd_step_for(x2.norm());
    numerics::central_jacobian(|v| effective_reset(sys, v, eps, settings), x2, h)
}

/// Analytic Jacobian of the effective reset at the anchor:
///
/// `D R̄ = Dπ₂ (D₂R − (DR·F)(D₂γ) / (Dγ·F))`, with `DR`, `Dγ` by central
/// differences and `F` evaluated at the guard crossing of `(x₁*, x₂*)`.
pub fn effective_reset_jacobian_analytic(sys: &HybridSystemDef, eps: f64, settings: &Settings) -> Result<DMatrix<f64>> {
    effective_reset_jacobian_at(sys, sys.x2_star(), eps, settings)
}

/// Analytic route at a general slow state: the anchor formula composed with
/// the variational flow Jacobian over the (possibly negative) time to the guard.
pub fn effective_reset_jacobian_at(
    sys: &HybridSystemDef,
    x2: &DVector<f64>,
    eps: f64,
    settings: &Settings,
) -> Result<DMatrix<f64>> {
    sys.check_slow(x2)?;
    sys.eps_range.check(eps)?;
    let n = sys.n;
    let start = StateX::new(sys.x1_star(), x2.clone());
    let (crossing, dphi) = if sys.constant_flow_time {
        (start.clone(), DMatrix::identity(n + 1, n + 1))
    } else {
        let c = flow::flow_to_guard(sys, &start, eps, settings)?;
        let dphi = if c.tau == 0.0 {
            DMatrix::identity(n + 1, n + 1)
        } else {
            flow::flow_jacobian(sys, &start, eps, c.tau, JacobianMethod::Variational, settings)?
        };
        (c.state_at_crossing, dphi)
    };
    let xc = crossing.to_vector();
    let h = settings.fd_step_for(xc.norm());
    let dr = numerics::central_jacobian(|v| Ok(sys.reset(&StateX::from_vector(v), eps).to_vector()), &xc, h)?;
    let field = sys.velocity(&crossing, eps);
    let dg = guard_gradient(sys, &crossing, eps, h);
    let rate = dg.dot(&field);
    if rate.abs() <= settings.tol_transversal {
        return Err(Error::Tangency { transversality: rate });
    }
    // Projection along the flow onto the guard's tangent space.
    let proj = DMatrix::identity(n + 1, n + 1) - &field * dg.transpose() / rate;
    let full = dr * proj * dphi;
    Ok(full.view((1, 1), (n, n)).into_owned())
}

/// ε⁰ and ε¹ coefficients of the effective reset Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorResetExpansion {
    pub s0: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    /// ε² coefficient of the fit; absorbs curvature so S₁ is unbiased.
    pub s2: DMatrix<f64>,
    /// Fitted exponent of `‖D R̄(ε) − S₀ − εS₁‖`; infinite when the remainder
    /// is indistinguishable from numerical noise at every grid point.
    pub residual_order: f64,
    pub s0_constancy_defect: f64,
    /// RMS residual of the fit over the grid.
    pub fit_residual: f64,
    pub eps_grid: Vec<f64>,
    pub remainders: Vec<f64>,
    pub x2_samples: usize,
}

impl TaylorResetExpansion {
    pub fn jacobian_at(&self, eps: f64) -> DMatrix<f64> {
        &self.s0 + &self.s1 * eps
    }

    pub fn order_ok(&self, settings: &Settings) -> bool {
        self.residual_order >= 2.0 - settings.order_tol
    }

    pub fn s0_constant(&self, settings: &Settings) -> bool {
        self.s0_constancy_defect <= settings.tol_s0_const
    }
}

/// Eight log-spaced ε values in [1e−3, 1e−1], shrunk to fit the validity range.
pub fn default_eps_grid(sys: &HybridSystemDef) -> Vec<f64> {
    let top = (0.1_f64).min(0.5 * sys.eps_range.hi).max(sys.eps_range.lo);
    let bottom = top * 1e-2;
    log_spaced(bottom.max(sys.eps_range.lo.max(f64::MIN_POSITIVE)), top, 8)
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

fn validate_grid(sys: &HybridSystemDef, eps_grid: &[f64]) -> Result<()> {
    if eps_grid.len() < 4 {
        return Err(Error::InvalidParams("ε grid needs at least 4 values".into()));
    }
    for &e in eps_grid {
        sys.eps_range.check(e)?;
        if e <= 0.0 {
            return Err(Error::InvalidParams("ε grid values must be positive".into()));
        }
    }
    let lo = eps_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eps_grid.iter().copied().fold(0.0, f64::max);
    if hi < 10.0 * lo * (1.0 - 1e-12) {
        return Err(Error::InvalidParams("ε grid must span at least one decade".into()));
    }
    Ok(())
}

fn fit_expansion(eps_grid: &[f64], jacobians: &[DMatrix<f64>], n: usize) -> Result<(DMatrix<f64>, f64)> {
    let y = DMatrix::from_fn(eps_grid.len(), n * n, |i, j| jacobians[i].as_slice()[j]);
    numerics::polynomial_fit(eps_grid, &y, 2)
}

fn coefficient(coef: &DMatrix<f64>, power: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, coef.row(power).transpose().as_slice())
}

/// Fit `D R̄(x₂*, ε)` over `eps_grid` and measure how far S₀ moves across `x2_samples`.
pub fn extract_taylor_expansion(
    sys: &HybridSystemDef,
    eps_grid: &[f64],
    x2_samples: &[DVector<f64>],
    settings: &Settings,
) -> Result<TaylorResetExpansion> {
    validate_grid(sys, eps_grid)?;
    let n = sys.n;
    let anchor = sys.x2_star();
    let jacobians = eps_grid
        .iter()
        .map(|&e| effective_reset_jacobian_fd(sys, anchor, e, settings))
        .collect::<Result<Vec<_>>>()?;
    let (coef, fit_residual) = fit_expansion(eps_grid, &jacobians, n)?;
    let s0 = coefficient(&coef, 0, n);
    let s1 = coefficient(&coef, 1, n);
    let s2 = coefficient(&coef, 2, n);

    let remainders: Vec<f64> = eps_grid
        .iter()
        .zip(&jacobians)
        .map(|(&e, j)| (j - &s0 - &s1 * e).norm())
        .collect();
    let floor = settings.noise_floor.max(10.0 * fit_residual);
    let residual_order = numerics::loglog_order(eps_grid, &remainders, floor).unwrap_or(f64::INFINITY);

    let mut s0_constancy_defect: f64 = 0.0;
    for x2 in x2_samples {
        if x2 == anchor {
            continue;
        }
        let js = eps_grid
            .iter()
            .map(|&e| effective_reset_jacobian_fd(sys, x2, e, settings))
            .collect::<Result<Vec<_>>>()?;
        let (c, _) = fit_expansion(eps_grid, &js, n)?;
        s0_constancy_defect = s0_constancy_defect.max((coefficient(&c, 0, n) - &s0).norm());
    }

    if fit_residual > settings.fit_tol {
        return Err(Error::PoorFit { residual: fit_residual, residual_order });
    }
    Ok(TaylorResetExpansion {
        s0,
        s1,
        s2,
        residual_order,
        s0_constancy_defect,
        fit_residual,
        eps_grid: eps_grid.to_vec(),
        remainders,
        x2_samples: x2_samples.len(),
    })
}

/// Both first-order forms of the averaged return-map linearization at x₂*.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedJacobian {
    /// `(S₀ + εS₁)(I + ε x₁* Df̄(x₂*))`
    pub product_form: DMatrix<f64>,
    /// `S₀ + ε(S₁ + x₁* S₀ Df̄(x₂*))`
    pub expanded_form: DMatrix<f64>,
    pub dfbar: DMatrix<f64>,
}

pub fn averaged_poincare_jacobian(
    sys: &HybridSystemDef,
    eps: f64,
    expansion: &TaylorResetExpansion,
    settings: &Settings,
) -> Result<AveragedJacobian> {
    sys.eps_range.check(eps)?;
    let n = sys.n;
    let x1_star = sys.x1_star();
    let dfbar = averaged_field_jacobian(sys, sys.x2_star(), settings)?;
    let identity = DMatrix::<f64>::identity(n, n);
    let product_form = expansion.jacobian_at(eps) * (&identity + &dfbar * (eps * x1_star));
    let expanded_form = &expansion.s0 + (&expansion.s1 + &expansion.s0 * &dfbar * x1_star) * eps;
    Ok(AveragedJacobian { product_form, expanded_form, dfbar })
}

/// Flow of the averaged system `dx₂/dφ = ε f̄(x₂)` over `phase_span` phase units.
pub fn averaged_flow(
    sys: &HybridSystemDef,
    x2: &DVector<f64>,
    eps: f64,
    phase_span: f64,
    settings: &Settings,
) -> Result<DVector<f64>> {
    sys.check_slow(x2)?;
    if eps == 0.0 || phase_span == 0.0 {
        return Ok(x2.clone());
    }
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let rhs = |y: &DVector<f64>| match averaged_field(sys, y, settings) {
        Ok(f) => f * eps,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            DVector::from_element(y.len(), f64::NAN)
        }
    };
    let result = ode::integrate_to(&rhs, x2, 0.0, phase_span, OdeOptions::from_settings(settings));
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    result
}

/// Averaged return map `R̄ ∘ Q̄`: one period of the averaged flow, then the effective reset.
pub fn averaged_poincare_map(sys: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Result<DVector<f64>> {
    let advanced = averaged_flow(sys, x2, eps, sys.x1_star(), settings)?;
    effective_reset(sys, &advanced, eps, settings)
}

/// The averaged hybrid model at `(stride, phase)` samples: `stride` applications
/// of [`averaged_poincare_map`] from `x2`, then `phase` units of averaged flow.
/// Samples must be ordered by stride; phases within a stride may be in any order.
pub fn averaged_hybrid_samples(
    sys: &HybridSystemDef,
    x2: &DVector<f64>,
    eps: f64,
    samples: &[(usize, f64)],
    settings: &Settings,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut stride = 0;
    let mut start = x2.clone();
    let mut last = (0.0, x2.clone());
    for &(k, phase) in samples {
        if k < stride {
            return Err(Error::InvalidParams("averaged samples must be ordered by stride".into()));
        }
        while stride < k {
            start = averaged_poincare_map(sys, &start, eps, settings)?;
            stride += 1;
            last = (0.0, start.clone());
        }
        let state = if phase >= last.0 {
            averaged_flow(sys, &last.1, eps, phase - last.0, settings)?
        } else {
            averaged_flow(sys, &start, eps, phase, settings)?
        };
        last = (phase, state.clone());
        out.push(state);
    }
    Ok(out)
}
