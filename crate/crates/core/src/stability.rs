//! Return maps, their fixed points and linearizations, the orthogonal-reset
//! stability certificate, and the ε-sweep that measures how closely the
//! averaged linearization tracks the full one.

use nalgebra::{DMatrix, DVector};

use crate::averaging::{self, TaylorResetExpansion};
use crate::error::{Error, Result};
use crate::flow::{self, JacobianMethod, SearchDirection};
use crate::numerics;
use crate::settings::Settings;
use crate::system::{unity_jordan_blocks_diagonal, HybridSystemDef, StateX};

/// One stride from the post-reset section: flow `(0, x₂)` forward to the
/// guard, reset, and keep the slow coordinates.
pub fn full_poincare_map(sys: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Result<DVector<f64>> {
    sys.check_slow(x2)?;
    let start = StateX::new(0.0, x2.clone());
    let crossing = flow::flow_to_guard_directed(sys, &start, eps, SearchDirection::Forward, settings)?;
    Ok(sys.reset(&crossing.state_at_crossing, eps).x2)
}

/// The same stride taken through the constant-flow-time system: flow to the
/// section `x₁ = x₁*`, then apply the effective reset.
pub fn constant_flow_time_map(sys: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Result<DVector<f64>> {
    sys.check_slow(x2)?;
    let start = StateX::new(0.0, x2.clone());
    let at_section = flow::flow_to_section(sys, &start, eps, sys.x1_star(), settings)?;
    averaging::effective_reset(sys, &at_section.state_at_crossing.x2, eps, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x: DVector<f64>,
    /// ‖P(x) − x‖
    pub residual: f64,
    pub iterations: usize,
    /// Condition number and smallest singular value of D(P − I) at `x`.
    pub condition: f64,
    pub sigma_min: f64,
}

/// Damped Newton iteration on `P(x) − x` with a finite-difference Jacobian.
pub fn find_fixed_point<M>(map: M, guess: &DVector<f64>, settings: &Settings) -> Result<FixedPoint>
where
    M: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    find_fixed_point_with_floor(map, guess, settings, 0.0)
}

/// As [`find_fixed_point`], additionally rejecting roots where the smallest
/// singular value of `D(P − I)` falls below `sigma_floor`.
pub fn find_fixed_point_with_floor<M>(
    map: M,
    guess: &DVector<f64>,
    settings: &Settings,
    sigma_floor: f64,
) -> Result<FixedPoint>
where
    M: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let residual_map = |x: &DVector<f64>| -> Result<DVector<f64>> { Ok(map(x)? - x) };
    let jacobian = |x: &DVector<f64>| numerics::central_jacobian(residual_map, x, settings.fd_step_for(x.norm()));

    let mut x = guess.clone();
    let mut g = residual_map(&x)?;
    let mut iterations = 0;
    while g.norm() > settings.newton_tol {
        if iterations >= settings.newton_iters {
            return Err(Error::NoConvergence { iterations, residual: g.norm() });
        }
        iterations += 1;
        let j = jacobian(&x)?;
        let sv = numerics::singular_values(&j);
        let sigma_min = sv.last().copied().unwrap_or(0.0);
        let condition = numerics::condition_number(&j);
        if condition > settings.cond_max || sigma_min == 0.0 {
            return Err(Error::SingularJacobian { condition, sigma_min });
        }
        let step = j
            .clone()
            .lu()
            .solve(&(-&g))
            .ok_or(Error::SingularJacobian { condition, sigma_min })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.newton_halvings {
            let candidate = &x + &step * scale;
            if let Ok(gc) = residual_map(&candidate) {
                if gc.norm() < g.norm() {
                    x = candidate;
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { iterations, residual: g.norm() });
        }
    }
    let j = jacobian(&x)?;
    let sigma_min = numerics::singular_values(&j).last().copied().unwrap_or(0.0);
    let condition = numerics::condition_number(&j);
    if sigma_min < sigma_floor || sigma_min == 0.0 || condition > settings.cond_max {
        return Err(Error::SingularJacobian { condition, sigma_min });
    }
    Ok(FixedPoint { x, residual: g.norm(), iterations, condition, sigma_min })
}

/// Fixed point of the full return map, required to be hyperbolic to order ε:
/// σ_min(DP − I) ≥ hyperbolic_frac · ε.
pub fn find_full_fixed_point(sys: &HybridSystemDef, guess: &DVector<f64>, eps: f64, settings: &Settings) -> Result<FixedPoint> {
    find_fixed_point_with_floor(
        |x| full_poincare_map(sys, x, eps, settings),
        guess,
        settings,
        settings.hyperbolic_frac * eps,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareJacobian {
    /// Central differences of the full return map.
    pub direct: DMatrix<f64>,
    /// `D R̄(Q(x₂)) · D Q(x₂)` with `Q` the flow to the section `x₁ = x₁*`.
    pub chain_rule: DMatrix<f64>,
}

impl PoincareJacobian {
    pub fn agreement(&self) -> f64 {
        (&self.direct - &self.chain_rule).norm()
    }
}

pub fn full_poincare_jacobian(sys: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Result<PoincareJacobian> {
    let h = settings.fd_step_for(x2.norm());
    let direct = numerics::central_jacobian(|v| full_poincare_map(sys, v, eps, settings), x2, h)?;

    let n = sys.n;
    let start = StateX::new(0.0, x2.clone());
    let section = flow::flow_to_section(sys, &start, eps, sys.x1_star(), settings)?;
    let dphi = flow::flow_jacobian(sys, &start, eps, section.tau, JacobianMethod::Variational, settings)?;
    let field = sys.velocity(&section.state_at_crossing, eps);
    let mut e1 = DVector::zeros(n + 1);
    e1[0] = 1.0;
    let proj = DMatrix::identity(n + 1, n + 1) - &field * e1.transpose() / field[0];
    let dq = (proj * dphi).view((1, 1), (n, n)).into_owned();
    let dr = averaging::effective_reset_jacobian_at(sys, &section.state_at_crossing.x2, eps, settings)?;
    Ok(PoincareJacobian { direct, chain_rule: dr * dq })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    UnstableOrInconclusive,
    NotOrthogonal,
    DegenerateW,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::UnstableOrInconclusive => "unstable_or_inconclusive",
            Verdict::NotOrthogonal => "not_orthogonal",
            Verdict::DegenerateW => "degenerate_W",
        }
    }
}

/// Which algebraic form of W a verdict was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WForm {
    /// `S₀·S₁ + x₁*·Df̄`
    ResetFirst,
    /// `S₁ + x₁*·S₀·Df̄`, the ε-coefficient of the averaged return map.
    Expanded,
}

impl WForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            WForm::ResetFirst => "S0*S1 + x1*Dfbar",
            WForm::Expanded => "S1 + x1*S0*Dfbar",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub s0: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub dfbar: DMatrix<f64>,
    /// W in the form the verdict uses (`form`).
    pub w: DMatrix<f64>,
    pub form: WForm,
    pub w_expanded: DMatrix<f64>,
    /// Eigenvalues of W + Wᵀ, ascending.
    pub symmetric_part_eigs: Vec<f64>,
    pub symmetric_part_eigs_expanded: Vec<f64>,
    /// ‖S₀ᵀS₀ − I‖ (Frobenius).
    pub s0_orthogonality_defect: f64,
    pub w_sigma_min: f64,
    pub unity_blocks_diagonal: bool,
    pub verdict: Verdict,
    pub verdict_expanded: Verdict,
    /// The two W forms differ (possible only when S₀ ≠ I).
    pub forms_disagree: bool,
}

fn verdict_for(w: &DMatrix<f64>, eigs: &[f64], orth_defect: f64, settings: &Settings) -> (Verdict, f64) {
    let sigma_min = numerics::singular_values(w).last().copied().unwrap_or(0.0);
    let max_eig = eigs.last().copied().unwrap_or(f64::NAN);
    let verdict = if orth_defect > settings.tol_orth {
        Verdict::NotOrthogonal
    } else if sigma_min <= settings.margin {
        Verdict::DegenerateW
    } else if max_eig < -settings.margin {
        Verdict::Stable
    } else {
        Verdict::UnstableOrInconclusive
    };
    (verdict, sigma_min)
}

/// First-order stability certificate for systems whose reset is orthogonal at ε = 0.
pub fn certify_orthogonal_reset(
    sys: &HybridSystemDef,
    expansion: &TaylorResetExpansion,
    settings: &Settings,
) -> Result<StabilityCertificate> {
    let n = sys.n;
    let x1_star = sys.x1_star();
    let dfbar = averaging::averaged_field_jacobian(sys, sys.x2_star(), settings)?;
    let s0 = expansion.s0.clone();
    let s1 = expansion.s1.clone();
    let identity = DMatrix::<f64>::identity(n, n);
    let s0_orthogonality_defect = (s0.transpose() * &s0 - &identity).norm();

    let w = &s0 * &s1 + &dfbar * x1_star;
    let w_expanded = &s1 + &s0 * &dfbar * x1_star;
    let symmetric_part_eigs = numerics::symmetric_part_eigenvalues(&w);
    let symmetric_part_eigs_expanded = numerics::symmetric_part_eigenvalues(&w_expanded);
    let (verdict, w_sigma_min) = verdict_for(&w, &symmetric_part_eigs, s0_orthogonality_defect, settings);
    let (verdict_expanded, _) = verdict_for(&w_expanded, &symmetric_part_eigs_expanded, s0_orthogonality_defect, settings);
    let forms_disagree = (&w - &w_expanded).norm() > settings.margin;

    Ok(StabilityCertificate {
        s0: s0.clone(),
        s1,
        dfbar,
        w,
        form: WForm::ResetFirst,
        w_expanded,
        symmetric_part_eigs,
        symmetric_part_eigs_expanded,
        s0_orthogonality_defect,
        w_sigma_min,
        unity_blocks_diagonal: unity_jordan_blocks_diagonal(&s0, settings.jordan_tol),
        verdict,
        verdict_expanded,
        forms_disagree,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub eps: f64,
    pub fixed_point: Option<DVector<f64>>,
    pub eig_gap: f64,
    pub drift: f64,
    /// Drift magnitudes below this are not resolved by the Newton tolerance.
    pub drift_resolution: f64,
    pub fp_residual: f64,
    pub spectral_radius: f64,
    /// σ_min(DP − I) / ε
    pub hyperbolicity: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub eps_values: Vec<f64>,
    pub eig_gaps: Vec<f64>,
    pub fixed_point_drifts: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub fitted_gap_order: Option<f64>,
    /// Infinite when every drift is below its Newton resolution (the fixed
    /// point does not move measurably from x₂*).
    pub fitted_drift_order: f64,
    pub drift_below_resolution: bool,
    /// max |Δρ| / Δε over consecutive converged points.
    pub continuation_constant: f64,
    /// Some point has σ_min(DP − I) < hyperbolic_frac·ε.
    pub non_hyperbolic: bool,
    /// Largest ε up to which gaps stay within a factor 2 of C·ε² (C from the smallest ε).
    pub quadratic_model_valid_to: Option<f64>,
    pub expansion: TaylorResetExpansion,
}

impl SweepReport {
    pub fn gap_order_ok(&self, settings: &Settings) -> bool {
        self.fitted_gap_order.is_some_and(|o| o >= 2.0 - settings.order_tol)
    }

    pub fn drift_order_ok(&self, settings: &Settings) -> bool {
        self.fitted_drift_order >= 1.0 - settings.order_tol
    }
}

pub fn validate_sweep(sys: &HybridSystemDef, eps_values: &[f64]) -> Result<()> {
    if eps_values.len() < 5 {
        return Err(Error::InvalidSweep(format!("need at least 5 ε values, got {}", eps_values.len())));
    }
    for w in eps_values.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidSweep("ε values must be strictly increasing".into()));
        }
    }
    if eps_values[0] <= 0.0 {
        return Err(Error::InvalidSweep("ε values must be positive".into()));
    }
    for &e in eps_values {
        sys.eps_range.check(e)?;
    }
    Ok(())
}

/// Continue the full fixed point in ε and compare full and averaged linearizations.
pub fn epsilon_sweep(sys: &HybridSystemDef, eps_values: &[f64], settings: &Settings) -> Result<SweepReport> {
    validate_sweep(sys, eps_values)?;
    let x2_star = sys.x2_star().clone();
    let expansion = averaging::extract_taylor_expansion(
        sys,
        &averaging::default_eps_grid(sys),
        std::slice::from_ref(&x2_star),
        settings,
    )?;

    let mut points = Vec::with_capacity(eps_values.len());
    let mut guess = x2_star.clone();
    for &eps in eps_values {
        let point = sweep_point(sys, &expansion, &guess, eps, settings);
        if let Some(fp) = &point.fixed_point {
            guess = fp.clone();
        }
        points.push(point);
    }

    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.failure.is_none()).collect();
    let eps_ok: Vec<f64> = ok.iter().map(|p| p.eps).collect();
    let gaps_ok: Vec<f64> = ok.iter().map(|p| p.eig_gap).collect();
    let fitted_gap_order = numerics::loglog_order(&eps_ok, &gaps_ok, settings.noise_floor);

    let (drift_eps, drifts): (Vec<f64>, Vec<f64>) = ok
        .iter()
        .filter(|p| p.drift > p.drift_resolution)
        .map(|p| (p.eps, p.drift))
        .unzip();
    let drift_below_resolution = !ok.is_empty() && drifts.is_empty();
    let fitted_drift_order = if drift_below_resolution {
        f64::INFINITY
    } else {
        numerics::loglog_order(&drift_eps, &drifts, 0.0).unwrap_or(f64::NAN)
    };

    let mut continuation_constant: f64 = 0.0;
    for w in ok.windows(2) {
        if let (Some(a), Some(b)) = (&w[0].fixed_point, &w[1].fixed_point) {
            continuation_constant = continuation_constant.max((b - a).norm() / (w[1].eps - w[0].eps));
        }
    }

    let quadratic_model_valid_to = ok.iter().find(|p| p.eig_gap > settings.noise_floor).and_then(|first| {
        let c = first.eig_gap / first.eps.powi(2);
        ok.iter()
            .skip_while(|p| p.eps < first.eps)
            .take_while(|p| {
                let ratio = p.eig_gap / (c * p.eps * p.eps);
                (0.5..=2.0).contains(&ratio)
            })
            .last()
            .map(|p| p.eps)
    });

    Ok(SweepReport {
        eps_values: eps_values.to_vec(),
        eig_gaps: points.iter().map(|p| p.eig_gap).collect(),
        fixed_point_drifts: points.iter().map(|p| p.drift).collect(),
        non_hyperbolic: ok.iter().any(|p| p.hyperbolicity < settings.hyperbolic_frac),
        points,
        fitted_gap_order,
        fitted_drift_order,
        drift_below_resolution,
        continuation_constant,
        quadratic_model_valid_to,
        expansion,
    })
}

fn sweep_point(
    sys: &HybridSystemDef,
    expansion: &TaylorResetExpansion,
    guess: &DVector<f64>,
    eps: f64,
    settings: &Settings,
) -> SweepPoint {
    let failed = |e: Error| SweepPoint {
        eps,
        fixed_point: None,
        eig_gap: f64::NAN,
        drift: f64::NAN,
        drift_resolution: f64::NAN,
        fp_residual: f64::NAN,
        spectral_radius: f64::NAN,
        hyperbolicity: f64::NAN,
        failure: Some(e.to_string()),
    };
    let fp = match find_fixed_point(|x| full_poincare_map(sys, x, eps, settings), guess, settings) {
        Ok(fp) => fp,
        Err(e) => return failed(e),
    };
    let full = match full_poincare_jacobian(sys, &fp.x, eps, settings) {
        Ok(j) => j.direct,
        Err(e) => return failed(e),
    };
    let averaged = match averaging::averaged_poincare_jacobian(sys, eps, expansion, settings) {
        Ok(a) => a.product_form,
        Err(e) => return failed(e),
    };
    let n = sys.n;
    let shifted = &full - DMatrix::<f64>::identity(n, n);
    let sigma_min = numerics::singular_values(&shifted).last().copied().unwrap_or(0.0);
    SweepPoint {
        eps,
        eig_gap: numerics::spectral_distance(&full, &averaged),
        drift: (&fp.x - sys.x2_star()).norm(),
        drift_resolution: settings.newton_tol / sigma_min.max(f64::MIN_POSITIVE),
        fp_residual: fp.residual,
        spectral_radius: numerics::spectral_radius(&full),
        hyperbolicity: sigma_min / eps,
        fixed_point: Some(fp.x),
        failure: None,
    }
}
