//! Single-mode hybrid systems: state, definition, registration checks.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::averaging;
use crate::error::{Error, Result};
use crate::settings::Settings;

/// A point `(x₁, x₂)` of the hybrid domain: phase coordinate and slow vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateX {
    pub x1: f64,
    pub x2: DVector<f64>,
}

impl StateX {
    pub fn new(x1: f64, x2: DVector<f64>) -> Self {
        Self { x1, x2 }
    }

    pub fn scalar(x1: f64, x2: f64) -> Self {
        Self::new(x1, DVector::from_element(1, x2))
    }

    pub fn n(&self) -> usize {
        self.x2.len()
    }

    /// Stacked `(x₁, x₂)` as a vector of length n+1.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n() + 1);
        v[0] = self.x1;
        v.rows_mut(1, self.n()).copy_from(&self.x2);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            x1: v[0],
            x2: v.rows(1, v.len() - 1).into_owned(),
        }
    }
}

/// Open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// Validity range of the time-scale parameter: `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsRange {
    pub lo: f64,
    pub hi: f64,
}

impl EpsRange {
    pub fn contains(&self, eps: f64) -> bool {
        eps >= self.lo && eps < self.hi
    }

    pub fn check(&self, eps: f64) -> Result<()> {
        if self.contains(eps) {
            Ok(())
        } else {
            Err(Error::EpsOutOfRange { eps, lo: self.lo, hi: self.hi })
        }
    }
}

/// Which sign change of the guard counts as an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Rising,
    Falling,
    Either,
}

pub type PerturbationFn = Arc<dyn Fn(&StateX, f64) -> (f64, DVector<f64>) + Send + Sync>;
pub type GuardFn = Arc<dyn Fn(&StateX, f64) -> f64 + Send + Sync>;
pub type ResetFn = Arc<dyn Fn(&StateX, f64) -> StateX + Send + Sync>;

/// A single-mode hybrid system `(X, F, G, R, x*)`.
///
/// The vector field is `F = rate·e₁ + ε·(F₁, F₂)`, where the caller supplies
/// the perturbation `(F₁, F₂)`. A rate other than one lets models keep
/// physical time; averaging is always taken in phase units.
#[derive(Clone)]
pub struct HybridSystemDef {
    pub name: String,
    pub n: usize,
    pub x1_bounds: Interval,
    pub x2_bounds: Vec<Interval>,
    pub phase_rate: f64,
    pub eps_range: EpsRange,
    pub crossing: CrossingDirection,
    /// Guard is `{x₁*} × X₂`; the effective reset then needs no flow.
    pub constant_flow_time: bool,
    pub anchor: StateX,
    perturbation: PerturbationFn,
    guard: GuardFn,
    reset: ResetFn,
}

impl fmt::Debug for HybridSystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("x1_bounds", &self.x1_bounds)
            .field("phase_rate", &self.phase_rate)
            .field("eps_range", &self.eps_range)
            .field("constant_flow_time", &self.constant_flow_time)
            .field("anchor", &self.anchor)
            .finish_non_exhaustive()
    }
}

impl HybridSystemDef {
    pub fn builder(name: impl Into<String>, anchor: StateX) -> HybridSystemBuilder {
        HybridSystemBuilder::new(name.into(), anchor)
    }

    pub fn x1_star(&self) -> f64 {
        self.anchor.x1
    }

    pub fn x2_star(&self) -> &DVector<f64> {
        &self.anchor.x2
    }

    pub fn perturbation(&self, x: &StateX, eps: f64) -> (f64, DVector<f64>) {
        (self.perturbation)(x, eps)
    }

    /// Full velocity `rate·e₁ + ε(F₁, F₂)` as a vector of length n+1.
    pub fn velocity(&self, x: &StateX, eps: f64) -> DVector<f64> {
        let (f1, f2) = (self.perturbation)(x, eps);
        let mut v = DVector::zeros(self.n + 1);
        v[0] = self.phase_rate + eps * f1;
        v.rows_mut(1, self.n).copy_from(&(f2 * eps));
        v
    }

    pub fn velocity_vec(&self, v: &DVector<f64>, eps: f64) -> DVector<f64> {
        self.velocity(&StateX::from_vector(v), eps)
    }

    pub fn guard(&self, x: &StateX, eps: f64) -> f64 {
        (self.guard)(x, eps)
    }

    pub fn reset(&self, x: &StateX, eps: f64) -> StateX {
        (self.reset)(x, eps)
    }

    /// Default budget for one flow-to-guard search, in time units.
    pub fn default_max_event_time(&self) -> f64 {
        10.0 * self.x1_star().abs().max(1e-12) / self.phase_rate.abs()
    }

    pub fn max_event_time(&self, settings: &Settings) -> f64 {
        settings.max_event_time.unwrap_or_else(|| self.default_max_event_time())
    }

    /// Describes how `x` violates `X₁ × X₂`, if it does.
    pub fn domain_violation(&self, x: &StateX) -> Option<String> {
        if x.n() != self.n {
            return Some(format!("slow vector has length {}, expected {}", x.n(), self.n));
        }
        if !self.x1_bounds.contains(x.x1) {
            return Some(format!(
                "phase {} outside ({}, {})",
                x.x1, self.x1_bounds.lo, self.x1_bounds.hi
            ));
        }
        for (i, (v, b)) in x.x2.iter().zip(&self.x2_bounds).enumerate() {
            if !b.contains(*v) || !v.is_finite() {
                return Some(format!("slow coordinate {i} = {v} outside ({}, {})", b.lo, b.hi));
            }
        }
        None
    }

    pub fn check_state(&self, x: &StateX) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.n() });
        }
        match self.domain_violation(x) {
            Some(detail) => Err(Error::StateEscape { t: 0.0, detail }),
            None => Ok(()),
        }
    }

    pub fn check_slow(&self, x2: &DVector<f64>) -> Result<()> {
        if x2.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x2.len() });
        }
        Ok(())
    }

    /// Slow-state samples in a ball around `x₂*`: the anchor plus ±r and ±r/2
    /// along each axis, with r = 0.25‖x₂*‖ (0.1 when x₂* = 0).
    pub fn slow_samples(&self) -> Vec<DVector<f64>> {
        let center = self.x2_star();
        let norm = center.norm();
        let r = if norm > 0.0 { 0.25 * norm } else { 0.1 };
        let mut out = vec![center.clone()];
        for i in 0..self.n {
            for frac in [-1.0, -0.5, 0.5, 1.0] {
                let mut p = center.clone();
                p[i] += frac * r;
                if self.x2_bounds[i].contains(p[i]) {
                    out.push(p);
                }
            }
        }
        out
    }

    /// ε values at which registration checks are evaluated.
    pub fn eps_samples(&self) -> Vec<f64> {
        let lo = self.eps_range.lo;
        let width = (self.eps_range.hi - lo).min(4.0);
        [0.0, 1e-3, 1e-2, 1e-1, 0.5]
            .iter()
            .map(|f| lo + f * width)
            .filter(|e| self.eps_range.contains(*e))
            .collect()
    }
}

pub struct HybridSystemBuilder {
    name: String,
    anchor: StateX,
    x1_bounds: Interval,
    x2_bounds: Option<Vec<Interval>>,
    phase_rate: f64,
    eps_range: EpsRange,
    crossing: CrossingDirection,
    perturbation: Option<PerturbationFn>,
    guard: Option<GuardFn>,
    reset: Option<ResetFn>,
    constant_flow_time: bool,
}

impl HybridSystemBuilder {
    fn new(name: String, anchor: StateX) -> Self {
        Self {
            name,
            anchor,
            x1_bounds: Interval::REAL_LINE,
            x2_bounds: None,
            phase_rate: 1.0,
            eps_range: EpsRange { lo: 0.0, hi: f64::INFINITY },
            crossing: CrossingDirection::Rising,
            perturbation: None,
            guard: None,
            reset: None,
            constant_flow_time: false,
        }
    }

    pub fn x1_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.x1_bounds = Interval::new(lo, hi);
        self
    }

    pub fn x2_bounds(mut self, bounds: Vec<Interval>) -> Self {
        self.x2_bounds = Some(bounds);
        self
    }

    pub fn phase_rate(mut self, rate: f64) -> Self {
        self.phase_rate = rate;
        self
    }

    pub fn eps_range(mut self, lo: f64, hi: f64) -> Self {
        self.eps_range = EpsRange { lo, hi };
        self
    }

    pub fn crossing(mut self, dir: CrossingDirection) -> Self {
        self.crossing = dir;
        self
    }

    pub fn perturbation<F>(mut self, f: F) -> Self
    where
        F: Fn(&StateX, f64) -> (f64, DVector<f64>) + Send + Sync + 'static,
    {
        self.perturbation = Some(Arc::new(f));
        self
    }

    pub fn guard<F>(mut self, f: F) -> Self
    where
        F: Fn(&StateX, f64) -> f64 + Send + Sync + 'static,
    {
        self.guard = Some(Arc::new(f));
        self.constant_flow_time = false;
        self
    }

    /// Guard `{x₁*} × X₂`, i.e. `γ(x) = x₁ − x₁*`, crossed with x₁ increasing.
    pub fn constant_phase_guard(mut self) -> Self {
        let x1_star = self.anchor.x1;
        self.guard = Some(Arc::new(move |x: &StateX, _eps| x.x1 - x1_star));
        self.crossing = CrossingDirection::Rising;
        self.constant_flow_time = true;
        self
    }

    pub fn reset<F>(mut self, f: F) -> Self
    where
        F: Fn(&StateX, f64) -> StateX + Send + Sync + 'static,
    {
        self.reset = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<HybridSystemDef> {
        let n = self.anchor.n();
        let mut problems = Vec::new();
        if n == 0 {
            problems.push("slow dimension must be at least 1".to_string());
        }
        let x2_bounds = self.x2_bounds.unwrap_or_else(|| vec![Interval::REAL_LINE; n]);
        if x2_bounds.len() != n {
            problems.push(format!("{} slow bounds given for dimension {n}", x2_bounds.len()));
        }
        if !(self.phase_rate.is_finite() && self.phase_rate != 0.0) {
            problems.push("phase rate must be finite and nonzero".to_string());
        }
        if !(self.eps_range.lo < self.eps_range.hi) {
            problems.push("ε range is empty".to_string());
        }
        let missing = |what: &str| format!("missing {what}");
        let perturbation = self.perturbation.ok_or_else(|| missing("vector field"));
        let guard = self.guard.ok_or_else(|| missing("guard"));
        let reset = self.reset.ok_or_else(|| missing("reset"));
        match (perturbation, guard, reset) {
            (Ok(perturbation), Ok(guard), Ok(reset)) if problems.is_empty() => Ok(HybridSystemDef {
                name: self.name,
                n,
                x1_bounds: self.x1_bounds,
                x2_bounds,
                phase_rate: self.phase_rate,
                eps_range: self.eps_range,
                crossing: self.crossing,
                constant_flow_time: self.constant_flow_time,
                anchor: self.anchor,
                perturbation,
                guard,
                reset,
            }),
            (p, g, r) => {
                problems.extend([p.err(), g.err(), r.err()].into_iter().flatten());
                Err(Error::InvalidSystem(problems))
            }
        }
    }
}

/// Outcome of the averageability checks run at registration.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub eps_samples: Vec<f64>,
    /// max over ε of |γ(x*, ε)|
    pub guard_at_anchor: f64,
    /// min over ε of |∂γ/∂x₁| at x*
    pub guard_phase_derivative: f64,
    /// min over ε of |Dγ·F| at x*
    pub transversality: f64,
    /// max |π₁R| over sampled guard points
    pub reset_phase: f64,
    pub reset_phase_samples: usize,
    /// max over ε of ‖π₂R(x*) − x₂*‖
    pub reset_anchor_defect: f64,
    /// ‖f̄(x₂*)‖
    pub averaged_equilibrium_defect: f64,
    pub return_map: Option<ReturnMapConditions>,
    /// Conditions that are not hard requirements but did not hold.
    pub flags: Vec<String>,
}

/// Taylor-coefficient conditions on the effective reset Jacobian at x₂*.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMapConditions {
    pub s0: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s0_invertible: bool,
    pub unity_blocks_diagonal: bool,
    /// σ_min(S₁ + x₁* S₀ Df̄)
    pub rank_margin: f64,
    pub rank_condition: bool,
}

#[derive(Debug)]
pub struct RegisteredSystem {
    pub def: HybridSystemDef,
    pub report: CheckReport,
}

impl Deref for RegisteredSystem {
    type Target = HybridSystemDef;

    fn deref(&self) -> &HybridSystemDef {
        &self.def
    }
}

pub type SystemHandle = Arc<RegisteredSystem>;

/// Validate `def` and wrap it in a shareable handle.
pub fn register_system(def: HybridSystemDef, settings: &Settings) -> Result<SystemHandle> {
    let report = check_averageable(&def, settings)?;
    Ok(Arc::new(RegisteredSystem { def, report }))
}

fn check_averageable(def: &HybridSystemDef, settings: &Settings) -> Result<CheckReport> {
    let mut violations = Vec::new();
    if let Some(v) = def.domain_violation(&def.anchor) {
        violations.push(format!("anchor outside domain: {v}"));
        return Err(Error::InvalidSystem(violations));
    }
    let eps_samples = def.eps_samples();
    let h = settings.fd_step_for(def.anchor.to_vector().norm());

    let mut guard_at_anchor: f64 = 0.0;
    let mut guard_phase_derivative = f64::INFINITY;
    let mut transversality = f64::INFINITY;
    let mut reset_anchor_defect: f64 = 0.0;
    let mut reset_phase: f64 = 0.0;
    let mut reset_phase_samples = 0;
    for &eps in &eps_samples {
        guard_at_anchor = guard_at_anchor.max(def.guard(&def.anchor, eps).abs());
        let grad = guard_gradient(def, &def.anchor, eps, h);
        guard_phase_derivative = guard_phase_derivative.min(grad[0].abs());
        transversality = transversality.min(grad.dot(&def.velocity(&def.anchor, eps)).abs());
        let r = def.reset(&def.anchor, eps);
        reset_anchor_defect = reset_anchor_defect.max((&r.x2 - def.x2_star()).norm());
        for x2 in def.slow_samples() {
            if let Some(x) = guard_point_near(def, &x2, eps, settings) {
                reset_phase = reset_phase.max(def.reset(&x, eps).x1.abs());
                reset_phase_samples += 1;
            }
        }
    }

    if guard_at_anchor > settings.tol_guard {
        violations.push(format!("γ(x*) = {guard_at_anchor:e} ≠ 0 (guard must contain x*)"));
    }
    if guard_phase_derivative <= settings.tol_transversal {
        violations.push(format!("∂γ/∂x₁ = {guard_phase_derivative:e} vanishes at x*"));
    }
    if transversality <= settings.tol_transversal {
        violations.push(format!("Dγ·F = {transversality:e}: flow tangent to guard at x*"));
    }
    if reset_phase > settings.tol_reset {
        violations.push(format!("π₁R ≢ 0 on the guard (max |π₁R| = {reset_phase:e})"));
    }
    if reset_anchor_defect > settings.tol_reset {
        violations.push(format!("π₂R(x*) ≠ x₂* (defect {reset_anchor_defect:e})"));
    }

    let averaged_equilibrium_defect = match averaging::averaged_field(def, def.x2_star(), settings) {
        Ok(f) => f.norm(),
        Err(e) => {
            violations.push(format!("averaged field not computable: {e}"));
            f64::NAN
        }
    };
    if averaged_equilibrium_defect > 1e3 * settings.quad_tol {
        violations.push(format!(
            "f̄(x₂*) = {averaged_equilibrium_defect:e}: x₂* is not an equilibrium of the averaged field"
        ));
    }
    if !violations.is_empty() {
        return Err(Error::InvalidSystem(violations));
    }

    let mut flags = Vec::new();
    let return_map = match return_map_conditions(def, settings) {
        Ok(c) => {
            if !c.s0_invertible {
                flags.push("s0_singular: S₀ is singular".to_string());
            }
            if !c.unity_blocks_diagonal {
                flags.push("s0_jordan: unity eigenvalues of S₀ have non-diagonal Jordan blocks".to_string());
            }
            if !c.rank_condition {
                flags.push(format!(
                    "rank: S₁ + x₁* S₀ Df̄ is singular (σ_min = {:e}); return map not hyperbolic to O(ε)",
                    c.rank_margin
                ));
            }
            Some(c)
        }
        Err(e) => {
            flags.push(format!("taylor: Taylor coefficients unavailable: {e}"));
            None
        }
    };

    Ok(CheckReport {
        eps_samples,
        guard_at_anchor,
        guard_phase_derivative,
        transversality,
        reset_phase,
        reset_phase_samples,
        reset_anchor_defect,
        averaged_equilibrium_defect,
        return_map,
        flags,
    })
}

fn return_map_conditions(def: &HybridSystemDef, settings: &Settings) -> Result<ReturnMapConditions> {
    let expansion = averaging::extract_taylor_expansion(
        def,
        &averaging::default_eps_grid(def),
        &[def.x2_star().clone()],
        settings,
    )?;
    let dfbar = averaging::averaged_field_jacobian(def, def.x2_star(), settings)?;
    let s0 = expansion.s0.clone();
    let s1 = expansion.s1.clone();
    let n = def.n;
    let s0_invertible = crate::numerics::singular_values(&s0).last().copied().unwrap_or(0.0) > settings.jordan_tol;
    let unity_blocks_diagonal = unity_jordan_blocks_diagonal(&s0, settings.jordan_tol);
    let hyp = &s1 + &s0 * &dfbar * def.x1_star();
    let rank_margin = crate::numerics::singular_values(&hyp).last().copied().unwrap_or(0.0);
    // Same threshold the certificate uses for a degenerate W.
    let rank_condition = rank_margin > settings.margin.max(10.0 * settings.noise_floor) && n > 0;
    Ok(ReturnMapConditions {
        s0,
        s1,
        s0_invertible,
        unity_blocks_diagonal,
        rank_margin,
        rank_condition,
    })
}

/// Eigenvalues of `s0` within `tol` of one have a full eigenspace:
/// rank(S₀ − I) = n − (number of such eigenvalues).
pub fn unity_jordan_blocks_diagonal(s0: &DMatrix<f64>, tol: f64) -> bool {
    let n = s0.nrows();
    let unity = crate::numerics::eigenvalues(s0)
        .iter()
        .filter(|z| (*z - nalgebra::Complex::new(1.0, 0.0)).norm() <= tol)
        .count();
    let shifted = s0 - DMatrix::identity(n, n);
    crate::numerics::rank(&shifted, tol) == n - unity
}

pub(crate) fn guard_gradient(def: &HybridSystemDef, x: &StateX, eps: f64, h: f64) -> DVector<f64> {
    let v = x.to_vector();
    let mut g = DVector::zeros(v.len());
    for j in 0..v.len() {
        let mut p = v.clone();
        let mut m = v.clone();
        p[j] += h;
        m[j] -= h;
        g[j] = (def.guard(&StateX::from_vector(&p), eps) - def.guard(&StateX::from_vector(&m), eps)) / (2.0 * h);
    }
    g
}

/// Solve γ(x₁, x₂) = 0 for x₁ near x₁* by Newton's method.
fn guard_point_near(def: &HybridSystemDef, x2: &DVector<f64>, eps: f64, settings: &Settings) -> Option<StateX> {
    let mut x = StateX::new(def.x1_star(), x2.clone());
    let h = settings.fd_step_for(x.to_vector().norm());
    for _ in 0..50 {
        let g = def.guard(&x, eps);
        if g.abs() <= settings.tol_guard {
            return def.domain_violation(&x).is_none().then_some(x);
        }
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.x1 += h;
        xm.x1 -= h;
        let d = (def.guard(&xp, eps) - def.guard(&xm, eps)) / (2.0 * h);
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        x.x1 -= g / d;
    }
    None
}

/// Named collection of registered systems.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    systems: BTreeMap<String, SystemHandle>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, def: HybridSystemDef, settings: &Settings) -> Result<SystemHandle> {
        let handle = register_system(def, settings)?;
        self.systems.insert(handle.name.clone(), handle.clone());
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<SystemHandle> {
        self.systems.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.systems.keys().map(String::as_str)
    }
}
