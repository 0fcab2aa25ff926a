//! Continuous flow of a hybrid system: integration, guard crossings,
//! time-to-event gradients and flow Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics;
use crate::ode::{self, OdeOptions, Stepper};
use crate::settings::Settings;
use crate::system::{guard_gradient, CrossingDirection, HybridSystemDef, StateX};

/// Sampled solution of the pure flow (guard ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateX>,
    pub eps: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateX {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Largest relative mismatch between a centred difference quotient of the
    /// samples and the vector field, over interior samples.
    ///
    /// Only meaningful for closely spaced samples; accepted steps of a tight
    /// integrator are far apart, so this is used on resampled trajectories.
    pub fn ode_residual(&self, sys: &HybridSystemDef) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.times.len().saturating_sub(1) {
            let dt = self.times[k + 1] - self.times[k - 1];
            let fd = (self.states[k + 1].to_vector() - self.states[k - 1].to_vector()) / dt;
            let f = sys.velocity(&self.states[k], self.eps);
            worst = worst.max((fd - &f).norm() / f.norm().max(1.0));
        }
        worst
    }
}

/// Result of flowing a state to the guard.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCrossing {
    /// Elapsed flow time; negative when the crossing lies behind the start.
    pub tau: f64,
    pub state_at_crossing: StateX,
    /// Dγ·F at the crossing.
    pub transversality: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchDirection {
    /// Choose from the guard's sign and crossing direction at the start.
    Auto,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMethod {
    Variational,
    FiniteDifference,
}

fn field<'a>(sys: &'a HybridSystemDef, eps: f64) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
    move |v: &DVector<f64>| sys.velocity_vec(v, eps)
}

fn escape(sys: &HybridSystemDef, t: f64, y: &DVector<f64>) -> Result<()> {
    match sys.domain_violation(&StateX::from_vector(y)) {
        Some(detail) => Err(Error::StateEscape { t, detail }),
        None => Ok(()),
    }
}

/// Integrate the flow from `x0` for `t_final` time units (negative runs backward).
pub fn integrate(sys: &HybridSystemDef, x0: &StateX, eps: f64, t_final: f64, settings: &Settings) -> Result<Trajectory> {
    sys.eps_range.check(eps)?;
    sys.check_state(x0)?;
    let f = field(sys, eps);
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    if t_final != 0.0 {
        let mut stepper = Stepper::new(&f, 0.0, x0.to_vector(), t_final.signum(), OdeOptions::from_settings(settings));
        loop {
            let step = stepper.advance(t_final)?;
            escape(sys, step.t, &step.y)?;
            times.push(step.t);
            states.push(StateX::from_vector(&step.y));
            if step.t == t_final {
                break;
            }
        }
    }
    Ok(Trajectory { times, states, eps })
}

/// Final state of the flow after time `t`.
pub fn flow_state(sys: &HybridSystemDef, x0: &StateX, eps: f64, t: f64, settings: &Settings) -> Result<StateX> {
    Ok(integrate(sys, x0, eps, t, settings)?.final_state().clone())
}

/// Integrate with samples at `count + 1` equally spaced times.
pub fn integrate_sampled(
    sys: &HybridSystemDef,
    x0: &StateX,
    eps: f64,
    t_final: f64,
    count: usize,
    settings: &Settings,
) -> Result<Trajectory> {
    sys.eps_range.check(eps)?;
    sys.check_state(x0)?;
    let f = field(sys, eps);
    let opts = OdeOptions::from_settings(settings);
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut y = x0.to_vector();
    for k in 1..=count.max(1) {
        let t0 = t_final * (k - 1) as f64 / count.max(1) as f64;
        let t1 = t_final * k as f64 / count.max(1) as f64;
        y = ode::integrate_to(&f, &y, t0, t1, opts)?;
        escape(sys, t1, &y)?;
        times.push(t1);
        states.push(StateX::from_vector(&y));
    }
    Ok(Trajectory { times, states, eps })
}

/// Flow `x0` to the system guard, searching in the direction implied by the
/// guard's sign at `x0`.
pub fn flow_to_guard(sys: &HybridSystemDef, x0: &StateX, eps: f64, settings: &Settings) -> Result<EventCrossing> {
    flow_to_guard_directed(sys, x0, eps, SearchDirection::Auto, settings)
}

pub fn flow_to_guard_directed(
    sys: &HybridSystemDef,
    x0: &StateX,
    eps: f64,
    search: SearchDirection,
    settings: &Settings,
) -> Result<EventCrossing> {
    let guard = |x: &StateX| sys.guard(x, eps);
    locate_crossing(sys, x0, eps, &guard, sys.crossing, search, settings)
}

/// Flow forward from `x0` to the constant-phase section `x₁ = phase`.
pub fn flow_to_section(sys: &HybridSystemDef, x0: &StateX, eps: f64, phase: f64, settings: &Settings) -> Result<EventCrossing> {
    let guard = move |x: &StateX| x.x1 - phase;
    locate_crossing(sys, x0, eps, &guard, CrossingDirection::Rising, SearchDirection::Auto, settings)
}

/// Samples of a multi-stride hybrid run starting on the reset surface.
#[derive(Debug, Clone)]
pub struct HybridRun {
    pub times: Vec<f64>,
    pub states: Vec<StateX>,
    /// Index of the stride each sample belongs to.
    pub stride: Vec<usize>,
    /// Slow state right after each reset, starting with the initial one.
    pub section_states: Vec<DVector<f64>>,
    pub eps: f64,
}

/// Flow from `(0, x2)` to the guard, reset, and repeat `n_strides` times.
pub fn simulate_hybrid(
    sys: &HybridSystemDef,
    x2: &DVector<f64>,
    eps: f64,
    n_strides: usize,
    samples_per_stride: usize,
    settings: &Settings,
) -> Result<HybridRun> {
    let mut run = HybridRun {
        times: Vec::new(),
        states: Vec::new(),
        stride: Vec::new(),
        section_states: vec![x2.clone()],
        eps,
    };
    let mut t = 0.0;
    let mut x = StateX::new(0.0, x2.clone());
    for k in 0..n_strides {
        let crossing = flow_to_guard_directed(sys, &x, eps, SearchDirection::Forward, settings)?;
        let traj = integrate_sampled(sys, &x, eps, crossing.tau, samples_per_stride, settings)?;
        for (s, state) in traj.times.iter().zip(traj.states) {
            run.times.push(t + s);
            run.states.push(state);
            run.stride.push(k);
        }
        t += crossing.tau;
        x = sys.reset(&crossing.state_at_crossing, eps);
        if x.x2.iter().any(|v| !v.is_finite()) {
            return Err(Error::StateEscape { t, detail: "reset produced a non-finite state".into() });
        }
        run.section_states.push(x.x2.clone());
    }
    run.times.push(t);
    run.states.push(x);
    run.stride.push(n_strides);
    Ok(run)
}

fn is_crossing(early: f64, late: f64, dir: CrossingDirection) -> bool {
    match dir {
        CrossingDirection::Rising => early < 0.0 && late >= 0.0,
        CrossingDirection::Falling => early > 0.0 && late <= 0.0,
        CrossingDirection::Either => early != 0.0 && (late == 0.0 || early.signum() != late.signum()),
    }
}

fn direction_matches(rate: f64, dir: CrossingDirection) -> bool {
    match dir {
        CrossingDirection::Rising => rate > 0.0,
        CrossingDirection::Falling => rate < 0.0,
        CrossingDirection::Either => rate != 0.0,
    }
}

fn guard_rate(
    sys: &HybridSystemDef,
    guard: &dyn Fn(&StateX) -> f64,
    y: &DVector<f64>,
    eps: f64,
    settings: &Settings,
) -> f64 {
    let h = settings.fd_step_for(y.norm());
    let grad = numerics::central_gradient(|v| Ok(guard(&StateX::from_vector(v))), y, h).expect("infallible");
    grad.dot(&sys.velocity_vec(y, eps))
}

fn locate_crossing(
    sys: &HybridSystemDef,
    x0: &StateX,
    eps: f64,
    guard: &dyn Fn(&StateX) -> f64,
    dir: CrossingDirection,
    search: SearchDirection,
    settings: &Settings,
) -> Result<EventCrossing> {
    sys.eps_range.check(eps)?;
    sys.check_state(x0)?;
    let f = field(sys, eps);
    let y0 = x0.to_vector();
    let g0 = guard(x0);

    if g0.abs() <= settings.tol_guard {
        let rate = guard_rate(sys, guard, &y0, eps, settings);
        if direction_matches(rate, dir) && rate.abs() > settings.tol_transversal {
            return polish(sys, guard, &f, 0.0, &y0, 0.0, eps, settings);
        }
    }

    // On the guard but crossing the wrong way: the guard's rate says which
    // side the flow is heading to.
    let g_side = if g0.abs() <= settings.tol_guard && dir != CrossingDirection::Either {
        guard_rate(sys, guard, &y0, eps, settings)
    } else {
        g0
    };
    let sign = match search {
        SearchDirection::Forward => 1.0,
        SearchDirection::Backward => -1.0,
        SearchDirection::Auto => match dir {
            CrossingDirection::Rising => if g_side < 0.0 { 1.0 } else { -1.0 },
            CrossingDirection::Falling => if g_side > 0.0 { 1.0 } else { -1.0 },
            CrossingDirection::Either => {
                let rate = guard_rate(sys, guard, &y0, eps, settings);
                if -g0 / rate >= 0.0 { 1.0 } else { -1.0 }
            }
        },
    };
    let max_time = sys.max_event_time(settings);
    let t_limit = sign * max_time;
    // At most an eighth of the phase period per step.
    let opts = OdeOptions::from_settings(settings).with_max_step(sys.default_max_event_time() / 80.0);
    let mut stepper = Stepper::new(&f, 0.0, y0, sign, opts);
    let mut g_prev = g0;
    loop {
        if stepper.t() == t_limit {
            return Err(Error::NoCrossing { max_time });
        }
        let step = stepper.advance(t_limit)?;
        let g_new = guard(&StateX::from_vector(&step.y));
        let (early, late) = if sign > 0.0 { (g_prev, g_new) } else { (g_new, g_prev) };
        if is_crossing(early, late, dir) {
            let h = step.t - step.t_prev;
            let (mut lo, mut hi) = (0.0, h);
            let g_lo_neg = g_prev < 0.0;
            while (hi - lo).abs() > settings.tol_event_time {
                let mid = 0.5 * (lo + hi);
                let gm = guard(&StateX::from_vector(&ode::substep(&f, &step.y_prev, mid)));
                if (gm < 0.0) == g_lo_neg {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return polish(sys, guard, &f, step.t_prev, &step.y_prev, 0.5 * (lo + hi), eps, settings);
        }
        escape(sys, step.t, &step.y)?;
        g_prev = g_new;
    }
}

/// Newton refinement of the crossing time within a step starting at `(t0, y0)`.
#[allow(clippy::too_many_arguments)]
fn polish<F>(
    sys: &HybridSystemDef,
    guard: &dyn Fn(&StateX) -> f64,
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    mut s: f64,
    eps: f64,
    settings: &Settings,
) -> Result<EventCrossing>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut y = ode::substep(f, y0, s);
    let mut g = guard(&StateX::from_vector(&y));
    let mut rate = guard_rate(sys, guard, &y, eps, settings);
    // One polish normally suffices; a couple more cover crossings entered
    // with a loose bracket.
    for _ in 0..4 {
        if rate.abs() <= settings.tol_transversal {
            return Err(Error::Tangency { transversality: rate });
        }
        if g.abs() <= 0.01 * settings.tol_guard {
            break;
        }
        s -= g / rate;
        y = ode::substep(f, y0, s);
        g = guard(&StateX::from_vector(&y));
        rate = guard_rate(sys, guard, &y, eps, settings);
    }
    if rate.abs() <= settings.tol_transversal {
        return Err(Error::Tangency { transversality: rate });
    }
    Ok(EventCrossing {
        tau: t0 + s,
        state_at_crossing: StateX::from_vector(&y),
        transversality: rate,
        converged: g.abs() <= settings.tol_guard,
    })
}

/// Gradient of the time-to-event map at a guard point: `−Dγ / (Dγ·F)`.
pub fn time_to_event_gradient(sys: &HybridSystemDef, x: &StateX, eps: f64, settings: &Settings) -> Result<DVector<f64>> {
    sys.eps_range.check(eps)?;
    sys.check_state(x)?;
    let g = sys.guard(x, eps);
    if g.abs() > settings.tol_guard {
        return Err(Error::InvalidParams(format!("state is not on the guard (γ = {g:e})")));
    }
    let dg = guard_gradient(sys, x, eps, settings.fd_step_for(x.to_vector().norm()));
    let rate = dg.dot(&sys.velocity(x, eps));
    if rate.abs() <= settings.tol_transversal {
        return Err(Error::Tangency { transversality: rate });
    }
    Ok(-dg / rate)
}

/// Jacobian of the flow map `x ↦ Φ(t, x)` at `x0`, size (n+1)×(n+1).
pub fn flow_jacobian(
    sys: &HybridSystemDef,
    x0: &StateX,
    eps: f64,
    t: f64,
    method: JacobianMethod,
    settings: &Settings,
) -> Result<DMatrix<f64>> {
    sys.eps_range.check(eps)?;
    sys.check_state(x0)?;
    let m = sys.n + 1;
    if t == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }
    match method {
        JacobianMethod::Variational => variational_flow(sys, x0, eps, t, settings).map(|(_, j)| j),
        JacobianMethod::FiniteDifference => {
            let h = settings.fd_step_for(x0.to_vector().norm());
            numerics::central_jacobian(
                |v| Ok(flow_state(sys, &StateX::from_vector(v), eps, t, settings)?.to_vector()),
                &x0.to_vector(),
                h,
            )
        }
    }
}

/// Integrate the state together with its variational equation
/// `Ṁ = DF(Φ_t(x0))·M`, `M(0) = I`. Returns the final state and `M(t)`.
pub fn variational_flow(
    sys: &HybridSystemDef,
    x0: &StateX,
    eps: f64,
    t: f64,
    settings: &Settings,
) -> Result<(StateX, DMatrix<f64>)> {
    let m = sys.n + 1;
    let rhs = |y: &DVector<f64>| {
        let x = y.rows(0, m).into_owned();
        let mat = DMatrix::from_column_slice(m, m, &y.as_slice()[m..]);
        let h = settings.fd_step_for(x.norm());
        let a = numerics::central_jacobian(|v| Ok(sys.velocity_vec(v, eps)), &x, h).expect("infallible");
        let dm = a * mat;
        let mut out = DVector::zeros(m + m * m);
        out.rows_mut(0, m).copy_from(&sys.velocity_vec(&x, eps));
        out.rows_mut(m, m * m).copy_from_slice(dm.as_slice());
        out
    };
    let mut y0 = DVector::zeros(m + m * m);
    y0.rows_mut(0, m).copy_from(&x0.to_vector());
    y0.rows_mut(m, m * m).copy_from_slice(DMatrix::<f64>::identity(m, m).as_slice());
    let y = ode::integrate_to(&rhs, &y0, 0.0, t, OdeOptions::from_settings(settings))?;
    let x = y.rows(0, m).into_owned();
    escape(sys, t, &x)?;
    Ok((StateX::from_vector(&x), DMatrix::from_column_slice(m, m, &y.as_slice()[m..])))
}
