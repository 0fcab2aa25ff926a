//! Adaptive Dormand–Prince 5(4) integration of autonomous ODEs.
//!
//! Integration runs forward or backward in time (`direction = ±1`); the
//! backward case is the time-reversed field, used when a guard crossing lies
//! behind the initial state.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::settings::Settings;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    /// Step-size cap, so sign checks between steps cannot skip a zero.
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            rtol: s.ode_rtol,
            atol: s.ode_atol,
            h_min: s.min_step,
            h_max: f64::INFINITY,
            max_steps: s.max_steps,
        }
    }

    pub fn with_max_step(self, h_max: f64) -> Self {
        Self { h_max, ..self }
    }

    pub fn tightened(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
            ..self
        }
    }
}

/// One Dormand–Prince step of signed size `h`. Returns the 5th-order
/// solution and the embedded error estimate.
pub fn dopri_step<F>(f: &F, y: &DVector<f64>, k1: &DVector<f64>, h: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let k2 = f(&(y + k1 * (h * A21)));
    let k3 = f(&(y + (k1 * A31 + &k2 * A32) * h));
    let k4 = f(&(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = f(&(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
    let k6 = f(&(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
    let y_new = y + (k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
    let k7 = f(&y_new);
    let err = (k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    (y_new, err, k7)
}

/// Single step from `y` of signed size `h` with no error control.
///
/// Used to re-evaluate the state inside an accepted step, whose size already
/// meets the error target, so any shorter step is at least as accurate.
pub fn substep<F>(f: &F, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    if h == 0.0 {
        return y.clone();
    }
    let k1 = f(y);
    dopri_step(f, y, &k1, h).0
}

#[derive(Debug, Clone)]
pub struct Step {
    pub t_prev: f64,
    pub y_prev: DVector<f64>,
    pub t: f64,
    pub y: DVector<f64>,
}

/// Step-by-step driver; each call to [`Stepper::advance`] performs one
/// accepted step without passing `t_limit`.
pub struct Stepper<'a, F: ?Sized> {
    f: &'a F,
    t: f64,
    y: DVector<f64>,
    k1: DVector<f64>,
    h: f64,
    dir: f64,
    opts: OdeOptions,
    steps: usize,
}

impl<'a, F> Stepper<'a, F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    pub fn new(f: &'a F, t0: f64, y0: DVector<f64>, direction: f64, opts: OdeOptions) -> Self {
        let k1 = f(&y0);
        let dir = if direction < 0.0 { -1.0 } else { 1.0 };
        let h = initial_step(f, &y0, &k1, dir, &opts);
        Self { f, t: t0, y: y0, k1, h, dir, opts, steps: 0 }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn advance(&mut self, t_limit: f64) -> Result<Step> {
        loop {
            let remaining = (t_limit - self.t) * self.dir;
            if remaining <= 0.0 {
                return Err(Error::StepFailure { t: self.t, h: 0.0 });
            }
            if self.steps >= self.opts.max_steps {
                return Err(Error::StepFailure { t: self.t, h: self.h });
            }
            let mut h_abs = self.h.abs().min(self.opts.h_max).min(remaining);
            let last = h_abs >= remaining;
            if last {
                h_abs = remaining;
            }
            let h = h_abs * self.dir;
            let (y_new, err, k7) = dopri_step(self.f, &self.y, &self.k1, h);
            let err_norm = error_norm(&err, &self.y, &y_new, &self.opts);
            self.steps += 1;
            if err_norm <= 1.0 && y_new.iter().all(|v| v.is_finite()) {
                let t_new = if last { t_limit } else { self.t + h };
                let step = Step {
                    t_prev: self.t,
                    y_prev: std::mem::replace(&mut self.y, y_new),
                    t: t_new,
                    y: self.y.clone(),
                };
                self.t = t_new;
                self.k1 = k7;
                let factor = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                // A step truncated to hit `t_limit` keeps the earlier proposal.
                if !last {
                    self.h = h_abs * factor;
                }
                return Ok(step);
            }
            let factor = if err_norm.is_finite() { (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            self.h = h_abs * factor;
            if self.h < self.opts.h_min {
                return Err(Error::StepFailure { t: self.t, h: self.h });
            }
        }
    }
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &OdeOptions) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    let n = err.len() as f64;
    if sum.is_nan() {
        f64::INFINITY
    } else {
        (sum / n).sqrt()
    }
}

fn initial_step<F>(f: &F, y0: &DVector<f64>, k1: &DVector<f64>, dir: f64, opts: &OdeOptions) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let scale = |v: &DVector<f64>| {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(y0.iter())
            .map(|(a, y)| (a / (opts.atol + opts.rtol * y.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = scale(y0);
    let d1 = scale(k1);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = y0 + k1 * (h0 * dir);
    let k2 = f(&y1);
    let d2 = scale(&(&k2 - k1)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Integrate from `t0` to `t1` and return the final state.
pub fn integrate_to<F>(f: &F, y0: &DVector<f64>, t0: f64, t1: f64, opts: OdeOptions) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    if t1 == t0 {
        return Ok(y0.clone());
    }
    let mut stepper = Stepper::new(f, t0, y0.clone(), (t1 - t0).signum(), opts);
    loop {
        let step = stepper.advance(t1)?;
        if step.t == t1 {
            return Ok(step.y);
        }
    }
}

/// Bisect for the sign change of `g` inside a step of length `h` taken from
/// `y_prev`. `g(y_prev)` and `g` at the step end must differ in sign.
/// Returns the offset into the step and the state there.
pub fn bisect_event<F, G>(f: &F, y_prev: &DVector<f64>, h: f64, g: &G, tol: f64) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
    G: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    let g0 = g(y_prev);
    let (mut lo, mut hi) = (0.0, h);
    let mut y_hi = substep(f, y_prev, h);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol.max(4.0 * f64::EPSILON * hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let y_mid = substep(f, y_prev, mid);
        if (g(&y_mid) > 0.0) == (g0 > 0.0) {
            lo = mid;
        } else {
            hi = mid;
            y_hi = y_mid;
        }
    }
    (hi, y_hi)
}
