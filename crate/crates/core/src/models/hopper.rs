//! Vertical hopper in phase-energy coordinates `(θ, a)` with
//! `a sinθ = z₀ − z`, `aω cosθ = −ż`.
//!
//! Stance dynamics `z̈ = u − g − εβż` under the energizing feedback
//! `u = g + ω²a sinθ − εωk cosθ` become `θ̇ = ω + ε v sinθ / a`,
//! `ȧ = −ε v cosθ` with `v = (aβ − k) cosθ`. Liftoff occurs where the leg
//! force balance `u − g − εβż` vanishes; flight is ballistic and folded into
//! the reset.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::averaging;
use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions, Stepper};
use crate::settings::Settings;
use crate::system::{CrossingDirection, HybridSystemDef, Interval, StateX};

pub const STANDARD_GRAVITY: f64 = 9.81;
pub const DEFAULT_Z0: f64 = 0.17;
/// Phase interval half-width Ψ, just short of a full cycle.
pub const PHASE_HALF_WIDTH: f64 = 2.0 * PI - 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopperParams {
    /// Stance angular frequency (rad/s).
    pub omega: f64,
    /// Energization gain (N·s/m²).
    pub k: f64,
    /// Viscous drag (N/(m/s)).
    pub beta: f64,
    pub g: f64,
    pub eps: f64,
    /// Nominal leg length (m).
    pub z0: f64,
}

impl Default for HopperParams {
    fn default() -> Self {
        Self {
            omega: 50.0,
            k: 0.4,
            beta: 10.0,
            g: STANDARD_GRAVITY,
            eps: 2.0,
            z0: DEFAULT_Z0,
        }
    }
}

impl HopperParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("omega", self.omega),
            ("k", self.k),
            ("beta", self.beta),
            ("g", self.g),
            ("z0", self.z0),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eps >= 0.0 && self.eps < self.omega) {
            return Err(Error::InvalidParams(format!(
                "eps must lie in [0, omega) = [0, {}), got {}",
                self.omega, self.eps
            )));
        }
        Ok(())
    }

    pub fn a_star(&self) -> f64 {
        self.k / self.beta
    }

    pub fn with_eps(self, eps: f64) -> Self {
        Self { eps, ..self }
    }
}

/// Liftoff guard as a smooth function: `ε(k/a − β) cosθ − ω sinθ`.
///
/// Equals `−cosθ · (ω tanθ − ε(k/a − β))`, so it shares the zero set of the
/// tangent form near θ = π, agrees with it to first order there, and has no
/// pole at θ = π/2.
pub fn hopper_guard(p: &HopperParams, theta: f64, a: f64, eps: f64) -> f64 {
    eps * (p.k / a - p.beta) * theta.cos() - p.omega * theta.sin()
}

/// Liftoff guard in tangent form `ω tanθ − ε(k/a − β)`.
pub fn hopper_guard_tan(p: &HopperParams, theta: f64, a: f64, eps: f64) -> f64 {
    p.omega * theta.tan() - eps * (p.k / a - p.beta)
}

/// Touchdown amplitude after ballistic flight from liftoff at `(θ, a)`:
/// `√(a² cos²θ − 2ga sinθ / ω²)`. NaN when the leg cannot reach the ground.
pub fn touchdown_amplitude(p: &HopperParams, theta: f64, a: f64) -> f64 {
    let radicand = a * a * theta.cos().powi(2) - 2.0 * p.g * a * theta.sin() / (p.omega * p.omega);
    if radicand < 0.0 {
        f64::NAN
    } else {
        radicand.sqrt()
    }
}

pub fn make_vertical_hopper(params: HopperParams) -> Result<HybridSystemDef> {
    params.validate()?;
    let p = params;
    HybridSystemDef::builder("hopper", StateX::scalar(PI, p.a_star()))
        .x1_bounds(-PHASE_HALF_WIDTH, PHASE_HALF_WIDTH)
        .x2_bounds(vec![Interval::new(0.0, f64::INFINITY)])
        .phase_rate(p.omega)
        .eps_range(0.0, p.omega)
        .perturbation(move |x, _eps| {
            let (theta, a) = (x.x1, x.x2[0]);
            let v = (a * p.beta - p.k) * theta.cos();
            (v * theta.sin() / a, DVector::from_element(1, -v * theta.cos()))
        })
        .guard(move |x, eps| hopper_guard(&p, x.x1, x.x2[0], eps))
        .crossing(CrossingDirection::Rising)
        .reset(move |x, _eps| StateX::scalar(0.0, touchdown_amplitude(&p, x.x1, x.x2[0])))
        .build()
}

/// Closed forms for the hopper, used as independent checks on the engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopperOracles {
    pub a_star: f64,
    /// Df̄ = −β / (2ω)
    pub dfbar: f64,
    /// S₁ = −gβ² / (kω³)
    pub s1: f64,
    /// W = S₁ + π Df̄
    pub w: f64,
}

impl HopperOracles {
    /// f̄(a) = (k − aβ) / (2ω)
    pub fn averaged_field(&self, p: &HopperParams, a: f64) -> f64 {
        (p.k - a * p.beta) / (2.0 * p.omega)
    }

    /// D R̄ = 1 + ε S₁
    pub fn reset_jacobian(&self, eps: f64) -> f64 {
        1.0 + eps * self.s1
    }
}

pub fn hopper_oracles(p: &HopperParams) -> HopperOracles {
    let dfbar = -p.beta / (2.0 * p.omega);
    let s1 = -p.g * p.beta * p.beta / (p.k * p.omega.powi(3));
    HopperOracles {
        a_star: p.a_star(),
        dfbar,
        s1,
        w: s1 + PI * dfbar,
    }
}

/// `(z, ż) → (θ, a)`, with θ in [−π/2, 3π/2).
pub fn to_phase_energy(p: &HopperParams, z: f64, zdot: f64) -> (f64, f64) {
    let s = p.z0 - z;
    let c = -zdot / p.omega;
    let a = s.hypot(c);
    let theta = (s.atan2(c) + 0.5 * PI).rem_euclid(2.0 * PI) - 0.5 * PI;
    (theta, a)
}

pub fn from_phase_energy(p: &HopperParams, theta: f64, a: f64) -> (f64, f64) {
    (p.z0 - a * theta.sin(), -a * p.omega * theta.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stance,
    Flight,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Stance => "stance",
            Mode::Flight => "flight",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrideRecord {
    pub touchdown_time: f64,
    pub liftoff_time: f64,
    pub next_touchdown_time: f64,
    pub a_touchdown: f64,
    pub liftoff_theta: f64,
    pub liftoff_a: f64,
    /// Touchdown reset applied to the liftoff state.
    pub a_reset: f64,
    /// Touchdown amplitude from the ballistic flight itself.
    pub a_next_touchdown: f64,
}

impl StrideRecord {
    pub fn stance_duration(&self) -> f64 {
        self.liftoff_time - self.touchdown_time
    }
}

/// Physical-coordinate samples of a multi-stride run.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalTrajectory {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub zdot: Vec<f64>,
    /// Phase in stance; undefined (NaN) in flight.
    pub theta: Vec<f64>,
    /// Amplitude in stance; in flight, the conserved touchdown amplitude
    /// `√(ż² + 2g(z − z₀)) / ω`.
    pub a: Vec<f64>,
    pub mode: Vec<Mode>,
    /// Index of the stride each sample belongs to.
    pub stride: Vec<usize>,
    pub strides: Vec<StrideRecord>,
    pub params: HopperParams,
}

impl PhysicalTrajectory {
    fn push(&mut self, t: f64, z: f64, zdot: f64, theta: f64, a: f64, mode: Mode, stride: usize) {
        self.times.push(t);
        self.z.push(z);
        self.zdot.push(zdot);
        self.theta.push(theta);
        self.a.push(a);
        self.mode.push(mode);
        self.stride.push(stride);
    }

    /// Touchdown amplitude of every stride, followed by the final touchdown.
    pub fn touchdown_amplitudes(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.strides.iter().map(|s| s.a_touchdown).collect();
        if let Some(last) = self.strides.last() {
            out.push(last.a_next_touchdown);
        }
        out
    }
}

const FLIGHT_SAMPLES: usize = 40;

/// Leg force balance `u − g − εβż` in physical coordinates.
pub fn liftoff_force(p: &HopperParams, z: f64, zdot: f64) -> f64 {
    let (_, a) = to_phase_energy(p, z, zdot);
    p.omega * p.omega * (p.z0 - z) + p.eps * p.k * zdot / a - p.eps * p.beta * zdot
}

/// Alternate stance integration in `(z, ż)` with analytic ballistic flight.
pub fn simulate_physical_hopper(
    params: HopperParams,
    a_init: f64,
    n_strides: usize,
    settings: &Settings,
) -> Result<PhysicalTrajectory> {
    params.validate()?;
    if !(a_init > 0.0 && a_init.is_finite()) {
        return Err(Error::InvalidParams(format!("a_init must be positive, got {a_init}")));
    }
    if n_strides == 0 {
        return Err(Error::InvalidParams("n_strides must be at least 1".into()));
    }
    let p = params;
    let stance = move |y: &DVector<f64>| {
        let (z, zdot) = (y[0], y[1]);
        DVector::from_vec(vec![zdot, liftoff_force(&p, z, zdot)])
    };
    let opts = OdeOptions::from_settings(settings).with_max_step(PI / (8.0 * p.omega));
    let mut traj = PhysicalTrajectory {
        times: Vec::new(),
        z: Vec::new(),
        zdot: Vec::new(),
        theta: Vec::new(),
        a: Vec::new(),
        mode: Vec::new(),
        stride: Vec::new(),
        strides: Vec::new(),
        params: p,
    };

    let mut t = 0.0;
    let mut a_td = a_init;
    for stride in 0..n_strides {
        let touchdown_time = t;
        let y0 = DVector::from_vec(vec![p.z0, -a_td * p.omega]);
        traj.push(t, p.z0, y0[1], 0.0, a_td, Mode::Stance, stride);

        let max_time = 10.0 * PI / p.omega;
        let mut stepper = Stepper::new(&stance, 0.0, y0, 1.0, opts);
        let force = |y: &DVector<f64>| liftoff_force(&p, y[0], y[1]);
        let mut f_prev = force(stepper.y());
        let (t_lo, y_lo) = loop {
            if stepper.t() >= max_time {
                return Err(Error::NoLiftoff);
            }
            let step = stepper.advance(max_time)?;
            let f_new = force(&step.y);
            if f_prev > 0.0 && f_new <= 0.0 {
                let (s, y) = ode::bisect_event(&stance, &step.y_prev, step.t - step.t_prev, &force, settings.tol_event_time * 1e-4);
                break (step.t_prev + s, y);
            }
            let (theta, a) = to_phase_energy(&p, step.y[0], step.y[1]);
            traj.push(t + step.t, step.y[0], step.y[1], theta, a, Mode::Stance, stride);
            f_prev = f_new;
        };
        let (theta_lo, a_lo) = to_phase_energy(&p, y_lo[0], y_lo[1]);
        traj.push(t + t_lo, y_lo[0], y_lo[1], theta_lo, a_lo, Mode::Stance, stride);
        let liftoff_time = t + t_lo;

        let (z_lo, v_lo) = (y_lo[0], y_lo[1]);
        let radicand = v_lo * v_lo + 2.0 * p.g * (z_lo - p.z0);
        if radicand < 0.0 {
            return Err(Error::NonPhysical(format!(
                "flight from z = {z_lo}, ż = {v_lo} never returns to the nominal leg length"
            )));
        }
        let flight_time = (v_lo + radicand.sqrt()) / p.g;
        if !(flight_time > 0.0) {
            return Err(Error::NonPhysical(format!("non-positive flight time {flight_time}")));
        }
        let a_next = radicand.sqrt() / p.omega;
        for k in 1..FLIGHT_SAMPLES {
            let s = flight_time * k as f64 / FLIGHT_SAMPLES as f64;
            let z = z_lo + v_lo * s - 0.5 * p.g * s * s;
            let zd = v_lo - p.g * s;
            traj.push(liftoff_time + s, z, zd, f64::NAN, a_next, Mode::Flight, stride);
        }
        t = liftoff_time + flight_time;
        traj.strides.push(StrideRecord {
            touchdown_time,
            liftoff_time,
            next_touchdown_time: t,
            a_touchdown: a_td,
            liftoff_theta: theta_lo,
            liftoff_a: a_lo,
            a_reset: touchdown_amplitude(&p, theta_lo, a_lo),
            a_next_touchdown: a_next,
        });
        a_td = a_next;
        if !a_td.is_finite() || a_td <= 0.0 {
            return Err(Error::NonPhysical(format!("touchdown amplitude {a_td}")));
        }
    }
    let last = traj.strides.len();
    traj.push(t, p.z0, -a_td * p.omega, 0.0, a_td, Mode::Stance, last);
    Ok(traj)
}

/// Stride-sampled comparison between the hybrid amplitude and the averaged hybrid model.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    /// Touchdown amplitudes `a_k`, k = 0..=n_strides.
    pub a_hybrid: Vec<f64>,
    /// k applications of the averaged return map.
    pub a_averaged: Vec<f64>,
    pub residual: Vec<f64>,
}

impl ResidualSeries {
    pub fn max_abs(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

pub fn residual_vs_averaged(
    params: HopperParams,
    a_init: f64,
    n_strides: usize,
    settings: &Settings,
) -> Result<ResidualSeries> {
    let sys = make_vertical_hopper(params)?;
    let traj = simulate_physical_hopper(params, a_init, n_strides, settings)?;
    let a_hybrid = traj.touchdown_amplitudes();
    let samples: Vec<(usize, f64)> = (0..a_hybrid.len()).map(|k| (k, 0.0)).collect();
    let a_averaged: Vec<f64> = averaging::averaged_hybrid_samples(&sys, &DVector::from_element(1, a_init), params.eps, &samples, settings)?
        .iter()
        .map(|v| v[0])
        .collect();
    let residual = a_hybrid.iter().zip(&a_averaged).map(|(h, a)| h - a).collect();
    Ok(ResidualSeries { a_hybrid, a_averaged, residual })
}

/// `(stride, phase)` of each trajectory sample in the averaged model: stance
/// samples sit at their phase, flight samples at the start of the next stride
/// (flight is the reset).
pub fn averaging_samples(traj: &PhysicalTrajectory) -> Vec<(usize, f64)> {
    traj.mode
        .iter()
        .zip(&traj.stride)
        .zip(&traj.theta)
        .map(|((mode, &k), theta)| match mode {
            Mode::Stance => (k, theta.clamp(0.0, PI)),
            Mode::Flight => (k + 1, 0.0),
        })
        .collect()
}
