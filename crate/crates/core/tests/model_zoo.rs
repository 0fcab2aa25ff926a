mod common;

use std::f64::consts::PI;

use common::*;
use hybrid_averager::averaging;
use hybrid_averager::models::hopper::{
    from_phase_energy, hopper_guard, hopper_guard_tan, residual_vs_averaged, simulate_physical_hopper, to_phase_energy,
    touchdown_amplitude, Mode,
};
use hybrid_averager::models::nonhyperbolic::full_map_slope;
use hybrid_averager::models::{hopper_oracles, make_vertical_hopper, HopperParams, Model};
use hybrid_averager::stability;
use hybrid_averager::{register_system, Error};

#[test]
fn hopper_oracle_values() {
    let o = hopper_oracles(&HopperParams::default());
    assert!((o.a_star - 0.04).abs() < 1e-15);
    assert!((o.s1 + 0.019620).abs() < 5e-7);
    assert!((o.w + 0.333779).abs() < 5e-7);
    assert!((o.reset_jacobian(2.0) - 0.960760).abs() < 1e-6);
}

#[test]
fn hopper_guard_and_reset_at_anchor() {
    let p = HopperParams::default();
    assert!(hopper_guard_tan(&p, PI, 0.04, 2.0).abs() < 1e-12);
    assert!((touchdown_amplitude(&p, PI, 0.04) - 0.04).abs() < 1e-15);
    // leg cannot reach the ground from a high, slow liftoff
    assert!(touchdown_amplitude(&p, PI / 2.0, 0.001).is_nan());
}

#[test]
fn nonpositive_parameters_are_rejected() {
    let p = HopperParams::default();
    for bad in [
        HopperParams { omega: 0.0, ..p },
        HopperParams { k: -0.4, ..p },
        HopperParams { beta: 0.0, ..p },
        HopperParams { g: 0.0, ..p },
        HopperParams { z0: -1.0, ..p },
        HopperParams { eps: 50.0, ..p },
    ] {
        assert!(matches!(make_vertical_hopper(bad), Err(Error::InvalidParams(_))), "{bad:?}");
    }
}

#[test]
fn coordinate_transform_round_trips() {
    let p = HopperParams::default();
    for k in 0..50 {
        let z = 0.05 + 0.25 * (k as f64 * 0.37).fract();
        let zd = -3.0 + 6.0 * (k as f64 * 0.61).fract();
        let (theta, a) = to_phase_energy(&p, z, zd);
        if a < 1e-6 {
            continue;
        }
        let (z2, zd2) = from_phase_energy(&p, theta, a);
        assert!((z - z2).abs() < 1e-10 && (zd - zd2).abs() < 1e-10);
    }
}

#[test]
fn engines_match_hopper_closed_forms() {
    let h = hopper();
    let s = settings();
    let o = hopper_oracles(&HopperParams::default());
    for eps in [0.01, 0.1, 0.5] {
        let j = averaging::effective_reset_jacobian_analytic(&h, eps, &s).unwrap()[0];
        assert!((j - o.reset_jacobian(eps)).abs() <= 1e-4);
    }
    let e = averaging::extract_taylor_expansion(&h, &averaging::default_eps_grid(&h), &h.slow_samples(), &s).unwrap();
    let c = stability::certify_orthogonal_reset(&h, &e, &s).unwrap();
    assert!((c.w[0] - o.w).abs() <= 1e-3);
    assert!((c.dfbar[0] - o.dfbar).abs() < 1e-9);
}

#[test]
fn conservative_hopper_repeats_every_stride() {
    let p = HopperParams { eps: 0.0, ..HopperParams::default() };
    let t = simulate_physical_hopper(p, 0.04, 3, &settings()).unwrap();
    assert_eq!(t.strides.len(), 3);
    for st in &t.strides {
        assert!((st.a_touchdown - 0.04).abs() < 1e-12);
        assert!((st.stance_duration() - PI / 50.0).abs() < 1e-12);
    }
    let first = t.strides[0].next_touchdown_time - t.strides[0].touchdown_time;
    for st in &t.strides {
        assert!(((st.next_touchdown_time - st.touchdown_time) - first).abs() < 1e-12);
    }
}

#[test]
fn physical_trajectory_invariants() {
    let p = HopperParams::default();
    let t = simulate_physical_hopper(p, 0.06, 6, &settings()).unwrap();
    assert!(t.times.windows(2).all(|w| w[1] >= w[0]));
    for st in &t.strides {
        let i = t.times.iter().position(|&x| x == st.touchdown_time).unwrap();
        assert_eq!(t.z[i], p.z0);
        assert_eq!(t.mode[i], Mode::Stance);
        // ballistic touchdown agrees with the reset formula
        assert!((st.a_next_touchdown - st.a_reset).abs() < 1e-8);
    }
    let mut energy: Option<(usize, f64)> = None;
    for i in 0..t.times.len() {
        if t.mode[i] != Mode::Flight {
            energy = None;
            continue;
        }
        assert!(t.theta[i].is_nan());
        let e = 0.5 * t.zdot[i].powi(2) + p.g * t.z[i];
        match energy {
            Some((stride, e0)) if stride == t.stride[i] => assert!((e - e0).abs() <= 1e-8 * e0.abs()),
            _ => energy = Some((t.stride[i], e)),
        }
        assert!((t.a[i] - t.strides[t.stride[i]].a_next_touchdown).abs() < 1e-12);
    }
}

#[test]
fn physical_liftoff_is_the_guard_zero() {
    let s = settings();
    for (a0, eps) in [(0.06, 2.0), (0.03, 0.5), (0.1, 5.0)] {
        let p = HopperParams { eps, ..HopperParams::default() };
        let t = simulate_physical_hopper(p, a0, 4, &s).unwrap();
        for st in &t.strides {
            let g = hopper_guard(&p, st.liftoff_theta, st.liftoff_a, eps);
            assert!(g.abs() < 1e-8, "γ at liftoff = {g}");
            assert!((st.liftoff_theta - PI).abs() < 0.5);
        }
    }
}

#[test]
fn physical_and_phase_energy_strides_agree() {
    let h = hopper();
    let s = settings();
    let p = HopperParams::default();
    let t = simulate_physical_hopper(p, 0.06, 5, &s).unwrap();
    let mut a = v1(0.06);
    for st in &t.strides {
        assert!((st.a_touchdown - a[0]).abs() < 1e-9);
        a = stability::full_poincare_map(&h, &a, p.eps, &s).unwrap();
    }
}

#[test]
fn simulation_preconditions() {
    let p = HopperParams::default();
    let s = settings();
    assert!(matches!(simulate_physical_hopper(p, 0.0, 3, &s), Err(Error::InvalidParams(_))));
    assert!(matches!(simulate_physical_hopper(p, 0.04, 0, &s), Err(Error::InvalidParams(_))));
}

#[test]
fn residual_is_zero_without_perturbation() {
    let p = HopperParams { eps: 0.0, ..HopperParams::default() };
    let r = residual_vs_averaged(p, 0.05, 5, &settings()).unwrap();
    assert!(r.residual.iter().all(|x| x.abs() < 1e-12));
    assert!(r.a_averaged.iter().all(|&a| a == 0.05));
}

#[test]
fn residual_stays_an_order_below_the_anchor_amplitude() {
    let s = settings();
    for a0 in [0.04, 0.02, 0.06, 0.1] {
        let r = residual_vs_averaged(HopperParams::default(), a0, 12, &s).unwrap();
        assert_eq!(r.residual.len(), 13);
        assert!(r.max_abs() < 0.004, "a0={a0}: {}", r.max_abs());
    }
}

#[test]
fn counterexample_return_map_slope() {
    let h = nonhyperbolic();
    let s = settings();
    for eps in [0.0, 0.01, 0.1] {
        let j = stability::full_poincare_jacobian(&h, &v1(0.0), eps, &s).unwrap();
        assert!((j.direct[0] - full_map_slope(1.0, eps)).abs() < 1e-9);
        assert!((j.direct[0] - 1.0).abs() <= eps * eps);
    }
    assert_eq!(stability::full_poincare_map(&h, &v1(0.3), 0.0, &s).unwrap()[0], 0.3);
}

#[test]
fn classical_monodromy_without_perturbation() {
    let c = classical();
    let j = stability::full_poincare_jacobian(&c, &v1(0.0), 0.0, &settings()).unwrap();
    assert!((j.direct[0] - 1.0).abs() < 1e-9);
}

#[test]
fn models_by_name_register() {
    for name in hybrid_averager::models::MODEL_NAMES {
        let m = Model::by_name(name).unwrap();
        register_system(m.system().unwrap(), &settings()).unwrap();
    }
}
