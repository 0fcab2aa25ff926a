mod common;

use common::*;
use hybrid_averager::averaging::{self, log_spaced, TaylorResetExpansion};
use hybrid_averager::models::hopper::hopper_oracles;
use hybrid_averager::models::HopperParams;
use hybrid_averager::numerics;
use hybrid_averager::stability::{self, Verdict, WForm};
use hybrid_averager::{register_system, Error, HybridSystemDef, StateX};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn expansion(sys: &HybridSystemDef) -> TaylorResetExpansion {
    averaging::extract_taylor_expansion(sys, &averaging::default_eps_grid(sys), &sys.slow_samples(), &settings()).unwrap()
}

/// Planar system: `F₂ = −A x₂`, reset by the rotation `Q(θ)`, guard `x₁ = 1`.
fn rotating(theta: f64, a: DMatrix<f64>) -> HybridSystemDef {
    let q = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
    HybridSystemDef::builder("rotating", StateX::new(1.0, DVector::zeros(2)))
        .perturbation(move |x, _| (0.0, -(&a * &x.x2)))
        .constant_phase_guard()
        .reset(move |x, _| StateX::new(0.0, &q * &x.x2))
        .build()
        .unwrap()
}

#[test]
fn hopper_full_map_near_anchor() {
    let h = hopper();
    let p = stability::full_poincare_map(&h, &v1(0.04), 2.0, &settings()).unwrap()[0];
    assert!((p - 0.04).abs() < 2e-4);
}

#[test]
fn identity_reset_at_equilibrium_without_perturbation_is_fixed() {
    let c = classical();
    assert_eq!(stability::full_poincare_map(&c, &v1(0.0), 0.0, &settings()).unwrap()[0], 0.0);
    assert_eq!(stability::full_poincare_map(&c, &v1(0.37), 0.0, &settings()).unwrap()[0], 0.37);
}

#[test]
fn full_map_equals_composed_constant_flow_time_map() {
    let h = hopper();
    let s = settings();
    let a = stability::full_poincare_map(&h, &v1(0.05), 0.5, &s).unwrap();
    let b = stability::constant_flow_time_map(&h, &v1(0.05), 0.5, &s).unwrap();
    assert!((a - b).norm() < 1e-7);
}

#[test]
fn hopper_full_fixed_point_converges() {
    let h = hopper();
    let s = settings();
    for eps in [0.1, 0.5, 2.0] {
        let fp = stability::find_full_fixed_point(&h, &v1(0.045), eps, &s).unwrap();
        let p = stability::full_poincare_map(&h, &fp.x, eps, &s).unwrap();
        assert!((p - &fp.x).norm() <= s.newton_tol);
        assert!(fp.condition < s.cond_max);
        assert!(fp.iterations > 0);
    }
}

#[test]
fn counterexample_fixed_point_is_not_hyperbolic() {
    let h = nonhyperbolic();
    let err = stability::find_full_fixed_point(&h, &v1(0.0), 0.01, &settings()).unwrap_err();
    match err {
        Error::SingularJacobian { sigma_min, .. } => assert!(sigma_min < 1e-4, "{sigma_min}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn singular_map_is_reported() {
    let s = settings();
    let err = stability::find_fixed_point(|x| Ok(x.clone()), &v1(1.0), &s).unwrap_err();
    assert!(matches!(err, Error::SingularJacobian { .. }));
}

#[test]
fn newton_iteration_budget_is_enforced() {
    let s = hybrid_averager::Settings { newton_iters: 2, ..settings() };
    let err = stability::find_fixed_point(|x| Ok(x.map(|v| v.cos())), &v1(3.0), &s).unwrap_err();
    assert!(matches!(err, Error::NoConvergence { iterations: 2, .. }), "{err:?}");
    let fp = stability::find_fixed_point(|x| Ok(x.map(|v| v.cos())), &v1(3.0), &settings()).unwrap();
    assert!((fp.x[0] - 0.7390851332151607).abs() < 1e-10);
}

#[test]
fn full_jacobian_tracks_averaged_jacobian() {
    let h = hopper();
    let s = settings();
    let e = expansion(&h);
    let fp = stability::find_full_fixed_point(&h, h.x2_star(), 0.05, &s).unwrap();
    let full = stability::full_poincare_jacobian(&h, &fp.x, 0.05, &s).unwrap();
    let avg = averaging::averaged_poincare_jacobian(&h, 0.05, &e, &s).unwrap();
    assert!((&full.direct - &avg.product_form).norm() < 3e-3);
    let j0 = stability::full_poincare_jacobian(&h, h.x2_star(), 0.0, &s).unwrap();
    assert!((j0.direct[0] - 1.0).abs() < 1e-9);
}

#[test]
fn direct_and_chain_rule_jacobians_agree() {
    let s = settings();
    for sys in all_models() {
        for eps in [0.05, 0.3] {
            for x2 in sys.slow_samples() {
                let j = stability::full_poincare_jacobian(&sys, &x2, eps, &s).unwrap();
                assert!(j.agreement() / j.direct.norm() < 1e-5, "{} eps={eps}: {:?}", sys.name, j);
            }
        }
    }
}

#[test]
fn hopper_certificate() {
    let h = hopper();
    let c = stability::certify_orthogonal_reset(&h, &expansion(&h), &settings()).unwrap();
    let o = hopper_oracles(&HopperParams::default());
    assert!((c.w[0] - o.w).abs() < 1e-3);
    assert!((c.w[0] + 0.333779).abs() < 1e-3);
    assert_eq!(c.verdict, Verdict::Stable);
    assert_eq!(c.verdict_expanded, Verdict::Stable);
    assert_eq!(c.form, WForm::ResetFirst);
    assert!(!c.forms_disagree);
    assert!(c.s0_orthogonality_defect <= 1e-8);
    assert!(c.unity_blocks_diagonal);
    assert!(c.symmetric_part_eigs[0] < 0.0);
}

#[test]
fn counterexample_certificate_is_degenerate() {
    let h = nonhyperbolic();
    let c = stability::certify_orthogonal_reset(&h, &expansion(&h), &settings()).unwrap();
    assert!(c.w[0].abs() < 1e-6);
    assert_eq!(c.verdict, Verdict::DegenerateW);
    assert_eq!(c.verdict.as_str(), "degenerate_W");
}

#[test]
fn classical_certificate_is_stable() {
    let c = classical();
    let cert = stability::certify_orthogonal_reset(&c, &expansion(&c), &settings()).unwrap();
    assert!((cert.w[0] + 2.0 * std::f64::consts::PI).abs() < 1e-6);
    assert_eq!(cert.verdict, Verdict::Stable);
}

#[test]
fn doubling_reset_is_not_orthogonal() {
    let def = scaled_reset(1.0, 2.0);
    let c = stability::certify_orthogonal_reset(&def, &expansion(&def), &settings()).unwrap();
    assert!((c.s0_orthogonality_defect - 3.0).abs() < 1e-6);
    assert_eq!(c.verdict, Verdict::NotOrthogonal);
}

#[test]
fn growing_flow_is_not_certified() {
    let def = HybridSystemDef::builder("growing", StateX::scalar(1.0, 0.0))
        .perturbation(|x, _| (0.0, x.x2.clone()))
        .constant_phase_guard()
        .reset(|x, _| StateX::new(0.0, x.x2.clone()))
        .build()
        .unwrap();
    let c = stability::certify_orthogonal_reset(&def, &expansion(&def), &settings()).unwrap();
    assert!((c.w[0] - 1.0).abs() < 1e-6);
    assert_eq!(c.verdict, Verdict::UnstableOrInconclusive);
}

#[test]
fn reflection_reset_makes_the_two_w_forms_disagree() {
    // S₀ = −1, S₁ = −c, Df̄ = −1, x₁* = 1
    let c = 0.5;
    let def = HybridSystemDef::builder("reflect", StateX::scalar(1.0, 0.0))
        .perturbation(|x, _| (0.0, -x.x2.clone()))
        .constant_phase_guard()
        .reset(move |x, eps| StateX::scalar(0.0, -x.x2[0] * (1.0 + eps * c)))
        .build()
        .unwrap();
    let cert = stability::certify_orthogonal_reset(&def, &expansion(&def), &settings()).unwrap();
    assert!((cert.w[0] - (c - 1.0)).abs() < 1e-6);
    assert!((cert.w_expanded[0] - (1.0 - c)).abs() < 1e-6);
    assert!(cert.forms_disagree);
    assert_eq!(cert.verdict, Verdict::Stable);
    assert_eq!(cert.verdict_expanded, Verdict::UnstableOrInconclusive);
}

#[test]
fn rotation_reset_certificate_in_two_dimensions() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
    let def = rotating(0.7, a.clone());
    let h = register_system(def, &settings()).unwrap();
    let c = stability::certify_orthogonal_reset(&h, &expansion(&h), &settings()).unwrap();
    assert!(c.s0_orthogonality_defect < 1e-8);
    assert!((&c.w + &a).norm() < 1e-6, "{}", c.w);
    assert_eq!(c.verdict, Verdict::Stable);
    assert!(c.unity_blocks_diagonal);
}

#[test]
fn shear_reset_fails_the_jordan_check() {
    let def = HybridSystemDef::builder("shear", StateX::new(1.0, DVector::zeros(2)))
        .perturbation(|x, _| (0.0, -x.x2.clone()))
        .constant_phase_guard()
        .reset(|x, _| StateX::new(0.0, DVector::from_vec(vec![x.x2[0] + x.x2[1], x.x2[1]])))
        .build()
        .unwrap();
    let c = stability::certify_orthogonal_reset(&def, &expansion(&def), &settings()).unwrap();
    assert!(!c.unity_blocks_diagonal);
    assert_eq!(c.verdict, Verdict::NotOrthogonal);
}

#[test]
fn hopper_sweep_orders() {
    let h = hopper();
    let s = settings();
    let r = stability::epsilon_sweep(&h, &log_spaced(0.01, 0.5, 8), &s).unwrap();
    assert!(r.points.iter().all(|p| p.failure.is_none()));
    let order = r.fitted_gap_order.unwrap();
    assert!(order >= 1.75, "{order}");
    assert!(r.gap_order_ok(&s) && r.drift_order_ok(&s));
    assert!(r.fitted_drift_order >= 0.75);
    assert!(!r.non_hyperbolic);
    assert_eq!(r.eig_gaps.len(), 8);
}

#[test]
fn sweep_invariants_hold_on_the_hopper() {
    let h = hopper();
    let s = settings();
    let eps_values = log_spaced(0.01, 0.5, 8);
    let r = stability::epsilon_sweep(&h, &eps_values, &s).unwrap();
    let cert = stability::certify_orthogonal_reset(&h, &r.expansion, &s).unwrap();
    assert_eq!(cert.verdict, Verdict::Stable);
    for (i, p) in r.points.iter().enumerate() {
        // the certificate's conclusion, checked
        assert!(p.spectral_radius < 1.0);
        assert!(p.fp_residual <= s.newton_tol);
        if i > 0 {
            let prev = r.points[i - 1].fixed_point.as_ref().unwrap();
            let dx = (p.fixed_point.as_ref().unwrap() - prev).norm();
            assert!(dx <= r.continuation_constant * (p.eps - r.points[i - 1].eps) + 1e-15);
        }
    }
    // contraction inequality with 2× slack on the O(ε²) term
    let max_eig = cert.symmetric_part_eigs.iter().cloned().fold(f64::MIN, f64::max);
    let mut rng = StdRng::seed_from_u64(11);
    for &eps in &eps_values {
        let dp = averaging::averaged_poincare_jacobian(&h, eps, &r.expansion, &s).unwrap().product_form;
        for _ in 0..20 {
            let v = if rng.random_bool(0.5) { v1(1.0) } else { v1(-1.0) };
            let lhs = (&dp * &v).norm_squared() - v.norm_squared();
            assert!(lhs <= 0.5 * eps * max_eig, "eps={eps}");
        }
    }
}

#[test]
fn counterexample_sweep_flags_non_hyperbolicity() {
    let h = nonhyperbolic();
    let r = stability::epsilon_sweep(&h, &log_spaced(0.01, 0.5, 8), &settings()).unwrap();
    assert!(r.non_hyperbolic);
    assert!(r.fitted_gap_order.unwrap() >= 1.75);
    for p in &r.points {
        // eigenvalue 1 + O(ε²): σ(DP − I) is second order
        assert!(p.hyperbolicity < 0.5 * p.eps + 1e-3, "{p:?}");
    }
}

#[test]
fn classical_sweep_orders() {
    let c = classical();
    let s = settings();
    let r = stability::epsilon_sweep(&c, &log_spaced(0.01, 0.5, 8), &s).unwrap();
    assert!(r.fitted_gap_order.unwrap() >= 1.75);
    assert!(r.fitted_drift_order >= 0.75 && r.fitted_drift_order.is_finite());
    assert!(!r.drift_below_resolution);
    assert!(r.quadratic_model_valid_to.is_some());
}

#[test]
fn planar_sweep_matches_eigenvalues() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
    let h = register_system(rotating(0.7, a), &settings()).unwrap();
    let r = stability::epsilon_sweep(&h, &log_spaced(0.01, 0.3, 6), &settings()).unwrap();
    assert!(r.fitted_gap_order.unwrap() >= 1.75, "{:?}", r.eig_gaps);
}

#[test]
fn sweep_preconditions() {
    let h = hopper();
    let s = settings();
    for eps in [vec![0.01, 0.1, 0.5], vec![0.01, 0.02, 0.02, 0.1, 0.2], vec![0.0, 0.01, 0.1, 0.2, 0.3], vec![0.1, 1.0, 10.0, 30.0, 60.0]] {
        let err = stability::epsilon_sweep(&h, &eps, &s).unwrap_err();
        assert!(err.is_usage(), "{eps:?}: {err:?}");
    }
}

#[test]
fn matching_is_order_independent() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.5, -0.2]));
    let b = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.2, 0.91, 0.5]));
    assert!((numerics::spectral_distance(&a, &b) - 0.01).abs() < 1e-12);
}
