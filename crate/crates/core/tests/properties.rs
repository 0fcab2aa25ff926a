mod common;

use common::*;
use hybrid_averager::averaging;
use hybrid_averager::flow;
use hybrid_averager::models::hopper::{from_phase_energy, to_phase_energy};
use hybrid_averager::models::HopperParams;
use hybrid_averager::numerics;
use hybrid_averager::report::fmt_f64;
use hybrid_averager::StateX;
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_format_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = fmt_f64(v);
        prop_assert_eq!(s.parse::<f64>().unwrap(), v);
        let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
        prop_assert_eq!(digits, 17);
    }

    #[test]
    fn phase_energy_round_trip(z in -0.5f64..0.5, zd in -5.0f64..5.0) {
        let p = HopperParams::default();
        let (theta, a) = to_phase_energy(&p, z, zd);
        prop_assume!(a > 1e-6);
        let (z2, zd2) = from_phase_energy(&p, theta, a);
        prop_assert!((z - z2).abs() < 1e-10);
        prop_assert!((zd - zd2).abs() < 1e-10);
    }

    #[test]
    fn spectral_distance_is_a_symmetric_matching(a in prop::collection::vec(-2.0f64..2.0, 3), b in prop::collection::vec(-2.0f64..2.0, 3)) {
        let ma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a.clone()));
        let mb = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(b.clone()));
        let d = numerics::spectral_distance(&ma, &mb);
        prop_assert!((d - numerics::spectral_distance(&mb, &ma)).abs() < 1e-12);
        prop_assert!(numerics::spectral_distance(&ma, &ma) < 1e-12);
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        // sorted pairing is optimal on the real line
        let sorted = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!((d - sorted).abs() < 1e-9);
    }

    #[test]
    fn hopper_averaged_field_is_affine(a in 0.005f64..0.5) {
        let h = hopper();
        let f = averaging::averaged_field(&h, &v1(a), &settings()).unwrap()[0];
        prop_assert!((f - (0.4 - 10.0 * a) / 100.0).abs() < 1e-9);
    }

    #[test]
    fn guard_crossings_are_consistent(a in 0.01f64..0.15, eps in 0.0f64..10.0) {
        let h = hopper();
        let s = settings();
        let c = flow::flow_to_guard_directed(&h, &StateX::scalar(0.0, a), eps, flow::SearchDirection::Forward, &s).unwrap();
        prop_assert!(h.guard(&c.state_at_crossing, eps).abs() <= s.tol_guard);
        prop_assert!(c.tau > 0.0);
        prop_assert!(c.transversality > 0.0);
    }

    #[test]
    fn stride_map_preserves_ordering(a in 0.01f64..0.1, b in 0.01f64..0.1, eps in 0.05f64..2.0) {
        prop_assume!((a - b).abs() > 1e-4);
        let h = hopper();
        let s = settings();
        let pa = hybrid_averager::stability::full_poincare_map(&h, &v1(a), eps, &s).unwrap()[0];
        let pb = hybrid_averager::stability::full_poincare_map(&h, &v1(b), eps, &s).unwrap()[0];
        // monotone and contracting toward the anchor
        prop_assert!((pa - pb) * (a - b) > 0.0);
        prop_assert!((pa - pb).abs() < (a - b).abs());
    }
}
