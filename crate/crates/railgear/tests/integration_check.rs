use proptest::prelude::*;

use railgear::adhesion::{adhesion_step, AdhesionConfig, AdhesionCtrlState};
use railgear::integration::{integrate, long_torque, TorqueLimits};

fn limits() -> impl Strategy<Value = TorqueLimits> {
    (100.0..20000.0f64, 100.0..20000.0f64).prop_map(|(lo, hi)| TorqueLimits::new(-lo, hi).unwrap())
}

proptest! {
    #[test]
    fn outputs_stay_in_the_box(lim in limits(), ud in -30000.0..30000.0f64, frac in -1.0..=1.0f64) {
        let du = frac * lim.tau_max.min(-lim.tau_min);
        let o = integrate(ud, du, &lim);
        prop_assert!(o.tau_ri >= lim.tau_min && o.tau_ri <= lim.tau_max);
        prop_assert!(o.tau_le >= lim.tau_min && o.tau_le <= lim.tau_max);
        prop_assert!(!o.clamped);
        let scale = o.tau_ri.abs().max(o.tau_le.abs());
        prop_assert!(((o.tau_ri - o.tau_le) / 2.0 - du).abs() <= f64::EPSILON * scale);
    }

    #[test]
    fn interior_common_mode_passes_through(lim in limits(), a in 0.0..=1.0f64, frac in -1.0..=1.0f64) {
        let du = frac * lim.tau_max.min(-lim.tau_min);
        let ud = lim.tau_min + du.abs() + a * (lim.tau_max - lim.tau_min - 2.0 * du.abs());
        prop_assert_eq!(integrate(ud, du, &lim).tau_long, ud);
        prop_assert_eq!(long_torque(ud, du.abs(), &lim), ud);
    }

    #[test]
    fn oversized_differential_is_flagged(lim in limits(), excess in 1.0..5000.0f64) {
        let o = integrate(0.0, lim.max_differential() + excess, &lim);
        prop_assert!(o.clamped);
        prop_assert_eq!(o.delta_u, lim.max_differential());
    }

    #[test]
    fn adhesion_law_is_odd(
        f_set in -0.3..0.3f64,
        f in proptest::collection::vec(-0.4..0.4f64, 1..40),
        s in proptest::collection::vec(-0.05..0.05f64, 1..40),
        u0 in -5000.0..5000.0f64,
    ) {
        let cfg = AdhesionConfig::default();
        let mut a = AdhesionCtrlState::new(u0);
        let mut b = AdhesionCtrlState::new(-u0);
        for (fm, sm) in f.iter().zip(&s) {
            let (oa, na) = adhesion_step(f_set, *fm, *sm, &a, &cfg);
            let (ob, nb) = adhesion_step(-f_set, -fm, -sm, &b, &cfg);
            prop_assert_eq!(oa.u_d, -ob.u_d);
            prop_assert_eq!(oa.segment, ob.segment);
            a = na;
            b = nb;
        }
    }
}
