use railgear::check;
use railgear::model::{ControlInput, GearState, ModelTheta, VehicleParams};
use railgear::track::{build_track, TrackSpec};

#[test]
fn hard_coded_dynamics_match_energy_oracle() {
    let r = check::lagrange_oracle(7, 100, &VehicleParams::default()).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn oracle_reproduces_reflected_spin_inertia() {
    let p = VehicleParams::default();
    let track = build_track(&TrackSpec::table(5).unwrap()).unwrap();
    let th = ModelTheta::new(&track, &p);
    let s = GearState::rolling(50.0, 30.0);
    let u = ControlInput {
        tau_ri: 700.0,
        tau_le: 700.0,
    };
    let a = check::oracle_accel(&s, &u, &th, &p);
    let m_eff = p.m_x() + 2.0 * p.j_w_y / (p.r0 * p.r0);
    assert!((a[0] + 1400.0 / (p.r0 * m_eff)).abs() < 1e-12);
    assert_eq!(a[1], 0.0);
}

#[test]
fn energy_is_conserved_without_dissipation() {
    let r = check::energy_conservation(&VehicleParams::default(), 10.0, 1e-3).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn dissipation_removes_energy() {
    let p = VehicleParams::default();
    let track = build_track(&TrackSpec::table(5).unwrap()).unwrap();
    let th = ModelTheta::new(&track, &p);
    let mut s = GearState {
        psi_ax: 3e-3,
        psidot_ax: 0.02,
        y_trax: 2e-3,
        psi_trax: 3e-3,
        ..GearState::rolling(20.0, 50.0)
    };
    let e0 = check::mechanical_energy(&s, &th, &p);
    for _ in 0..2000 {
        s = railgear::model::rk4_step(&s, &ControlInput::default(), &th, &p, 1e-3).unwrap();
    }
    assert!(check::mechanical_energy(&s, &th, &p) < e0);
}

#[test]
fn linearisation_matches_finite_differences() {
    for seed in [11, 12] {
        let r = check::linearization_audit(seed, 100, &VehicleParams::default(), 0.01).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn euler_converges_at_first_order() {
    let ratio = check::euler_order(&VehicleParams::default(), 2e-3).unwrap();
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
}
