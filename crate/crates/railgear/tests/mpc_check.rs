use railgear::model::{
    discrete_step, ControlInput, GearState, ModelTheta, VehicleParams, IPSIR, IX, IY, NX,
};
use railgear::mpc::{
    cost_eval, desired_sequence, solve_ltv_mpc, solve_nmpc, solve_sqp, LateralSetPoint,
    LtvPrediction, MpcConfig, NonlinearPrediction, PreviewInputs,
};
use railgear::track::{build_track, TrackGeometry, TrackSpec};

fn track(i: usize) -> TrackGeometry {
    build_track(&TrackSpec::table(i).unwrap()).unwrap()
}

fn state(x: f64, v: f64, y: f64, psi_r: f64, tr: &TrackGeometry) -> [f64; NX] {
    let s = tr.sample_clamped(x, v);
    let mut a = GearState::rolling(x, v).to_array();
    a[IY] = y;
    a[IPSIR] = psi_r;
    a[1] = s.psi + psi_r;
    a[3] = s.psi_dot;
    a
}

#[test]
fn desired_sequence_kinematics() {
    let tr = track(5);
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let sp = LateralSetPoint::default();
    let x0 = state(100.0, 40.0, 0.0, 0.0, &tr);
    let ud = vec![0.0; cfg.steps];
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta: ModelTheta::new(&tr, &p),
    };
    let d = desired_sequence(&x0, &pv, &p, &cfg).unwrap();
    for (k, s) in d.states.iter().enumerate() {
        assert_eq!(s[IX], 100.0 + 40.0 * cfg.step * k as f64);
        assert_eq!(s[IY], 0.0);
        assert_eq!(s[IPSIR], 0.0);
    }
    let ud = vec![1500.0; cfg.steps];
    let pv = PreviewInputs { u_d: &ud, ..pv };
    let d = desired_sequence(&x0, &pv, &p, &cfg).unwrap();
    let h = cfg.horizon();
    let shift = d.states[cfg.steps][IX] - (100.0 + 40.0 * h);
    let expect = 1500.0 / (p.r0 * p.m_x()) * h * h / 2.0;
    assert!((shift - expect).abs() < 1e-9 * expect);

    let sp = LateralSetPoint::Constant { value: 0.002 };
    let pv = PreviewInputs {
        setpoint: &sp,
        ..pv
    };
    let d = desired_sequence(&x0, &pv, &p, &cfg).unwrap();
    assert!(d.states.iter().all(|s| s[IY] == 0.002 && s[IPSIR] == 0.0));
    assert!(!d.clamped);
    let near_end = state(tr.total_length() - 1.0, 40.0, 0.0, 0.0, &tr);
    assert!(desired_sequence(&near_end, &pv, &p, &cfg).unwrap().clamped);
}

#[test]
fn cost_examples() {
    let cfg = MpcConfig {
        steps: 3,
        ..Default::default()
    };
    let xd = vec![[0.0; NX]; 4];
    assert_eq!(cost_eval(&xd, &[0.0; 3], &xd, &cfg).unwrap(), 0.0);
    let mut xs = xd.clone();
    xs[3][IY] = 1e-3;
    let c = cost_eval(&xs, &[0.0; 3], &xd, &cfg).unwrap();
    let expect = cfg.step * cfg.q_term * cfg.q[IY] * 1e-6;
    assert!((c - expect).abs() < 1e-15);
    // channels without weight do not count
    xs[2][IX] = 5.0;
    xs[1][1] = 0.3;
    assert_eq!(cost_eval(&xs, &[0.0; 3], &xd, &cfg).unwrap(), c);
    assert!(cost_eval(&xs, &[0.0; 2], &xd, &cfg).is_err());
}

#[test]
fn equilibrium_needs_no_steering() {
    let tr = track(5);
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let sp = LateralSetPoint::default();
    let ud = vec![0.0; cfg.steps];
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta: ModelTheta::new(&tr, &p),
    };
    let x0 = state(200.0, 60.0, 0.0, 0.0, &tr);
    let n = solve_nmpc(&x0, &pv, &p, &cfg, None).unwrap();
    let l = solve_ltv_mpc(&x0, &pv, &p, &cfg, None).unwrap();
    assert!(n.du.iter().all(|d| d.abs() <= 1e-6), "{:?}", n.du);
    assert!(l.du.iter().all(|d| d.abs() <= 1e-6));
}

/// Exact cost of a Δu sequence, rolled out with the public model step.
fn exact_cost(
    x0: &[f64; NX],
    du: &[f64],
    desired: &[[f64; NX]],
    theta: &ModelTheta,
    p: &VehicleParams,
    cfg: &MpcConfig,
) -> f64 {
    let mut xs = vec![*x0];
    for &d in du {
        let s = GearState::from_array(xs.last().unwrap());
        xs.push(
            discrete_step(&s, &ControlInput::from_drive(d, -d), theta, p, cfg.step)
                .unwrap()
                .to_array(),
        );
    }
    cost_eval(&xs, du, desired, cfg).unwrap()
}

#[test]
fn short_horizon_matches_direct_minimisation() {
    let tr = track(5);
    let p = VehicleParams::default();
    let cfg = MpcConfig {
        steps: 2,
        kkt_tol: 1e-12,
        du_max: 1e9,
        y_lim: 1.0,
        psi_lim: 1.0,
        ..Default::default()
    };
    let sp = LateralSetPoint::Constant { value: 0.001 };
    let ud = vec![0.0; 2];
    let theta = ModelTheta::new(&tr, &p);
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta,
    };
    let x0 = state(200.0, 50.0, 0.0005, 1e-4, &tr);
    let sol = solve_nmpc(&x0, &pv, &p, &cfg, None).unwrap();
    let d = desired_sequence(&x0, &pv, &p, &cfg).unwrap();

    // Newton on the exact cost with central-difference derivatives
    let mut u = [0.0f64; 2];
    for _ in 0..20 {
        let f = |a: f64, b: f64| exact_cost(&x0, &[a, b], &d.states, &theta, &p, &cfg);
        let h = 1.0;
        let gx = (f(u[0] + h, u[1]) - f(u[0] - h, u[1])) / (2.0 * h);
        let gy = (f(u[0], u[1] + h) - f(u[0], u[1] - h)) / (2.0 * h);
        let f0 = f(u[0], u[1]);
        let hxx = (f(u[0] + h, u[1]) - 2.0 * f0 + f(u[0] - h, u[1])) / (h * h);
        let hyy = (f(u[0], u[1] + h) - 2.0 * f0 + f(u[0], u[1] - h)) / (h * h);
        let hxy = (f(u[0] + h, u[1] + h) - f(u[0] + h, u[1] - h) - f(u[0] - h, u[1] + h)
            + f(u[0] - h, u[1] - h))
            / (4.0 * h * h);
        let det = hxx * hyy - hxy * hxy;
        u[0] -= (hyy * gx - hxy * gy) / det;
        u[1] -= (hxx * gy - hxy * gx) / det;
    }
    for k in 0..2 {
        assert!(
            (sol.du[k] - u[k]).abs() <= 1e-6 * u[k].abs().max(1.0),
            "{:?} vs {:?}",
            sol.du,
            u
        );
    }
    assert!(sol.du[0].abs() > 1e-3);
}

#[test]
fn ltv_equals_sqp_on_linear_dynamics() {
    let tr = track(3);
    let p = VehicleParams::default();
    let cfg = MpcConfig::default();
    let sp = LateralSetPoint::Sine {
        period: 150.0,
        amplitude: 0.0025,
        start: 0.0,
    };
    let ud = vec![300.0; cfg.steps];
    let theta = ModelTheta::new(&tr, &p);
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta,
    };
    let x0 = state(60.0, 77.0, 0.001, 2e-4, &tr);
    let ltv = solve_ltv_mpc(&x0, &pv, &p, &cfg, None).unwrap();
    let d = desired_sequence(&x0, &pv, &p, &cfg).unwrap();
    let nl = NonlinearPrediction {
        theta,
        params: &p,
        t: cfg.step,
    };
    let lin = LtvPrediction::centered(&d.states, &ud, &nl).unwrap();
    let sqp = solve_sqp(&lin, &x0, &d, &ud, &cfg, None).unwrap();
    let scale = ltv.du.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 0..cfg.steps {
        assert!(
            (ltv.du[k] - sqp.du[k]).abs() <= 1e-6 * scale,
            "k={k}: {} vs {}",
            ltv.du[k],
            sqp.du[k]
        );
    }
}

fn curve_problem() -> (TrackGeometry, VehicleParams, LateralSetPoint, [f64; NX]) {
    let tr = track(3);
    let p = VehicleParams::default();
    let x0 = state(40.0, 77.8, 0.0008, -3e-4, &tr);
    (
        tr,
        p,
        LateralSetPoint::Sine {
            period: 150.0,
            amplitude: 0.0025,
            start: 0.0,
        },
        x0,
    )
}

#[test]
fn nmpc_solution_properties() {
    let (tr, p, sp, x0) = curve_problem();
    let cfg = MpcConfig::default();
    let ud = vec![500.0; cfg.steps];
    let theta = ModelTheta::new(&tr, &p);
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta,
    };
    let a = solve_nmpc(&x0, &pv, &p, &cfg, None).unwrap();
    assert!(!a.suboptimal, "kkt {} after {}", a.kkt, a.iterations);
    assert!(a.du.iter().all(|d| d.abs() <= cfg.du_max));

    // dynamic consistency with the public model step
    let mut x = GearState::from_array(&x0);
    for k in 0..cfg.steps {
        x = discrete_step(
            &x,
            &ControlInput::from_drive(ud[k] + a.du[k], ud[k] - a.du[k]),
            &theta,
            &p,
            cfg.step,
        )
        .unwrap();
        let e = x
            .to_array()
            .iter()
            .zip(&a.states[k + 1])
            .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(e <= 1e-9 * (1.0 + x.x.abs()), "step {k}: {e}");
    }

    let b = solve_nmpc(&x0, &pv, &p, &cfg, None).unwrap();
    assert_eq!(a.du, b.du);
    assert_eq!(a.states, b.states);

    let warm = solve_nmpc(&x0, &pv, &p, &cfg, Some(&a)).unwrap();
    assert!(warm.cost <= a.cost + 1e-9 || (warm.cost - a.cost).abs() <= 1e-9 * a.cost);

    // larger input weight, less steering effort
    let heavy = MpcConfig {
        r: cfg.r * 10.0,
        ..cfg.clone()
    };
    let c = solve_nmpc(&x0, &pv, &p, &heavy, None).unwrap();
    let sum = |s: &[f64]| s.iter().map(|v| v.abs()).sum::<f64>();
    assert!(sum(&c.du) < sum(&a.du));
}

#[test]
fn infeasible_boxes_are_softened() {
    let (tr, p, sp, mut x0) = curve_problem();
    x0[IY] = 0.009;
    let cfg = MpcConfig::default();
    let ud = vec![0.0; cfg.steps];
    let pv = PreviewInputs {
        setpoint: &sp,
        u_d: &ud,
        theta: ModelTheta::new(&tr, &p),
    };
    let n = solve_nmpc(&x0, &pv, &p, &cfg, None).unwrap();
    let l = solve_ltv_mpc(&x0, &pv, &p, &cfg, None).unwrap();
    assert!(n
        .du
        .iter()
        .chain(&l.du)
        .all(|d| d.abs() <= cfg.du_max && d.is_finite()));
    assert!(n.states[cfg.steps][IY] < 0.009);
    let slow = state(10.0, 0.05, 0.0, 0.0, &tr);
    assert!(solve_nmpc(&slow, &pv, &p, &cfg, None).is_err());
}
