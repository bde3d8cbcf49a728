use std::path::PathBuf;
use std::process::Command;

use railgear::harness::{
    bench_solvers, csv_string, run_scenario, scenario_fitness, tune_pso, DesignSpace, ForceDemand,
    ScenarioSpec, CSV_COLUMNS, TIMING_COLUMNS,
};
use railgear::integration::LateralController;
use railgear::mpc::{LateralSetPoint, MpcConfig};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn short(track: usize, v0: f64, seconds: f64) -> ScenarioSpec {
    ScenarioSpec {
        track,
        v0,
        duration: Some(seconds),
        ..Default::default()
    }
}

#[test]
fn regulation_at_equilibrium() {
    let r = run_scenario(&short(5, 44.4, 2.0)).unwrap();
    assert!(r.rmse <= 1e-5, "{}", r.rmse);
    assert!(r.failure.is_none() && !r.diverged);
}

#[test]
fn csv_layout() {
    let mut s = short(3, 50.0, 0.05);
    s.setpoint = LateralSetPoint::Sine {
        period: 150.0,
        amplitude: 0.0025,
        start: 0.0,
    };
    let r = run_scenario(&s).unwrap();
    let text = csv_string(&r, &[]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 50);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first.len(), CSV_COLUMNS.len());
    assert!(!first[19].is_empty());
    let second: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert!(second[19].is_empty() && second[20].is_empty());

    let stripped = csv_string(&r, &TIMING_COLUMNS).unwrap();
    assert!(!stripped.lines().next().unwrap().contains("solver_time"));
}

#[test]
fn scenario_library_loads() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name == "tune_space.toml" {
            let text = std::fs::read_to_string(&path).unwrap();
            DesignSpace::from_toml(&text).unwrap();
            continue;
        }
        let mut s = ScenarioSpec::load(&path).unwrap();
        s.validate().unwrap();
        s.duration = Some(0.05);
        s.distance = None;
        let r = run_scenario(&s).unwrap();
        assert!(r.failure.is_none(), "{name}");
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(run_scenario(&ScenarioSpec::from_toml("track = 9").unwrap()).is_err());
    let big = ScenarioSpec {
        setpoint: LateralSetPoint::Constant { value: 0.01 },
        ..short(5, 40.0, 1.0)
    };
    assert!(run_scenario(&big).is_err());
    let none = ScenarioSpec {
        duration: None,
        distance: None,
        ..short(5, 40.0, 1.0)
    };
    assert!(run_scenario(&none).is_err());
    let rates = ScenarioSpec::from_toml("[rates]\nfast = 0.001\nslow = 0.0105\n").unwrap();
    assert!(run_scenario(&rates).is_err());
}

#[test]
fn bench_replay() {
    let mut s = short(3, 77.8, 0.0);
    s.setpoint = LateralSetPoint::Sine {
        period: 150.0,
        amplitude: 0.0025,
        start: 0.0,
    };
    let a = bench_solvers(&s, 100).unwrap();
    let b = bench_solvers(&s, 100).unwrap();
    assert_eq!(a.solves, 100);
    assert_eq!(a.nmpc_du0, b.nmpc_du0);
    assert_eq!(a.ltv_du0, b.ltv_du0);
    assert!(a.nmpc_iters_warm <= a.nmpc_iters_cold);
    assert!(a.ratio > 0.0);
    assert!(bench_solvers(&s, 50).is_err());
}

#[test]
fn tuning_never_worsens_the_default() {
    let mut s = short(5, 60.0, 1.0);
    s.setpoint = LateralSetPoint::Sine {
        period: 60.0,
        amplitude: 0.0025,
        start: 0.0,
    };
    let space = DesignSpace::from_toml(
        "[pso]\nparticles = 3\niterations = 1\n[[param]]\nname = \"q_y\"\nlo = 1e5\nhi = 1e8\nlog = true\n[[param]]\nname = \"r\"\nlo = 1e-6\nhi = 1e-2\nlog = true\n",
    )
    .unwrap();
    let res = tune_pso(&space, std::slice::from_ref(&s)).unwrap();
    let default = scenario_fitness(
        &MpcConfig::default(),
        std::slice::from_ref(&s),
        space.lambda,
    );
    assert!(res.fitness <= default, "{} > {}", res.fitness, default);
    assert!(!res.all_infeasible);
    assert_eq!(res.values.len(), 2);
    assert!(DesignSpace::from_toml("[[param]]\nname = \"nope\"\nlo = 0\nhi = 1\n").is_err());
}

#[test]
fn controller_off_leaves_the_gear_to_itself() {
    let mut s = short(5, 40.0, 1.0);
    s.controller = LateralController::Off;
    s.force = ForceDemand::Constant { value: 5000.0 };
    let r = run_scenario(&s).unwrap();
    assert!(r
        .rows
        .iter()
        .all(|x| x.delta_u == 0.0 && x.tau_ri == x.tau_le));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_railgear"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let cfg = dir.path().join("ok.toml");
    std::fs::write(&cfg, "track = 5\nv0 = 40.0\nduration = 0.2\n").unwrap();
    let st = cli()
        .arg("simulate")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 201);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "track = \"five\"\n").unwrap();
    assert_eq!(
        cli()
            .arg("simulate")
            .arg(&bad)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    assert_eq!(
        cli()
            .arg("simulate")
            .arg(dir.path().join("missing.toml"))
            .status()
            .unwrap()
            .code(),
        Some(1)
    );

    let wild = dir.path().join("wild.toml");
    std::fs::write(
        &wild,
        "track = 5\nv0 = 40.0\nduration = 0.5\ndivergence_limit = 0.002\ny0 = 0.003\n",
    )
    .unwrap();
    assert_eq!(
        cli()
            .arg("simulate")
            .arg(&wild)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .code(),
        Some(3)
    );

    let tracks = cli()
        .args(["tracks", "export", "--track", "2"])
        .output()
        .unwrap();
    assert_eq!(tracks.status.code(), Some(0));
    let text = String::from_utf8(tracks.stdout).unwrap();
    assert!(text.starts_with("p,psi,dpsi_dp,phi,dphi_dp,eps,deps_dp"));
}
