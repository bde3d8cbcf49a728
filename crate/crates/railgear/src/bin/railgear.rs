use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use railgear::check;
use railgear::harness::{
    bench_solvers, run_scenario, tune_pso, write_csv, write_track_csv, DesignSpace, ScenarioSpec,
};
use railgear::model::VehicleParams;
use railgear::track::{build_track, TrackSpec};
use railgear::Error;

#[derive(Parser)]
#[command(
    name = "railgear",
    version,
    about = "Guidance and adhesion control simulator for an IRW running gear"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one closed-loop scenario and write the CSV log.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "run.csv")]
        out: PathBuf,
    },
    /// Tune the MPC weights with particle swarm optimisation.
    Tune {
        space: PathBuf,
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Replay a scenario's solver inputs through NMPC and LTV-MPC.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
    },
    /// Run the model audits (Lagrange oracle, energy, linearisation).
    ModelCheck {
        #[arg(long)]
        vehicle: Option<PathBuf>,
    },
    /// Track tables.
    Tracks {
        #[command(subcommand)]
        cmd: TracksCmd,
    },
}

#[derive(Subcommand)]
enum TracksCmd {
    /// Write the tabulated geometry of one evaluation track as CSV.
    Export {
        #[arg(long, default_value_t = 5)]
        track: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Unstable(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(_) => Failure::Solver(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Simulate { config, out } => {
            let spec = ScenarioSpec::load(&config)?;
            let res = run_scenario(&spec)?;
            let f = File::create(&out)
                .with_context(|| format!("creating {}", out.display()))
                .map_err(config_err)?;
            write_csv(&res, BufWriter::new(f), &[])?;
            println!(
                "{}: {} samples, rmse {:.3e} m, solves {} (median {:.2} ms), deadline misses {}",
                spec.name,
                res.rows.len(),
                res.rmse,
                res.solve_times.count,
                res.solve_times.median * 1e3,
                res.deadline_misses
            );
            if let Some(d) = res.braking_distance {
                println!("braking distance {d:.1} m");
            }
            if let Some(f) = res.failure {
                return Err(Failure::Solver(anyhow::anyhow!(f)));
            }
            if res.diverged {
                return Err(Failure::Unstable(format!(
                    "lateral displacement left ±{} m",
                    spec.divergence_limit
                )));
            }
        }
        Cmd::Tune { space, scenarios } => {
            let text = std::fs::read_to_string(&space)
                .with_context(|| space.display().to_string())
                .map_err(config_err)?;
            let ds = DesignSpace::from_toml(&text)?;
            let specs = scenarios
                .iter()
                .map(|p| ScenarioSpec::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let res = tune_pso(&ds, &specs)?;
            if res.all_infeasible {
                eprintln!(
                    "every particle was infeasible; returning the centre of the design space"
                );
            }
            println!("fitness {:.6e}", res.fitness);
            for (name, v) in &res.values {
                println!("{name} = {v:.6e}");
            }
        }
        Cmd::Bench { scenario, n } => {
            let spec = ScenarioSpec::load(&scenario)?;
            let r = bench_solvers(&spec, n)?;
            for (name, t) in [("nmpc", r.nmpc), ("ltv", r.ltv)] {
                println!(
                    "{name:5} mean {:.3} ms  median {:.3} ms  p95 {:.3} ms",
                    t.mean * 1e3,
                    t.median * 1e3,
                    t.p95 * 1e3
                );
            }
            println!(
                "nmpc iterations warm {:.2} cold {:.2}",
                r.nmpc_iters_warm, r.nmpc_iters_cold
            );
            println!("ltv/nmpc median ratio {:.3}", r.ratio);
        }
        Cmd::ModelCheck { vehicle } => {
            let p = match vehicle {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| path.display().to_string())
                        .map_err(config_err)?;
                    toml::from_str::<VehicleParams>(&text).map_err(config_err)?
                }
                None => VehicleParams::default(),
            };
            let outcomes = [
                check::lagrange_oracle(11, 100, &p)?,
                check::energy_conservation(&p, 10.0, 1e-3)?,
                check::linearization_audit(12, 100, &p, 0.01)?,
            ];
            let mut ok = true;
            for o in &outcomes {
                println!(
                    "{} {}: worst {:.3e} (tol {:.0e})",
                    if o.passed() { "PASS" } else { "FAIL" },
                    o.name,
                    o.worst,
                    o.tol
                );
                ok &= o.passed();
            }
            if !ok {
                return Err(Failure::Solver(anyhow::anyhow!("model audit failed")));
            }
        }
        Cmd::Tracks {
            cmd: TracksCmd::Export { track, out },
        } => {
            let tr = build_track(&TrackSpec::table(track)?)?;
            match out {
                Some(path) => {
                    let f = File::create(&path)
                        .with_context(|| path.display().to_string())
                        .map_err(config_err)?;
                    write_track_csv(&tr, BufWriter::new(f))?;
                }
                None => write_track_csv(&tr, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver failure: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Unstable(m)) => {
            eprintln!("instability: {m}");
            ExitCode::from(3)
        }
    }
}
