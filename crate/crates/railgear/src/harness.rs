//! Scenario definition, closed-loop execution against the plant, metrics,
//! CSV logging, solver benchmarking and PSO tuning of the MPC weights.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adhesion::AdhesionConfig;
use crate::integration::{
    flags, LateralController, RateConfig, Scheduler, TickInput, TorqueLimits,
};
use crate::model::{GearState, ModelTheta, VehicleParams, NX};
use crate::mpc::{
    solve_ltv_mpc, solve_nmpc, LateralSetPoint, MpcConfig, MpcSolution, PreviewInputs,
};
use crate::plant::{
    measure, plant_step, AdhesionCurveParams, AdhesionInterval, AdhesionSchedule, PlantState,
};
use crate::track::{build_track, TrackGeometry, TrackSpec};
use crate::{Error, Result};

/// Longitudinal force demand for the running gear over arc length [N].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceDemand {
    Constant {
        value: f64,
    },
    /// Piecewise constant: `[position, force]` pairs, each active from its
    /// position on; zero before the first.
    Steps {
        points: Vec<[f64; 2]>,
    },
}

impl Default for ForceDemand {
    fn default() -> Self {
        ForceDemand::Constant { value: 0.0 }
    }
}

impl ForceDemand {
    pub fn value(&self, p: f64) -> f64 {
        match self {
            ForceDemand::Constant { value } => *value,
            ForceDemand::Steps { points } => points
                .iter()
                .take_while(|q| q[0] <= p)
                .last()
                .map(|q| q[1])
                .unwrap_or(0.0),
        }
    }

    /// Position where a braking demand first appears.
    pub fn brake_onset(&self) -> Option<f64> {
        match self {
            ForceDemand::Constant { value } => (*value < 0.0).then_some(f64::NEG_INFINITY),
            ForceDemand::Steps { points } => points.iter().find(|q| q[1] < 0.0).map(|q| q[0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdhesionSpec {
    /// Preset used when no intervals are given ("good" or "poor").
    pub preset: String,
    pub intervals: Vec<AdhesionInterval>,
}

impl Default for AdhesionSpec {
    fn default() -> Self {
        Self {
            preset: "good".into(),
            intervals: Vec::new(),
        }
    }
}

impl AdhesionSpec {
    pub fn schedule(&self) -> Result<AdhesionSchedule> {
        if self.intervals.is_empty() {
            Ok(AdhesionSchedule::uniform(AdhesionCurveParams::preset(
                &self.preset,
            )?))
        } else {
            Ok(AdhesionSchedule {
                intervals: self.intervals.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the measured adhesion and slip.
    pub adhesion_std: f64,
    pub slip_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub name: String,
    /// Evaluation track 1..=5; ignored when `track_spec` is given.
    pub track: usize,
    pub track_spec: Option<TrackSpec>,
    /// Initial speed [m/s].
    pub v0: f64,
    /// Initial arc length and lateral offset [m].
    pub p0: f64,
    pub y0: f64,
    /// Stop after this time [s] or distance [m], whichever comes first.
    pub duration: Option<f64>,
    pub distance: Option<f64>,
    pub setpoint: LateralSetPoint,
    pub force: ForceDemand,
    pub adhesion: AdhesionSpec,
    pub controller: LateralController,
    pub mpc: MpcConfig,
    pub adhesion_ctrl: AdhesionConfig,
    pub rates: RateConfig,
    pub vehicle: VehicleParams,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub stop_at_standstill: bool,
    /// Lateral displacement treated as loss of guidance [m].
    pub divergence_limit: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            track: 5,
            track_spec: None,
            v0: 160.0 / 3.6,
            p0: 0.0,
            y0: 0.0,
            duration: Some(10.0),
            distance: None,
            setpoint: LateralSetPoint::default(),
            force: ForceDemand::default(),
            adhesion: AdhesionSpec::default(),
            controller: LateralController::Nmpc,
            mpc: MpcConfig::default(),
            adhesion_ctrl: AdhesionConfig::default(),
            rates: RateConfig::default(),
            vehicle: VehicleParams::default(),
            noise: NoiseConfig::default(),
            seed: 0,
            stop_at_standstill: true,
            divergence_limit: 0.02,
        }
    }
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_track(&self) -> Result<TrackGeometry> {
        let spec = match &self.track_spec {
            Some(s) => s.clone(),
            None => TrackSpec::table(self.track)?,
        };
        build_track(&spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.setpoint.validate()?;
        self.rates.ratio()?;
        if self.setpoint.amplitude() > self.mpc.y_lim {
            return Err(Error::Config(
                "set point amplitude exceeds the lateral bound".into(),
            ));
        }
        if !(self.v0 > 0.0) {
            return Err(Error::Config("v0 must be positive".into()));
        }
        if self.duration.is_none() && self.distance.is_none() {
            return Err(Error::Config(
                "scenario needs a duration or a distance".into(),
            ));
        }
        Ok(())
    }

    /// Controller configurations with the vehicle torque limits and the
    /// fast period applied.
    fn controllers(&self) -> (TorqueLimits, AdhesionConfig, MpcConfig) {
        let lim = TorqueLimits {
            tau_min: self.vehicle.tau_min,
            tau_max: self.vehicle.tau_max,
        };
        let mut a = self.adhesion_ctrl.clone();
        a.tau_min = lim.tau_min;
        a.tau_max = lim.tau_max;
        a.period = self.rates.fast;
        let mut m = self.mpc.clone();
        m.tau_min = lim.tau_min;
        m.tau_max = lim.tau_max;
        m.du_max = m.du_max.min(lim.max_differential());
        (lim, a, m)
    }
}

/// One fast-rate log record; field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogRow {
    pub t: f64,
    pub p: f64,
    pub x: f64,
    pub psi_ax: f64,
    pub xdot: f64,
    pub psidot_ax: f64,
    pub y_trax: f64,
    pub psi_trax: f64,
    pub omega_le: f64,
    pub omega_ri: f64,
    pub s_le: f64,
    pub s_ri: f64,
    pub f_le: f64,
    pub f_ri: f64,
    pub u_d: f64,
    pub delta_u: f64,
    pub tau_le: f64,
    pub tau_ri: f64,
    pub segment: &'static str,
    pub solver_iters: Option<usize>,
    pub solver_time: Option<f64>,
    pub flags: u32,
    /// Set point at this position (not logged).
    pub y_star: f64,
}

pub const CSV_COLUMNS: [&str; 22] = [
    "t",
    "p",
    "x",
    "psi_Ax",
    "xdot",
    "psidot_Ax",
    "y_TrAx",
    "psi_TrAx",
    "omega_le",
    "omega_ri",
    "s_le",
    "s_ri",
    "f_le",
    "f_ri",
    "u_d",
    "delta_u",
    "tau_le",
    "tau_ri",
    "segment",
    "solver_iters",
    "solver_time",
    "flags",
];

/// Columns that depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 1] = ["solver_time"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |f: f64| s[((s.len() - 1) as f64 * f).round() as usize];
        Self {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: q(0.5),
            p95: q(0.95),
        }
    }
}

/// MPC inputs seen at a slow tick, kept for solver replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverPoint {
    pub state: [f64; NX],
    pub u_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rows: Vec<LogRow>,
    pub rmse: f64,
    /// Distance from brake onset to standstill [m], when both occurred.
    pub braking_distance: Option<f64>,
    pub solve_times: TimingStats,
    pub mean_abs_du: f64,
    pub deadline_misses: usize,
    /// Union of all tick flags.
    pub flags: u32,
    pub standstill: bool,
    pub diverged: bool,
    /// Solver hard failure that ended the run early.
    pub failure: Option<String>,
    pub solver_points: Vec<SolverPoint>,
}

pub fn metric_rmse(y: &[f64], y_star: &[f64]) -> Result<f64> {
    if y.len() != y_star.len() {
        return Err(Error::Length {
            expected: y_star.len(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Domain("empty series".into()));
    }
    let s: f64 = y.iter().zip(y_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y.len() as f64).sqrt())
}

/// Delay of `y` behind `reference` [s] from the cross-correlation peak,
/// searched within ±`max_lag` and refined by a parabola through the peak.
pub fn phase_lag(reference: &[f64], y: &[f64], dt: f64, max_lag: f64) -> Result<f64> {
    if reference.len() != y.len() {
        return Err(Error::Length {
            expected: reference.len(),
            got: y.len(),
        });
    }
    let n = y.len();
    let kmax = ((max_lag / dt).round() as usize).min(n.saturating_sub(1));
    if n < 2 || kmax == 0 {
        return Err(Error::Domain("series too short for a lag estimate".into()));
    }
    // Pearson correlation over the overlap, so the window length and any
    // partial period do not bias the peak
    let corr = |k: isize| -> f64 {
        let (i0, j0) = if k >= 0 {
            (0, k as usize)
        } else {
            ((-k) as usize, 0)
        };
        let m = n - k.unsigned_abs();
        let a = &reference[i0..i0 + m];
        let b = &y[j0..j0 + m];
        let ma = a.iter().sum::<f64>() / m as f64;
        let mb = b.iter().sum::<f64>() / m as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, z) in a.iter().zip(b) {
            sab += (x - ma) * (z - mb);
            saa += (x - ma) * (x - ma);
            sbb += (z - mb) * (z - mb);
        }
        if saa > 0.0 && sbb > 0.0 {
            sab / (saa * sbb).sqrt()
        } else {
            0.0
        }
    };
    let ks: Vec<isize> = (-(kmax as isize)..=kmax as isize).collect();
    let cs: Vec<f64> = ks.iter().map(|&k| corr(k)).collect();
    let (best, _) =
        cs.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |b, (i, &c)| if c > b.1 { (i, c) } else { b },
        );
    let mut lag = ks[best] as f64;
    if best > 0 && best + 1 < cs.len() {
        let (a, b, c) = (cs[best - 1], cs[best], cs[best + 1]);
        let den = a - 2.0 * b + c;
        if den.abs() > 0.0 {
            lag += 0.5 * (a - c) / den;
        }
    }
    Ok(lag * dt)
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunResult> {
    run_scenario_with(spec, |_| {})
}

/// Closed-loop run; `hook` may adjust the scheduler before every tick
/// (used for fault injection).
pub fn run_scenario_with(
    spec: &ScenarioSpec,
    mut hook: impl FnMut(&mut Scheduler),
) -> Result<RunResult> {
    spec.validate()?;
    let track = spec.build_track()?;
    let sched_adh = spec.adhesion.schedule()?;
    sched_adh.validate(track.total_length())?;
    let (lim, acfg, mcfg) = spec.controllers();
    let p = &spec.vehicle;
    let mut sched = Scheduler::new(spec.rates, lim, acfg, mcfg, spec.controller)?;
    let theta = ModelTheta::new(&track, p);

    let start = track.sample_clamped(spec.p0, spec.v0);
    let gear = GearState {
        x: spec.p0,
        psi_ax: start.psi,
        xdot: spec.v0,
        psidot_ax: start.psi_dot,
        y_trax: spec.y0,
        psi_trax: 0.0,
    };
    let mut plant = PlantState::rolling(gear, &track, &sched_adh, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_f = Normal::new(0.0, spec.noise.adhesion_std.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let noise_s =
        Normal::new(0.0, spec.noise.slip_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let dt = spec.rates.fast;
    let max_ticks = spec
        .duration
        .map(|d| (d / dt).round() as u64)
        .unwrap_or(u64::MAX);
    let end_p = spec
        .distance
        .map(|d| spec.p0 + d)
        .unwrap_or(f64::INFINITY)
        .min(track.total_length());
    let onset = spec.force.brake_onset();
    let mut onset_x = None;

    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut points = Vec::new();
    let mut all_flags = 0;
    let mut failure = None;
    let mut diverged = false;
    let mut k: u64 = 0;
    while k < max_ticks && plant.gear.x < end_p {
        hook(&mut sched);
        let mut meas = measure(&plant);
        if spec.noise.adhesion_std > 0.0 || spec.noise.slip_std > 0.0 {
            for j in 0..2 {
                meas.f_x[j] += noise_f.sample(&mut rng);
                meas.s_x[j] += noise_s.sample(&mut rng);
            }
        }
        let xg = plant.gear;
        let demand = spec.force.value(xg.x);
        if let (Some(o), None) = (onset, onset_x) {
            if xg.x >= o && demand < 0.0 {
                onset_x = Some(xg.x);
            }
        }
        let inp = TickInput {
            meas: &meas,
            force_demand: demand,
            setpoint: &spec.setpoint,
            theta,
            params: p,
        };
        let solving = k % sched.rates.ratio()? == 0;
        let out = match sched.step(&inp) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        if solving && out.solve.is_some() {
            points.push(SolverPoint {
                state: xg.to_array(),
                u_d: out.u_d,
            });
        }
        let mut fl = out.flags;
        if plant.unstable_contact {
            fl |= flags::UNSTABLE_CONTACT;
        }
        if let Some((_, t)) = out.solve {
            times.push(t);
        }
        rows.push(LogRow {
            t: k as f64 * dt,
            p: xg.x,
            x: xg.x,
            psi_ax: xg.psi_ax,
            xdot: xg.xdot,
            psidot_ax: xg.psidot_ax,
            y_trax: xg.y_trax,
            psi_trax: xg.psi_trax,
            omega_le: plant.omega_le,
            omega_ri: plant.omega_ri,
            s_le: plant.le.s_x,
            s_ri: plant.ri.s_x,
            f_le: plant.le.f_x,
            f_ri: plant.ri.f_x,
            u_d: out.u_d,
            delta_u: out.delta_u,
            tau_le: out.tau_le,
            tau_ri: out.tau_ri,
            segment: out.segment.label(),
            solver_iters: out.solve.map(|s| s.0),
            solver_time: out.solve.map(|s| s.1),
            flags: fl,
            y_star: spec.setpoint.value(xg.x),
        });
        all_flags |= fl;
        plant = match plant_step(&plant, &out.input, &track, &sched_adh, p, dt) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        k += 1;
        let g = plant.gear;
        if !g.to_array().iter().all(|v| v.is_finite()) || g.y_trax.abs() > spec.divergence_limit {
            diverged = true;
            break;
        }
        if plant.standstill {
            all_flags |= flags::STANDSTILL;
            if let Some(r) = rows.last_mut() {
                r.flags |= flags::STANDSTILL;
            }
            if spec.stop_at_standstill {
                break;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("scenario produced no samples".into()));
    }
    let y: Vec<f64> = rows.iter().map(|r| r.y_trax).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.y_star).collect();
    let rmse = metric_rmse(&y, &ys)?;
    let braking_distance = match (onset_x, plant.standstill) {
        (Some(o), true) => Some(plant.gear.x - o),
        _ => None,
    };
    let mean_abs_du = rows.iter().map(|r| r.delta_u.abs()).sum::<f64>() / rows.len() as f64;
    Ok(RunResult {
        rows,
        rmse,
        braking_distance,
        solve_times: TimingStats::from_samples(&times),
        mean_abs_du,
        deadline_misses: sched.deadline_misses,
        flags: all_flags,
        standstill: plant.standstill,
        diverged,
        failure,
        solver_points: points,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the run log; columns listed in `skip` are left out.
pub fn write_csv<W: Write>(result: &RunResult, out: W, skip: &[&str]) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let keep: Vec<bool> = CSV_COLUMNS.iter().map(|c| !skip.contains(c)).collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(
        CSV_COLUMNS
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| *c),
    )
    .map_err(io)?;
    for r in &result.rows {
        let cells = [
            r.t.to_string(),
            r.p.to_string(),
            r.x.to_string(),
            r.psi_ax.to_string(),
            r.xdot.to_string(),
            r.psidot_ax.to_string(),
            r.y_trax.to_string(),
            r.psi_trax.to_string(),
            r.omega_le.to_string(),
            r.omega_ri.to_string(),
            r.s_le.to_string(),
            r.s_ri.to_string(),
            r.f_le.to_string(),
            r.f_ri.to_string(),
            r.u_d.to_string(),
            r.delta_u.to_string(),
            r.tau_le.to_string(),
            r.tau_ri.to_string(),
            r.segment.to_string(),
            opt(r.solver_iters),
            opt(r.solver_time),
            flags::describe(r.flags),
        ];
        w.write_record(
            cells
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(c, _)| c.as_str()),
        )
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}

pub fn csv_string(result: &RunResult, skip: &[&str]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(result, &mut buf, skip)?;
    String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
}

/// Track table as CSV (`p, psi, dpsi_dp, phi, dphi_dp, eps, deps_dp`).
pub fn write_track_csv<W: Write>(track: &TrackGeometry, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "psi", "dpsi_dp", "phi", "dphi_dp", "eps", "deps_dp"])
        .map_err(io)?;
    for r in track.rows() {
        w.write_record(
            [r.p, r.psi, r.dpsi_dp, r.phi, r.dphi_dp, r.eps, r.deps_dp].map(|v| v.to_string()),
        )
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub solves: usize,
    pub nmpc: TimingStats,
    pub ltv: TimingStats,
    /// LTV median over NMPC median.
    pub ratio: f64,
    pub nmpc_iters_warm: f64,
    pub nmpc_iters_cold: f64,
    /// First move of every replayed solve (timing-independent output).
    #[serde(skip)]
    pub nmpc_du0: Vec<f64>,
    #[serde(skip)]
    pub ltv_du0: Vec<f64>,
}

/// Records the MPC inputs of a closed-loop run of `spec` and re-solves each
/// of the first `n` with both controllers.
pub fn bench_solvers(spec: &ScenarioSpec, n: usize) -> Result<BenchReport> {
    if n < 100 {
        return Err(Error::Config("bench needs at least 100 solves".into()));
    }
    let mut s = spec.clone();
    let need = n as f64 * s.rates.slow + s.rates.slow;
    s.duration = Some(s.duration.unwrap_or(0.0).max(need));
    let run = run_scenario(&s)?;
    if let Some(f) = &run.failure {
        return Err(Error::Numeric(f.clone()));
    }
    let pts: Vec<&SolverPoint> = run.solver_points.iter().take(n).collect();
    if pts.len() < n {
        return Err(Error::Config(format!(
            "run produced only {} solver points",
            pts.len()
        )));
    }
    let track = s.build_track()?;
    let (_, _, cfg) = s.controllers();
    let p = &s.vehicle;
    let theta = ModelTheta::new(&track, p);
    let mut t_n = Vec::with_capacity(n);
    let mut t_l = Vec::with_capacity(n);
    let (mut it_w, mut it_c) = (0usize, 0usize);
    let mut warm_n: Option<MpcSolution> = None;
    let mut warm_l: Option<MpcSolution> = None;
    let mut du_n = Vec::with_capacity(n);
    let mut du_l = Vec::with_capacity(n);
    for pt in pts {
        let ud = vec![pt.u_d; cfg.steps];
        let pv = PreviewInputs {
            setpoint: &s.setpoint,
            u_d: &ud,
            theta,
        };
        let a = solve_nmpc(&pt.state, &pv, p, &cfg, warm_n.as_ref())?;
        let cold = solve_nmpc(&pt.state, &pv, p, &cfg, None)?;
        let b = solve_ltv_mpc(&pt.state, &pv, p, &cfg, warm_l.as_ref())?;
        t_n.push(a.solve_time);
        t_l.push(b.solve_time);
        it_w += a.iterations;
        it_c += cold.iterations;
        du_n.push(a.du[0]);
        du_l.push(b.du[0]);
        warm_n = Some(a);
        warm_l = Some(b);
    }
    let nmpc = TimingStats::from_samples(&t_n);
    let ltv = TimingStats::from_samples(&t_l);
    Ok(BenchReport {
        solves: n,
        nmpc,
        ltv,
        ratio: ltv.median / nmpc.median,
        nmpc_iters_warm: it_w as f64 / n as f64,
        nmpc_iters_cold: it_c as f64 / n as f64,
        nmpc_du0: du_n,
        ltv_du0: du_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 12,
            iterations: 20,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub cost: f64,
    pub evaluations: usize,
    /// No particle ever had a finite fitness.
    pub all_infeasible: bool,
}

/// Global-best particle swarm with inertia weight. Particle 0 starts at the
/// center of the box; fitness values that are not finite count as infeasible.
/// Each generation is evaluated in parallel; the result is deterministic.
pub fn pso<F>(fitness: F, bounds: &[(f64, f64)], cfg: &PsoConfig) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pso_seeded(fitness, bounds, cfg, &[])
}

/// As [`pso`], with `seeds` (clamped into the box) placed at particles 1.. .
pub fn pso_seeded<F>(
    fitness: F,
    bounds: &[(f64, f64)],
    cfg: &PsoConfig,
    seeds: &[Vec<f64>],
) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(hi >= lo)) {
        return Err(Error::Config(
            "PSO needs a non-empty box with lo ≤ hi".into(),
        ));
    }
    if cfg.particles == 0 {
        return Err(Error::Config("PSO needs at least one particle".into()));
    }
    let dim = bounds.len();
    let center: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pos: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|i| {
            if i == 0 {
                center.clone()
            } else {
                bounds
                    .iter()
                    .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
                    .collect()
            }
        })
        .collect();
    for (i, sd) in seeds
        .iter()
        .enumerate()
        .filter(|(i, _)| i + 1 < cfg.particles)
    {
        if sd.len() != dim {
            return Err(Error::Length {
                expected: dim,
                got: sd.len(),
            });
        }
        pos[i + 1] = sd
            .iter()
            .zip(bounds)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect();
    }
    let mut vel: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|_| {
            bounds
                .iter()
                .map(|(lo, hi)| 0.1 * (hi - lo) * rng.gen_range(-1.0..=1.0))
                .collect()
        })
        .collect();

    let eval_all = |pos: &[Vec<f64>]| -> Vec<f64> {
        std::thread::scope(|sc| {
            let handles: Vec<_> = pos.iter().map(|x| sc.spawn(|| fitness(x))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(f64::NAN))
                .collect()
        })
    };
    let sanitize = |c: f64| if c.is_finite() { c } else { f64::INFINITY };

    let mut cost: Vec<f64> = eval_all(&pos).into_iter().map(sanitize).collect();
    let mut evaluations = cfg.particles;
    let mut pbest = pos.clone();
    let mut pcost = cost.clone();
    let pick = |pc: &[f64]| {
        pc.iter()
            .enumerate()
            .fold(0, |b, (i, c)| if *c < pc[b] { i } else { b })
    };
    let mut g = pick(&pcost);
    let mut gbest = pbest[g].clone();
    let mut gcost = pcost[g];

    for _ in 0..cfg.iterations {
        for i in 0..cfg.particles {
            for d in 0..dim {
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let (lo, hi) = bounds[d];
                vel[i][d] = cfg.inertia * vel[i][d]
                    + cfg.cognitive * r1 * (pbest[i][d] - pos[i][d])
                    + cfg.social * r2 * (gbest[d] - pos[i][d]);
                let vmax = hi - lo;
                vel[i][d] = vel[i][d].clamp(-vmax, vmax);
                pos[i][d] = (pos[i][d] + vel[i][d]).clamp(lo, hi);
            }
        }
        cost = eval_all(&pos).into_iter().map(sanitize).collect();
        evaluations += cfg.particles;
        for i in 0..cfg.particles {
            if cost[i] < pcost[i] {
                pcost[i] = cost[i];
                pbest[i] = pos[i].clone();
            }
        }
        g = pick(&pcost);
        if pcost[g] < gcost {
            gcost = pcost[g];
            gbest = pbest[g].clone();
        }
    }
    if !gcost.is_finite() {
        return Ok(PsoResult {
            best: center,
            cost: f64::INFINITY,
            evaluations,
            all_infeasible: true,
        });
    }
    Ok(PsoResult {
        best: gbest,
        cost: gcost,
        evaluations,
        all_infeasible: false,
    })
}

/// One tunable MPC parameter. Names: `q_x`, `q_psi_ax`, `q_xdot`,
/// `q_psidot_ax`, `q_y`, `q_psi_tr_ax`, `r`, `q_term`, `horizon`, `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Search in log10 space.
    #[serde(default)]
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpace {
    pub param: Vec<DesignParam>,
    pub pso: PsoConfig,
    /// Weight of mean |Δu| in the fitness [m/(N·m)].
    pub lambda: f64,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self {
            param: Vec::new(),
            pso: PsoConfig::default(),
            lambda: 1e-6,
        }
    }
}

impl DesignSpace {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.param.is_empty() {
            return Err(Error::Config("design space has no parameters".into()));
        }
        for d in &self.param {
            set_param(&mut MpcConfig::default(), &d.name, d.lo)?;
            if !(d.hi >= d.lo) || (d.log && !(d.lo > 0.0)) {
                return Err(Error::Config(format!("bad bounds for {}", d.name)));
            }
        }
        Ok(())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.param
            .iter()
            .map(|d| {
                if d.log {
                    (d.lo.log10(), d.hi.log10())
                } else {
                    (d.lo, d.hi)
                }
            })
            .collect()
    }

    /// Applies a search-space vector to an MPC configuration.
    pub fn apply(&self, v: &[f64], cfg: &mut MpcConfig) -> Result<()> {
        let horizon = cfg.horizon();
        for (d, &x) in self.param.iter().zip(v) {
            let val = if d.log { 10f64.powf(x) } else { x };
            set_param(cfg, &d.name, val)?;
        }
        // keep the horizon when only the step changes
        let h = self
            .param
            .iter()
            .zip(v)
            .find(|(d, _)| d.name == "horizon")
            .map(|(d, &x)| if d.log { 10f64.powf(x) } else { x });
        let h = h.unwrap_or(horizon);
        cfg.steps = ((h / cfg.step).round() as usize).max(1);
        Ok(())
    }

    /// Search-space vector of an existing configuration.
    pub fn encode(&self, cfg: &MpcConfig) -> Vec<f64> {
        self.param
            .iter()
            .map(|d| {
                let v = get_param(cfg, &d.name);
                if d.log {
                    v.max(1e-300).log10()
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn values(&self, v: &[f64]) -> Vec<(String, f64)> {
        self.param
            .iter()
            .zip(v)
            .map(|(d, &x)| (d.name.clone(), if d.log { 10f64.powf(x) } else { x }))
            .collect()
    }
}

fn get_param(cfg: &MpcConfig, name: &str) -> f64 {
    match name {
        "q_x" => cfg.q[0],
        "q_psi_ax" => cfg.q[1],
        "q_xdot" => cfg.q[2],
        "q_psidot_ax" => cfg.q[3],
        "q_y" => cfg.q[4],
        "q_psi_tr_ax" => cfg.q[5],
        "r" => cfg.r,
        "q_term" => cfg.q_term,
        "horizon" => cfg.horizon(),
        "step" => cfg.step,
        _ => f64::NAN,
    }
}

fn set_param(cfg: &mut MpcConfig, name: &str, v: f64) -> Result<()> {
    match name {
        "q_x" => cfg.q[0] = v,
        "q_psi_ax" => cfg.q[1] = v,
        "q_xdot" => cfg.q[2] = v,
        "q_psidot_ax" => cfg.q[3] = v,
        "q_y" => cfg.q[4] = v,
        "q_psi_tr_ax" => cfg.q[5] = v,
        "r" => cfg.r = v,
        "q_term" => cfg.q_term = v,
        "horizon" => {}
        "step" => cfg.step = v,
        _ => return Err(Error::Config(format!("unknown design parameter '{name}'"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub values: Vec<(String, f64)>,
    pub config: MpcConfig,
    pub fitness: f64,
    pub all_infeasible: bool,
}

/// Fitness of one MPC configuration: Σ over scenarios of RMSE + λ·mean|Δu|.
/// Runs that fail or diverge are infeasible.
pub fn scenario_fitness(cfg: &MpcConfig, scenarios: &[ScenarioSpec], lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in scenarios {
        let mut s = s.clone();
        s.mpc = cfg.clone();
        match run_scenario(&s) {
            Ok(r) if r.failure.is_none() && !r.diverged => total += r.rmse + lambda * r.mean_abs_du,
            _ => return f64::INFINITY,
        }
    }
    total
}

pub fn tune_pso(space: &DesignSpace, scenarios: &[ScenarioSpec]) -> Result<TuneResult> {
    space.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("tuning needs at least one scenario".into()));
    }
    let base = scenarios[0].mpc.clone();
    let fitness = |v: &[f64]| {
        let mut cfg = base.clone();
        if space.apply(v, &mut cfg).is_err() || cfg.validate().is_err() {
            return f64::INFINITY;
        }
        scenario_fitness(&cfg, scenarios, space.lambda)
    };
    let start = space.encode(&base);
    let res = pso_seeded(fitness, &space.bounds(), &space.pso, &[start])?;
    let mut config = base;
    space.apply(&res.best, &mut config)?;
    Ok(TuneResult {
        values: space.values(&res.best),
        config,
        fitness: res.cost,
        all_infeasible: res.all_infeasible,
    })
}
