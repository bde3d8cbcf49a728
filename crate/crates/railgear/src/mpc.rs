//! Lateral guidance by model predictive control over the differential
//! torque Δu. The nonlinear variant iterates Gauss–Newton quadratic
//! subproblems on the Euler-discretised model; the LTV variant solves one
//! condensed QP, bounded in Δu only, of the model linearised about the
//! centered riding position along the forecast track position.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::integration::{long_torque, TorqueLimits};
use crate::model::{
    step_jacobians, MatA, MatB, ModelTheta, VehicleParams, IPSIR, IV, IX, IY, MIN_SPEED, NU, NX,
};
use crate::qp::{solve_qp, QpOptions};
use crate::track::{TrackGeometry, TrackRow};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Number of prediction steps L.
    pub steps: usize,
    /// Prediction step T [s].
    pub step: f64,
    /// Diagonal state weight over [x, ψ_Ax, ẋ, ψ̇_Ax, y_TrAx, ψ_TrAx].
    pub q: [f64; NX],
    pub r: f64,
    /// Terminal multiplier on the lateral weights.
    pub q_term: f64,
    pub y_lim: f64,
    pub psi_lim: f64,
    /// L1 penalty on state-box violation.
    pub soft_penalty: f64,
    pub du_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub qp_tol: f64,
    /// Use the set point and track ahead of the vehicle. When false both
    /// are frozen at their current values across the horizon.
    pub preview: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step: 0.01,
            q: [0.0, 0.0, 1.0, 10.0, 5e6, 1e4],
            r: 1e-4,
            q_term: 10.0,
            y_lim: 0.007,
            psi_lim: 0.05,
            soft_penalty: 1e6,
            du_max: 8000.0,
            tau_min: -8000.0,
            tau_max: 8000.0,
            kkt_tol: 1e-6,
            max_iter: 30,
            qp_tol: 1e-8,
            preview: true,
        }
    }
}

impl MpcConfig {
    pub fn horizon(&self) -> f64 {
        self.step * self.steps as f64
    }

    pub fn limits(&self) -> TorqueLimits {
        TorqueLimits {
            tau_min: self.tau_min,
            tau_max: self.tau_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || !(self.step > 0.0) {
            return Err(Error::Config(
                "MPC needs at least one step of positive length".into(),
            ));
        }
        if self.q.iter().any(|w| !(*w >= 0.0)) || !(self.q_term >= 0.0) {
            return Err(Error::Config("state weights must be non-negative".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Config("input weight R must be positive".into()));
        }
        if !(self.y_lim > 0.0
            && self.psi_lim > 0.0
            && self.soft_penalty > 0.0
            && self.du_max >= 0.0)
        {
            return Err(Error::Config(
                "constraint boxes and penalty must be positive".into(),
            ));
        }
        if self.max_iter < 1 || !(self.kkt_tol > 0.0) {
            return Err(Error::Config(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        self.limits().validate()
    }

    /// Terminal weight Q·diag(0,0,0,0,q,q).
    pub fn q_terminal(&self) -> [f64; NX] {
        let mut w = [0.0; NX];
        w[IY] = self.q[IY] * self.q_term;
        w[IPSIR] = self.q[IPSIR] * self.q_term;
        w
    }
}

/// Desired lateral position as a function of arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LateralSetPoint {
    Constant {
        value: f64,
    },
    Sine {
        period: f64,
        amplitude: f64,
        #[serde(default)]
        start: f64,
    },
    /// Sine whose period changes linearly from `period_start` at `start` to
    /// `period_end` at `end`; zero outside.
    Sweep {
        start: f64,
        end: f64,
        period_start: f64,
        period_end: f64,
        amplitude: f64,
    },
}

impl Default for LateralSetPoint {
    fn default() -> Self {
        LateralSetPoint::Constant { value: 0.0 }
    }
}

impl LateralSetPoint {
    pub fn value(&self, p: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            LateralSetPoint::Constant { value } => value,
            LateralSetPoint::Sine {
                period,
                amplitude,
                start,
            } => {
                if p < start {
                    0.0
                } else {
                    amplitude * (TAU * (p - start) / period).sin()
                }
            }
            LateralSetPoint::Sweep {
                start,
                end,
                period_start,
                period_end,
                amplitude,
            } => {
                if p < start || p > end {
                    return 0.0;
                }
                let s = p - start;
                let slope = (period_end - period_start) / (end - start);
                let phase = if slope.abs() < 1e-12 {
                    s / period_start
                } else {
                    ((period_start + slope * s) / period_start).ln() / slope
                };
                amplitude * (TAU * phase).sin()
            }
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            LateralSetPoint::Constant { value } => value.abs(),
            LateralSetPoint::Sine { amplitude, .. } | LateralSetPoint::Sweep { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LateralSetPoint::Constant { value } => value.is_finite(),
            LateralSetPoint::Sine {
                period,
                amplitude,
                start,
            } => period > 0.0 && amplitude.is_finite() && start.is_finite(),
            LateralSetPoint::Sweep {
                start,
                end,
                period_start,
                period_end,
                amplitude,
            } => end > start && period_start > 0.0 && period_end > 0.0 && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid set point {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PreviewInputs<'a> {
    pub setpoint: &'a LateralSetPoint,
    /// Base torque sequence over the horizon (drive convention, length L).
    pub u_d: &'a [f64],
    pub theta: ModelTheta<'a>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Desired {
    pub states: Vec<[f64; NX]>,
    /// Part of the forecast ran past the end of the track.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub du: Vec<f64>,
    pub states: Vec<[f64; NX]>,
    pub desired: Vec<[f64; NX]>,
    pub cost: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub solve_time: f64,
    pub suboptimal: bool,
    pub preview_clamped: bool,
}

impl MpcSolution {
    /// Previous solution advanced by one step, the last move repeated.
    pub fn shifted(&self) -> Vec<f64> {
        let mut du: Vec<f64> = self.du.iter().skip(1).copied().collect();
        du.push(*self.du.last().unwrap_or(&0.0));
        du
    }
}

/// Track table holding the channels at `p` constant around it.
fn frozen_track(track: &TrackGeometry, p: f64, l_cb: f64) -> Result<TrackGeometry> {
    let c = track.point(p);
    let row = |q: f64| TrackRow {
        p: q,
        psi: c.psi,
        dpsi_dp: c.dpsi_dp,
        phi: c.phi,
        dphi_dp: c.dphi_dp,
        eps: c.eps,
        deps_dp: c.deps_dp,
    };
    TrackGeometry::from_rows(vec![row(p - l_cb - 1.0), row(p + 1e5)], track.gauge)
}

fn check_inputs(x_hat: &[f64; NX], preview: &PreviewInputs, cfg: &MpcConfig) -> Result<()> {
    if !(x_hat[IV] > MIN_SPEED) {
        return Err(Error::Domain(format!(
            "forward speed {} below validity floor",
            x_hat[IV]
        )));
    }
    if preview.u_d.len() != cfg.steps {
        return Err(Error::Length {
            expected: cfg.steps,
            got: preview.u_d.len(),
        });
    }
    Ok(())
}

/// Forecast positions, speeds and the desired state sequence over the horizon.
pub fn desired_sequence(
    x_hat: &[f64; NX],
    preview: &PreviewInputs,
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<Desired> {
    check_inputs(x_hat, preview, cfg)?;
    let l = cfg.steps;
    let t = cfg.step;
    let track = preview.theta.track;
    let len = track.total_length();
    let v_floor = 2.0 * MIN_SPEED;
    let mut clamped = false;

    // knots -2..=L+2 so that both differences are central at every k
    let kin = |k: isize| -> (f64, f64) {
        let ud = preview.u_d[(k.max(0) as usize).min(l - 1)];
        let a = ud / (params.r0 * params.m_x());
        let tk = t * k as f64;
        let v = x_hat[IV] + a * tk;
        if v >= v_floor || tk <= 0.0 {
            (
                x_hat[IX] + x_hat[IV] * tk + a * tk * tk / 2.0,
                v.max(v_floor),
            )
        } else {
            // stop decelerating at the speed floor
            let ts = (v_floor - x_hat[IV]) / a;
            let xs = x_hat[IX] + x_hat[IV] * ts + a * ts * ts / 2.0;
            (xs + v_floor * (tk - ts), v_floor)
        }
    };
    let n = l + 5;
    let mut pos = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (p, v) = kin(i as isize - 2);
        if p > len {
            clamped = true;
        }
        pos.push(p.min(len));
        vel.push(v);
        let yp = if cfg.preview { p.min(len) } else { x_hat[IX] };
        y.push(preview.setpoint.value(yp));
    }
    let mut psi_r = vec![0.0; n];
    for i in 1..n - 1 {
        psi_r[i] = (y[i + 1] - y[i - 1]) / (2.0 * t) / vel[i];
    }
    let track_at = |p: f64, v: f64| {
        let p = if cfg.preview { p } else { x_hat[IX] };
        track.sample_clamped(p, v)
    };
    let mut out = Vec::with_capacity(l + 1);
    for k in 0..=l {
        let i = k + 2;
        let s = track_at(pos[i], vel[i]);
        let psi_r_dot = (psi_r[i + 1] - psi_r[i - 1]) / (2.0 * t);
        let mut d = [0.0; NX];
        d[IX] = pos[i];
        d[IV] = vel[i];
        d[IY] = y[i];
        d[IPSIR] = psi_r[i];
        d[crate::model::IPSI] = psi_r[i] + s.psi;
        d[crate::model::IW] = psi_r_dot + s.psi_dot;
        out.push(d);
    }
    Ok(Desired {
        states: out,
        clamped,
    })
}

pub fn cost_eval(
    states: &[[f64; NX]],
    du: &[f64],
    desired: &[[f64; NX]],
    cfg: &MpcConfig,
) -> Result<f64> {
    let l = du.len();
    if states.len() != l + 1 {
        return Err(Error::Length {
            expected: l + 1,
            got: states.len(),
        });
    }
    if desired.len() != l + 1 {
        return Err(Error::Length {
            expected: l + 1,
            got: desired.len(),
        });
    }
    let t = cfg.step;
    let qt = cfg.q_terminal();
    let mut j = 0.0;
    for k in 0..=l {
        let w = if k < l { &cfg.q } else { &qt };
        for i in 0..NX {
            if w[i] != 0.0 {
                let e = states[k][i] - desired[k][i];
                j += t * w[i] * e * e;
            }
        }
        if k < l {
            j += t * cfg.r * du[k] * du[k];
        }
    }
    Ok(j)
}

/// Discrete prediction model used inside the horizon; inputs are axle
/// torques `[τ_ri, τ_le]` (positive brakes).
pub trait Prediction {
    fn step(&self, k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<[f64; NX]>;
    fn step_jac(&self, k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<([f64; NX], MatA, MatB)>;
}

pub struct NonlinearPrediction<'a> {
    pub theta: ModelTheta<'a>,
    pub params: &'a VehicleParams,
    pub t: f64,
}

impl Prediction for NonlinearPrediction<'_> {
    fn step(&self, _k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<[f64; NX]> {
        crate::model::euler(x, u, &self.theta, self.params, self.t)
    }

    fn step_jac(&self, _k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<([f64; NX], MatA, MatB)> {
        step_jacobians(x, u, &self.theta, self.params, self.t)
    }
}

/// Affine time-varying model `x⁺ = A_k x + B_k u + c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvPrediction {
    pub a: Vec<MatA>,
    pub b: Vec<MatB>,
    pub c: Vec<[f64; NX]>,
}

impl LtvPrediction {
    /// Linearisation at `[x^d_k, 0, ẋ^d_k, 0, 0, 0]` with equal wheel torques.
    pub fn centered(
        desired: &[[f64; NX]],
        common: &[f64],
        nl: &NonlinearPrediction,
    ) -> Result<Self> {
        let l = common.len();
        let mut out = LtvPrediction {
            a: Vec::with_capacity(l),
            b: Vec::with_capacity(l),
            c: Vec::with_capacity(l),
        };
        for k in 0..l {
            let mut x = [0.0; NX];
            x[IX] = desired[k][IX];
            x[IV] = desired[k][IV];
            let u = [-common[k], -common[k]];
            let (f, a, b) = nl.step_jac(k, &x, &u)?;
            let mut c = f;
            for i in 0..NX {
                for j in 0..NX {
                    c[i] -= a[i][j] * x[j];
                }
                for j in 0..NU {
                    c[i] -= b[i][j] * u[j];
                }
            }
            out.a.push(a);
            out.b.push(b);
            out.c.push(c);
        }
        Ok(out)
    }
}

impl Prediction for LtvPrediction {
    fn step(&self, k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<[f64; NX]> {
        let (a, b, c) = (&self.a[k], &self.b[k], &self.c[k]);
        let mut o = *c;
        for i in 0..NX {
            for j in 0..NX {
                o[i] += a[i][j] * x[j];
            }
            for j in 0..NU {
                o[i] += b[i][j] * u[j];
            }
        }
        Ok(o)
    }

    fn step_jac(&self, k: usize, x: &[f64; NX], u: &[f64; NU]) -> Result<([f64; NX], MatA, MatB)> {
        Ok((self.step(k, x, u)?, self.a[k], self.b[k]))
    }
}

/// Axle torques for common mode `c` and differential `du`.
fn axle(c: f64, du: f64) -> [f64; NU] {
    [-(c + du), -(c - du)]
}

/// Common-mode torque per step after reserving the reference differential.
fn common_mode(u_d: &[f64], du_ref: &[f64], cfg: &MpcConfig) -> Vec<f64> {
    let lim = cfg.limits();
    u_d.iter()
        .zip(du_ref)
        .map(|(&u, &d)| long_torque(u, d.abs().min(cfg.du_max), &lim))
        .collect()
}

fn rollout<M: Prediction>(
    m: &M,
    x0: &[f64; NX],
    common: &[f64],
    du: &[f64],
) -> Result<Vec<[f64; NX]>> {
    let mut xs = Vec::with_capacity(du.len() + 1);
    xs.push(*x0);
    for k in 0..du.len() {
        let next = m.step(k, &xs[k], &axle(common[k], du[k]))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("prediction diverged".into()));
        }
        xs.push(next);
    }
    Ok(xs)
}

/// Largest soft-box violations (lateral, yaw).
fn violation(xs: &[[f64; NX]], cfg: &MpcConfig) -> (f64, f64) {
    let mut v = (0.0f64, 0.0f64);
    for x in &xs[1..] {
        v.0 = v.0.max(x[IY].abs() - cfg.y_lim);
        v.1 = v.1.max(x[IPSIR].abs() - cfg.psi_lim);
    }
    (v.0.max(0.0), v.1.max(0.0))
}

fn merit(xs: &[[f64; NX]], du: &[f64], desired: &[[f64; NX]], cfg: &MpcConfig) -> Result<f64> {
    let (a, b) = violation(xs, cfg);
    Ok(cost_eval(xs, du, desired, cfg)? + cfg.soft_penalty * (a + b))
}

// quadratic weight on the slack variables; keeps the QP strictly convex
const SLACK_REG: f64 = 1.0;

struct Subproblem {
    du: Vec<f64>,
    /// Lagrangian gradient at the linearisation point (−H·δ on the Δu block).
    kkt: f64,
    qp_kkt: f64,
}

/// Condensed Gauss–Newton QP around the trajectory `xs` for the step δ.
/// Without `state_boxes` only the Δu box is imposed and there are no slacks.
fn subproblem(
    xs: &[[f64; NX]],
    a: &[MatA],
    bdu: &[[f64; NX]],
    du: &[f64],
    desired: &[[f64; NX]],
    cfg: &MpcConfig,
    state_boxes: bool,
) -> Result<Subproblem> {
    let l = du.len();
    let t = cfg.step;
    // sensitivities S_k = ∂x_k/∂Δu, stored row-major per k as NX × L
    let mut sens = vec![0.0; (l + 1) * NX * l];
    let at = |k: usize, i: usize, j: usize| (k * NX + i) * l + j;
    for k in 0..l {
        for i in 0..NX {
            for j in 0..k {
                let mut acc = 0.0;
                for m in 0..NX {
                    acc += a[k][i][m] * sens[at(k, m, j)];
                }
                sens[at(k + 1, i, j)] = acc;
            }
            sens[at(k + 1, i, k)] = bdu[k][i];
        }
    }

    let qt = cfg.q_terminal();
    let channels: Vec<usize> = (0..NX).filter(|&i| cfg.q[i] > 0.0 || qt[i] > 0.0).collect();
    let rows = l * channels.len();
    let mut sw = DMatrix::<f64>::zeros(rows, l);
    let mut ew = DVector::<f64>::zeros(rows);
    let mut r = 0;
    for k in 1..=l {
        let w = if k < l { &cfg.q } else { &qt };
        for &i in &channels {
            let sq = (2.0 * t * w[i]).sqrt();
            for j in 0..k {
                sw[(r, j)] = sq * sens[at(k, i, j)];
            }
            ew[r] = sq * (xs[k][i] - desired[k][i]);
            r += 1;
        }
    }
    let ns = if state_boxes { 2 } else { 0 };
    let n = l + ns;
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let hdd = sw.transpose() * &sw;
    let gdd = sw.transpose() * &ew;
    h.view_mut((0, 0), (l, l)).copy_from(&hdd);
    for j in 0..l {
        h[(j, j)] += 2.0 * t * cfg.r;
        g[j] = gdd[j] + 2.0 * t * cfg.r * du[j];
    }
    for s in 0..ns {
        h[(l + s, l + s)] = SLACK_REG;
        g[l + s] = cfg.soft_penalty;
    }

    // constraints Cᵀz ≥ d with z = [δ, s_y, s_ψ]
    let m = 2 * l + if state_boxes { 2 + 4 * l } else { 0 };
    let mut c = DMatrix::<f64>::zeros(n, m);
    let mut d = DVector::<f64>::zeros(m);
    let mut col = 0;
    for j in 0..l {
        c[(j, col)] = -1.0;
        d[col] = du[j] - cfg.du_max;
        col += 1;
        c[(j, col)] = 1.0;
        d[col] = -cfg.du_max - du[j];
        col += 1;
    }
    for s in 0..ns {
        c[(l + s, col)] = 1.0;
        col += 1;
    }
    for k in (1..=l).filter(|_| state_boxes) {
        for (s, (i, lim)) in [(IY, cfg.y_lim), (IPSIR, cfg.psi_lim)]
            .into_iter()
            .enumerate()
        {
            for sign in [-1.0, 1.0] {
                for j in 0..k {
                    c[(j, col)] = sign * sens[at(k, i, j)];
                }
                c[(l + s, col)] = 1.0;
                d[col] = -lim - sign * xs[k][i];
                col += 1;
            }
        }
    }
    let opts = QpOptions {
        feas_tol: cfg.qp_tol * 1e-2,
        ..Default::default()
    };
    let sol = solve_qp(&h, &g, &c, &d, &opts)?;
    let step = sol.z.rows(0, l);
    let kkt = (&hdd * step + 2.0 * t * cfg.r * step).amax().max(sol.kkt);
    Ok(Subproblem {
        du: step.iter().copied().collect(),
        kkt,
        qp_kkt: sol.kkt,
    })
}

fn jac_rollout<M: Prediction>(
    m: &M,
    x0: &[f64; NX],
    common: &[f64],
    du: &[f64],
) -> Result<(Vec<[f64; NX]>, Vec<MatA>, Vec<[f64; NX]>)> {
    let l = du.len();
    let mut xs = Vec::with_capacity(l + 1);
    let mut a = Vec::with_capacity(l);
    let mut bdu = Vec::with_capacity(l);
    xs.push(*x0);
    for k in 0..l {
        let (next, ak, bk) = m.step_jac(k, &xs[k], &axle(common[k], du[k]))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("prediction diverged".into()));
        }
        let mut b = [0.0; NX];
        for i in 0..NX {
            b[i] = bk[i][1] - bk[i][0];
        }
        xs.push(next);
        a.push(ak);
        bdu.push(b);
    }
    Ok((xs, a, bdu))
}

/// Sequential quadratic programming with Gauss–Newton Hessians over an
/// arbitrary prediction model. Stops when the Lagrangian gradient of the
/// subproblem is below `cfg.kkt_tol` or after `cfg.max_iter` iterations.
pub fn solve_sqp<M: Prediction>(
    model: &M,
    x_hat: &[f64; NX],
    desired: &Desired,
    u_d: &[f64],
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> Result<MpcSolution> {
    let start = Instant::now();
    let l = cfg.steps;
    let mut du: Vec<f64> = match warm {
        Some(w) if w.len() == l => w.iter().map(|v| v.clamp(-cfg.du_max, cfg.du_max)).collect(),
        _ => vec![0.0; l],
    };
    let common = common_mode(u_d, &du, cfg);
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut xs = Vec::new();
    while iterations < cfg.max_iter {
        iterations += 1;
        let (x_nom, a, bdu) = jac_rollout(model, x_hat, &common, &du)?;
        let sub = subproblem(&x_nom, &a, &bdu, &du, &desired.states, cfg, true)?;
        kkt = sub.kkt;
        let trial = |alpha: f64| -> Vec<f64> {
            du.iter().zip(&sub.du).map(|(u, s)| u + alpha * s).collect()
        };
        if kkt <= cfg.kkt_tol {
            du = trial(1.0);
            xs = rollout(model, x_hat, &common, &du)?;
            break;
        }
        let m0 = merit(&x_nom, &du, &desired.states, cfg)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let cand = trial(alpha);
            if let Ok(x_c) = rollout(model, x_hat, &common, &cand) {
                let m1 = merit(&x_c, &cand, &desired.states, cfg)?;
                if m1 <= m0 {
                    accepted = Some((cand, x_c));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, x_c)) => {
                du = cand;
                xs = x_c;
            }
            None => {
                xs = x_nom;
                break;
            }
        }
    }
    if xs.is_empty() {
        xs = rollout(model, x_hat, &common, &du)?;
    }
    let cost = cost_eval(&xs, &du, &desired.states, cfg)?;
    Ok(MpcSolution {
        du,
        states: xs,
        desired: desired.states.clone(),
        cost,
        kkt,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
        suboptimal: kkt > cfg.kkt_tol,
        preview_clamped: desired.clamped,
    })
}

/// Model parameters with the track frozen at the current position when
/// preview is switched off.
fn prediction_track(
    x_hat: &[f64; NX],
    preview: &PreviewInputs,
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> Result<Option<TrackGeometry>> {
    if cfg.preview {
        Ok(None)
    } else {
        Ok(Some(frozen_track(
            preview.theta.track,
            x_hat[IX],
            params.l_cb,
        )?))
    }
}

pub fn solve_nmpc(
    x_hat: &[f64; NX],
    preview: &PreviewInputs,
    params: &VehicleParams,
    cfg: &MpcConfig,
    warm: Option<&MpcSolution>,
) -> Result<MpcSolution> {
    let start = Instant::now();
    check_inputs(x_hat, preview, cfg)?;
    let desired = desired_sequence(x_hat, preview, params, cfg)?;
    let frozen = prediction_track(x_hat, preview, params, cfg)?;
    let theta = ModelTheta {
        track: frozen.as_ref().unwrap_or(preview.theta.track),
        m_cb: preview.theta.m_cb,
    };
    let model = NonlinearPrediction {
        theta,
        params,
        t: cfg.step,
    };
    let shifted = warm.map(|w| w.shifted());
    let mut sol = solve_sqp(
        &model,
        x_hat,
        &desired,
        preview.u_d,
        cfg,
        shifted.as_deref(),
    )?;
    sol.solve_time = start.elapsed().as_secs_f64();
    Ok(sol)
}

pub fn solve_ltv_mpc(
    x_hat: &[f64; NX],
    preview: &PreviewInputs,
    params: &VehicleParams,
    cfg: &MpcConfig,
    warm: Option<&MpcSolution>,
) -> Result<MpcSolution> {
    let start = Instant::now();
    check_inputs(x_hat, preview, cfg)?;
    let desired = desired_sequence(x_hat, preview, params, cfg)?;
    let frozen = prediction_track(x_hat, preview, params, cfg)?;
    let theta = ModelTheta {
        track: frozen.as_ref().unwrap_or(preview.theta.track),
        m_cb: preview.theta.m_cb,
    };
    let nl = NonlinearPrediction {
        theta,
        params,
        t: cfg.step,
    };
    let du_ref = warm
        .map(|w| w.shifted())
        .unwrap_or_else(|| vec![0.0; cfg.steps]);
    let common = common_mode(preview.u_d, &du_ref, cfg);
    let ltv = LtvPrediction::centered(&desired.states, &common, &nl)?;
    // linear dynamics: one bound-constrained subproblem from Δu = 0 is the
    // exact optimum; the state boxes are left to the nonlinear controller
    let zero = vec![0.0; cfg.steps];
    let (x_nom, a, bdu) = jac_rollout(&ltv, x_hat, &common, &zero)?;
    let sub = subproblem(&x_nom, &a, &bdu, &zero, &desired.states, cfg, false)?;
    let du = sub.du;
    let xs = rollout(&ltv, x_hat, &common, &du)?;
    let cost = cost_eval(&xs, &du, &desired.states, cfg)?;
    Ok(MpcSolution {
        du,
        states: xs,
        desired: desired.states,
        cost,
        kkt: sub.qp_kkt,
        iterations: 1,
        solve_time: start.elapsed().as_secs_f64(),
        suboptimal: sub.qp_kkt > cfg.qp_tol,
        preview_clamped: desired.clamped,
    })
}
