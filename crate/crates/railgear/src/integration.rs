//! Torque integration rule and the two-rate scheduler that combines the
//! adhesion controller (fast) with the lateral MPC (slow).
//!
//! Torques here are drive torques: positive accelerates.

use serde::{Deserialize, Serialize};

use crate::adhesion::{
    adhesion_step, force_to_adhesion_setpoint, AdhesionConfig, AdhesionCtrlState, Segment,
};
use crate::model::{ControlInput, ModelTheta, VehicleParams};
use crate::mpc::{
    solve_ltv_mpc, solve_nmpc, LateralSetPoint, MpcConfig, MpcSolution, PreviewInputs,
};
use crate::plant::Measurement;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueLimits {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for TorqueLimits {
    fn default() -> Self {
        Self {
            tau_min: -8000.0,
            tau_max: 8000.0,
        }
    }
}

impl TorqueLimits {
    pub fn new(tau_min: f64, tau_max: f64) -> Result<Self> {
        let l = Self { tau_min, tau_max };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min < 0.0 && 0.0 < self.tau_max) {
            return Err(Error::Config(format!(
                "torque limits [{}, {}] must bracket zero",
                self.tau_min, self.tau_max
            )));
        }
        Ok(())
    }

    /// Largest differential torque that can always be delivered.
    pub fn max_differential(&self) -> f64 {
        (self.tau_max - self.tau_min) / 2.0
    }

    /// Limits with the roles of drive and brake swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            tau_min: -self.tau_max,
            tau_max: -self.tau_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrated {
    pub tau_ri: f64,
    pub tau_le: f64,
    pub tau_long: f64,
    /// Δu actually delivered (differs from the request only when clamped).
    pub delta_u: f64,
    pub clamped: bool,
}

/// Common-mode torque left after reserving `|Δu|` for steering.
pub fn long_torque(u_d: f64, du_abs: f64, lim: &TorqueLimits) -> f64 {
    if u_d > 0.0 {
        u_d.min(lim.tau_max - du_abs)
    } else {
        u_d.max(lim.tau_min + du_abs)
    }
}

pub fn integrate(u_d: f64, delta_u: f64, lim: &TorqueLimits) -> Integrated {
    let cap = lim.max_differential();
    let clamped = delta_u.abs() > cap;
    let du = delta_u.clamp(-cap, cap);
    let mut tau_long = long_torque(u_d, du.abs(), lim);
    // asymmetric limits can leave the shaved common mode outside the box
    // (at |Δu| = cap the two bounds coincide up to rounding)
    let lo = lim.tau_min + du.abs();
    tau_long = tau_long.clamp(lo, (lim.tau_max - du.abs()).max(lo));
    // τ_max − |Δu| + |Δu| can round one ulp past the limit
    let tau_ri = (tau_long + du).clamp(lim.tau_min, lim.tau_max);
    let tau_le = (tau_long - du).clamp(lim.tau_min, lim.tau_max);
    Integrated {
        tau_ri,
        tau_le,
        tau_long,
        delta_u: du,
        clamped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    /// Adhesion controller and plant step [s].
    pub fast: f64,
    /// Lateral MPC period [s].
    pub slow: f64,
    /// Treat MPC solves slower than `slow` (wall clock) as deadline misses.
    /// Off by default so that runs are reproducible.
    pub enforce_deadline: bool,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            fast: 1e-3,
            slow: 1e-2,
            enforce_deadline: false,
        }
    }
}

impl RateConfig {
    pub fn ratio(&self) -> Result<u64> {
        if !(self.fast > 0.0 && self.slow >= self.fast) {
            return Err(Error::Config("rates need 0 < fast ≤ slow".into()));
        }
        let r = self.slow / self.fast;
        let n = r.round();
        if (r - n).abs() > 1e-9 * r {
            return Err(Error::Config(format!(
                "slow period {} is not a multiple of {}",
                self.slow, self.fast
            )));
        }
        Ok(n as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LateralController {
    #[default]
    Nmpc,
    Ltv,
    /// No lateral control; Δu = 0.
    Off,
}

pub mod flags {
    pub const DEADLINE_MISS: u32 = 1;
    pub const SUBOPTIMAL: u32 = 1 << 1;
    pub const PREVIEW_CLAMPED: u32 = 1 << 2;
    pub const INVALID_MEASUREMENT: u32 = 1 << 3;
    pub const DU_CLAMPED: u32 = 1 << 4;
    pub const LATERAL_IDLE: u32 = 1 << 5;
    pub const UNSTABLE_CONTACT: u32 = 1 << 6;
    pub const STANDSTILL: u32 = 1 << 7;

    const NAMES: [(u32, &str); 8] = [
        (DEADLINE_MISS, "deadline_miss"),
        (SUBOPTIMAL, "suboptimal"),
        (PREVIEW_CLAMPED, "preview_clamped"),
        (INVALID_MEASUREMENT, "invalid_measurement"),
        (DU_CLAMPED, "du_clamped"),
        (LATERAL_IDLE, "lateral_idle"),
        (UNSTABLE_CONTACT, "unstable_contact"),
        (STANDSTILL, "standstill"),
    ];

    pub fn describe(bits: u32) -> String {
        NAMES
            .iter()
            .filter(|(b, _)| bits & b != 0)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Everything the scheduler needs from the outside for one fast tick.
#[derive(Debug, Clone, Copy)]
pub struct TickInput<'a> {
    pub meas: &'a Measurement,
    /// Longitudinal force demand for the running gear [N] (positive = traction).
    pub force_demand: f64,
    pub setpoint: &'a LateralSetPoint,
    pub theta: ModelTheta<'a>,
    pub params: &'a VehicleParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    /// Axle-frame torques for the plant.
    pub input: ControlInput,
    pub tau_ri: f64,
    pub tau_le: f64,
    pub u_d: f64,
    pub delta_u: f64,
    pub segment: Segment,
    /// Iterations and wall time of an MPC solve completed this tick.
    pub solve: Option<(usize, f64)>,
    pub flags: u32,
}

/// Runs the adhesion controller every fast tick and the lateral MPC every
/// slow tick, holding Δu in between.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub rates: RateConfig,
    pub limits: TorqueLimits,
    pub adhesion: AdhesionConfig,
    pub mpc: MpcConfig,
    pub controller: LateralController,
    /// Below this speed [m/s] the MPC is idle and Δu = 0.
    pub min_lateral_speed: f64,
    ratio: u64,
    tick: u64,
    ctrl: AdhesionCtrlState,
    warm: Option<MpcSolution>,
    held_du: f64,
    inject_miss: bool,
    pub solves: usize,
    pub deadline_misses: usize,
}

impl Scheduler {
    pub fn new(
        rates: RateConfig,
        limits: TorqueLimits,
        adhesion: AdhesionConfig,
        mpc: MpcConfig,
        controller: LateralController,
    ) -> Result<Self> {
        let ratio = rates.ratio()?;
        limits.validate()?;
        adhesion.validate()?;
        mpc.validate()?;
        Ok(Self {
            rates,
            limits,
            adhesion,
            mpc,
            controller,
            min_lateral_speed: 2.0,
            ratio,
            tick: 0,
            ctrl: AdhesionCtrlState::new(0.0),
            warm: None,
            held_du: 0.0,
            inject_miss: false,
            solves: 0,
            deadline_misses: 0,
        })
    }

    /// Makes the next MPC solve count as late (fault injection).
    pub fn inject_deadline_miss(&mut self) {
        self.inject_miss = true;
    }

    pub fn held_delta_u(&self) -> f64 {
        self.held_du
    }

    pub fn step(&mut self, inp: &TickInput) -> Result<TickOutput> {
        let mut fl = 0;
        let m = inp.meas;
        // controller works on the contact closer to saturation, traction positive
        let j = if m.s_x[0].abs() >= m.s_x[1].abs() {
            0
        } else {
            1
        };
        let n_total = m.normal_force[0] + m.normal_force[1];
        let f_set = force_to_adhesion_setpoint(inp.force_demand, n_total)?;
        let (a_out, next) = adhesion_step(f_set, -m.f_x[j], -m.s_x[j], &self.ctrl, &self.adhesion);
        self.ctrl = next;
        if a_out.invalid_input {
            fl |= flags::INVALID_MEASUREMENT;
        }
        let u_d = a_out.u_d;

        let mut solve = None;
        if self.tick % self.ratio == 0 {
            if self.controller == LateralController::Off || m.gear.xdot < self.min_lateral_speed {
                self.held_du = 0.0;
                self.warm = None;
                fl |= flags::LATERAL_IDLE;
            } else {
                let ud = vec![u_d; self.mpc.steps];
                let pv = PreviewInputs {
                    setpoint: inp.setpoint,
                    u_d: &ud,
                    theta: inp.theta,
                };
                let x = m.gear.to_array();
                let sol = match self.controller {
                    LateralController::Nmpc => {
                        solve_nmpc(&x, &pv, inp.params, &self.mpc, self.warm.as_ref())?
                    }
                    _ => solve_ltv_mpc(&x, &pv, inp.params, &self.mpc, self.warm.as_ref())?,
                };
                self.solves += 1;
                solve = Some((sol.iterations, sol.solve_time));
                if sol.suboptimal {
                    fl |= flags::SUBOPTIMAL;
                }
                if sol.preview_clamped {
                    fl |= flags::PREVIEW_CLAMPED;
                }
                let late = self.inject_miss
                    || (self.rates.enforce_deadline && sol.solve_time > self.rates.slow);
                self.inject_miss = false;
                if late {
                    // keep the stale Δu for another period; the late result still warm-starts
                    self.deadline_misses += 1;
                    fl |= flags::DEADLINE_MISS;
                } else {
                    self.held_du = sol.du[0];
                }
                self.warm = Some(sol);
            }
        }
        self.tick += 1;

        let out = integrate(u_d, self.held_du, &self.limits);
        if out.clamped {
            fl |= flags::DU_CLAMPED;
        }
        Ok(TickOutput {
            input: ControlInput::from_drive(out.tau_ri, out.tau_le),
            tau_ri: out.tau_ri,
            tau_le: out.tau_le,
            u_d,
            delta_u: out.delta_u,
            segment: a_out.segment,
            solve,
            flags: fl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let lim = TorqueLimits::new(-1000.0, 1000.0).unwrap();
        let o = integrate(0.0, 100.0, &lim);
        assert_eq!((o.tau_ri, o.tau_le), (100.0, -100.0));
        let o = integrate(950.0, 100.0, &lim);
        assert_eq!((o.tau_long, o.tau_ri, o.tau_le), (900.0, 1000.0, 800.0));
        let o = integrate(-1200.0, 0.0, &lim);
        assert_eq!((o.tau_ri, o.tau_le), (-1000.0, -1000.0));
        let o = integrate(300.0, 0.0, &lim);
        assert_eq!((o.tau_ri, o.tau_le), (300.0, 300.0));
    }

    #[test]
    fn oversized_differential_is_clamped() {
        let lim = TorqueLimits::new(-1000.0, 1000.0).unwrap();
        let o = integrate(500.0, 1500.0, &lim);
        assert!(o.clamped);
        assert_eq!((o.tau_ri, o.tau_le), (1000.0, -1000.0));
        assert!(TorqueLimits::new(0.0, 1.0).is_err());
    }
}
