//! Incremental sliding-mode adhesion controller: regular tracking of an
//! adhesion set point combined with maximum seeking when the demand exceeds
//! what the contact can transmit.
//!
//! Inputs are oriented so that traction is positive (adhesion, slip and the
//! base torque `u^d`). The controller has no knowledge of the contact law.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdhesionConfig {
    /// Retreat increment on the unstable branch [N·m per step].
    pub p1: f64,
    /// Regular tracking increment [N·m per step].
    pub p2: f64,
    /// Half-width of the hold corridor around the set point.
    pub tol_f: f64,
    /// Time constant of the measurement low-pass filters [s].
    pub filter_tau: f64,
    pub period: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for AdhesionConfig {
    fn default() -> Self {
        Self {
            p1: 10.0,
            p2: 2.0,
            tol_f: 0.005,
            filter_tau: 0.02,
            period: 1e-3,
            tau_min: -8000.0,
            tau_max: 8000.0,
        }
    }
}

impl AdhesionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1 > self.p2 && self.p2 > 0.0) {
            return Err(Error::Config("adhesion gains need p1 > p2 > 0".into()));
        }
        if !(self.tol_f > 0.0 && self.filter_tau >= 0.0 && self.period > 0.0) {
            return Err(Error::Config("tol_f and period must be positive".into()));
        }
        if !(self.tau_min < 0.0 && self.tau_max > 0.0) {
            return Err(Error::Config("torque limits must bracket zero".into()));
        }
        Ok(())
    }
}

/// Operating segment of the adhesion–slip characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Segment {
    /// Below the demand on the stable branch: torque increases.
    Approach,
    /// Inside the corridor: torque held.
    #[default]
    Hold,
    /// Unstable branch: torque magnitude decreases.
    Retreat,
    /// Above the demand on the stable branch: torque eases back.
    BackOff,
}

impl Segment {
    pub fn label(&self) -> &'static str {
        match self {
            Segment::Approach => "I",
            Segment::Hold => "II",
            Segment::Retreat => "III",
            Segment::BackOff => "I-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdhesionCtrlState {
    pub u_d: f64,
    f_filt: f64,
    s_filt: f64,
    pub f_dot: f64,
    pub s_dot: f64,
    primed: bool,
    pub segment: Segment,
}

impl AdhesionCtrlState {
    pub fn new(u_d: f64) -> Self {
        Self {
            u_d,
            ..Default::default()
        }
    }

    pub fn filtered(&self) -> (f64, f64) {
        (self.f_filt, self.s_filt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdhesionOutput {
    pub u_d: f64,
    pub segment: Segment,
    pub sigma: f64,
    pub nu: f64,
    /// A NaN input was rejected and the previous torque held.
    pub invalid_input: bool,
}

pub fn force_to_adhesion_setpoint(force: f64, normal_force: f64) -> Result<f64> {
    if !(normal_force > 0.0) {
        return Err(Error::Domain(format!(
            "normal force {normal_force} must be positive"
        )));
    }
    Ok(force / normal_force)
}

pub fn switching_function(f_dot: f64, s_dot: f64) -> f64 {
    f_dot * s_dot
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One controller tick: filters the measurements, classifies the segment and
/// applies the torque increment.
pub fn adhesion_step(
    f_set: f64,
    f_meas: f64,
    s_meas: f64,
    ctrl: &AdhesionCtrlState,
    cfg: &AdhesionConfig,
) -> (AdhesionOutput, AdhesionCtrlState) {
    if f_set.is_nan() || f_meas.is_nan() || s_meas.is_nan() {
        let out = AdhesionOutput {
            u_d: ctrl.u_d,
            segment: ctrl.segment,
            sigma: 0.0,
            nu: 0.0,
            invalid_input: true,
        };
        return (out, *ctrl);
    }
    let mut next = *ctrl;
    if ctrl.primed {
        let a = cfg.period / (cfg.filter_tau + cfg.period);
        next.f_filt = ctrl.f_filt + a * (f_meas - ctrl.f_filt);
        next.s_filt = ctrl.s_filt + a * (s_meas - ctrl.s_filt);
        next.f_dot = (next.f_filt - ctrl.f_filt) / cfg.period;
        next.s_dot = (next.s_filt - ctrl.s_filt) / cfg.period;
    } else {
        next.f_filt = f_meas;
        next.s_filt = s_meas;
        next.f_dot = 0.0;
        next.s_dot = 0.0;
        next.primed = true;
    }

    let sigma = switching_function(next.f_dot, next.s_dot);
    let nu = f_set - f_meas;
    // demand direction; the table below is written for traction and mirrored
    let d = if f_set < 0.0 { -1.0 } else { 1.0 };
    let (segment, delta) = if nu.abs() <= cfg.tol_f {
        (Segment::Hold, 0.0)
    } else if sigma < 0.0 {
        (Segment::Retreat, -cfg.p1 * sgn(ctrl.u_d))
    } else if d * nu > 0.0 {
        (Segment::Approach, cfg.p2 * sgn(nu))
    } else {
        (Segment::BackOff, cfg.p2 * sgn(nu))
    };
    next.u_d = (ctrl.u_d + delta).clamp(cfg.tau_min, cfg.tau_max);
    next.segment = segment;
    (
        AdhesionOutput {
            u_d: next.u_d,
            segment,
            sigma,
            nu,
            invalid_input: false,
        },
        next,
    )
}
