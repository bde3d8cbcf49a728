//! Medium-fidelity running gear used as simulation truth. Extends the control
//! model with independent wheel spins and a nonlinear adhesion–slip contact
//! law; the controllers only see its measurements.
//!
//! Contact quantities use the rail-side convention: slip and adhesion are
//! negative under traction. The longitudinal force acting forward on the
//! axle is `−F_N·f_x`.

use serde::{Deserialize, Serialize};

use crate::model::{
    exogenous, lagrange_accel, ControlInput, GearState, VehicleParams, IPSIR, IV, IW, IY,
    MIN_SPEED, NX,
};
use crate::track::TrackGeometry;
use crate::{Error, Result};

/// Odd adhesion–slip curve `f(s) = k0·s / (1 + (|s|/a)^4)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdhesionCurveParams {
    pub f_max: f64,
    pub s_peak: f64,
    /// Post-peak decay exponent; must exceed 1/4.
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    0.3
}

impl AdhesionCurveParams {
    pub fn good() -> Self {
        Self {
            f_max: 0.35,
            s_peak: 0.01,
            decay: default_decay(),
        }
    }

    pub fn poor() -> Self {
        Self {
            f_max: 0.10,
            s_peak: 0.02,
            decay: default_decay(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "good" => Ok(Self::good()),
            "poor" => Ok(Self::poor()),
            _ => Err(Error::Config(format!("unknown adhesion preset '{name}'"))),
        }
    }

    fn peak_ratio(&self) -> f64 {
        1.0 / (4.0 * self.decay - 1.0)
    }

    fn corner(&self) -> f64 {
        self.s_peak / self.peak_ratio().powf(0.25)
    }

    /// Micro-slip slope `f'(0)`.
    pub fn k0(&self) -> f64 {
        self.f_max * (1.0 + self.peak_ratio()).powf(self.decay) / self.s_peak
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_max > 0.0 && self.s_peak > 0.0 && self.decay > 0.25) {
            return Err(Error::Config(
                "adhesion curve needs f_max > 0, s_peak > 0, decay > 1/4".into(),
            ));
        }
        Ok(())
    }
}

pub fn adhesion_curve(s: f64, c: &AdhesionCurveParams) -> f64 {
    let q = (s / c.corner()).powi(4);
    c.k0() * s / (1.0 + q).powf(c.decay)
}

/// Slip magnitude on the stable branch producing adhesion `f` (clamped to
/// the peak when `|f| ≥ f_max`).
fn stable_branch_inverse(f: f64, c: &AdhesionCurveParams) -> f64 {
    let target = f.abs();
    if target >= c.f_max {
        return c.s_peak.copysign(f);
    }
    let (mut lo, mut hi) = (0.0, c.s_peak);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if adhesion_curve(mid, c) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).copysign(f)
}

/// Longitudinal slip `(ẋ − ω·r)/ẋ` with `ω` the forward rolling speed
/// (positive when rolling forward, i.e. the negated axle-frame spin).
pub fn slip(xdot: f64, omega: f64, r: f64) -> Result<f64> {
    if !(xdot >= MIN_SPEED) {
        return Err(Error::Domain(format!("standstill: ẋ = {xdot}")));
    }
    Ok((xdot - omega * r) / xdot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdhesionInterval {
    pub from: f64,
    pub to: f64,
    pub curve: AdhesionCurveParams,
}

/// Piecewise adhesion conditions over arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdhesionSchedule {
    pub intervals: Vec<AdhesionInterval>,
}

impl AdhesionSchedule {
    pub fn uniform(curve: AdhesionCurveParams) -> Self {
        Self {
            intervals: vec![AdhesionInterval {
                from: 0.0,
                to: f64::INFINITY,
                curve,
            }],
        }
    }

    /// Checks ordering, contiguity and coverage of `[0, length]`.
    pub fn validate(&self, length: f64) -> Result<()> {
        let first = self
            .intervals
            .first()
            .ok_or_else(|| Error::Config("empty adhesion schedule".into()))?;
        if first.from > 0.0 {
            return Err(Error::Config("adhesion schedule must start at 0".into()));
        }
        for w in self.intervals.windows(2) {
            if w[0].to != w[1].from {
                return Err(Error::Config(format!(
                    "adhesion intervals not contiguous at {}",
                    w[0].to
                )));
            }
        }
        for iv in &self.intervals {
            iv.curve.validate()?;
            if !(iv.to > iv.from) {
                return Err(Error::Config(
                    "adhesion interval with non-positive length".into(),
                ));
            }
        }
        if self.intervals.last().map(|l| l.to).unwrap_or(0.0) < length {
            return Err(Error::Config(
                "adhesion schedule does not cover the track".into(),
            ));
        }
        Ok(())
    }

    pub fn at(&self, p: f64) -> &AdhesionCurveParams {
        let i = self.intervals.partition_point(|iv| iv.to <= p);
        &self.intervals[i.min(self.intervals.len() - 1)].curve
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelContact {
    pub normal_force: f64,
    pub s_x: f64,
    pub f_x: f64,
    pub s_y: f64,
    pub f_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub gear: GearState,
    pub omega_ri: f64,
    pub omega_le: f64,
    pub ri: WheelContact,
    pub le: WheelContact,
    /// Set once any contact slip exceeded 1 in magnitude.
    pub unstable_contact: bool,
    /// Forward speed fell below the validity floor; the plant is frozen.
    pub standstill: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub gear: GearState,
    /// `[right, left]` adhesion and slip in the rail-side convention.
    pub f_x: [f64; 2],
    pub s_x: [f64; 2],
    pub normal_force: [f64; 2],
}

pub fn measure(state: &PlantState) -> Measurement {
    Measurement {
        gear: state.gear,
        f_x: [state.ri.f_x, state.le.f_x],
        s_x: [state.ri.s_x, state.le.s_x],
        normal_force: [state.ri.normal_force, state.le.normal_force],
    }
}

const NP: usize = NX + 2;

struct Contacts {
    wheels: [WheelContact; 2],
    /// Forward force on the axle at the right and left contact.
    forward: [f64; 2],
    /// Right/left rolling radius and lateral distance.
    r: [f64; 2],
    y: [f64; 2],
    stiffness: f64,
}

fn contacts(
    s: &[f64; NP],
    track: &TrackGeometry,
    sched: &AdhesionSchedule,
    p: &VehicleParams,
) -> Contacts {
    let v = s[IV];
    let pt = track.point(s[0]);
    let curve = sched.at(s[0]);
    let t0 = p.delta0.tan();
    let y = s[IY];
    let r = [p.r0 + t0 * y, p.r0 - t0 * y];
    let yl = [p.gauge / 2.0 - y, p.gauge / 2.0 + y];
    let yaw = pt.dpsi_dp * v + s[IW];
    let contact_speed = [v - yl[0] * yaw, v + yl[1] * yaw];

    let m_x = p.m_x();
    let (sp, cp) = pt.phi.sin_cos();
    let kappa = pt.dpsi_dp;
    let normal_total = m_x * (p.g * cp + v * v * kappa * sp);
    let lateral_total = m_x * (v * v * kappa * cp - p.g * sp);
    let fn_each = 0.5 * normal_total;
    let s_y = stable_branch_inverse(lateral_total / normal_total, curve);

    let mut wheels = [WheelContact::default(); 2];
    let mut forward = [0.0; 2];
    for j in 0..2 {
        let omega = -s[NX + j];
        let s_x = (contact_speed[j] - omega * r[j]) / v;
        let total = s_x.hypot(s_y);
        let f = adhesion_curve(total, curve);
        let (f_x, f_y) = if total > 0.0 {
            (f * s_x / total, f * s_y / total)
        } else {
            (0.0, 0.0)
        };
        wheels[j] = WheelContact {
            normal_force: fn_each,
            s_x,
            f_x,
            s_y,
            f_y,
        };
        forward[j] = -fn_each * f_x;
    }
    let stiffness =
        r.iter().map(|rj| rj * rj).fold(0.0, f64::max) * fn_each * curve.k0() / (p.j_w_y * v);
    Contacts {
        wheels,
        forward,
        r,
        y: yl,
        stiffness,
    }
}

fn derivative(
    s: &[f64; NP],
    u: &ControlInput,
    track: &TrackGeometry,
    sched: &AdhesionSchedule,
    p: &VehicleParams,
) -> Result<[f64; NP]> {
    let c = contacts(s, track, sched, p);
    let ex = exogenous(track, s[0], s[IV], p.l_cb);
    let gear: [f64; NX] = s[..NX].try_into().expect("gear slice");
    let f_gen = [
        c.forward[0] + c.forward[1],
        c.y[1] * c.forward[1] - c.y[0] * c.forward[0],
    ];
    let acc = lagrange_accel(&gear, &ex, p, p.m_cb, 0.0, f_gen)?;
    let tau = [u.tau_ri, u.tau_le];
    let mut d = [0.0; NP];
    d[0] = s[IV];
    d[1] = s[IW];
    d[2] = acc[0];
    d[3] = acc[1];
    d[4] = s[IV] * s[IPSIR].sin();
    d[5] = s[IW] - ex.omega;
    for j in 0..2 {
        d[NX + j] = (tau[j] + c.r[j] * c.forward[j]) / p.j_w_y;
    }
    Ok(d)
}

fn pack(state: &PlantState) -> [f64; NP] {
    let mut s = [0.0; NP];
    s[..NX].copy_from_slice(&state.gear.to_array());
    s[NX] = state.omega_ri;
    s[NX + 1] = state.omega_le;
    s
}

fn unpack(
    s: &[f64; NP],
    track: &TrackGeometry,
    sched: &AdhesionSchedule,
    p: &VehicleParams,
    prev: &PlantState,
) -> PlantState {
    let gear = GearState::from_array(s[..NX].try_into().expect("gear slice"));
    let c = contacts(s, track, sched, p);
    let unstable = prev.unstable_contact || c.wheels.iter().any(|w| w.s_x.abs() > 1.0);
    PlantState {
        gear,
        omega_ri: s[NX],
        omega_le: s[NX + 1],
        ri: c.wheels[0],
        le: c.wheels[1],
        unstable_contact: unstable,
        standstill: false,
    }
}

impl PlantState {
    /// Plant at a gear state with the wheels in ideal rolling.
    pub fn rolling(
        gear: GearState,
        track: &TrackGeometry,
        sched: &AdhesionSchedule,
        p: &VehicleParams,
    ) -> Result<Self> {
        if !(gear.xdot >= MIN_SPEED) {
            return Err(Error::Domain(
                "initial speed below the validity floor".into(),
            ));
        }
        let g = crate::model::dependent_geometry(gear.y_trax, gear.psi_trax, 0.0, p)?;
        let psidot_tr = track.point(gear.x).dpsi_dp * gear.xdot;
        let (w_ri, w_le) = crate::model::wheel_speeds(&gear, psidot_tr, &g);
        let base = PlantState {
            gear,
            omega_ri: w_ri,
            omega_le: w_le,
            ..Default::default()
        };
        Ok(unpack(&pack(&base), track, sched, p, &base))
    }
}

/// Largest RK4 substep relative to the contact time constant.
const SUBSTEP_FACTOR: f64 = 1.5;
const MAX_SUBSTEPS: usize = 4096;

/// Advances the plant by `dt` with classical RK4, splitting the step when
/// the wheel-spin contact dynamics are stiff (low speed, high creep slope).
pub fn plant_step(
    state: &PlantState,
    u: &ControlInput,
    track: &TrackGeometry,
    sched: &AdhesionSchedule,
    params: &VehicleParams,
    dt: f64,
) -> Result<PlantState> {
    if !(dt > 0.0 && dt <= 1e-3 + 1e-15) {
        return Err(Error::Domain(format!("plant step {dt} outside (0, 1 ms]")));
    }
    if state.standstill {
        return Ok(*state);
    }
    if state.gear.xdot < MIN_SPEED {
        let mut frozen = *state;
        frozen.standstill = true;
        return Ok(frozen);
    }
    let mut s = pack(state);
    let stiff = contacts(&s, track, sched, params).stiffness;
    let n = ((dt * stiff / SUBSTEP_FACTOR).ceil() as usize).clamp(1, MAX_SUBSTEPS);
    let h = dt / n as f64;
    let add = |a: &[f64; NP], k: &[f64; NP], f: f64| {
        let mut o = *a;
        for i in 0..NP {
            o[i] += f * k[i];
        }
        o
    };
    for _ in 0..n {
        let k1 = derivative(&s, u, track, sched, params)?;
        let k2 = derivative(&add(&s, &k1, h / 2.0), u, track, sched, params)?;
        let k3 = derivative(&add(&s, &k2, h / 2.0), u, track, sched, params)?;
        let k4 = derivative(&add(&s, &k3, h), u, track, sched, params)?;
        for i in 0..NP {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if s[IV] < MIN_SPEED {
            break;
        }
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("plant state diverged".into()));
    }
    let mut next = unpack(&s, track, sched, params, state);
    if s[IV] < MIN_SPEED {
        next.standstill = true;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_track, TrackSpec};

    #[test]
    fn curve_shape() {
        for c in [AdhesionCurveParams::good(), AdhesionCurveParams::poor()] {
            assert_eq!(adhesion_curve(0.0, &c), 0.0);
            assert!((adhesion_curve(c.s_peak, &c) - c.f_max).abs() < 1e-12);
            let s = 1e-4;
            assert!((adhesion_curve(s, &c) - c.k0() * s).abs() <= 0.01 * c.k0() * s);
            let far = adhesion_curve(10.0 * c.s_peak, &c);
            assert!(far < c.f_max && far > 0.0);
            assert_eq!(adhesion_curve(-0.003, &c), -adhesion_curve(0.003, &c));
            for k in 1..200 {
                let s = k as f64 * c.s_peak * 0.05;
                assert!(adhesion_curve(s, &c) <= c.f_max + 1e-15);
            }
            let mut prev = 0.0;
            for k in 1..=100 {
                let s = k as f64 * c.s_peak / 100.0;
                let h = 1e-7;
                let d2 = adhesion_curve(s + h, &c) - 2.0 * adhesion_curve(s, &c)
                    + adhesion_curve(s - h, &c);
                assert!(d2 < 0.0, "not concave at {s}");
                let f = adhesion_curve(s, &c);
                assert!(f > prev);
                prev = f;
            }
        }
    }

    #[test]
    fn inverse_on_stable_branch() {
        let c = AdhesionCurveParams::good();
        for f in [-0.3, -0.01, 0.0, 0.02, 0.2, 0.3499] {
            let s = stable_branch_inverse(f, &c);
            assert!(s.abs() <= c.s_peak);
            assert!((adhesion_curve(s, &c) - f).abs() < 1e-12);
        }
        assert_eq!(stable_branch_inverse(0.5, &c), c.s_peak);
    }

    #[test]
    fn slip_examples() {
        assert_eq!(slip(10.0, 10.0, 1.0).unwrap(), 0.0);
        assert!((slip(10.0, 10.1, 1.0).unwrap() + 0.01).abs() < 1e-12);
        assert!((slip(10.0, 9.9, 1.0).unwrap() - 0.01).abs() < 1e-12);
        assert!(slip(0.05, 1.0, 1.0).is_err());
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let s = AdhesionSchedule {
            intervals: vec![
                AdhesionInterval {
                    from: 0.0,
                    to: 100.0,
                    curve: AdhesionCurveParams::good(),
                },
                AdhesionInterval {
                    from: 100.0,
                    to: 1e4,
                    curve: AdhesionCurveParams::poor(),
                },
            ],
        };
        s.validate(5000.0).unwrap();
        assert_eq!(s.at(99.9).f_max, 0.35);
        assert_eq!(s.at(100.0).f_max, 0.10);
        assert!(s.validate(2e4).is_err());
        let gap = AdhesionSchedule {
            intervals: vec![
                AdhesionInterval {
                    from: 0.0,
                    to: 100.0,
                    curve: AdhesionCurveParams::good(),
                },
                AdhesionInterval {
                    from: 120.0,
                    to: 1e4,
                    curve: AdhesionCurveParams::poor(),
                },
            ],
        };
        assert!(gap.validate(50.0).is_err());
    }

    #[test]
    fn ideal_rolling_is_equilibrium() {
        let p = VehicleParams::default();
        let t = build_track(&TrackSpec::table(5).unwrap()).unwrap();
        let sched = AdhesionSchedule::uniform(AdhesionCurveParams::good());
        let mut s = PlantState::rolling(GearState::rolling(10.0, 30.0), &t, &sched, &p).unwrap();
        for _ in 0..500 {
            s = plant_step(&s, &ControlInput::default(), &t, &sched, &p, 1e-3).unwrap();
        }
        assert!((s.gear.xdot - 30.0).abs() < 1e-12);
        assert!((s.gear.x - 25.0).abs() < 1e-9);
        assert!(s.ri.s_x.abs() < 1e-12 && s.le.s_x.abs() < 1e-12);
    }

    #[test]
    fn traction_torque_balance() {
        let p = VehicleParams::default();
        let t = build_track(&TrackSpec::table(5).unwrap()).unwrap();
        let sched = AdhesionSchedule::uniform(AdhesionCurveParams::good());
        let mut s = PlantState::rolling(GearState::rolling(10.0, 30.0), &t, &sched, &p).unwrap();
        let u = ControlInput::from_drive(2000.0, 2000.0);
        let mut prev = s;
        for _ in 0..1000 {
            prev = s;
            s = plant_step(&s, &u, &t, &sched, &p, 1e-3).unwrap();
        }
        // torque balance of the spinning wheel with the slip settled
        let xdd = (s.gear.xdot - prev.gear.xdot) / 1e-3;
        for w in [s.ri, s.le] {
            assert!(w.s_x < 0.0);
            let expected = (u.tau_ri + p.j_w_y * xdd / p.r0) / (p.r0 * w.normal_force);
            assert!(
                (w.f_x - expected).abs() < 1e-4 * expected.abs(),
                "{} {}",
                w.f_x,
                expected
            );
        }
        assert!(measure(&s).f_x[0] == s.ri.f_x);
    }

    #[test]
    fn adhesion_drop_leads_to_macro_slip() {
        let p = VehicleParams::default();
        let t = build_track(&TrackSpec::table(5).unwrap()).unwrap();
        let sched = AdhesionSchedule {
            intervals: vec![
                AdhesionInterval {
                    from: 0.0,
                    to: 20.0,
                    curve: AdhesionCurveParams::good(),
                },
                AdhesionInterval {
                    from: 20.0,
                    to: 1e4,
                    curve: AdhesionCurveParams::poor(),
                },
            ],
        };
        let mut s = PlantState::rolling(GearState::rolling(10.0, 30.0), &t, &sched, &p).unwrap();
        let u = ControlInput::from_drive(7000.0, 7000.0);
        let mut beyond = false;
        for _ in 0..3000 {
            s = plant_step(&s, &u, &t, &sched, &p, 1e-3).unwrap();
            let c = sched.at(s.gear.x);
            beyond |= s.ri.s_x.abs() > c.s_peak && s.gear.x > 20.0;
            assert!(s.ri.f_x.hypot(s.ri.f_y) <= c.f_max + 1e-12);
        }
        assert!(beyond);
    }
}
