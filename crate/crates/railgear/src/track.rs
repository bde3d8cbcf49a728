//! Evaluation track geometry: straight, clothoid and circular segments with
//! superelevation ramps, tabulated over arc length.

use nalgebra::Matrix3;
use num_dual::DualNum;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, GRAVITY};

/// Ramp rate of the superelevation used to size default clothoids [m/s].
pub const SUPERELEVATION_RAMP_RATE: f64 = 0.035;
pub const DEFAULT_STEP: f64 = 0.5;
/// Bound on the linear interpolation error of the yaw channel [rad].
pub const INTERP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackShape {
    Straight,
    StraightClothoidCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSpec {
    pub shape: TrackShape,
    /// Design speed [m/s].
    pub design_velocity: f64,
    /// Design unbalanced lateral acceleration [m/s²].
    pub design_lateral_accel: f64,
    /// Curve radius [m]; positive radii bend to the right.
    pub curve_radius: f64,
    /// Clothoid length [m]; `None` derives it from the superelevation ramp rate.
    pub clothoid_length: Option<f64>,
    /// Straight lead-in before the clothoid (or whole length for straight tracks) [m].
    pub lead_in: f64,
    /// Length of the constant-radius section [m].
    pub curve_length: f64,
    pub gauge: f64,
    pub step: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            shape: TrackShape::Straight,
            design_velocity: 0.0,
            design_lateral_accel: 0.0,
            curve_radius: f64::INFINITY,
            clothoid_length: None,
            lead_in: 5000.0,
            curve_length: 0.0,
            gauge: 1.5,
            step: DEFAULT_STEP,
        }
    }
}

impl TrackSpec {
    /// Evaluation tracks T1..T5. Curved tracks start with a 25 m straight.
    pub fn table(index: usize) -> Result<Self> {
        let kmh = 1.0 / 3.6;
        let curved = |v: f64, a: f64, r: f64| TrackSpec {
            shape: TrackShape::StraightClothoidCurve,
            design_velocity: v * kmh,
            design_lateral_accel: a,
            curve_radius: r,
            clothoid_length: None,
            lead_in: 25.0,
            curve_length: 4000.0,
            ..TrackSpec::default()
        };
        match index {
            1 => Ok(curved(40.0, 0.0, 175.0)),
            2 => Ok(curved(160.0, 0.2167, 1500.0)),
            3 => Ok(curved(280.0, 0.4333, 4250.0)),
            4 => Ok(curved(400.0, 0.65, 8500.0)),
            5 => Ok(TrackSpec::default()),
            _ => Err(Error::Config(format!("no evaluation track T{index}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gauge > 0.0) || !(self.step > 0.0) || !(self.lead_in > 0.0) {
            return Err(Error::Config(
                "gauge, step and lead-in must be positive".into(),
            ));
        }
        if self.shape == TrackShape::StraightClothoidCurve {
            if !(self.curve_radius > 0.0) || !self.curve_radius.is_finite() {
                return Err(Error::Config(
                    "curved track needs a finite radius > 0".into(),
                ));
            }
            if !(self.curve_length > 0.0) {
                return Err(Error::Config("curve length must be positive".into()));
            }
            if let Some(l) = self.clothoid_length {
                if !(l > 0.0) {
                    return Err(Error::Config("clothoid length must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Superelevation angle reached in the circular section [rad].
    pub fn final_superelevation_angle(&self) -> Result<f64> {
        match self.shape {
            TrackShape::Straight => Ok(0.0),
            TrackShape::StraightClothoidCurve => {
                let v = self.design_velocity;
                let arg = (v * v / self.curve_radius - self.design_lateral_accel) / GRAVITY;
                if arg.abs() > 1.0 {
                    return Err(Error::Domain(format!("arcsin argument {arg}")));
                }
                Ok(arg.asin())
            }
        }
    }

    pub fn clothoid_len(&self) -> Result<f64> {
        if let Some(l) = self.clothoid_length {
            return Ok(l);
        }
        let l_sup = self.gauge * self.final_superelevation_angle()?.sin();
        let ramp_time = l_sup.abs() / SUPERELEVATION_RAMP_RATE;
        // a level curve still needs a transition for the curvature
        Ok((self.design_velocity * ramp_time).max(20.0))
    }
}

/// Superelevation height [m] for a design speed, radius and unbalanced acceleration.
///
/// The height is the rise of the outer rail head over the gauge `b` taken as
/// the hypotenuse, `b·sin φ_Tr` with `φ_Tr = asin((v²/R − a)/g)`. The
/// `b·tan φ_Tr` variant differs by up to 1.3 mm on the evaluation tracks and
/// is available as [`superelevation_tan_form`].
pub fn superelevation_from_design(v: f64, radius: f64, a: f64, gauge: f64) -> Result<f64> {
    if radius.is_infinite() {
        let arg = -a / GRAVITY;
        if arg.abs() > 1.0 {
            return Err(Error::Domain(format!("arcsin argument {arg}")));
        }
        return Ok(gauge * arg.asin().sin());
    }
    if !(radius > 0.0) {
        return Err(Error::Domain("radius must be positive".into()));
    }
    let arg = (v * v / radius - a) / GRAVITY;
    if !(arg.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "arcsin argument {arg} outside [-1, 1]"
        )));
    }
    Ok(gauge * arg.asin().sin())
}

pub fn superelevation_tan_form(v: f64, radius: f64, a: f64, gauge: f64) -> Result<f64> {
    let h = superelevation_from_design(v, radius, a, gauge)?;
    Ok(gauge * (h / gauge).asin().tan())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackRow {
    pub p: f64,
    pub psi: f64,
    pub dpsi_dp: f64,
    pub phi: f64,
    pub dphi_dp: f64,
    pub eps: f64,
    pub deps_dp: f64,
}

/// Track channels interpolated at a (possibly dual-valued) arc length,
/// including the slopes of the derivative channels on the active interval.
#[derive(Debug, Clone, Copy)]
pub struct TrackPoint<D> {
    pub psi: D,
    pub dpsi_dp: D,
    pub phi: D,
    pub dphi_dp: D,
    pub eps: D,
    pub deps_dp: D,
    pub d2psi_dp2: f64,
    pub d2phi_dp2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackSample {
    pub psi: f64,
    pub psi_dot: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub eps: f64,
    pub eps_dot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackGeometry {
    rows: Vec<TrackRow>,
    pub gauge: f64,
}

#[derive(Clone, Copy)]
struct Segment {
    start: f64,
    len: f64,
    kind: SegKind,
}

#[derive(Clone, Copy, PartialEq)]
enum SegKind {
    Straight,
    Clothoid,
    Curve,
}

pub fn build_track(spec: &TrackSpec) -> Result<TrackGeometry> {
    spec.validate()?;
    let mut segs = vec![Segment {
        start: 0.0,
        len: spec.lead_in,
        kind: SegKind::Straight,
    }];
    let (kappa, phi_f, lc) = match spec.shape {
        TrackShape::Straight => (0.0, 0.0, 0.0),
        TrackShape::StraightClothoidCurve => {
            let lc = spec.clothoid_len()?;
            segs.push(Segment {
                start: spec.lead_in,
                len: lc,
                kind: SegKind::Clothoid,
            });
            segs.push(Segment {
                start: spec.lead_in + lc,
                len: spec.curve_length,
                kind: SegKind::Curve,
            });
            (
                1.0 / spec.curve_radius,
                spec.final_superelevation_angle()?,
                lc,
            )
        }
    };

    let eval = |seg: &Segment, p: f64| -> TrackRow {
        let s = p - seg.start;
        let mut row = TrackRow {
            p,
            ..Default::default()
        };
        match seg.kind {
            SegKind::Straight => {}
            SegKind::Clothoid => {
                row.psi = kappa * s * s / (2.0 * lc);
                row.dpsi_dp = kappa * s / lc;
                row.phi = phi_f * s / lc;
                row.dphi_dp = phi_f / lc;
            }
            SegKind::Curve => {
                row.psi = kappa * lc / 2.0 + kappa * s;
                row.dpsi_dp = kappa;
                row.phi = phi_f;
            }
        }
        row
    };

    let mut rows = Vec::new();
    for seg in &segs {
        let mut h = spec.step;
        if seg.kind == SegKind::Clothoid && kappa != 0.0 {
            // interpolation error of a quadratic is h²·ψ''/8
            let curv_rate = kappa.abs() / lc;
            h = h.min((8.0 * INTERP_TOL / curv_rate).sqrt());
        }
        let n = (seg.len / h).ceil().max(1.0) as usize;
        let first = if rows.is_empty() { 0 } else { 1 };
        for i in first..=n {
            let p = seg.start + seg.len * i as f64 / n as f64;
            rows.push(eval(seg, p));
        }
    }
    // derivative channels at a boundary knot take the value of the segment to the right
    for w in 1..segs.len() {
        let b = segs[w].start;
        if let Some(r) = rows.iter_mut().find(|r| (r.p - b).abs() < 1e-9) {
            let right = eval(&segs[w], b);
            r.dpsi_dp = right.dpsi_dp;
            r.dphi_dp = right.dphi_dp;
            r.deps_dp = right.deps_dp;
        }
    }
    Ok(TrackGeometry {
        rows,
        gauge: spec.gauge,
    })
}

impl TrackGeometry {
    pub fn from_rows(rows: Vec<TrackRow>, gauge: f64) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Config("track table needs at least two rows".into()));
        }
        if rows.windows(2).any(|w| !(w[1].p > w[0].p)) {
            return Err(Error::Config(
                "arc length must be strictly increasing".into(),
            ));
        }
        Ok(Self { rows, gauge })
    }

    pub fn rows(&self) -> &[TrackRow] {
        &self.rows
    }

    pub fn total_length(&self) -> f64 {
        self.rows.last().map(|r| r.p).unwrap_or(0.0)
    }

    fn locate(&self, p: f64) -> usize {
        let idx = self.rows.partition_point(|r| r.p <= p);
        idx.saturating_sub(1).min(self.rows.len() - 2)
    }

    /// Channels at `p`, clamped to the table ends.
    pub fn point<D: DualNum<Primitive = f64> + Copy>(&self, p: D) -> TrackPoint<D> {
        let len = self.total_length();
        let pr = p.re();
        let (pc, frozen) = if pr <= 0.0 {
            (D::from(0.0), true)
        } else if pr >= len {
            (D::from(len), true)
        } else {
            (p, false)
        };
        let i = self.locate(pc.re());
        let a = &self.rows[i];
        let b = &self.rows[i + 1];
        let h = b.p - a.p;
        let w = (pc - a.p) / h;
        let lerp = |x: f64, y: f64| w * (y - x) + x;
        let slope = |x: f64, y: f64| if frozen { 0.0 } else { (y - x) / h };
        TrackPoint {
            psi: lerp(a.psi, b.psi),
            dpsi_dp: lerp(a.dpsi_dp, b.dpsi_dp),
            phi: lerp(a.phi, b.phi),
            dphi_dp: lerp(a.dphi_dp, b.dphi_dp),
            eps: lerp(a.eps, b.eps),
            deps_dp: lerp(a.deps_dp, b.deps_dp),
            d2psi_dp2: slope(a.dpsi_dp, b.dpsi_dp),
            d2phi_dp2: slope(a.dphi_dp, b.dphi_dp),
        }
    }

    pub fn sample(&self, p: f64, xdot: f64) -> Result<TrackSample> {
        let len = self.total_length();
        if !(p >= 0.0 && p <= len) {
            return Err(Error::OutOfRange { p, len });
        }
        Ok(self.sample_clamped(p, xdot))
    }

    pub fn sample_clamped(&self, p: f64, xdot: f64) -> TrackSample {
        let c = self.point(p);
        TrackSample {
            psi: c.psi,
            psi_dot: c.dpsi_dp * xdot,
            phi: c.phi,
            phi_dot: c.dphi_dp * xdot,
            eps: c.eps,
            eps_dot: c.deps_dp * xdot,
        }
    }

    /// Mean track yaw angle and rate between the front and rear running gear.
    pub fn car_body_yaw(&self, p: f64, xdot: f64, l_cb: f64) -> (f64, f64) {
        let f = self.sample_clamped(p, xdot);
        let r = self.sample_clamped((p - l_cb).max(0.0), xdot);
        ((f.psi + r.psi) / 2.0, (f.psi_dot + r.psi_dot) / 2.0)
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Returns (R_0Tr, R_TrAx).
pub fn frame_rotations(
    sample: &TrackSample,
    psi_trax: f64,
    phi_trax: f64,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let r0tr = rot_z(sample.psi) * rot_y(sample.eps) * rot_x(sample.phi);
    let rtrax = rot_z(psi_trax) * rot_x(phi_trax);
    (r0tr, rtrax)
}
