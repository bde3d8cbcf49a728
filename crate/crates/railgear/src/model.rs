//! Control-oriented running gear model: reduced Lagrange dynamics in
//! `[x, ψ_Ax]`, auxiliary path states, conic-wheel kinematics, Euler
//! discretisation and linearisation.
//!
//! Sign conventions follow the axle frame: x forward, y to the right, z down,
//! positive yaw turns right. Wheel spin speeds are negative when rolling
//! forward and a positive motor torque brakes. Controllers work with drive
//! torques (positive = traction); [`ControlInput::from_drive`] converts.

use num_dual::{Dual64, DualNum};
use serde::{Deserialize, Serialize};

use crate::track::TrackGeometry;
use crate::{Error, Result, GRAVITY};

pub const NX: usize = 6;
pub const NU: usize = 2;
pub const IX: usize = 0;
pub const IPSI: usize = 1;
pub const IV: usize = 2;
pub const IW: usize = 3;
pub const IY: usize = 4;
pub const IPSIR: usize = 5;

/// Model validity floor on the forward speed [m/s].
pub const MIN_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub m: f64,
    pub m_cb: f64,
    pub j_ax_x: f64,
    pub j_ax_z: f64,
    /// Wheel inertia about the longitudinal, spin and vertical axes.
    pub j_w_x: f64,
    pub j_w_y: f64,
    pub j_w_z: f64,
    pub k_s_x: f64,
    pub k_s_z: f64,
    pub k_d_x: f64,
    pub k_d_z: f64,
    pub r0: f64,
    pub delta0: f64,
    pub gauge: f64,
    pub l_cb: f64,
    pub g: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 3000.0,
            m_cb: 32000.0,
            j_ax_x: 1200.0,
            j_ax_z: 1500.0,
            j_w_x: 30.0,
            j_w_y: 60.0,
            j_w_z: 30.0,
            k_s_x: 1e6,
            k_s_z: 2e5,
            k_d_x: 1e4,
            k_d_z: 5e4,
            r0: 0.46,
            delta0: 0.025,
            gauge: 1.5,
            l_cb: 17.0,
            g: GRAVITY,
            tau_min: -8000.0,
            tau_max: 8000.0,
        }
    }
}

impl VehicleParams {
    pub fn m_x(&self) -> f64 {
        self.m + self.m_cb / 2.0
    }

    pub fn gamma(&self) -> f64 {
        let t = self.delta0.tan();
        t / (self.gauge / 2.0 - self.r0 * t)
    }

    /// Static normal load per wheel [N].
    pub fn static_wheel_load(&self) -> f64 {
        self.m_x() * self.g / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.m,
            self.m_cb,
            self.j_ax_x,
            self.j_ax_z,
            self.j_w_x,
            self.j_w_y,
            self.j_w_z,
            self.r0,
            self.gauge,
            self.g,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(
                "masses, inertias, radius, gauge and g must be positive".into(),
            ));
        }
        if !(self.gauge / 2.0 > self.r0 * self.delta0.tan()) {
            return Err(Error::Config("b/2 must exceed r0·tan(δ0)".into()));
        }
        if !(self.tau_min < 0.0 && self.tau_max > 0.0) {
            return Err(Error::Config("torque limits must bracket zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GearState {
    pub x: f64,
    pub psi_ax: f64,
    pub xdot: f64,
    pub psidot_ax: f64,
    pub y_trax: f64,
    pub psi_trax: f64,
}

impl GearState {
    pub fn rolling(x: f64, xdot: f64) -> Self {
        Self {
            x,
            xdot,
            ..Default::default()
        }
    }

    pub fn to_array(&self) -> [f64; NX] {
        [
            self.x,
            self.psi_ax,
            self.xdot,
            self.psidot_ax,
            self.y_trax,
            self.psi_trax,
        ]
    }

    pub fn from_array(a: &[f64; NX]) -> Self {
        Self {
            x: a[0],
            psi_ax: a[1],
            xdot: a[2],
            psidot_ax: a[3],
            y_trax: a[4],
            psi_trax: a[5],
        }
    }
}

/// Motor torques in the axle frame convention (positive brakes).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub tau_ri: f64,
    pub tau_le: f64,
}

impl ControlInput {
    /// Converts drive torques (positive = traction) to the axle convention.
    pub fn from_drive(ri: f64, le: f64) -> Self {
        Self {
            tau_ri: -ri,
            tau_le: -le,
        }
    }

    pub fn to_drive(&self) -> (f64, f64) {
        (-self.tau_ri, -self.tau_le)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelTheta<'a> {
    pub track: &'a TrackGeometry,
    pub m_cb: f64,
}

impl<'a> ModelTheta<'a> {
    pub fn new(track: &'a TrackGeometry, params: &VehicleParams) -> Self {
        Self {
            track,
            m_cb: params.m_cb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependentGeometry<D = f64> {
    pub phi_trax: D,
    pub z_trax: D,
    pub r_le: D,
    pub r_ri: D,
    pub y_le: D,
    pub y_ri: D,
}

pub fn dependent_geometry(
    y_trax: f64,
    psi_trax: f64,
    phi_tr: f64,
    p: &VehicleParams,
) -> Result<DependentGeometry> {
    if !(psi_trax.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "|ψ_TrAx| = {} must be below π/2",
            psi_trax.abs()
        )));
    }
    Ok(geometry(y_trax, psi_trax, phi_tr, p))
}

pub(crate) fn geometry<D: DualNum<Primitive = f64> + Copy>(
    y: D,
    psi: D,
    phi_tr: D,
    p: &VehicleParams,
) -> DependentGeometry<D> {
    let gamma = p.gamma();
    let t0 = p.delta0.tan();
    let half = p.gauge / 2.0;
    DependentGeometry {
        phi_trax: phi_tr - y * gamma,
        z_trax: (psi.cos().recip() - 1.0) * (p.delta0 * half) - y * y * gamma - p.r0,
        r_le: -y * t0 + p.r0,
        r_ri: y * t0 + p.r0,
        y_le: y + half,
        y_ri: -y + half,
    }
}

/// Ideal-rolling wheel spin speeds `(ω_ri, ω_le)`.
pub fn wheel_speeds(state: &GearState, psidot_tr: f64, geom: &DependentGeometry) -> (f64, f64) {
    let yaw = psidot_tr + state.psidot_ax;
    let w_ri = -(state.xdot - geom.y_ri * yaw) / geom.r_ri;
    let w_le = -(state.xdot + geom.y_le * yaw) / geom.r_le;
    (w_ri, w_le)
}

pub fn generalized_forces(u: &ControlInput, geom: &DependentGeometry) -> [f64; 2] {
    gen_forces(u.tau_ri, u.tau_le, geom)
}

fn gen_forces<D: DualNum<Primitive = f64> + Copy>(
    tau_ri: D,
    tau_le: D,
    g: &DependentGeometry<D>,
) -> [D; 2] {
    [
        -(tau_le / g.r_le + tau_ri / g.r_ri),
        -(g.y_le * tau_le / g.r_le - g.y_ri * tau_ri / g.r_ri),
    ]
}

/// Track-dependent quantities treated as time-varying parameters of the
/// Lagrangian, with the rates used in the total time derivative.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Exogenous<D> {
    pub omega: D,
    pub omega_dot: D,
    pub phi_tr: D,
    pub phi_tr_dot: D,
    pub phi_tr_ddot: D,
    pub psi_cb: D,
    pub psi_cb_dot: D,
}

pub(crate) fn exogenous<D: DualNum<Primitive = f64> + Copy>(
    track: &TrackGeometry,
    x: D,
    v: D,
    l_cb: f64,
) -> Exogenous<D> {
    let front = track.point(x);
    let rear = track.point(x - l_cb);
    Exogenous {
        omega: front.dpsi_dp * v,
        omega_dot: v * v * front.d2psi_dp2,
        phi_tr: front.phi,
        phi_tr_dot: front.dphi_dp * v,
        phi_tr_ddot: v * v * front.d2phi_dp2,
        psi_cb: (front.psi + rear.psi) * 0.5,
        psi_cb_dot: (front.dpsi_dp + rear.dpsi_dp) * v * 0.5,
    }
}

/// Kinetic energy of the carrier and the non-spin wheel rotations in the
/// velocities `(ẋ, ẏ_TrAx, ψ̇_Ax)` written as `E_T = ½ q̇ᵀ M q̇ + h·q̇ + e0`,
/// with the partials needed by the Euler–Lagrange equations. Wheel spin
/// energy is added separately through the rolling constraint.
struct EnergyTerms<D> {
    m: [[D; 3]; 3],
    m_y: [[D; 3]; 3],
    m_psi: [[D; 3]; 3],
    h_y: [D; 3],
    h_psi: [D; 3],
    h_om: [D; 3],
    h_phi: [D; 3],
    e0_psi: D,
}

fn energy_terms<D: DualNum<Primitive = f64> + Copy>(
    y: D,
    psi: D,
    ex: &Exogenous<D>,
    p: &VehicleParams,
    m_x: f64,
) -> EnergyTerms<D> {
    let m = p.m;
    let gam = p.gamma();
    let cz = p.delta0 * p.gauge / 2.0;
    let jx = p.j_ax_x + 2.0 * p.j_w_x;
    let jz2 = 2.0 * p.j_w_z;
    let (s, c) = psi.sin_cos();
    let k = s / (c * c);
    let kp = (s * s + 1.0) / (c * c * c);
    let om = ex.omega;
    let zero = D::from(0.0);

    let m_uu = y * y * (4.0 * m * gam * gam) + m + jx * gam * gam;
    let m_ww = k * k * (m * cz * cz) + p.j_ax_z + jz2;
    let m_uw = -(k * y * (2.0 * m * cz * gam));
    let m_uu_y = y * (8.0 * m * gam * gam);
    let m_uw_y = -(k * (2.0 * m * cz * gam));
    let m_ww_psi = k * kp * (2.0 * m * cz * cz);
    let m_uw_psi = -(kp * y * (2.0 * m * cz * gam));

    EnergyTerms {
        m: [
            [D::from(m_x), zero, zero],
            [zero, m_uu, m_uw],
            [zero, m_uw, m_ww],
        ],
        m_y: [
            [zero, zero, zero],
            [zero, m_uu_y, m_uw_y],
            [zero, m_uw_y, zero],
        ],
        m_psi: [
            [zero, zero, zero],
            [zero, zero, m_uw_psi],
            [zero, m_uw_psi, m_ww_psi],
        ],
        h_y: [zero, k * om * (2.0 * m * gam * cz), zero],
        h_psi: [
            zero,
            kp * y * om * (2.0 * m * gam * cz),
            -(k * kp * om * (2.0 * m * cz * cz)),
        ],
        h_om: [
            zero,
            k * y * (2.0 * m * gam * cz),
            -(k * k * (m * cz * cz)) + jz2,
        ],
        h_phi: [zero, D::from(-jx * gam), zero],
        e0_psi: k * kp * om * om * (m * cz * cz),
    }
}

/// Accelerations `(ẍ, ψ̈_Ax)` from the Euler–Lagrange equations in
/// `(x, y_TrAx, ψ_Ax)`. The rolling constraint `ẏ_TrAx = ẋ sin ψ_TrAx` and
/// the ideal-rolling wheel spins are enforced as workless constraints: the
/// y equation is projected onto x and each wheel's spin equation onto the
/// velocities it depends on. `j_wy` is the wheel spin inertia coupled in
/// this way (zero when the spins are separate degrees of freedom).
pub(crate) fn lagrange_accel<D: DualNum<Primitive = f64> + Copy>(
    s: &[D; NX],
    ex: &Exogenous<D>,
    p: &VehicleParams,
    m_cb: f64,
    j_wy: f64,
    f_gen: [D; 2],
) -> Result<[D; 2]> {
    let m_x = p.m + m_cb / 2.0;
    let (v, w, y, psi) = (s[IV], s[IW], s[IY], s[IPSIR]);
    let e = energy_terms(y, psi, ex, p, m_x);
    let (sn, c) = psi.sin_cos();
    let k = sn / (c * c);
    let u = v * sn;
    let q = [v, u, w];
    let psi_rate = w - ex.omega;
    let gam = p.gamma();
    let cz = p.delta0 * p.gauge / 2.0;

    let quad = |mm: &[[D; 3]; 3]| {
        let mut acc = D::from(0.0);
        for i in 0..3 {
            for j in 0..3 {
                acc += q[i] * mm[i][j] * q[j];
            }
        }
        acc * 0.5
    };
    let dot = |h: &[D; 3]| h[0] * v + h[1] * u + h[2] * w;
    let dt_dy = quad(&e.m_y) + dot(&e.h_y);
    let dt_dpsi = quad(&e.m_psi) + dot(&e.h_psi) + e.e0_psi;
    let dv_dy = (ex.phi_tr - y * gam) * (-gam * p.k_s_x) + y * (2.0 * p.m * p.g * gam);
    let dv_dpsi = (s[IPSI] - ex.psi_cb) * p.k_s_z - k * (p.m * p.g * cz);
    let dd_du = (ex.phi_tr_dot - u * gam) * (-gam * p.k_d_x);
    let dd_dw = (w - ex.psi_cb_dot) * p.k_d_z;

    // residual of each Euler–Lagrange equation without the acceleration terms
    let mut r = [D::from(0.0); 3];
    for i in 0..3 {
        let mut mdot_q = D::from(0.0);
        for j in 0..3 {
            mdot_q += (e.m_y[i][j] * u + e.m_psi[i][j] * psi_rate) * q[j];
        }
        let hdot = e.h_y[i] * u
            + e.h_psi[i] * psi_rate
            + e.h_om[i] * ex.omega_dot
            + e.h_phi[i] * ex.phi_tr_ddot;
        r[i] = mdot_q + hdot;
    }
    r[0] -= f_gen[0];
    r[1] += dv_dy - dt_dy + dd_du;
    r[2] += dv_dpsi - dt_dpsi + dd_dw - f_gen[1];
    // ÿ = ẍ sinψ + ẋ cosψ ψ̇_TrAx
    let ydd_free = v * c * psi_rate;
    for i in 0..3 {
        r[i] += e.m[i][1] * ydd_free;
    }

    let mut m11 = e.m[0][0] + e.m[1][1] * sn * sn;
    let mut m12 = e.m[0][2] + e.m[1][2] * sn;
    let mut m22 = e.m[2][2];
    let mut r1 = r[0] + r[1] * sn;
    let mut r2 = r[2];

    if j_wy != 0.0 {
        // ω_j = −(ẋ ∓ y_j·Y)/r_j with Y = ψ̇_Tr + ψ̇_Ax; gradients in (ẋ, ψ̇_Ax)
        // and the part of ω̇_j not proportional to (ẍ, ψ̈_Ax)
        let t0 = p.delta0.tan();
        let half = p.gauge / 2.0;
        let yaw = ex.omega + w;
        let wheels = [
            (y * t0 + p.r0, -y + half, -1.0, t0),
            (-y * t0 + p.r0, y + half, 1.0, -t0),
        ];
        for (r_j, y_j, side, dr) in wheels {
            let n = v + y_j * yaw * side;
            let g_v = -r_j.recip();
            let g_w = -(y_j * side) / r_j;
            // ∂ω/∂y: lever arm grows with +y on the left, shrinks on the right
            let d_y = -(yaw / r_j) + n * dr / (r_j * r_j);
            let free = d_y * u + g_w * ex.omega_dot;
            m11 += g_v * g_v * j_wy;
            m12 += g_v * g_w * j_wy;
            m22 += g_w * g_w * j_wy;
            r1 += g_v * free * j_wy;
            r2 += g_w * free * j_wy;
        }
    }

    let det = m11 * m22 - m12 * m12;
    if !(det.re().abs() > 1e-12 * m11.re() * m22.re()) {
        return Err(Error::Numeric("singular mass matrix".into()));
    }
    let b1 = -r1;
    let b2 = -r2;
    Ok([(m22 * b1 - m12 * b2) / det, (m11 * b2 - m12 * b1) / det])
}

fn dynamics_generic<D: DualNum<Primitive = f64> + Copy>(
    s: &[D; NX],
    tau_ri: D,
    tau_le: D,
    theta: &ModelTheta,
    p: &VehicleParams,
) -> Result<[D; NX]> {
    let ex = exogenous(theta.track, s[IX], s[IV], p.l_cb);
    let g = geometry(s[IY], s[IPSIR], ex.phi_tr, p);
    let f = gen_forces(tau_ri, tau_le, &g);
    let acc = lagrange_accel(s, &ex, p, theta.m_cb, p.j_w_y, f)?;
    Ok([
        s[IV],
        s[IW],
        acc[0],
        acc[1],
        s[IV] * s[IPSIR].sin(),
        s[IW] - ex.omega,
    ])
}

fn check_state(s: &[f64; NX]) -> Result<()> {
    if !(s[IV] > MIN_SPEED) {
        return Err(Error::Domain(format!(
            "forward speed {} below validity floor",
            s[IV]
        )));
    }
    if !(s[IPSIR].abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain("|ψ_TrAx| must be below π/2".into()));
    }
    Ok(())
}

pub fn continuous_dynamics(
    state: &GearState,
    u: &ControlInput,
    theta: &ModelTheta,
    params: &VehicleParams,
) -> Result<[f64; NX]> {
    let s = state.to_array();
    check_state(&s)?;
    dynamics_generic(&s, u.tau_ri, u.tau_le, theta, params)
}

pub(crate) fn f_cont(
    s: &[f64; NX],
    u: &[f64; NU],
    theta: &ModelTheta,
    p: &VehicleParams,
) -> Result<[f64; NX]> {
    check_state(s)?;
    dynamics_generic(s, u[0], u[1], theta, p)
}

/// Explicit Euler step on raw arrays; `u = [τ_ri, τ_le]` in axle convention.
pub(crate) fn euler(
    s: &[f64; NX],
    u: &[f64; NU],
    theta: &ModelTheta,
    p: &VehicleParams,
    t: f64,
) -> Result<[f64; NX]> {
    let f = f_cont(s, u, theta, p)?;
    let mut out = *s;
    for i in 0..NX {
        out[i] += t * f[i];
    }
    Ok(out)
}

pub fn discrete_step(
    state: &GearState,
    u: &ControlInput,
    theta: &ModelTheta,
    params: &VehicleParams,
    t: f64,
) -> Result<GearState> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("step {t} must be positive")));
    }
    let s = euler(&state.to_array(), &[u.tau_ri, u.tau_le], theta, params, t)?;
    Ok(GearState::from_array(&s))
}

/// Classical RK4 step of the continuous model (reference integrator).
pub fn rk4_step(
    state: &GearState,
    u: &ControlInput,
    theta: &ModelTheta,
    params: &VehicleParams,
    t: f64,
) -> Result<GearState> {
    let uu = [u.tau_ri, u.tau_le];
    let s0 = state.to_array();
    let add = |a: &[f64; NX], k: &[f64; NX], h: f64| {
        let mut o = *a;
        for i in 0..NX {
            o[i] += h * k[i];
        }
        o
    };
    let k1 = f_cont(&s0, &uu, theta, params)?;
    let k2 = f_cont(&add(&s0, &k1, t / 2.0), &uu, theta, params)?;
    let k3 = f_cont(&add(&s0, &k2, t / 2.0), &uu, theta, params)?;
    let k4 = f_cont(&add(&s0, &k3, t), &uu, theta, params)?;
    let mut o = s0;
    for i in 0..NX {
        o[i] += t / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(GearState::from_array(&o))
}

pub type MatA = [[f64; NX]; NX];
pub type MatB = [[f64; NU]; NX];

/// Euler step value and exact Jacobians via forward-mode dual numbers.
pub(crate) fn step_jacobians(
    s: &[f64; NX],
    u: &[f64; NU],
    theta: &ModelTheta,
    p: &VehicleParams,
    t: f64,
) -> Result<([f64; NX], MatA, MatB)> {
    check_state(s)?;
    let mut a = [[0.0; NX]; NX];
    let mut b = [[0.0; NU]; NX];
    let mut val = [0.0; NX];
    for col in 0..NX + NU {
        let mut sd = [Dual64::from(0.0); NX];
        for i in 0..NX {
            sd[i] = Dual64::new(s[i], if col == i { 1.0 } else { 0.0 });
        }
        let ud = [
            Dual64::new(u[0], if col == NX { 1.0 } else { 0.0 }),
            Dual64::new(u[1], if col == NX + 1 { 1.0 } else { 0.0 }),
        ];
        let f = dynamics_generic(&sd, ud[0], ud[1], theta, p)?;
        for i in 0..NX {
            let d = f[i].eps * t + if col == i { 1.0 } else { 0.0 };
            if col < NX {
                a[i][col] = d;
            } else {
                b[i][col - NX] = d;
            }
            if col == 0 {
                val[i] = s[i] + t * f[i].re;
            }
        }
    }
    Ok((val, a, b))
}

/// Jacobians `(A, B)` of the Euler-discretised model at a linearisation point.
pub fn linearize(
    x_lin: &GearState,
    u_lin: &ControlInput,
    theta: &ModelTheta,
    params: &VehicleParams,
    t: f64,
) -> Result<(MatA, MatB)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("step {t} must be positive")));
    }
    let (_, a, b) = step_jacobians(
        &x_lin.to_array(),
        &[u_lin.tau_ri, u_lin.tau_le],
        theta,
        params,
        t,
    )?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{build_track, TrackSpec};

    fn straight() -> TrackGeometry {
        build_track(&TrackSpec::table(5).unwrap()).unwrap()
    }

    #[test]
    fn centered_geometry() {
        let p = VehicleParams::default();
        let g = dependent_geometry(0.0, 0.0, 0.0, &p).unwrap();
        assert_eq!(g.phi_trax, 0.0);
        assert_eq!(g.z_trax, -p.r0);
        assert_eq!((g.r_le, g.r_ri), (p.r0, p.r0));
        assert_eq!((g.y_le, g.y_ri), (0.75, 0.75));
        let g = dependent_geometry(0.001, 0.0, 0.0, &p).unwrap();
        assert_eq!(g.phi_trax, -p.gamma() * 0.001);
        assert!(g.r_ri > g.r_le);
        let g = dependent_geometry(0.0, 0.01, 0.0, &p).unwrap();
        let z = p.delta0 * 0.75 * (1.0 / 0.01f64.cos() - 1.0) - p.r0;
        assert!((g.z_trax - z).abs() < 1e-15);
        assert!(dependent_geometry(0.0, 1.6, 0.0, &p).is_err());
    }

    #[test]
    fn wheel_speed_examples() {
        let p = VehicleParams::default();
        let g = dependent_geometry(0.0, 0.0, 0.0, &p).unwrap();
        let s = GearState::rolling(0.0, 20.0);
        let (ri, le) = wheel_speeds(&s, 0.0, &g);
        assert_eq!(ri, -20.0 / 0.46);
        assert_eq!(le, ri);
        let s = GearState {
            psidot_ax: 0.004,
            ..s
        };
        let (ri, le) = wheel_speeds(&s, 0.006, &g);
        assert!((ri + (20.0 - 0.75 * 0.01) / 0.46).abs() < 1e-12);
        assert!(le.abs() > ri.abs());
    }

    #[test]
    fn generalized_force_examples() {
        let p = VehicleParams::default();
        let g = dependent_geometry(0.0, 0.0, 0.0, &p).unwrap();
        let f = generalized_forces(
            &ControlInput {
                tau_ri: 100.0,
                tau_le: 100.0,
            },
            &g,
        );
        assert_eq!(f, [-200.0 / 0.46, 0.0]);
        let f = generalized_forces(
            &ControlInput {
                tau_ri: -50.0,
                tau_le: 50.0,
            },
            &g,
        );
        assert_eq!(f[0], 0.0);
        assert!((f[1] + 2.0 * 0.75 * 50.0 / 0.46).abs() < 1e-12);
        let g = dependent_geometry(0.002, 0.0, 0.0, &p).unwrap();
        let f = generalized_forces(
            &ControlInput {
                tau_ri: 30.0,
                tau_le: 70.0,
            },
            &g,
        );
        let t = p.delta0.tan();
        let (rl, rr) = (0.46 - t * 0.002, 0.46 + t * 0.002);
        assert!((f[0] + 70.0 / rl + 30.0 / rr).abs() < 1e-12);
        assert!((f[1] + 0.752 * 70.0 / rl - 0.748 * 30.0 / rr).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_and_coast() {
        let p = VehicleParams::default();
        let t = straight();
        let th = ModelTheta::new(&t, &p);
        let s = GearState::rolling(10.0, 30.0);
        let d = continuous_dynamics(&s, &ControlInput::default(), &th, &p).unwrap();
        assert_eq!(d, [30.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let n = discrete_step(&s, &ControlInput::default(), &th, &p, 0.01).unwrap();
        assert_eq!(n.x, 10.0 + 0.3);
        assert!(discrete_step(&s, &ControlInput::default(), &th, &p, 0.0).is_err());
    }

    #[test]
    fn common_and_differential_torque() {
        let p = VehicleParams::default();
        let t = straight();
        let th = ModelTheta::new(&t, &p);
        let s = GearState::rolling(10.0, 30.0);
        let tau = 500.0;
        let d = continuous_dynamics(
            &s,
            &ControlInput {
                tau_ri: tau,
                tau_le: tau,
            },
            &th,
            &p,
        )
        .unwrap();
        let m_eff = p.m_x() + p.j_w_y * 2.0 / (p.r0 * p.r0);
        assert!((d[2] + 2.0 * tau / (p.r0 * m_eff)).abs() < 1e-12);
        assert_eq!(d[3], 0.0);
        let d = continuous_dynamics(
            &s,
            &ControlInput {
                tau_ri: tau,
                tau_le: -tau,
            },
            &th,
            &p,
        )
        .unwrap();
        assert!(d[2].abs() < 1e-12);
        assert!(d[3] != 0.0);
    }

    #[test]
    fn yaw_spring_restores() {
        let p = VehicleParams::default();
        let t = straight();
        let th = ModelTheta::new(&t, &p);
        for a in [0.002, -0.003] {
            let s = GearState {
                psi_ax: a,
                psi_trax: a,
                ..GearState::rolling(10.0, 30.0)
            };
            let d = continuous_dynamics(&s, &ControlInput::default(), &th, &p).unwrap();
            assert!(d[3] * a < 0.0, "{a} {d:?}");
        }
    }

    #[test]
    fn linearize_structure() {
        let p = VehicleParams::default();
        let t = straight();
        let th = ModelTheta::new(&t, &p);
        let s = GearState::rolling(100.0, 40.0);
        let (a, b) = linearize(
            &s,
            &ControlInput {
                tau_ri: -300.0,
                tau_le: -300.0,
            },
            &th,
            &p,
            0.01,
        )
        .unwrap();
        assert_eq!(a[0][2], 0.01);
        assert!((a[4][5] - 0.01 * 40.0).abs() < 1e-12);
        assert!((b[3][0] + b[3][1]).abs() < 1e-15);
        assert!((b[2][0] - b[2][1]).abs() < 1e-15);
    }
}
