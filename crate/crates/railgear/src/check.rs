//! Independent audits of the control model: an Euler–Lagrange oracle that
//! differentiates the energy functions with hyper-dual numbers, an energy
//! audit with dissipation switched off and a finite-difference audit of the
//! linearisation.

use num_dual::{DualNum, HyperDual64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    continuous_dynamics, discrete_step, linearize, rk4_step, ControlInput, GearState, ModelTheta,
    VehicleParams, NU, NX,
};
use crate::track::{build_track, TrackGeometry, TrackSpec};
use crate::Result;

const NZ: usize = 12;
const LIN_FLOOR: f64 = 1e-6;
const ZX: usize = 0;
const ZY: usize = 1;
const ZPSI: usize = 2;
const ZV: usize = 3;
const ZU: usize = 4;
const ZW: usize = 5;
const ZPSITR: usize = 6;
const ZOM: usize = 7;
const ZPHI: usize = 8;
const ZPHID: usize = 9;
const ZPSICB: usize = 10;
const ZPSICBD: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

/// `(E_T, E_V, E_D)` over the configuration `(x, y_TrAx, ψ_Ax)`, the
/// velocities `(ẋ, ẏ_TrAx, ψ̇_Ax)` and the track quantities in `z`.
fn energies<D: DualNum<Primitive = f64> + Copy>(
    z: &[D; NZ],
    p: &VehicleParams,
    m_x: f64,
) -> (D, D, D) {
    let (y, psi, v, u, w) = (z[ZY], z[ZPSI], z[ZV], z[ZU], z[ZW]);
    let gam = p.gamma();
    let cz = p.delta0 * p.gauge / 2.0;

    let psi_r = psi - z[ZPSITR];
    let psi_r_dot = w - z[ZOM];
    let phi_trax = z[ZPHI] - y * gam;
    let phi_trax_dot = z[ZPHID] - u * gam;
    let (s, c) = psi_r.sin_cos();
    let zz = (c.recip() - 1.0) * cz - y * y * gam - p.r0;
    let zz_dot = s / (c * c) * psi_r_dot * cz - y * u * (2.0 * gam);

    let yaw = z[ZOM] + w;
    // roll and yaw rotation of both wheels; spin energy enters through the
    // rolling constraint in `oracle_accel`
    let e_t = (v * v * m_x + (u * u + zz_dot * zz_dot) * p.m) * 0.5
        + (w * w * p.j_ax_z + phi_trax_dot * phi_trax_dot * p.j_ax_x) * 0.5
        + phi_trax_dot * phi_trax_dot * p.j_w_x
        + yaw * yaw * p.j_w_z;
    let dpsi = psi - z[ZPSICB];
    let e_v = (dpsi * dpsi * p.k_s_z + phi_trax * phi_trax * p.k_s_x) * 0.5 - zz * (p.m * p.g);
    let dw = w - z[ZPSICBD];
    let e_d = (dw * dw * p.k_d_z + phi_trax_dot * phi_trax_dot * p.k_d_x) * 0.5;
    (e_t, e_v, e_d)
}

/// Ideal-rolling spin speeds `[ω_ri, ω_le]`.
fn spins<D: DualNum<Primitive = f64> + Copy>(z: &[D; NZ], p: &VehicleParams) -> [D; 2] {
    let t0 = p.delta0.tan();
    let half = p.gauge / 2.0;
    let y = z[ZY];
    let yaw = z[ZOM] + z[ZW];
    [
        -(z[ZV] - (-y + half) * yaw) / (y * t0 + p.r0),
        -(z[ZV] + (y + half) * yaw) / (-y * t0 + p.r0),
    ]
}

fn seeded(z: &[f64; NZ], i: usize, dir: &[f64; NZ]) -> [HyperDual64; NZ] {
    let mut out = [HyperDual64::from(0.0); NZ];
    for k in 0..NZ {
        out[k] = HyperDual64::new(z[k], if k == i { 1.0 } else { 0.0 }, dir[k], 0.0);
    }
    out
}

fn unit(k: usize) -> [f64; NZ] {
    let mut d = [0.0; NZ];
    d[k] = 1.0;
    d
}

/// Configuration, velocities and track quantities of a model state, plus
/// the rates of every entry used in the total time derivative.
fn lift(state: &GearState, track: &TrackGeometry, p: &VehicleParams) -> ([f64; NZ], [f64; NZ]) {
    let v = state.xdot;
    let front = track.point(state.x);
    let rear = track.point(state.x - p.l_cb);
    let om = front.dpsi_dp * v;
    let u = v * state.psi_trax.sin();
    let z = [
        state.x,
        state.y_trax,
        state.psi_ax,
        v,
        u,
        state.psidot_ax,
        state.psi_ax - state.psi_trax,
        om,
        front.phi,
        front.dphi_dp * v,
        0.5 * (front.psi + rear.psi),
        0.5 * (front.dpsi_dp + rear.dpsi_dp) * v,
    ];
    let zdot = [
        v,
        u,
        state.psidot_ax,
        0.0,
        0.0,
        0.0,
        om,
        front.d2psi_dp2 * v * v,
        front.dphi_dp * v,
        front.d2phi_dp2 * v * v,
        0.0,
        0.0,
    ];
    (z, zdot)
}

/// `(ẍ, ψ̈_Ax)` from a brute-force Euler–Lagrange evaluation: all partial
/// derivatives of the energies are taken numerically and the rolling
/// constraint `ẏ_TrAx = ẋ sin ψ_TrAx` is imposed on the accelerations.
pub fn oracle_accel(
    state: &GearState,
    u: &ControlInput,
    theta: &ModelTheta,
    p: &VehicleParams,
) -> [f64; 2] {
    let m_x = p.m + theta.m_cb / 2.0;
    let (z, zdot) = lift(state, theta.track, p);
    let lag = |zz: &[HyperDual64; NZ]| {
        let (t, v, _) = energies(zz, p, m_x);
        t - v
    };

    let y = state.y_trax;
    let t0 = p.delta0.tan();
    let (r_ri, r_le) = (p.r0 + t0 * y, p.r0 - t0 * y);
    let (y_ri, y_le) = (p.gauge / 2.0 - y, p.gauge / 2.0 + y);
    let f = [
        -(u.tau_le / r_le + u.tau_ri / r_ri),
        0.0,
        -(y_le * u.tau_le / r_le - y_ri * u.tau_ri / r_ri),
    ];

    let mut mass = [[0.0; 3]; 3];
    let mut rest = [0.0; 3];
    for i in 0..3 {
        let vi = ZV + i;
        for j in 0..3 {
            mass[i][j] = lag(&seeded(&z, vi, &unit(ZV + j))).eps1eps2;
        }
        let drift = lag(&seeded(&z, vi, &zdot)).eps1eps2;
        let dl_dq = lag(&seeded(&z, ZX + i, &[0.0; NZ])).eps1;
        let (_, _, ed) = energies(&seeded(&z, vi, &[0.0; NZ]), p, m_x);
        rest[i] = drift - dl_dq + ed.eps1 - f[i];
    }

    // wheel spin equations J·ω̇_j = τ_j projected with ∂ω_j/∂q̇; the torques
    // are already part of `f`
    for j in 0..2 {
        let grad: Vec<f64> = (0..3)
            .map(|i| spins(&seeded(&z, ZV + i, &[0.0; NZ]), p)[j].eps1)
            .collect();
        let free = spins(&seeded(&z, ZV, &zdot), p)[j].eps2;
        for i in 0..3 {
            for k in 0..3 {
                mass[i][k] += p.j_w_y * grad[i] * grad[k];
            }
            rest[i] += p.j_w_y * grad[i] * free;
        }
    }

    let (s, c) = state.psi_trax.sin_cos();
    let ydd_free = state.xdot * c * (state.psidot_ax - z[ZOM]);
    let row = |i: usize| {
        (
            mass[i][0] + s * mass[i][1],
            mass[i][2],
            mass[i][1] * ydd_free + rest[i],
        )
    };
    let (a0, b0, c0) = row(0);
    let (a1, b1, c1) = row(1);
    let (a2, b2, c2) = row(2);
    let (m11, m12, r1) = (a0 + s * a1, b0 + s * b1, c0 + s * c1);
    let (m21, m22, r2) = (a2, b2, c2);
    let det = m11 * m22 - m12 * m21;
    [(-r1 * m22 + r2 * m12) / det, (-r2 * m11 + r1 * m21) / det]
}

/// `E_T + E_V` including wheel spin energy at a state with the constrained
/// lateral velocity and ideal rolling.
pub fn mechanical_energy(state: &GearState, theta: &ModelTheta, p: &VehicleParams) -> f64 {
    let (z, _) = lift(state, theta.track, p);
    let (t, v, _) = energies(&z, p, p.m + theta.m_cb / 2.0);
    let w = spins(&z, p);
    t + v + 0.5 * p.j_w_y * (w[0] * w[0] + w[1] * w[1])
}

/// Random states and torques on curved tracks, covering lead-in, clothoid
/// and circular sections.
pub fn random_points(
    seed: u64,
    n: usize,
    p: &VehicleParams,
) -> Result<Vec<(usize, GearState, ControlInput)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let id = if k % 2 == 0 { 1 } else { 3 };
        let spec = TrackSpec::table(id)?;
        let end = spec.lead_in + spec.clothoid_len()? + 200.0;
        let track = build_track(&spec)?;
        let x = rng.gen_range(5.0..end);
        let v = rng.gen_range(5.0..110.0);
        let pt = track.point(x);
        let psi_r = rng.gen_range(-0.01..0.01);
        let state = GearState {
            x,
            psi_ax: pt.psi + psi_r,
            xdot: v,
            psidot_ax: pt.dpsi_dp * v + rng.gen_range(-0.02..0.02),
            y_trax: rng.gen_range(-6e-3..6e-3),
            psi_trax: psi_r,
        };
        let u = ControlInput {
            tau_ri: rng.gen_range(p.tau_min..p.tau_max),
            tau_le: rng.gen_range(p.tau_min..p.tau_max),
        };
        out.push((id, state, u));
    }
    Ok(out)
}

/// Worst relative deviation of the hard-coded accelerations from the oracle.
pub fn lagrange_oracle(seed: u64, n: usize, p: &VehicleParams) -> Result<CheckOutcome> {
    let tracks: Vec<TrackGeometry> = [1, 3]
        .iter()
        .map(|&i| build_track(&TrackSpec::table(i)?))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (id, s, u) in random_points(seed, n, p)? {
        let track = &tracks[if id == 1 { 0 } else { 1 }];
        let theta = ModelTheta::new(track, p);
        let d = continuous_dynamics(&s, &u, &theta, p)?;
        let o = oracle_accel(&s, &u, &theta, p);
        for (a, b) in [(d[2], o[0]), (d[3], o[1])] {
            worst = worst.max((a - b).abs() / b.abs().max(1e-9));
        }
    }
    Ok(CheckOutcome {
        name: "Euler-Lagrange oracle",
        worst,
        tol: 1e-6,
    })
}

/// Straight level track, no dissipation and no torque: the relative drift of
/// `E_T + E_V` along an RK4 reference trajectory.
pub fn energy_conservation(p: &VehicleParams, duration: f64, dt: f64) -> Result<CheckOutcome> {
    let params = VehicleParams {
        k_d_x: 0.0,
        k_d_z: 0.0,
        ..p.clone()
    };
    let track = build_track(&TrackSpec::table(5)?)?;
    let theta = ModelTheta::new(&track, &params);
    let mut s = GearState {
        psi_ax: 3e-3,
        psidot_ax: 0.02,
        y_trax: 2e-3,
        psi_trax: 3e-3,
        ..GearState::rolling(20.0, 50.0)
    };
    let e0 = mechanical_energy(&s, &theta, &params);
    let mut worst: f64 = 0.0;
    let steps = (duration / dt).round() as usize;
    for _ in 0..steps {
        s = rk4_step(&s, &ControlInput::default(), &theta, &params, dt)?;
        worst = worst.max((mechanical_energy(&s, &theta, &params) - e0).abs() / e0.abs());
    }
    Ok(CheckOutcome {
        name: "energy conservation",
        worst,
        tol: 1e-6,
    })
}

/// Perturbation scale per state and input channel for the difference stencil.
const FD_SCALE: [f64; NX + NU] = [2e-2, 0.2, 1.0, 5e-2, 5e-3, 5e-3, 500.0, 500.0];

fn near_knot(track: &TrackGeometry, p: f64, d: f64) -> bool {
    let rows = track.rows();
    let i = rows.partition_point(|r| r.p < p);
    [i.saturating_sub(1), i.min(rows.len() - 1)]
        .iter()
        .any(|&k| (rows[k].p - p).abs() < d)
}

/// Worst relative deviation of [`linearize`] from sixth-order central
/// differences of [`discrete_step`]. The stencil differences the step
/// increment `f_d(x, u) − x`, which removes the cancellation against large
/// state entries, and probe points are kept away from table knots where the
/// track channels are not differentiable. Entries smaller than `LIN_FLOOR`
/// are compared against the floor instead of their own magnitude.
pub fn linearization_audit(seed: u64, n: usize, p: &VehicleParams, t: f64) -> Result<CheckOutcome> {
    let tracks: Vec<TrackGeometry> = [1, 3]
        .iter()
        .map(|&i| build_track(&TrackSpec::table(i)?))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (id, s, u) in random_points(seed, n, p)? {
        let track = &tracks[if id == 1 { 0 } else { 1 }];
        if near_knot(track, s.x, 0.07) || (s.x > p.l_cb && near_knot(track, s.x - p.l_cb, 0.07)) {
            continue;
        }
        let theta = ModelTheta::new(track, p);
        let (a, b) = linearize(&s, &u, &theta, p, t)?;
        let x0 = s.to_array();
        let u0 = [u.tau_ri, u.tau_le];
        let incr = |col: usize, d: f64| -> Result<[f64; NX]> {
            let mut xx = x0;
            let mut uu = u0;
            if col < NX {
                xx[col] += d;
            } else {
                uu[col - NX] += d;
            }
            let next = discrete_step(
                &GearState::from_array(&xx),
                &ControlInput {
                    tau_ri: uu[0],
                    tau_le: uu[1],
                },
                &theta,
                p,
                t,
            )?
            .to_array();
            let mut out = [0.0; NX];
            for i in 0..NX {
                out[i] = next[i] - xx[i];
            }
            Ok(out)
        };
        for col in 0..NX + NU {
            let h = FD_SCALE[col];
            let d1 = (incr(col, h)?, incr(col, -h)?);
            let d2 = (incr(col, 2.0 * h)?, incr(col, -2.0 * h)?);
            let d3 = (incr(col, 3.0 * h)?, incr(col, -3.0 * h)?);
            for i in 0..NX {
                let mut fd = (45.0 * (d1.0[i] - d1.1[i]) - 9.0 * (d2.0[i] - d2.1[i])
                    + (d3.0[i] - d3.1[i]))
                    / (60.0 * h);
                if col == i {
                    fd += 1.0;
                }
                let ad = if col < NX { a[i][col] } else { b[i][col - NX] };
                let e = (fd - ad).abs() / ad.abs().max(LIN_FLOOR);
                worst = worst.max(e);
            }
        }
    }
    Ok(CheckOutcome {
        name: "linearisation vs finite differences",
        worst,
        tol: 1e-6,
    })
}

/// Ratio of Euler global errors at `t` and `t/2` against an RK4 reference
/// over one second; first-order convergence gives a ratio near 2.
pub fn euler_order(p: &VehicleParams, t: f64) -> Result<f64> {
    let track = build_track(&TrackSpec::table(3)?)?;
    let theta = ModelTheta::new(&track, p);
    let s0 = GearState {
        psidot_ax: 0.01,
        y_trax: 1e-3,
        psi_trax: 2e-3,
        psi_ax: 2e-3,
        ..GearState::rolling(10.0, 40.0)
    };
    let u = ControlInput {
        tau_ri: 400.0,
        tau_le: -200.0,
    };
    let run = |h: f64, rk: bool| -> Result<GearState> {
        let mut s = s0;
        for _ in 0..(1.0 / h).round() as usize {
            s = if rk {
                rk4_step(&s, &u, &theta, p, h)?
            } else {
                discrete_step(&s, &u, &theta, p, h)?
            };
        }
        Ok(s)
    };
    let reference = run(t / 20.0, true)?.to_array();
    let err = |s: GearState| {
        let a = s.to_array();
        (0..NX)
            .map(|i| ((a[i] - reference[i]) / reference[i].abs().max(1e-3)).abs())
            .fold(0.0, f64::max)
    };
    Ok(err(run(t, false)?) / err(run(t / 2.0, false)?))
}
