//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves `min ½ zᵀ H z + gᵀ z  s.t.  Cᵀ z ≥ d` where the columns of `C` are
//! the constraint normals. `H` must be positive definite.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers, one per constraint column (zero when inactive).
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    /// max of stationarity, primal infeasibility and complementarity.
    pub kkt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-10,
            max_iter: 2000,
        }
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let n = h.nrows();
    let m = c.ncols();
    if h.ncols() != n || g.len() != n {
        return Err(Error::Length {
            expected: n,
            got: g.len(),
        });
    }
    if c.nrows() != n || d.len() != m {
        return Err(Error::Length {
            expected: m,
            got: d.len(),
        });
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("QP Hessian is not positive definite".into()))?;
    let l = chol.l();
    let mut z = -chol.solve(g);

    // scale-aware feasibility tolerance per constraint
    let norms: Vec<f64> = (0..m).map(|i| c.column(i).norm().max(1e-300)).collect();

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    // B = L⁻¹ N for the active normals N
    let mut b_cols: Vec<DVector<f64>> = Vec::new();
    let mut iterations = 0;

    loop {
        let mut p = usize::MAX;
        let mut worst = -opts.feas_tol;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = (c.column(i).dot(&z) - d[i]) / norms[i];
            if s < worst {
                worst = s;
                p = i;
            }
        }
        if p == usize::MAX {
            break;
        }
        let np = c.column(p).clone_owned();
        let w = l
            .solve_lower_triangular(&np)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return Err(Error::Numeric(format!(
                    "QP iteration cap {} reached",
                    opts.max_iter
                )));
            }
            let q = active.len();
            let (r, zt) = if q == 0 {
                (DVector::zeros(0), w.clone())
            } else {
                let bm = DMatrix::from_columns(&b_cols);
                let qr = bm.clone().qr();
                let rhs = qr.q().transpose() * &w;
                let r = qr
                    .r()
                    .solve_upper_triangular(&rhs)
                    .ok_or_else(|| Error::Numeric("dependent active constraints".into()))?;
                let zt = &w - &bm * &r;
                (r, zt)
            };
            let step = l
                .transpose()
                .solve_upper_triangular(&zt)
                .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;

            let mut t1 = f64::INFINITY;
            let mut k = usize::MAX;
            for j in 0..q {
                if r[j] > 0.0 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        k = j;
                    }
                }
            }
            let zz = zt.norm_squared();
            let t2 = if zz <= 1e-14 * w.norm_squared() {
                f64::INFINITY
            } else {
                -(np.dot(&z) - d[p]) / zz
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Numeric("QP is infeasible".into()));
            }
            for j in 0..q {
                u[j] -= t * r[j];
            }
            up += t;
            if t2.is_finite() {
                z += t * &step;
            }
            if t == t2 {
                active.push(p);
                u.push(up);
                b_cols.push(w.clone());
                break;
            }
            active.remove(k);
            u.remove(k);
            b_cols.remove(k);
        }
    }

    let mut lambda = DVector::zeros(m);
    for (j, &i) in active.iter().enumerate() {
        lambda[i] = u[j].max(0.0);
    }
    let kkt = kkt_residual(h, g, c, d, &z, &lambda);
    Ok(QpSolution {
        z,
        lambda,
        active,
        iterations,
        kkt,
    })
}

pub fn kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let stat = (h * z + g - c * lambda).amax();
    let slack = c.transpose() * z - d;
    let mut worst = stat;
    for i in 0..d.len() {
        worst = worst
            .max((-slack[i]).max(0.0))
            .max((lambda[i] * slack[i]).abs())
            .max((-lambda[i]).max(0.0));
    }
    worst
}
