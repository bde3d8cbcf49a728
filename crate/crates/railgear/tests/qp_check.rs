use nalgebra::{DMatrix, DVector};
use railgear::qp::{solve_qp, QpOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute force: solve the equality KKT system for every active set and keep
/// the primal-dual feasible candidate.
fn enumerate(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> DVector<f64> {
    let n = h.nrows();
    let m = c.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let q = set.len();
        let mut k = DMatrix::zeros(n + q, n + q);
        let mut rhs = DVector::zeros(n + q);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        for i in 0..n {
            rhs[i] = -g[i];
        }
        for (j, &ci) in set.iter().enumerate() {
            for i in 0..n {
                k[(i, n + j)] = -c[(i, ci)];
                k[(n + j, i)] = c[(i, ci)];
            }
            rhs[n + j] = d[ci];
        }
        let Some(sol) = k.lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, n).clone_owned();
        let lam_ok = (0..q).all(|j| sol[n + j] >= -1e-9);
        let feas = (0..m).all(|i| c.column(i).dot(&z) - d[i] >= -1e-9);
        if lam_ok && feas {
            let f = 0.5 * z.dot(&(h * &z)) + g.dot(&z);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, z));
            }
        }
    }
    best.expect("feasible problem").1
}

#[test]
fn matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(0..=7);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let c = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let d = DVector::from_fn(m, |i, _| c.column(i).dot(&z0) - rng.gen_range(0.0..0.5));
        let s = solve_qp(&h, &g, &c, &d, &QpOptions::default()).unwrap();
        let oracle = enumerate(&h, &g, &c, &d);
        assert!((&s.z - &oracle).amax() < 1e-8, "{} vs {}", s.z, oracle);
        assert!(s.kkt < 1e-9, "kkt {}", s.kkt);
    }
}
