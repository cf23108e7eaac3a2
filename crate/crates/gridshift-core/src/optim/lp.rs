//! Dense primal-dual interior-point LP solver (Mehrotra predictor-corrector).
//!
//!   min c'x  s.t.  A x = b,  G x <= h,  x free.
//!
//! Infeasibility and unboundedness are detected from normalized Farkas /
//! recession rays when the iterates diverge.

use crate::error::{Error, Result};
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_ub: DMatrix<f64>,
    pub h_ub: DVector<f64>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>) -> Self {
        let n = c.len();
        LpProblem {
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            g_ub: DMatrix::zeros(0, n),
            h_ub: DVector::zeros(0),
        }
    }

    pub fn push_eq(&mut self, row: DVector<f64>, rhs: f64) {
        self.a_eq = stack_row(&self.a_eq, &row);
        self.b_eq = self.b_eq.clone().insert_row(self.b_eq.len(), rhs);
    }

    pub fn push_ub(&mut self, row: DVector<f64>, rhs: f64) {
        self.g_ub = stack_row(&self.g_ub, &row);
        self.h_ub = self.h_ub.clone().insert_row(self.h_ub.len(), rhs);
    }
}

fn stack_row(m: &DMatrix<f64>, row: &DVector<f64>) -> DMatrix<f64> {
    assert_eq!(m.ncols(), row.len());
    let mut out = m.clone().insert_row(m.nrows(), 0.0);
    let r = m.nrows();
    for j in 0..row.len() {
        out[(r, j)] = row[j];
    }
    out
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

const MAX_ITER: usize = 100;
const DIVERGE: f64 = 1e10;

pub fn solve_lp(p: &LpProblem, tol: &Tolerances) -> Result<LpSolution> {
    let n = p.c.len();
    let me = p.a_eq.nrows();
    let mi = p.g_ub.nrows();
    if mi == 0 {
        return solve_equality_only(p, tol);
    }

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s: DVector<f64> = DVector::from_element(mi, 1.0);
    let mut z: DVector<f64> = DVector::from_element(mi, 1.0);
    // start with slacks consistent where possible
    for i in 0..mi {
        let gap = p.h_ub[i] - (p.g_ub.row(i) * &x)[0];
        s[i] = gap.max(1.0);
    }

    for it in 0..MAX_ITER {
        let r_dual = &p.c + p.a_eq.transpose() * &y + p.g_ub.transpose() * &z;
        let r_peq = &p.a_eq * &x - &p.b_eq;
        let r_pin = &p.g_ub * &x + &s - &p.h_ub;
        let mu = s.dot(&z) / mi as f64;

        let scale = 1.0 + p.c.amax().max(p.h_ub.amax()).max(if me > 0 { p.b_eq.amax() } else { 0.0 });
        let kkt = r_dual
            .amax()
            .max(if me > 0 { r_peq.amax() } else { 0.0 })
            .max(r_pin.amax())
            .max(mu)
            / scale;
        if kkt <= tol.lp_kkt {
            let value = p.c.dot(&x);
            return Ok(LpSolution {
                x,
                value,
                kkt_residual: kkt * scale,
                iterations: it,
            });
        }

        // divergence certificates
        let dual_norm = y.amax().max(z.amax());
        if dual_norm > DIVERGE {
            // Farkas ray: A'y + G'z ~ 0, z >= 0, b'y + h'z < 0 => primal infeasible
            let gain = -(p.b_eq.dot(&y) + p.h_ub.dot(&z)) / dual_norm;
            if gain > 1e-8 && r_dual.amax() / dual_norm < 1e-6 {
                return Err(Error::Lp("infeasible (Farkas certificate)".into()));
            }
        }
        if x.amax() > DIVERGE {
            let xn = x.amax();
            // recession ray: A x ~ 0, G x <= 0, c'x < 0 => unbounded below
            if p.c.dot(&x) / xn < -1e-8
                && (if me > 0 { r_peq.amax() } else { 0.0 }) / xn < 1e-6
                && r_pin.amax() / xn < 1e-6
            {
                return Err(Error::Lp("unbounded below (recession ray)".into()));
            }
            return Err(Error::Lp("iterates diverged".into()));
        }

        // Newton step factorization: eliminate (ds, dz), solve the augmented system
        // [ H  A' ] [dx]   [ -r1 ]
        // [ A  0  ] [dy] = [ -r_peq ],  H = G' S^-1 Z G
        let mut h = DMatrix::zeros(n, n);
        for i in 0..mi {
            let w = z[i] / s[i];
            let gi = p.g_ub.row(i);
            for a in 0..n {
                let ga = gi[a];
                if ga == 0.0 {
                    continue;
                }
                for b in 0..n {
                    h[(a, b)] += w * ga * gi[b];
                }
            }
        }
        let dim = n + me;
        let mut kktm = DMatrix::zeros(dim, dim);
        kktm.view_mut((0, 0), (n, n)).copy_from(&h);
        // tiny regularization keeps the factorization alive when H is rank-deficient
        for a in 0..n {
            kktm[(a, a)] += 1e-12;
        }
        if me > 0 {
            kktm.view_mut((n, 0), (me, n)).copy_from(&p.a_eq);
            kktm.view_mut((0, n), (n, me)).copy_from(&p.a_eq.transpose());
            for a in 0..me {
                kktm[(n + a, n + a)] -= 1e-12;
            }
        }
        let lu = kktm.lu();

        let solve_dir = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // r_c is the centering residual target: Z ds + S dz = -r_c
            let mut r1 = -&r_dual;
            for i in 0..mi {
                // dz = S^-1 (-r_c - Z ds), ds = -r_pin - G dx
                let coef = (-r_c[i] + z[i] * r_pin[i]) / s[i];
                for a in 0..n {
                    r1[a] -= p.g_ub[(i, a)] * coef;
                }
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&r1);
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&r_peq));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = if me > 0 {
                sol.rows(n, me).into_owned()
            } else {
                DVector::zeros(0)
            };
            let ds = -&r_pin - &p.g_ub * &dx;
            let mut dz = DVector::zeros(mi);
            for i in 0..mi {
                dz[i] = (-r_c[i] - z[i] * ds[i]) / s[i];
            }
            Some((dx, dy, ds, dz))
        };

        // predictor (affine scaling)
        let r_aff: DVector<f64> = DVector::from_fn(mi, |i, _| s[i] * z[i]);
        let (_dxa, _dya, dsa, dza) =
            solve_dir(&r_aff).ok_or_else(|| Error::Lp("singular KKT system".into()))?;
        let alpha_p_aff = max_step(&s, &dsa);
        let alpha_d_aff = max_step(&z, &dza);
        let mu_aff = {
            let mut acc = 0.0;
            for i in 0..mi {
                acc += (s[i] + alpha_p_aff * dsa[i]) * (z[i] + alpha_d_aff * dza[i]);
            }
            acc / mi as f64
        };
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let r_cor: DVector<f64> =
            DVector::from_fn(mi, |i, _| s[i] * z[i] + dsa[i] * dza[i] - sigma * mu);
        let (dx, dy, ds, dz) =
            solve_dir(&r_cor).ok_or_else(|| Error::Lp("singular KKT system".into()))?;

        let alpha_p = 0.99 * max_step(&s, &ds);
        let alpha_d = 0.99 * max_step(&z, &dz);
        x += alpha_p * &dx;
        s += alpha_p * &ds;
        y += alpha_d * &dy;
        z += alpha_d * &dz;
    }

    Err(Error::Lp(format!(
        "no convergence in {MAX_ITER} iterations"
    )))
}

/// Largest alpha in (0, 1] keeping v + alpha dv > 0.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// Pure equality-constrained case: solve the KKT system directly.
fn solve_equality_only(p: &LpProblem, tol: &Tolerances) -> Result<LpSolution> {
    let n = p.c.len();
    let me = p.a_eq.nrows();
    // stationarity c + A'y = 0 must be solvable, else unbounded
    let dim = n + me;
    let mut kktm = DMatrix::zeros(dim, dim);
    if me > 0 {
        kktm.view_mut((n, 0), (me, n)).copy_from(&p.a_eq);
        kktm.view_mut((0, n), (n, me)).copy_from(&p.a_eq.transpose());
    }
    for a in 0..n {
        kktm[(a, a)] = 1e-12;
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.c));
    if me > 0 {
        rhs.rows_mut(n, me).copy_from(&p.b_eq);
    }
    let sol = kktm
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Lp("degenerate equality system".into()))?;
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, me).into_owned();
    let r_dual = (&p.c + p.a_eq.transpose() * &y).amax();
    if r_dual > 1e-6 {
        return Err(Error::Lp("unbounded below (no inequality support)".into()));
    }
    let r_peq = if me > 0 { (&p.a_eq * &x - &p.b_eq).amax() } else { 0.0 };
    if r_peq > tol.lp_kkt {
        return Err(Error::Lp("infeasible equality system".into()));
    }
    let value = p.c.dot(&x);
    Ok(LpSolution {
        x,
        value,
        kkt_residual: r_dual.max(r_peq),
        iterations: 1,
    })
}
