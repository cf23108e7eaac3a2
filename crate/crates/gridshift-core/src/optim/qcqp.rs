//! Convex QCQP via log-barrier Newton with a mu-path and backtracking line
//! search. Constraints are `q_i(x) <= 0` with PSD quadratic parts; linear
//! constraints are the degenerate case P = 0.

use crate::error::{Error, Result};
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};

/// q(x) = 1/2 x'Px + q'x + r.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: f64,
}

impl Quadratic {
    pub fn linear(q: DVector<f64>, r: f64) -> Self {
        let n = q.len();
        Quadratic {
            p: DMatrix::zeros(n, n),
            q,
            r,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[0] + self.q.dot(x) + self.r
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.q
    }

    /// Min eigenvalue of the quadratic part; convexity gate.
    pub fn min_curvature(&self) -> f64 {
        let sym = (&self.p + self.p.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

#[derive(Debug, Clone)]
pub struct QcqpProblem {
    pub objective: Quadratic,
    /// Each entry constrains q_i(x) <= 0.
    pub constraints: Vec<Quadratic>,
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub max_violation: f64,
}

const T0: f64 = 1.0;
const T_GROWTH: f64 = 20.0;
const MAX_OUTER: usize = 60;
const MAX_NEWTON: usize = 80;

pub fn solve_qcqp(p: &QcqpProblem, x0: Option<&DVector<f64>>, tol: &Tolerances) -> Result<QcqpSolution> {
    let n = p.objective.q.len();
    for c in p.constraints.iter().chain(std::iter::once(&p.objective)) {
        if c.min_curvature() < -1e-10 {
            return Err(Error::Qcqp("non-convex quadratic form".into()));
        }
    }
    let start = match x0 {
        Some(x) => x.clone(),
        None => DVector::zeros(n),
    };
    let x_feas = if strictly_feasible(p, &start) {
        start
    } else {
        phase_one(p, &start, tol)?
    };
    let x = barrier_path(&p.objective, &p.constraints, x_feas, tol)?;

    // independent re-substitution
    let max_violation = p
        .constraints
        .iter()
        .map(|c| c.value(&x))
        .fold(0.0f64, f64::max);
    let grad_norm = lagrangian_grad_norm(p, &x, tol);
    if max_violation > tol.qcqp_feas {
        return Err(Error::Qcqp(format!(
            "constraint violation {max_violation:.3e} above gate"
        )));
    }
    if grad_norm > tol.qcqp_grad {
        return Err(Error::Qcqp(format!(
            "Lagrangian gradient {grad_norm:.3e} above gate"
        )));
    }
    let value = p.objective.value(&x);
    Ok(QcqpSolution {
        x,
        value,
        grad_norm,
        max_violation,
    })
}

fn strictly_feasible(p: &QcqpProblem, x: &DVector<f64>) -> bool {
    p.constraints.iter().all(|c| c.value(x) < -1e-9)
}

/// Phase I: minimize s subject to q_i(x) <= s, stopping as soon as s < 0.
fn phase_one(p: &QcqpProblem, x0: &DVector<f64>, tol: &Tolerances) -> Result<DVector<f64>> {
    let n = x0.len();
    let m = p.constraints.len();
    let s0 = p
        .constraints
        .iter()
        .map(|c| c.value(x0))
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    // augmented variable z = (x, s)
    let mut obj_q = DVector::zeros(n + 1);
    obj_q[n] = 1.0;
    let objective = Quadratic::linear(obj_q, 0.0);
    let mut cons = Vec::with_capacity(m);
    for c in &p.constraints {
        let mut pm = DMatrix::zeros(n + 1, n + 1);
        pm.view_mut((0, 0), (n, n)).copy_from(&c.p);
        let mut qv = DVector::zeros(n + 1);
        qv.rows_mut(0, n).copy_from(&c.q);
        qv[n] = -1.0;
        cons.push(Quadratic {
            p: pm,
            q: qv,
            r: c.r,
        });
    }
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    z[n] = s0;
    let z = barrier_path_with_exit(&objective, &cons, z, tol, Some(-1e-6))?;
    if z[n] >= 0.0 {
        return Err(Error::Qcqp("phase I found no strictly feasible point".into()));
    }
    Ok(z.rows(0, n).into_owned())
}

fn barrier_path(
    objective: &Quadratic,
    cons: &[Quadratic],
    x: DVector<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    barrier_path_with_exit(objective, cons, x, tol, None)
}

/// Centering path t*f0 + barrier, t growing geometrically; with `exit_below`,
/// stop early once the objective drops under the threshold (Phase I use).
fn barrier_path_with_exit(
    objective: &Quadratic,
    cons: &[Quadratic],
    mut x: DVector<f64>,
    tol: &Tolerances,
    exit_below: Option<f64>,
) -> Result<DVector<f64>> {
    let m = cons.len().max(1) as f64;
    let mut t = T0;
    for _ in 0..MAX_OUTER {
        x = newton_center(objective, cons, x, t, tol)?;
        if let Some(th) = exit_below {
            if objective.value(&x) < th {
                return Ok(x);
            }
        }
        if m / t < tol.qcqp_feas.min(1e-9) {
            return Ok(x);
        }
        t *= T_GROWTH;
    }
    Err(Error::Qcqp("barrier path exhausted outer iterations".into()))
}

fn newton_center(
    objective: &Quadratic,
    cons: &[Quadratic],
    mut x: DVector<f64>,
    t: f64,
    _tol: &Tolerances,
) -> Result<DVector<f64>> {
    let n = x.len();
    let phi = |x: &DVector<f64>| -> f64 {
        let mut v = t * objective.value(x);
        for c in cons {
            let g = -c.value(x);
            if g <= 0.0 {
                return f64::INFINITY;
            }
            v -= g.ln();
        }
        v
    };
    for _ in 0..MAX_NEWTON {
        let mut grad = objective.gradient(&x) * t;
        let mut hess = &objective.p * t;
        for c in cons {
            let g = -c.value(&x); // positive inside
            let cg = c.gradient(&x);
            grad += &cg / g;
            hess += &c.p / g + (&cg * cg.transpose()) / (g * g);
        }
        for i in 0..n {
            hess[(i, i)] += 1e-12;
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&grad)))
            .or_else(|| hess.lu().solve(&(-&grad)))
            .ok_or_else(|| Error::Qcqp("singular Newton system".into()))?;
        let lambda2 = -grad.dot(&step);
        if lambda2 * 0.5 < 1e-16 {
            return Ok(x);
        }
        // backtracking on the barrier value
        let f0 = phi(&x);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &x + &step * alpha;
            if phi(&trial) <= f0 - 1e-4 * alpha * lambda2 {
                x = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            return Ok(x); // at numerical resolution
        }
    }
    Ok(x)
}

/// Norm of grad f0 + sum lambda_i grad q_i with barrier multipliers
/// lambda_i = 1/(t_final * (-q_i)); active linear independence is not assumed,
/// so we take the best multipliers by least squares instead.
fn lagrangian_grad_norm(p: &QcqpProblem, x: &DVector<f64>, _tol: &Tolerances) -> f64 {
    let g0 = p.objective.gradient(x);
    let act: Vec<&Quadratic> = p
        .constraints
        .iter()
        .filter(|c| c.value(x) > -1e-5)
        .collect();
    if act.is_empty() {
        return g0.norm();
    }
    let n = x.len();
    let mut gmat = DMatrix::zeros(n, act.len());
    for (j, c) in act.iter().enumerate() {
        gmat.set_column(j, &c.gradient(x));
    }
    // min over lambda >= 0 of ||g0 + G lambda||; solve unsigned LS then clamp
    let gtg = gmat.transpose() * &gmat;
    let rhs = gmat.transpose() * &g0;
    let mut reg = gtg;
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-12;
    }
    let lam = reg
        .lu()
        .solve(&(-rhs))
        .unwrap_or_else(|| DVector::zeros(act.len()))
        .map(|v| v.max(0.0));
    (g0 + gmat * lam).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn projection_onto_disk() {
        // min ||x - (2,0)||^2 s.t. ||x||^2 <= 1 -> x = (1,0), value 1
        let obj = Quadratic {
            p: DMatrix::identity(2, 2) * 2.0,
            q: dv(&[-4.0, 0.0]),
            r: 4.0,
        };
        let ball = Quadratic {
            p: DMatrix::identity(2, 2) * 2.0,
            q: dv(&[0.0, 0.0]),
            r: -1.0,
        };
        let p = QcqpProblem {
            objective: obj,
            constraints: vec![ball],
        };
        let s = solve_qcqp(&p, None, &Tolerances::default()).unwrap();
        assert!((s.value - 1.0).abs() < 1e-5, "value {}", s.value);
        assert!((s.x[0] - 1.0).abs() < 1e-4 && s.x[1].abs() < 1e-4);
    }

    #[test]
    fn unconstrained_quadratic() {
        let obj = Quadratic {
            p: DMatrix::identity(3, 3),
            q: dv(&[-1.0, 0.0, 1.0]),
            r: 0.0,
        };
        let p = QcqpProblem {
            objective: obj,
            constraints: vec![],
        };
        let s = solve_qcqp(&p, None, &Tolerances::default()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[2] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonconvex() {
        let obj = Quadratic {
            p: -DMatrix::identity(2, 2),
            q: dv(&[0.0, 0.0]),
            r: 0.0,
        };
        let p = QcqpProblem {
            objective: obj,
            constraints: vec![],
        };
        assert!(solve_qcqp(&p, None, &Tolerances::default()).is_err());
    }

    #[test]
    fn infeasible_phase_one() {
        // x^2 <= -1
        let obj = Quadratic::linear(dv(&[1.0]), 0.0);
        let bad = Quadratic {
            p: DMatrix::identity(1, 1) * 2.0,
            q: dv(&[0.0]),
            r: 1.0,
        };
        let p = QcqpProblem {
            objective: obj,
            constraints: vec![bad],
        };
        assert!(solve_qcqp(&p, None, &Tolerances::default()).is_err());
    }

    #[test]
    fn random_instances_vs_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tol = Tolerances::default();
        for _ in 0..10 {
            // objective 1/2||x - a||^2 inside a random shifted ball, 2 vars
            let a = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let ctr = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let rad: f64 = rng.gen_range(0.5..1.5);
            let obj = Quadratic {
                p: DMatrix::identity(2, 2),
                q: -a.clone(),
                r: 0.5 * a.dot(&a),
            };
            let ball = Quadratic {
                p: DMatrix::identity(2, 2) * 2.0,
                q: -2.0 * ctr.clone(),
                r: ctr.dot(&ctr) - rad * rad,
            };
            let p = QcqpProblem {
                objective: obj.clone(),
                constraints: vec![ball.clone()],
            };
            let s = solve_qcqp(&p, None, &tol).unwrap();
            // grid oracle
            let mut best = f64::INFINITY;
            let steps = 400;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = dv(&[
                        ctr[0] - rad + 2.0 * rad * i as f64 / steps as f64,
                        ctr[1] - rad + 2.0 * rad * j as f64 / steps as f64,
                    ]);
                    if ball.value(&x) <= 0.0 {
                        best = best.min(obj.value(&x));
                    }
                }
            }
            assert!(s.value <= best + 1e-4, "solver {} grid {}", s.value, best);
        }
    }
}
