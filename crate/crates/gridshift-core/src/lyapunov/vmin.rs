//! V_min: the minimum of a family member over the boundary of the polytope.
//!
//! The boundary is covered facet by facet (one edge bound active, the others
//! kept in their box). Each facet problem is convex inside the polytope
//! (synthesis guarantees the Hessian there), so a single interior-point Newton
//! run per facet suffices: a Chebyshev-center LP supplies a strictly feasible
//! start and a log-barrier handles the box.

use crate::error::{Error, Result};
use crate::lyapunov::family::LyapunovFunction;
use crate::netmodel::PowerNetwork;
use crate::optim::lp::{solve_lp, LpProblem};
use crate::powerflow::PolytopeSpec;
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct RegionEstimate {
    pub vmin: f64,
    /// Facet (edge index, at-upper-bound) attaining the minimum.
    pub argmin_facet: (usize, bool),
    pub spec: PolytopeSpec,
}

/// Reduced coordinates: z = (y, omega) with y the bus angles beyond the first
/// (deviation dev = T y, dev_0 = 0). sigma_e = Ce_e y.
struct FacetGeometry {
    /// ne x (n-1) reduced incidence.
    ce: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: usize,
    ng: usize,
}

fn geometry(v: &LyapunovFunction, net: &PowerNetwork, spec: &PolytopeSpec) -> FacetGeometry {
    let n = v.n_buses;
    let ne = v.edges.len();
    let mut ce = DMatrix::zeros(ne, n - 1);
    for (e, &(k, j)) in v.edges.iter().enumerate() {
        if k > 0 {
            ce[(e, k - 1)] += 1.0;
        }
        if j > 0 {
            ce[(e, j - 1)] -= 1.0;
        }
    }
    let (lo, hi) = spec.sigma_bounds(net, &v.anchor.angles);
    FacetGeometry {
        ce,
        lo,
        hi,
        n,
        ng: v.n_gens,
    }
}

/// Strictly feasible start on the facet {sigma_e = bound, others in box}:
/// maximize the worst slack (Chebyshev-style LP in y).
fn facet_start(g: &FacetGeometry, e: usize, bound: f64, tol: &Tolerances) -> Result<Option<DVector<f64>>> {
    let ny = g.n - 1;
    let ne = g.ce.nrows();
    // variables (y, t), maximize t
    let mut c = DVector::zeros(ny + 1);
    c[ny] = -1.0;
    let mut p = LpProblem::new(c);
    let mut eq_row = DVector::zeros(ny + 1);
    for a in 0..ny {
        eq_row[a] = g.ce[(e, a)];
    }
    p.push_eq(eq_row, bound);
    for e2 in 0..ne {
        if e2 == e {
            continue;
        }
        let mut up = DVector::zeros(ny + 1);
        let mut dn = DVector::zeros(ny + 1);
        for a in 0..ny {
            up[a] = g.ce[(e2, a)];
            dn[a] = -g.ce[(e2, a)];
        }
        up[ny] = 1.0;
        dn[ny] = 1.0;
        p.push_ub(up, g.hi[e2]);
        p.push_ub(dn, -g.lo[e2]);
    }
    // keep t bounded
    let mut tcap = DVector::zeros(ny + 1);
    tcap[ny] = 1.0;
    p.push_ub(tcap, 10.0);
    let sol = solve_lp(&p, tol)?;
    if sol.x[ny] <= 1e-9 {
        return Ok(None); // facet is empty or degenerate on this polytope
    }
    Ok(Some(sol.x.rows(0, ny).into_owned()))
}

/// Minimize V over one facet by log-barrier Newton in (y, omega).
fn facet_min(
    v: &LyapunovFunction,
    g: &FacetGeometry,
    e: usize,
    bound: f64,
    tol: &Tolerances,
) -> Result<Option<f64>> {
    let ny = g.n - 1;
    let y0 = match facet_start(g, e, bound, tol)? {
        Some(y) => y,
        None => return Ok(None),
    };

    // eliminate the equality sigma_e = bound: y = yp + N w, N orthonormal basis
    // of the nullspace of the facet row
    let row = g.ce.row(e).transpose();
    let yp = &row * (bound / row.dot(&row));
    let nullity = ny - 1;
    let mut basis = DMatrix::zeros(ny, nullity);
    {
        // Gram-Schmidt complement of the row direction
        let mut cols: Vec<DVector<f64>> = vec![&row / row.norm()];
        let mut filled = 0;
        for i in 0..ny {
            let mut cnd = DVector::zeros(ny);
            cnd[i] = 1.0;
            for b in cols.iter() {
                let p = b.dot(&cnd);
                cnd -= b * p;
            }
            let nn = cnd.norm();
            if nn > 1e-8 {
                cnd /= nn;
                basis.set_column(filled, &cnd);
                cols.push(cnd);
                filled += 1;
                if filled == nullity {
                    break;
                }
            }
        }
        debug_assert_eq!(filled, nullity);
    }

    // state assembly: dev = T (yp + N w), z = (w, omega)
    let nw = nullity + g.ng;
    let dev_of = |w: &DVector<f64>| -> DVector<f64> {
        let y = &yp + &basis * w.rows(0, nullity);
        let mut dev = DVector::zeros(g.n + g.ng);
        for i in 0..ny {
            dev[i + 1] = y[i];
        }
        for gi in 0..g.ng {
            dev[g.n + gi] = w[nullity + gi];
        }
        dev
    };
    let sigma_rows: Vec<DVector<f64>> = (0..g.ce.nrows())
        .map(|e2| (g.ce.row(e2) * &basis).transpose())
        .collect();
    let sigma_base: Vec<f64> = (0..g.ce.nrows()).map(|e2| (g.ce.row(e2) * &yp)[0]).collect();

    let mut w = DVector::zeros(nw);
    {
        // project the LP start into w coordinates
        let y0c = &y0 - &yp;
        let winit = basis.transpose() * y0c;
        w.rows_mut(0, nullity).copy_from(&winit);
    }

    let mut t_bar = 1.0;
    let obj = |w: &DVector<f64>| v.evaluate_deviation(&dev_of(w));
    for _outer in 0..40 {
        // Newton on t*V + barrier over the box rows
        for _ in 0..60 {
            let dev = dev_of(&w);
            let grad_full = v.gradient_deviation(&dev);
            // pull back: d dev / d w = [T N | I_omega]
            let mut grad = DVector::zeros(nw);
            for c in 0..nullity {
                let mut acc = 0.0;
                for i in 0..ny {
                    acc += basis[(i, c)] * grad_full[i + 1];
                }
                grad[c] = acc;
            }
            for gi in 0..g.ng {
                grad[nullity + gi] = grad_full[g.n + gi];
            }
            grad *= t_bar;
            // Hessian of V pulled back
            let deff = DVector::from_fn(v.edges.len(), |e2, _| {
                sigma_base[e2] + sigma_rows[e2].dot(&w.rows(0, nullity).into_owned()) + v.dstar[e2]
            });
            let hfull = v.hessian(&deff);
            let mut jac = DMatrix::zeros(g.n + g.ng, nw);
            for i in 0..ny {
                for c in 0..nullity {
                    jac[(i + 1, c)] = basis[(i, c)];
                }
            }
            for gi in 0..g.ng {
                jac[(g.n + gi, nullity + gi)] = 1.0;
            }
            let mut hess = jac.transpose() * hfull * &jac * t_bar;
            // barrier terms
            let wv = w.rows(0, nullity).into_owned();
            let mut bar_ok = true;
            for e2 in 0..g.ce.nrows() {
                if e2 == e {
                    continue;
                }
                let s = sigma_base[e2] + sigma_rows[e2].dot(&wv);
                let up = g.hi[e2] - s;
                let dn = s - g.lo[e2];
                if up <= 0.0 || dn <= 0.0 {
                    bar_ok = false;
                    break;
                }
                for c in 0..nullity {
                    grad[c] += sigma_rows[e2][c] / up - sigma_rows[e2][c] / dn;
                }
                for a in 0..nullity {
                    for b2 in 0..nullity {
                        hess[(a, b2)] += sigma_rows[e2][a] * sigma_rows[e2][b2]
                            * (1.0 / (up * up) + 1.0 / (dn * dn));
                    }
                }
            }
            if !bar_ok {
                return Err(Error::FacetSolver("barrier start left the box".into()));
            }
            for i in 0..nw {
                hess[(i, i)] += 1e-12;
            }
            let step = hess
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&(-&grad)))
                .or_else(|| hess.lu().solve(&(-&grad)))
                .ok_or_else(|| Error::FacetSolver("singular Newton system".into()))?;
            let lambda2 = -grad.dot(&step);
            if lambda2 * 0.5 < 1e-14 {
                break;
            }
            // backtracking: stay strictly in the box and decrease the merit
            let merit = |w: &DVector<f64>| -> f64 {
                let wv = w.rows(0, nullity).into_owned();
                let mut m = t_bar * obj(w);
                for e2 in 0..g.ce.nrows() {
                    if e2 == e {
                        continue;
                    }
                    let s = sigma_base[e2] + sigma_rows[e2].dot(&wv);
                    let up = g.hi[e2] - s;
                    let dn = s - g.lo[e2];
                    if up <= 0.0 || dn <= 0.0 {
                        return f64::INFINITY;
                    }
                    m -= up.ln() + dn.ln();
                }
                m
            };
            let m0 = merit(&w);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial = &w + &step * alpha;
                if merit(&trial) <= m0 - 1e-4 * alpha * lambda2 {
                    w = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
            if obj(&w) < -1e12 {
                return Err(Error::FacetSolver("facet objective unbounded".into()));
            }
        }
        let n_ineq = (2 * (g.ce.nrows() - 1).max(1)) as f64;
        if n_ineq / t_bar < 1e-9 {
            break;
        }
        t_bar *= 20.0;
    }
    Ok(Some(obj(&w)))
}

/// Minimum of V over the whole polytope boundary.
pub fn vmin(
    v: &LyapunovFunction,
    net: &PowerNetwork,
    spec: &PolytopeSpec,
    tol: &Tolerances,
) -> Result<RegionEstimate> {
    let g = geometry(v, net, spec);
    let mut best = f64::INFINITY;
    let mut arg = (0, false);
    for e in 0..v.edges.len() {
        for (bound, upper) in [(g.lo[e], false), (g.hi[e], true)] {
            if let Some(val) = facet_min(v, &g, e, bound, tol)? {
                if val < best {
                    best = val;
                    arg = (e, upper);
                }
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::FacetSolver("no facet admitted a minimizer".into()));
    }
    Ok(RegionEstimate {
        vmin: best,
        argmin_facet: arg,
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::bracket::build_bracket;
    use crate::lyapunov::family::{solve_member, LmiVariant};
    use crate::netmodel::load_case;
    use crate::powerflow::solve_equilibrium;

    fn three_bus() -> PowerNetwork {
        load_case(
            r#"{
              "buses": [
                {"id": 1, "kind": "gen",  "V": 1.0, "m": 0.5, "d": 0.2, "P": 0.3},
                {"id": 2, "kind": "load", "V": 1.0, "m": null, "d": 0.7, "P": -0.1},
                {"id": 3, "kind": "load", "V": 1.0, "m": null, "d": 0.6, "P": -0.2}
              ],
              "lines": [
                {"from": 1, "to": 2, "B": 1.2, "controllable": false, "B_min": null, "B_max": null},
                {"from": 2, "to": 3, "B": 0.9, "controllable": false, "B_min": null, "B_max": null},
                {"from": 3, "to": 1, "B": 1.1, "controllable": false, "B_min": null, "B_max": null}
              ],
              "slack_bus": null
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn vmin_above_anchor_and_matches_sampling() {
        use rand::{Rng, SeedableRng};
        let net = three_bus();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(3), &tol).unwrap();
        let bf = build_bracket(&net, &eq);
        let (v, _) = solve_member(&bf, LmiVariant::Global, &[], None, &tol).expect("member");
        let spec = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
        let est = vmin(&v, &net, &spec, &tol).unwrap();
        assert!(est.vmin > v.anchor_value());

        // random boundary sampling never finds a smaller value
        let g = geometry(&v, &net, &spec);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut sampled = f64::INFINITY;
        let ny = net.n_buses() - 1;
        'outer: for _ in 0..20000 {
            let e = rng.gen_range(0..net.n_lines());
            let bound = if rng.gen_bool(0.5) { g.lo[e] } else { g.hi[e] };
            // solve ce_e y = bound with a random particular solution
            let mut y = DVector::from_fn(ny, |_, _| rng.gen_range(-1.5..1.5));
            let row = g.ce.row(e).transpose();
            let miss = bound - row.dot(&y);
            y += &row * (miss / row.dot(&row));
            for e2 in 0..net.n_lines() {
                let s = (g.ce.row(e2) * &y)[0];
                if s < g.lo[e2] - 1e-9 || s > g.hi[e2] + 1e-9 {
                    continue 'outer;
                }
            }
            let mut dev = DVector::zeros(net.n_buses() + 1);
            for i in 0..ny {
                dev[i + 1] = y[i];
            }
            let om: f64 = rng.gen_range(-0.5..0.5);
            dev[net.n_buses()] = om;
            sampled = sampled.min(v.evaluate_deviation(&dev));
        }
        assert!(
            est.vmin <= sampled + 1e-3,
            "facet min {} vs sampled {}",
            est.vmin,
            sampled
        );
    }
}
