//! Equilibrium computation (Newton on the reduced power-flow system), the
//! linear approximation delta* ~ L^+ p, and polytope membership tests.

use crate::error::{Error, Result};
use crate::netmodel::{edge_infnorm, pseudoinverse, weighted_laplacian, PowerNetwork};
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    /// Per-bus angles, radians, with the first bus fixed at 0.
    pub angles: DVector<f64>,
    /// Max-norm of the power-flow mismatch at `angles`.
    pub residual: f64,
    /// Identifies the (possibly modified) network this point solves.
    pub network_tag: String,
}

/// Region shape for membership tests and V_min.
#[derive(Debug, Clone)]
pub enum PolytopeSpec {
    /// |delta_kj| <= gamma on every line.
    Uniform { gamma: f64 },
    /// The fault-dependent mixed box: |delta_ij + delta*_ij| <= pi on lines at
    /// the special node i, |delta_kj| <= pi/2 elsewhere. Angles are compared
    /// raw (no 2-pi wrapping): the certificates are only sound on the branch
    /// the LMI actually controls.
    FaultDependent { node: usize, anchor: DVector<f64> },
}

impl PolytopeSpec {
    pub fn uniform(gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma <= std::f64::consts::FRAC_PI_2 + 1e-12);
        PolytopeSpec::Uniform { gamma }
    }

    /// Per-line bounds on the absolute angle difference delta_kj.
    pub fn abs_bounds(&self, net: &PowerNetwork) -> (Vec<f64>, Vec<f64>) {
        let ne = net.n_lines();
        let mut lo = vec![0.0; ne];
        let mut hi = vec![0.0; ne];
        for e in 0..ne {
            let (k, j) = net.line_endpoints(e);
            match self {
                PolytopeSpec::Uniform { gamma } => {
                    lo[e] = -gamma;
                    hi[e] = *gamma;
                }
                PolytopeSpec::FaultDependent { node, anchor } => {
                    if k == *node || j == *node {
                        // |delta_kj + delta*_kj| <= pi
                        let dstar = anchor[k] - anchor[j];
                        lo[e] = -std::f64::consts::PI - dstar;
                        hi[e] = std::f64::consts::PI - dstar;
                    } else {
                        lo[e] = -std::f64::consts::FRAC_PI_2;
                        hi[e] = std::f64::consts::FRAC_PI_2;
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Bounds on the deviation difference sigma_e = delta_kj - anchor_kj,
    /// for a function anchored at the given angles.
    pub fn sigma_bounds(&self, net: &PowerNetwork, anchor: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = self.abs_bounds(net);
        for e in 0..net.n_lines() {
            let (k, j) = net.line_endpoints(e);
            let dstar = anchor[k] - anchor[j];
            lo[e] -= dstar;
            hi[e] -= dstar;
        }
        (lo, hi)
    }
}

/// Power-flow mismatch f_k = sum_j a_kj sin(delta_kj) - P_k.
pub fn mismatch(net: &PowerNetwork, angles: &DVector<f64>) -> DVector<f64> {
    let n = net.n_buses();
    let mut f = DVector::zeros(n);
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let s = net.line_weight(e) * (angles[k] - angles[j]).sin();
        f[k] += s;
        f[j] -= s;
    }
    for (k, b) in net.buses.iter().enumerate() {
        f[k] -= b.injection;
    }
    f
}

fn jacobian(net: &PowerNetwork, angles: &DVector<f64>) -> DMatrix<f64> {
    let n = net.n_buses();
    let mut jm = DMatrix::zeros(n, n);
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let c = net.line_weight(e) * (angles[k] - angles[j]).cos();
        jm[(k, k)] += c;
        jm[(j, j)] += c;
        jm[(k, j)] -= c;
        jm[(j, k)] -= c;
    }
    jm
}

fn default_tag(net: &PowerNetwork) -> String {
    let bs: Vec<String> = net.lines.iter().map(|l| format!("{:.6}", l.susceptance)).collect();
    format!("B[{}]", bs.join(","))
}

/// Newton iteration on the reduced system (first bus eliminated), with step
/// halving when the residual fails to decrease. The returned angles have the
/// first bus at exactly 0.
pub fn solve_equilibrium(
    net: &PowerNetwork,
    guess: &DVector<f64>,
    tol: &Tolerances,
) -> Result<EquilibriumPoint> {
    let n = net.n_buses();
    assert_eq!(guess.len(), n);
    // shift the guess so the reference entry is 0 (differences are what matter)
    let mut delta = guess - DVector::from_element(n, guess[0]);
    let mut res = mismatch(net, &delta).amax();

    for _ in 0..tol.newton_max_iter {
        if res <= tol.newton_residual {
            return Ok(EquilibriumPoint {
                angles: delta,
                residual: res,
                network_tag: default_tag(net),
            });
        }
        let f = mismatch(net, &delta);
        let jm = jacobian(net, &delta);
        // reduced system: drop row/col 0
        let jr = jm.view((1, 1), (n - 1, n - 1)).into_owned();
        let fr = f.rows(1, n - 1).into_owned();
        let step = jr
            .lu()
            .solve(&fr)
            .ok_or(Error::JacobianSingular)?;

        // backtracking on the residual max-norm
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=tol.newton_max_halvings {
            let mut trial = delta.clone();
            for i in 1..n {
                trial[i] -= alpha * step[i - 1];
            }
            let tres = mismatch(net, &trial).amax();
            if tres < res || tres <= tol.newton_residual {
                delta = trial;
                res = tres;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if res <= tol.newton_residual {
        Ok(EquilibriumPoint {
            angles: delta,
            residual: res,
            network_tag: default_tag(net),
        })
    } else {
        Err(Error::NewtonDiverged {
            iters: tol.newton_max_iter,
            residual: res,
        })
    }
}

/// Linear approximation delta* ~ L^+ p, shifted so the first bus is 0.
pub fn approx_equilibrium(net: &PowerNetwork, p: &DVector<f64>, tol: &Tolerances) -> Result<DVector<f64>> {
    let l = weighted_laplacian(net);
    let li = pseudoinverse(&l, tol.pinv_cutoff_rel)?;
    let x = li * p;
    Ok(&x - DVector::from_element(x.len(), x[0]))
}

/// Convenience: edge infinity norm of the linear approximation for injections p.
pub fn linear_edge_norm(net: &PowerNetwork, p: &DVector<f64>, tol: &Tolerances) -> Result<f64> {
    let l = weighted_laplacian(net);
    let li = pseudoinverse(&l, tol.pinv_cutoff_rel)?;
    Ok(edge_infnorm(net, &li, p))
}

/// Membership of absolute angles in the polytope; returns the violated lines.
pub fn in_polytope(net: &PowerNetwork, angles: &DVector<f64>, spec: &PolytopeSpec) -> (bool, Vec<usize>) {
    let (lo, hi) = spec.abs_bounds(net);
    let mut violated = Vec::new();
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let d = angles[k] - angles[j];
        if d < lo[e] - 1e-12 || d > hi[e] + 1e-12 {
            violated.push(e);
        }
    }
    (violated.is_empty(), violated)
}
