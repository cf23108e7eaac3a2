//! Lyapunov machinery: bracket form, family synthesis, region-of-attraction
//! estimates, certification, and the cut-based adaptation loop.

pub mod bracket;
pub mod family;
pub mod vmin;

pub use bracket::{build_bracket, BracketForm};
pub use family::{
    assemble_lmi, energy_warm_start, hessian_psd_on, solve_member, LmiVariant, LyapunovFunction,
    VarLayout,
};
pub use vmin::{vmin, RegionEstimate};

use crate::dynamics::SystemState;
use crate::error::Result;
use crate::netmodel::PowerNetwork;
use crate::powerflow::{in_polytope, PolytopeSpec};
use crate::tol::Tolerances;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    /// The state violates the polytope on these lines.
    OutsidePolytope { violated_lines: Vec<usize> },
    /// V(x0) >= vmin.
    ValueAboveVmin,
    /// Adaptation ran out of cuts / budget without a certifying member.
    NoFunctionFound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    /// V(x0) under the certifying (or last attempted) member.
    pub value: f64,
    pub vmin: f64,
    /// Human-readable polytope description.
    pub polytope: String,
    /// Adaptation iterations consumed (0 = first member sufficed).
    pub iterations: usize,
    pub epsilon_final: f64,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

pub fn describe_polytope(spec: &PolytopeSpec) -> String {
    match spec {
        PolytopeSpec::Uniform { gamma } => format!("uniform({gamma:.6})"),
        PolytopeSpec::FaultDependent { node, .. } => format!("fault_dependent(node={node})"),
    }
}

/// Check one member against one fault-cleared state.
pub fn certify(
    v: &LyapunovFunction,
    net: &PowerNetwork,
    spec: &PolytopeSpec,
    x0: &SystemState,
    tol: &Tolerances,
) -> Result<(Certificate, RegionEstimate)> {
    let est = vmin::vmin(v, net, spec, tol)?;
    let value = v.evaluate(x0);
    let (inside, violated) = in_polytope(net, &x0.angles, spec);
    let verdict = if !inside {
        Verdict::OutsidePolytope {
            violated_lines: violated,
        }
    } else if value < est.vmin {
        Verdict::Certified
    } else {
        Verdict::ValueAboveVmin
    };
    Ok((
        Certificate {
            verdict,
            value,
            vmin: est.vmin,
            polytope: describe_polytope(spec),
            iterations: 0,
            epsilon_final: 0.0,
        },
        est,
    ))
}

pub struct AdaptOutcome {
    pub function: LyapunovFunction,
    pub estimate: RegionEstimate,
    pub certificate: Certificate,
}

pub enum AdaptResult {
    Certified(Box<AdaptOutcome>),
    /// No certifying member; carries the best-effort diagnostic certificate
    /// (outside-polytope, value-above-vmin, or no-function-found).
    NotCertified(Certificate),
}

impl AdaptResult {
    pub fn certificate(&self) -> &Certificate {
        match self {
            AdaptResult::Certified(o) => &o.certificate,
            AdaptResult::NotCertified(c) => c,
        }
    }

    pub fn into_outcome(self) -> Option<AdaptOutcome> {
        match self {
            AdaptResult::Certified(o) => Some(*o),
            AdaptResult::NotCertified(_) => None,
        }
    }
}

/// Linear functional v |-> V_v(x0) over the (Q, K, H) variable vector; the
/// adaptation cut V_new(x0) <= vmin_prev - eps is a row of this form.
fn value_functional(
    layout: &VarLayout,
    bf: &BracketForm,
    x0: &SystemState,
) -> DVector<f64> {
    let n = bf.n_buses();
    let ng = bf.n_gens();
    let mut xv = DVector::zeros(n + ng);
    for i in 0..n {
        xv[i] = x0.angles[i] - bf.anchor.angles[i];
    }
    for g in 0..ng {
        xv[n + g] = x0.velocities[g];
    }
    let mut row = DVector::zeros(layout.n_vars());
    for (i, &(r, c)) in layout.triu.iter().enumerate() {
        row[i] = if r == c {
            0.5 * xv[r] * xv[c]
        } else {
            xv[r] * xv[c] // off-diagonal slots stand for both symmetric entries
        };
    }
    for e in 0..bf.n_edges() {
        let (k, j) = bf.net.line_endpoints(e);
        let deff = (xv[k] - xv[j]) + bf.dstar[e];
        row[layout.n_q() + e] = -(deff.cos() + deff * bf.dstar[e].sin());
    }
    row
}

const ADAPT_MAX_ITER: usize = 60;

/// The adaptation loop: synthesize a member; while it fails to certify on
/// value, re-solve with the cut V(x0) <= vmin_prev - eps, halving eps on a
/// stalled solve down to eps0 / 2^adapt_halvings. Membership failures are
/// final (no cut changes the polytope).
pub fn adapt(
    bf: &BracketForm,
    variant: LmiVariant,
    spec: &PolytopeSpec,
    x0: &SystemState,
    tol: &Tolerances,
) -> Result<AdaptResult> {
    let layout = VarLayout::new(bf.n_state(), bf.n_edges());
    let mut eps = tol.adapt_eps0;
    let eps_floor = tol.adapt_eps0 / f64::powi(2.0, tol.adapt_halvings as i32);
    let mut warm: Option<DVector<f64>> = None;
    let mut cut: Option<(DVector<f64>, f64)> = None;
    let cut_row = value_functional(&layout, bf, x0);
    let mut last_cert: Option<Certificate> = None;

    for it in 0..ADAPT_MAX_ITER {
        let cuts: Vec<(DVector<f64>, f64)> = cut.iter().cloned().collect();
        let solved = solve_member(bf, variant, &cuts, warm.as_ref(), tol);
        let (member, vvec) = match solved {
            Some(r) => r,
            None => {
                // stalled: relax the cut
                eps /= 2.0;
                if eps < eps_floor {
                    break;
                }
                if let Some((_, rhs)) = &mut cut {
                    *rhs += eps; // previous rhs was vmin_prev - 2*eps
                }
                continue;
            }
        };
        let (mut cert, est) = certify(&member, &bf.net, spec, x0, tol)?;
        cert.iterations = it;
        cert.epsilon_final = eps;
        match cert.verdict {
            Verdict::Certified => {
                return Ok(AdaptResult::Certified(Box::new(AdaptOutcome {
                    function: member,
                    estimate: est,
                    certificate: cert,
                })))
            }
            // cuts lower the value at x0; they never change the polytope
            Verdict::OutsidePolytope { .. } => return Ok(AdaptResult::NotCertified(cert)),
            _ => {
                cut = Some((cut_row.clone(), est.vmin - eps));
                warm = Some(vvec);
                last_cert = Some(cert);
            }
        }
    }
    Ok(AdaptResult::NotCertified(last_cert.unwrap_or(Certificate {
        verdict: Verdict::NoFunctionFound,
        value: 0.0,
        vmin: 0.0,
        polytope: describe_polytope(spec),
        iterations: ADAPT_MAX_ITER,
        epsilon_final: eps,
    })))
}
