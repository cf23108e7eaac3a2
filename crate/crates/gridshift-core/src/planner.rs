//! Emergency-control design: injection redesign, first-stage susceptance
//! design, the equilibrium-sequence QCQP, and the remedial-action
//! orchestrator that attaches a certificate to every inter-equilibrium hop.

use crate::dynamics::{
    detect_convergence, distance_to, simulate, EventHook, Mutation, SimConfig, SystemState,
    Trajectory, Trigger,
};
use crate::error::{Error, Result};
use crate::lyapunov::{
    adapt, build_bracket, AdaptResult, Certificate, LmiVariant,
};
use crate::netmodel::{pseudoinverse, weighted_laplacian, PowerNetwork};
use crate::optim::lp::{solve_lp, LpProblem};
use crate::optim::qcqp::{solve_qcqp, QcqpProblem, Quadratic};
use crate::optim::sdp::{solve_sdp_feasibility, SdpFeasibility};
use crate::powerflow::{in_polytope, solve_equilibrium, EquilibriumPoint, PolytopeSpec};
use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct InjectionPlan {
    pub new_injections: DVector<f64>,
    pub controllable: Vec<usize>,
    /// Achieved edge infinity norm of the linear equilibrium estimate.
    pub objective: f64,
    pub target: EquilibriumPoint,
    pub certificate: Certificate,
}

#[derive(Debug, Clone)]
pub struct SusceptancePlan {
    /// (line index, susceptance) for the controllable lines.
    pub line_values: Vec<(usize, f64)>,
    pub stage_index: usize,
    pub induced_equilibrium: EquilibriumPoint,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualDistance {
    pub value: f64,
}

/// d(delta) = sum_k (P_k - sum_j V_k V_j B_kj sin(delta_kj))^2, evaluated
/// under the stage network's susceptances.
pub fn residual_distance(net_stage: &PowerNetwork, angles: &DVector<f64>) -> ResidualDistance {
    let m = crate::powerflow::mismatch(net_stage, angles);
    ResidualDistance {
        value: m.norm_squared(),
    }
}

// ---------------------------------------------------------------------------
// injection redesign

/// min t over controllable injections subject to |(L^+ p)_kj| <= t per line
/// and sum(p) = 0, fixed buses unchanged.
pub fn design_injection_lp(
    net: &PowerNetwork,
    controllable: &[usize],
    tol: &Tolerances,
) -> Result<(DVector<f64>, f64)> {
    if controllable.is_empty() {
        return Err(Error::InvalidInput("no controllable buses".into()));
    }
    let n = net.n_buses();
    let nc = controllable.len();
    let li = pseudoinverse(&weighted_laplacian(net), tol.pinv_cutoff_rel)?;
    let p0 = net.injections();
    let mut fixed = p0.clone();
    for &c in controllable {
        fixed[c] = 0.0;
    }

    // variables (p_c.., t)
    let mut c = DVector::zeros(nc + 1);
    c[nc] = 1.0;
    let mut lp = LpProblem::new(c);
    let mut bal = DVector::zeros(nc + 1);
    for i in 0..nc {
        bal[i] = 1.0;
    }
    lp.push_eq(bal, -fixed.sum());
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let row_kj = li.row(k) - li.row(j);
        let base: f64 = (0..n).map(|b| row_kj[b] * fixed[b]).sum();
        let mut up = DVector::zeros(nc + 1);
        let mut dn = DVector::zeros(nc + 1);
        for (i, &cb) in controllable.iter().enumerate() {
            up[i] = row_kj[cb];
            dn[i] = -row_kj[cb];
        }
        up[nc] = -1.0;
        dn[nc] = -1.0;
        lp.push_ub(up, -base);
        lp.push_ub(dn, base);
    }
    let sol = solve_lp(&lp, tol)?;
    let mut p = fixed;
    for (i, &cb) in controllable.iter().enumerate() {
        p[cb] = sol.x[i];
    }
    Ok((p, sol.value))
}

/// Full Procedure-1 design: LP, Newton refinement of the target equilibrium,
/// and adaptation of a Lyapunov function certifying x0 into its region.
/// `fault_node` selects the fault-dependent polytope / LMI variant.
pub fn design_injection(
    net: &PowerNetwork,
    controllable: &[usize],
    x0: &SystemState,
    fault_node: Option<usize>,
    tol: &Tolerances,
) -> Result<InjectionPlan> {
    let (p, objective) = design_injection_lp(net, controllable, tol)?;
    let li = pseudoinverse(&weighted_laplacian(net), tol.pinv_cutoff_rel)?;
    let seed = &li * &p;
    let net1 = net.with_injections(&p);
    let target = solve_equilibrium(&net1, &seed, tol)?;
    let spec = match fault_node {
        Some(node) => PolytopeSpec::FaultDependent {
            node,
            anchor: target.angles.clone(),
        },
        None => PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2),
    };
    let variant = match fault_node {
        Some(node) => LmiVariant::FaultDependent(node),
        None => LmiVariant::Global,
    };
    let bf = build_bracket(&net1, &target);
    let res = adapt(&bf, variant, &spec, x0, tol)?;
    Ok(InjectionPlan {
        new_injections: p,
        controllable: controllable.to_vec(),
        objective,
        target,
        certificate: res.certificate().clone(),
    })
}

// ---------------------------------------------------------------------------
// first-stage susceptance design

/// Heuristic lower-bound design: pick controllable susceptances so that the
/// energy function's value at x0 sits below its value at sampled boundary
/// points (each sample makes V affine in B), then re-certify under the
/// designed network. The sampling is only a search device; `adapt` decides.
pub fn design_first_susceptance(
    net: &PowerNetwork,
    controllable_lines: &[usize],
    x0: &SystemState,
    fault_node: Option<usize>,
    tol: &Tolerances,
) -> Result<Option<SusceptancePlan>> {
    if controllable_lines.is_empty() {
        return Err(Error::InvalidInput("no controllable lines".into()));
    }
    let eq0 = solve_equilibrium(net, &DVector::zeros(net.n_buses()), tol)?;
    // trivial plan if nominal susceptances already certify
    let spec0 = fault_spec(fault_node, &eq0);
    let variant = match fault_node {
        Some(n) => LmiVariant::FaultDependent(n),
        None => LmiVariant::Global,
    };
    let bf0 = build_bracket(net, &eq0);
    if let AdaptResult::Certified(out) = adapt(&bf0, variant, &spec0, x0, tol)? {
        return Ok(Some(SusceptancePlan {
            line_values: controllable_lines
                .iter()
                .map(|&e| (e, net.lines[e].susceptance))
                .collect(),
            stage_index: 1,
            induced_equilibrium: eq0,
            certificate: out.certificate,
        }));
    }

    // boundary samples (zero velocities), anchored at the nominal equilibrium
    let samples = boundary_samples(net, &eq0, &spec0, 200, 23);
    let dev0 = {
        let mut d = DVector::zeros(net.n_buses() + net.gen_indices().len());
        for i in 0..net.n_buses() {
            d[i] = x0.angles[i] - eq0.angles[i];
        }
        for g in 0..net.gen_indices().len() {
            d[net.n_buses() + g] = x0.velocities[g];
        }
        d
    };

    // V(x; B) with the energy member: 1/2 w'Mw - sum_e a_e(B) (cos d_e + d_e sin d*_e);
    // per sample the difference V(x0) - V(x_s) is affine in the controllable B.
    let energy_terms = |dev: &DVector<f64>| -> (DVector<f64>, f64) {
        // returns (coefficient per controllable line, constant from the rest)
        let gens = net.gen_indices();
        let mut constant = 0.0;
        for (g, &k) in gens.iter().enumerate() {
            constant += 0.5 * net.buses[k].inertia.unwrap() * dev[net.n_buses() + g].powi(2);
        }
        let mut coef = DVector::zeros(controllable_lines.len());
        for e in 0..net.n_lines() {
            let (k, j) = net.line_endpoints(e);
            let dstar = eq0.angles[k] - eq0.angles[j];
            let deff = (dev[k] - dev[j]) + dstar;
            let vv = net.buses[k].voltage * net.buses[j].voltage;
            let t = -vv * (deff.cos() + deff * dstar.sin());
            match controllable_lines.iter().position(|&c| c == e) {
                Some(i) => coef[i] += t,
                None => constant += t * net.lines[e].susceptance,
            }
        }
        (coef, constant)
    };

    let (c0, k0) = energy_terms(&dev0);
    let nb = controllable_lines.len();
    let margin = 1e-2;
    let mut cuts: Vec<(DVector<f64>, f64)> = Vec::new();
    for s in &samples {
        let (cs, ks) = energy_terms(s);
        // V(x0;B) - V(x_s;B) <= -margin
        cuts.push((&c0 - &cs, ks - k0 - margin));
    }
    let mut warm = DVector::zeros(nb);
    for (i, &e) in controllable_lines.iter().enumerate() {
        warm[i] = net.lines[e].susceptance;
        let (blo, bhi) = net.lines[e].susceptance_bounds.unwrap_or((0.0, f64::MAX));
        let mut row = DVector::zeros(nb);
        row[i] = 1.0;
        if bhi.is_finite() {
            cuts.push((row.clone(), bhi));
        }
        cuts.push((-row, -blo));
    }
    let prob = SdpFeasibility {
        n_vars: nb,
        blocks: vec![],
        nonneg: (0..nb).collect(),
        equalities: vec![],
        cuts,
        warm_start: Some(warm),
    };
    let out = match solve_sdp_feasibility(&prob, tol) {
        Some(o) => o,
        None => return Ok(None),
    };
    let changes: Vec<(usize, f64)> = controllable_lines
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, out.v[i]))
        .collect();

    // authority: re-certification under the designed network
    let net1 = net.with_susceptances(&changes);
    let eq1 = solve_equilibrium(&net1, &eq0.angles, tol)?;
    let spec1 = fault_spec(fault_node, &eq1);
    let bf1 = build_bracket(&net1, &eq1);
    match adapt(&bf1, variant, &spec1, x0, tol)? {
        AdaptResult::Certified(o) => Ok(Some(SusceptancePlan {
            line_values: changes,
            stage_index: 1,
            induced_equilibrium: eq1,
            certificate: o.certificate,
        })),
        AdaptResult::NotCertified(_) => Ok(None),
    }
}

fn fault_spec(fault_node: Option<usize>, anchor: &EquilibriumPoint) -> PolytopeSpec {
    match fault_node {
        Some(node) => PolytopeSpec::FaultDependent {
            node,
            anchor: anchor.angles.clone(),
        },
        None => PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2),
    }
}

/// Zero-velocity deviation states on the polytope boundary: random interior
/// directions scaled until the tightest edge bound goes active.
fn boundary_samples(
    net: &PowerNetwork,
    anchor: &EquilibriumPoint,
    spec: &PolytopeSpec,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    use rand::{Rng, SeedableRng};
    let n = net.n_buses();
    let ng = net.gen_indices().len();
    let (lo, hi) = spec.sigma_bounds(net, &anchor.angles);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut dev = DVector::zeros(n + ng);
        for i in 1..n {
            dev[i] = rng.gen_range(-1.0..1.0);
        }
        // scale to the first active bound
        let mut scale = f64::INFINITY;
        for e in 0..net.n_lines() {
            let (k, j) = net.line_endpoints(e);
            let s = dev[k] - dev[j];
            if s > 1e-12 {
                scale = scale.min(hi[e] / s);
            } else if s < -1e-12 {
                scale = scale.min(lo[e] / s);
            }
        }
        if !scale.is_finite() || scale <= 0.0 {
            continue;
        }
        for i in 1..n {
            dev[i] *= scale;
        }
        out.push(dev);
    }
    out
}

// ---------------------------------------------------------------------------
// equilibrium-sequence QCQP

/// One stage of the sequence: choose controllable susceptances minimizing
/// d_i(prev) subject to d_i(goal) <= rhs and the line boxes.
pub fn stage_qcqp(
    net: &PowerNetwork,
    controllable_lines: &[usize],
    prev_angles: &DVector<f64>,
    goal_angles: &DVector<f64>,
    rhs: f64,
    tol: &Tolerances,
) -> Result<Vec<(usize, f64)>> {
    let nb = controllable_lines.len();
    // residual r(B) = r0 + S B at fixed angles
    let assemble = |angles: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let n = net.n_buses();
        let mut r0 = DVector::zeros(n);
        let mut s = DMatrix::zeros(n, nb);
        for (k, b) in net.buses.iter().enumerate() {
            r0[k] = b.injection;
        }
        for e in 0..net.n_lines() {
            let (k, j) = net.line_endpoints(e);
            let vv = net.buses[k].voltage * net.buses[j].voltage;
            let sn = (angles[k] - angles[j]).sin();
            match controllable_lines.iter().position(|&c| c == e) {
                Some(i) => {
                    s[(k, i)] -= vv * sn;
                    s[(j, i)] += vv * sn;
                }
                None => {
                    r0[k] -= vv * net.lines[e].susceptance * sn;
                    r0[j] += vv * net.lines[e].susceptance * sn;
                }
            }
        }
        (r0, s)
    };
    let quad_of = |angles: &DVector<f64>, shift: f64| -> Quadratic {
        let (r0, s) = assemble(angles);
        Quadratic {
            p: s.transpose() * &s * 2.0,
            q: s.transpose() * &r0 * 2.0,
            r: r0.dot(&r0) - shift,
        }
    };
    let objective = quad_of(prev_angles, 0.0);
    let mut constraints = vec![quad_of(goal_angles, rhs)];
    for (i, &e) in controllable_lines.iter().enumerate() {
        let (blo, bhi) = net.lines[e].susceptance_bounds.unwrap_or((0.0, f64::MAX));
        let mut up = DVector::zeros(nb);
        up[i] = 1.0;
        if bhi.is_finite() {
            constraints.push(Quadratic::linear(up.clone(), -bhi));
        }
        constraints.push(Quadratic::linear(-up, blo));
    }
    let seed = DVector::from_fn(nb, |i, _| net.lines[controllable_lines[i]].susceptance);
    let sol = solve_qcqp(
        &QcqpProblem {
            objective,
            constraints,
        },
        Some(&seed),
        tol,
    )?;
    Ok(controllable_lines
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, sol.x[i]))
        .collect())
}

/// Iterate the stage QCQP until the latest equilibrium certifies into the
/// goal's region under nominal susceptances. The decrement is halved on
/// certification failure down to d1 / 2^10.
pub fn design_sequence(
    net: &PowerNetwork,
    start: &EquilibriumPoint,
    goal: &EquilibriumPoint,
    controllable_lines: &[usize],
    d: f64,
    tol: &Tolerances,
) -> Result<Vec<SusceptancePlan>> {
    if d <= 0.0 {
        return Err(Error::InvalidInput("decrement must be positive".into()));
    }
    if controllable_lines.is_empty() {
        return Err(Error::InvalidInput("no controllable lines".into()));
    }
    let pi2 = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
    for eq in [start, goal] {
        let (ok, viol) = in_polytope(net, &eq.angles, &pi2);
        if !ok {
            return Err(Error::Planner(format!(
                "endpoint equilibrium outside the pi/2 polytope on lines {viol:?}"
            )));
        }
    }
    let d1 = residual_distance(net, &start.angles).value;
    if d1 <= tol.newton_residual {
        return Ok(vec![]); // start already solves the nominal network
    }
    let d_floor = d1 / f64::powi(2.0, 10);
    let mut d_cur = d;
    let mut stages: Vec<SusceptancePlan> = Vec::new();
    let mut prev_eq = start.clone();
    let mut prev_d = d1;
    let mut stage_index = 2;

    loop {
        let max_stages = (1.0 + d1 / d_cur).ceil() as usize;
        if stages.len() >= max_stages {
            return Err(Error::Planner(format!(
                "stage count exceeded the bound 1 + d1/d = {max_stages}"
            )));
        }
        let rhs = prev_d - d_cur;
        let attempt = (|| -> Result<SusceptancePlan> {
            let changes = stage_qcqp(
                net,
                controllable_lines,
                &prev_eq.angles,
                &goal.angles,
                rhs,
                tol,
            )?;
            let net_i = net.with_susceptances(&changes);
            let eq_i = solve_equilibrium(&net_i, &goal.angles, tol)?;
            let (ok, viol) = in_polytope(&net_i, &eq_i.angles, &pi2);
            if !ok {
                return Err(Error::Planner(format!(
                    "stage equilibrium left the pi/2 polytope on lines {viol:?}"
                )));
            }
            // hop certificate: the previous equilibrium lies in the new stage's region
            let bf = build_bracket(&net_i, &eq_i);
            let hop_state = SystemState {
                angles: prev_eq.angles.clone(),
                velocities: DVector::zeros(net.gen_indices().len()),
            };
            match adapt(&bf, LmiVariant::Global, &pi2, &hop_state, tol)? {
                AdaptResult::Certified(o) => Ok(SusceptancePlan {
                    line_values: changes,
                    stage_index,
                    induced_equilibrium: eq_i,
                    certificate: o.certificate,
                }),
                AdaptResult::NotCertified(c) => Err(Error::Planner(format!(
                    "hop into stage {stage_index} not certified ({:?})",
                    c.verdict
                ))),
            }
        })();
        match attempt {
            Ok(stage) => {
                let net_i = net.with_susceptances(&stage.line_values);
                prev_d = residual_distance(&net_i, &goal.angles).value;
                prev_eq = stage.induced_equilibrium.clone();
                stages.push(stage);
                stage_index += 1;
            }
            Err(e) => {
                d_cur /= 2.0;
                if d_cur < d_floor {
                    return Err(Error::Planner(format!(
                        "decrement floor reached without a certifiable stage: {e}"
                    )));
                }
                continue;
            }
        }
        // termination: does the latest equilibrium certify into the goal's
        // region under nominal susceptances?
        let bf_goal = build_bracket(net, goal);
        let hop_state = SystemState {
            angles: prev_eq.angles.clone(),
            velocities: DVector::zeros(net.gen_indices().len()),
        };
        if let AdaptResult::Certified(_) = adapt(&bf_goal, LmiVariant::Global, &pi2, &hop_state, tol)? {
            return Ok(stages);
        }
    }
}

// ---------------------------------------------------------------------------
// remedial plan

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlanAction {
    ApplyInjections { values: Vec<f64> },
    RestoreInjections { values: Vec<f64> },
    ApplySusceptances { lines: Vec<(usize, f64)> },
    RestoreSusceptances { lines: Vec<(usize, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlanTrigger {
    AtTimeZero,
    OnConvergenceTo {
        angles: Vec<f64>,
        tol: f64,
        dwell: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanStage {
    pub actions: Vec<PlanAction>,
    pub trigger: PlanTrigger,
    /// The equilibrium this stage is expected to converge to.
    pub target_angles: Vec<f64>,
    pub certificate: Option<Certificate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemedialPlan {
    pub stages: Vec<PlanStage>,
    pub diagnostics: Vec<String>,
}

impl RemedialPlan {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn all_hops_certified(&self) -> bool {
        self.stages
            .iter()
            .all(|s| s.certificate.as_ref().map(|c| c.is_certified()).unwrap_or(true))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlannerOptions {
    /// Decrement for the equilibrium sequence; None picks d1/2 + 1.
    pub decrement: Option<f64>,
    /// Emit a plan even when the first hop's certificate is negative.
    /// The stage is still marked not-certified; the default refuses the plan.
    pub allow_uncertified_first_hop: bool,
    /// Always return through the staged susceptance sequence, even when the
    /// redesigned equilibrium certifies directly into the origin region.
    pub force_sequence: bool,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            decrement: None,
            allow_uncertified_first_hop: false,
            force_sequence: false,
        }
    }
}

/// The four-step remedial procedure. Returns None when the actuators cannot
/// stabilize the fault-cleared state (with the reasons in the diagnostics of
/// the error path handled by the caller).
pub fn plan_remedial(
    net: &PowerNetwork,
    x0: &SystemState,
    origin: &EquilibriumPoint,
    controllable_buses: &[usize],
    controllable_lines: &[usize],
    fault_node: Option<usize>,
    options: &PlannerOptions,
    tol: &Tolerances,
) -> Result<Option<RemedialPlan>> {
    let mut diagnostics = Vec::new();

    // step 0: maybe x0 is already attracted to the original operating point
    let bf0 = build_bracket(net, origin);
    let spec0 = fault_spec(fault_node, origin);
    let variant = match fault_node {
        Some(n) => LmiVariant::FaultDependent(n),
        None => LmiVariant::Global,
    };
    match adapt(&bf0, variant, &spec0, x0, tol)? {
        AdaptResult::Certified(out) => {
            diagnostics.push(format!(
                "fault-cleared state certified into the origin region directly (V = {:.4} < vmin = {:.4})",
                out.certificate.value, out.certificate.vmin
            ));
            return Ok(Some(RemedialPlan {
                stages: vec![],
                diagnostics,
            }));
        }
        AdaptResult::NotCertified(c) => {
            diagnostics.push(format!(
                "origin region does not certify x0: {:?}",
                c.verdict
            ));
        }
    }
    if controllable_buses.is_empty() && controllable_lines.is_empty() {
        diagnostics.push("no actuators configured".into());
        return Ok(None);
    }
    if controllable_buses.is_empty() {
        diagnostics.push("no controllable buses for the injection stage".into());
        return Ok(None);
    }

    // step 1: injection redesign toward a close-by equilibrium
    let inj = design_injection(net, controllable_buses, x0, fault_node, tol)?;
    if !inj.certificate.is_certified() {
        diagnostics.push(format!(
            "first hop (x0 into the redesigned-injection region) not certified: {:?}",
            inj.certificate.verdict
        ));
        if !options.allow_uncertified_first_hop {
            return Ok(None);
        }
        diagnostics.push(
            "continuing with an uncertified first hop (allow_uncertified_first_hop set)".into(),
        );
    }
    let nominal_p: Vec<f64> = net.injections().iter().cloned().collect();
    let nominal_lines: Vec<(usize, f64)> = controllable_lines
        .iter()
        .map(|&e| (e, net.lines[e].susceptance))
        .collect();
    let mut stages = vec![PlanStage {
        actions: vec![PlanAction::ApplyInjections {
            values: inj.new_injections.iter().cloned().collect(),
        }],
        trigger: PlanTrigger::AtTimeZero,
        target_angles: inj.target.angles.iter().cloned().collect(),
        certificate: Some(inj.certificate.clone()),
    }];

    // does the new equilibrium already certify into the origin region?
    let pi2 = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
    let bf_origin = build_bracket(net, origin);
    let at_target = SystemState {
        angles: inj.target.angles.clone(),
        velocities: DVector::zeros(net.gen_indices().len()),
    };
    let direct = if options.force_sequence {
        None
    } else {
        adapt(&bf_origin, LmiVariant::Global, &pi2, &at_target, tol)?.into_outcome()
    };
    if let Some(out) = direct {
        diagnostics
            .push("redesigned equilibrium certified directly into the origin region".into());
        stages.push(PlanStage {
            actions: vec![PlanAction::RestoreInjections {
                values: nominal_p.clone(),
            }],
            trigger: PlanTrigger::OnConvergenceTo {
                angles: inj.target.angles.iter().cloned().collect(),
                tol: tol.conv_tol,
                dwell: tol.conv_dwell,
            },
            target_angles: origin.angles.iter().cloned().collect(),
            certificate: Some(out.certificate),
        });
        return Ok(Some(RemedialPlan { stages, diagnostics }));
    }
    if controllable_lines.is_empty() {
        diagnostics.push("no controllable lines for the equilibrium sequence".into());
        return Ok(None);
    }
    let d1 = residual_distance(net, &inj.target.angles).value;
    let d = options.decrement.unwrap_or(d1 / 2.0 + 1.0);
    diagnostics.push(format!("sequence decrement d = {d:.4} (d1 = {d1:.4})"));
    let seq = design_sequence(net, &inj.target, origin, controllable_lines, d, tol)?;

    // step 2: susceptance stages; the first one also restores the injections
    let mut prev_target = inj.target.angles.clone();
    for (i, sp) in seq.iter().enumerate() {
        let mut actions = Vec::new();
        if i == 0 {
            actions.push(PlanAction::RestoreInjections {
                values: nominal_p.clone(),
            });
        }
        actions.push(PlanAction::ApplySusceptances {
            lines: sp.line_values.clone(),
        });
        stages.push(PlanStage {
            actions,
            trigger: PlanTrigger::OnConvergenceTo {
                angles: prev_target.iter().cloned().collect(),
                tol: tol.conv_tol,
                dwell: tol.conv_dwell,
            },
            target_angles: sp.induced_equilibrium.angles.iter().cloned().collect(),
            certificate: Some(sp.certificate.clone()),
        });
        prev_target = sp.induced_equilibrium.angles.clone();
    }

    // step 3: restore nominal susceptances; the final hop certificate is the
    // last stage equilibrium entering the origin region
    let last_state = SystemState {
        angles: prev_target.clone(),
        velocities: DVector::zeros(net.gen_indices().len()),
    };
    let final_cert = match adapt(&bf_origin, LmiVariant::Global, &pi2, &last_state, tol)? {
        AdaptResult::Certified(out) => out.certificate,
        AdaptResult::NotCertified(c) => {
            diagnostics.push(format!(
                "final hop into the origin region not certified: {:?}",
                c.verdict
            ));
            return Ok(None);
        }
    };
    stages.push(PlanStage {
        actions: vec![PlanAction::RestoreSusceptances {
            lines: nominal_lines,
        }],
        trigger: PlanTrigger::OnConvergenceTo {
            angles: prev_target.iter().cloned().collect(),
            tol: tol.conv_tol,
            dwell: tol.conv_dwell,
        },
        target_angles: origin.angles.iter().cloned().collect(),
        certificate: Some(final_cert),
    });
    Ok(Some(RemedialPlan { stages, diagnostics }))
}

// ---------------------------------------------------------------------------
// closed-loop verification

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub label: String,
    pub fired_at: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub stages: Vec<StageReport>,
    pub final_distance: f64,
    pub converged_at: Option<f64>,
    pub peak_velocity: f64,
    pub horizon: f64,
}

pub fn plan_hooks(plan: &RemedialPlan, tol: &Tolerances) -> Vec<EventHook> {
    let mut hooks = Vec::new();
    for (i, stage) in plan.stages.iter().enumerate() {
        for action in &stage.actions {
            let (mutation, name) = match action {
                PlanAction::ApplyInjections { values } => (
                    Mutation::SetInjections(DVector::from_row_slice(values)),
                    "apply-injections",
                ),
                PlanAction::RestoreInjections { values } => (
                    Mutation::SetInjections(DVector::from_row_slice(values)),
                    "restore-injections",
                ),
                PlanAction::ApplySusceptances { lines } => (
                    Mutation::SetSusceptances(lines.clone()),
                    "apply-susceptances",
                ),
                PlanAction::RestoreSusceptances { lines } => (
                    Mutation::SetSusceptances(lines.clone()),
                    "restore-susceptances",
                ),
            };
            let trigger = match &stage.trigger {
                PlanTrigger::AtTimeZero => Trigger::AtTime(0.0),
                PlanTrigger::OnConvergenceTo { angles, tol: ct, dwell } => {
                    Trigger::OnConvergenceTo {
                        target: EquilibriumPoint {
                            angles: DVector::from_row_slice(angles),
                            residual: 0.0,
                            network_tag: String::new(),
                        },
                        tol: *ct,
                        dwell: *dwell,
                    }
                }
            };
            let _ = tol;
            hooks.push(EventHook {
                trigger,
                mutation,
                label: format!("stage-{}:{}", i + 1, name),
            });
        }
    }
    hooks
}

/// Simulate the staged scenario end to end and summarize the outcome.
pub fn verify_plan(
    net: &PowerNetwork,
    x0: &SystemState,
    plan: &RemedialPlan,
    origin: &EquilibriumPoint,
    horizon: f64,
    tol: &Tolerances,
) -> Result<(VerificationReport, Trajectory)> {
    let mut cfg = SimConfig::new(tol.sim_dt, horizon);
    cfg.event_hooks = plan_hooks(plan, tol);
    let traj = simulate(net, x0, &cfg)?;
    let mut stages = Vec::new();
    for hook in &cfg.event_hooks {
        let fired = traj
            .events
            .iter()
            .find(|(_, l)| l == &hook.label)
            .map(|(t, _)| *t);
        stages.push(StageReport {
            label: hook.label.clone(),
            fired_at: fired,
        });
    }
    let final_distance = traj
        .states
        .last()
        .map(|s| distance_to(s, origin))
        .unwrap_or(f64::INFINITY);
    let converged_at = detect_convergence(&traj, origin, tol.conv_tol, tol.conv_dwell);
    let peak_velocity = traj
        .states
        .iter()
        .map(|s| s.velocities.amax())
        .fold(0.0f64, f64::max);
    Ok((
        VerificationReport {
            stages,
            final_distance,
            converged_at,
            peak_velocity,
            horizon,
        },
        traj,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_case;

    fn four_bus() -> PowerNetwork {
        load_case(
            r#"{
              "buses": [
                {"id": 1, "kind": "gen",  "V": 1.0, "m": 0.5, "d": 0.2, "P": 0.5},
                {"id": 2, "kind": "gen",  "V": 1.0, "m": 0.4, "d": 0.2, "P": 0.3},
                {"id": 3, "kind": "load", "V": 1.0, "m": null, "d": 0.6, "P": -0.4},
                {"id": 4, "kind": "load", "V": 1.0, "m": null, "d": 0.6, "P": -0.4}
              ],
              "lines": [
                {"from": 1, "to": 3, "B": 1.5, "controllable": false, "B_min": null, "B_max": null},
                {"from": 2, "to": 4, "B": 1.4, "controllable": false, "B_min": null, "B_max": null},
                {"from": 3, "to": 4, "B": 1.0, "controllable": true, "B_min": 0.2, "B_max": 5.0},
                {"from": 1, "to": 4, "B": 0.8, "controllable": false, "B_min": null, "B_max": null}
              ],
              "slack_bus": null
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn residual_distance_zero_at_equilibrium() {
        let net = four_bus();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(4), &tol).unwrap();
        let d = residual_distance(&net, &eq.angles).value;
        assert!(d < 1e-15, "d = {d}");
    }

    #[test]
    fn residual_distance_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let net = four_bus();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let ang = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let d = residual_distance(&net, &ang).value;
            // independent recomputation, scalar loops only
            let mut acc = 0.0;
            for k in 0..4 {
                let mut r = net.buses[k].injection;
                for e in 0..net.n_lines() {
                    let (a, b) = net.line_endpoints(e);
                    let vvb = net.buses[a].voltage * net.buses[b].voltage
                        * net.lines[e].susceptance;
                    if a == k {
                        r -= vvb * (ang[a] - ang[b]).sin();
                    } else if b == k {
                        r -= vvb * (ang[b] - ang[a]).sin();
                    }
                }
                acc += r * r;
            }
            assert!((d - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn injection_lp_all_controllable_gives_zero() {
        let net = four_bus();
        let tol = Tolerances::default();
        let (p, obj) = design_injection_lp(&net, &[0, 1, 2, 3], &tol).unwrap();
        assert!(obj.abs() < 1e-6, "objective {obj}");
        assert!(p.amax() < 1e-5);
    }

    #[test]
    fn injection_lp_empty_controllable_errors() {
        let net = four_bus();
        assert!(design_injection_lp(&net, &[], &Tolerances::default()).is_err());
    }

    #[test]
    fn injection_lp_fixed_buses_untouched() {
        let net = four_bus();
        let tol = Tolerances::default();
        let (p, obj) = design_injection_lp(&net, &[0, 1], &tol).unwrap();
        assert!((p[2] - net.buses[2].injection).abs() < 1e-12);
        assert!((p[3] - net.buses[3].injection).abs() < 1e-12);
        assert!(p.sum().abs() < 1e-8);
        // objective beats the uncontrolled edge norm
        let li = pseudoinverse(&weighted_laplacian(&net), tol.pinv_cutoff_rel).unwrap();
        let base = crate::netmodel::edge_infnorm(&net, &li, &net.injections());
        assert!(obj <= base + 1e-9);
    }

    #[test]
    fn sequence_start_equals_goal_is_empty() {
        let net = four_bus();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(4), &tol).unwrap();
        let seq = design_sequence(&net, &eq, &eq, &[2], 1.0, &tol).unwrap();
        assert!(seq.is_empty());
    }

    #[test]
    fn empty_plan_for_equilibrium_start() {
        let net = four_bus();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(4), &tol).unwrap();
        let x0 = SystemState {
            angles: eq.angles.clone(),
            velocities: DVector::zeros(2),
        };
        let plan = plan_remedial(
            &net,
            &x0,
            &eq,
            &[0, 1],
            &[2],
            None,
            &PlannerOptions::default(),
            &tol,
        )
        .unwrap()
        .expect("plan");
        assert!(plan.is_empty());
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = RemedialPlan {
            stages: vec![PlanStage {
                actions: vec![
                    PlanAction::ApplyInjections {
                        values: vec![0.1, -0.1],
                    },
                    PlanAction::ApplySusceptances {
                        lines: vec![(2, 3.5)],
                    },
                ],
                trigger: PlanTrigger::OnConvergenceTo {
                    angles: vec![0.0, 0.2],
                    tol: 0.05,
                    dwell: 1.0,
                },
                target_angles: vec![0.0, 0.1],
                certificate: None,
            }],
            diagnostics: vec!["test".into()],
        };
        let s = serde_json::to_string_pretty(&plan).unwrap();
        let back: RemedialPlan = serde_json::from_str(&s).unwrap();
        assert_eq!(back.stages.len(), 1);
        assert!(matches!(
            back.stages[0].actions[1],
            PlanAction::ApplySusceptances { .. }
        ));
    }
}
