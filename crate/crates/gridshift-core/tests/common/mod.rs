//! Property checks shared between the always-on suite and the acceptance
//! target. Each check panics with a diagnostic on failure and returns a short
//! summary on success.

use gridshift_core::dynamics::{distance_to, energy, simulate, SimConfig, SystemState};
use gridshift_core::lyapunov::{build_bracket, solve_member, vmin, LmiVariant};
use gridshift_core::netmodel::{pseudoinverse, weighted_laplacian};
use gridshift_core::optim::{solve_lp, solve_qcqp, LpProblem, QcqpProblem, Quadratic};
use gridshift_core::powerflow::{approx_equilibrium, in_polytope, solve_equilibrium, PolytopeSpec};
use gridshift_core::{Bus, BusKind, Line, PowerNetwork, Tolerances};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random connected network: spanning tree plus extra edges, injections
/// scaled so the linear edge flows stay well inside sin's invertible range.
pub fn random_network(rng: &mut ChaCha8Rng) -> PowerNetwork {
    let n = rng.gen_range(3..8);
    let n_gens = rng.gen_range(1..=n.min(3));
    let mut buses = Vec::new();
    for i in 0..n {
        let gen = i < n_gens;
        buses.push(Bus {
            id: i + 1,
            kind: if gen { BusKind::Generator } else { BusKind::Load },
            voltage: rng.gen_range(0.95..1.05),
            inertia: gen.then(|| rng.gen_range(0.05..0.2)),
            damping: rng.gen_range(0.02..0.1),
            injection: 0.0,
        });
    }
    // Line.from/to carry 1-based bus ids, matching the case-file schema
    let mut lines = Vec::new();
    for i in 1..n {
        lines.push(Line {
            from: rng.gen_range(0..i) + 1,
            to: i + 1,
            susceptance: rng.gen_range(1.0..20.0),
            controllable: false,
            susceptance_bounds: None,
        });
    }
    for _ in 0..rng.gen_range(0..n) {
        let a = rng.gen_range(0..n) + 1;
        let b = rng.gen_range(0..n) + 1;
        if a != b && !lines.iter().any(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a)) {
            lines.push(Line {
                from: a,
                to: b,
                susceptance: rng.gen_range(1.0..20.0),
                controllable: false,
                susceptance_bounds: None,
            });
        }
    }
    let mut net = PowerNetwork { buses, lines };
    // balanced injections, then scale for an edge infinity-norm of ~0.3
    let mut p = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mean = p.mean();
    p.apply(|v| *v -= mean);
    let li = pseudoinverse(&weighted_laplacian(&net), 1e-8).unwrap();
    let th = &li * &p;
    let mut worst: f64 = 0.0;
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        worst = worst.max((th[k] - th[j]).abs());
    }
    if worst > 1e-12 {
        p *= 0.3 / worst;
    }
    for (i, b) in net.buses.iter_mut().enumerate() {
        b.injection = p[i];
    }
    net
}

pub fn two_bus() -> PowerNetwork {
    gridshift_core::netmodel::load_case(
        r#"{
          "buses": [
            {"id": 1, "kind": "gen",  "V": 1.0, "m": 0.5, "d": 0.2, "P": 0.4},
            {"id": 2, "kind": "load", "V": 1.0, "m": null, "d": 0.7, "P": -0.4}
          ],
          "lines": [
            {"from": 1, "to": 2, "B": 1.2, "controllable": false, "B_min": null, "B_max": null}
          ],
          "slack_bus": null
        }"#,
    )
    .unwrap()
}

pub fn check_moore_penrose(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let net = random_network(&mut rng);
        let l = weighted_laplacian(&net);
        let li = pseudoinverse(&l, 1e-8).unwrap();
        let r1 = (&l * &li * &l - &l).amax();
        let r2 = (&li * &l * &li - &li).amax();
        let lli = &l * &li;
        let r3 = (&lli - lli.transpose()).amax();
        assert!(r1 <= 1e-9, "L Li L - L = {r1:.3e}");
        assert!(r2 <= 1e-9, "Li L Li - Li = {r2:.3e}");
        assert!(r3 <= 1e-9, "asymmetry of L Li = {r3:.3e}");
        worst = worst.max(r1).max(r2).max(r3);
    }
    format!("Moore-Penrose worst residual {worst:.2e} over {cases} networks")
}

pub fn check_newton_residual(cases: usize) -> String {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let net = random_network(&mut rng);
        let start = approx_equilibrium(&net, &net.injections(), &tol).unwrap();
        let eq = solve_equilibrium(&net, &start, &tol).unwrap();
        assert!(eq.residual <= 1e-8, "residual = {:.3e}", eq.residual);
        worst = worst.max(eq.residual);
    }
    format!("Newton worst residual {worst:.2e} over {cases} networks")
}

pub fn check_rk4_ratio() -> String {
    // global error should scale as dt^4: halving dt divides it by ~16
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = random_network(&mut rng);
    let tol = Tolerances::default();
    let eq = solve_equilibrium(
        &net,
        &approx_equilibrium(&net, &net.injections(), &tol).unwrap(),
        &tol,
    )
    .unwrap();
    let ng = net.gen_indices().len();
    let x0 = SystemState {
        angles: DVector::from_fn(net.n_buses(), |i, _| {
            eq.angles[i] + 0.1 * ((i + 1) as f64).sin()
        }),
        velocities: DVector::from_fn(ng, |g, _| 0.05 * (g as f64 + 1.0)),
    };
    let horizon = 1.0;
    let run = |dt: f64| {
        let traj = simulate(&net, &x0, &SimConfig::new(dt, horizon)).unwrap();
        traj.states.last().unwrap().clone()
    };
    let fine = run(1e-4);
    let err = |s: &SystemState| {
        let mut e: f64 = 0.0;
        for i in 0..net.n_buses() {
            e = e.max((s.angles[i] - fine.angles[i]).abs());
        }
        for g in 0..ng {
            e = e.max((s.velocities[g] - fine.velocities[g]).abs());
        }
        e
    };
    let e1 = err(&run(4e-3));
    let e2 = err(&run(2e-3));
    let ratio = e1 / e2;
    assert!(
        (12.0..=20.0).contains(&ratio),
        "error ratio = {ratio:.2} (e1 = {e1:.3e}, e2 = {e2:.3e})"
    );
    format!("RK4 halving error ratio {ratio:.2}")
}

pub fn check_energy_conservation() -> String {
    // all-generator network with d = 0 is Hamiltonian; drift stays tiny
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut net = random_network(&mut rng);
    for b in &mut net.buses {
        b.kind = BusKind::Generator;
        b.inertia = Some(b.inertia.unwrap_or(0.1));
        b.damping = 0.0;
    }
    let n = net.n_buses();
    let x0 = SystemState {
        angles: DVector::from_fn(n, |i, _| 0.2 * ((i * 7 + 3) as f64).sin()),
        velocities: DVector::from_fn(n, |i, _| 0.1 * ((i * 5 + 1) as f64).cos()),
    };
    let traj = simulate(&net, &x0, &SimConfig::new(1e-3, 10.0)).unwrap();
    let e0 = energy(&net, &traj.states[0]);
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        let drift = (energy(&net, s) - e0).abs();
        assert!(drift <= 1e-6, "energy drift {drift:.3e}");
        worst = worst.max(drift);
    }
    format!("zero-damping energy drift {worst:.2e} over 10 s")
}

pub fn check_lyapunov_non_increase(samples: usize) -> String {
    let net = two_bus();
    let tol = Tolerances::default();
    let eq = solve_equilibrium(&net, &DVector::zeros(2), &tol).unwrap();
    let bf = build_bracket(&net, &eq);
    let (member, _) = solve_member(&bf, LmiVariant::Global, &[], None, &tol).expect("member");
    let spec = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
    let est = vmin(&member, &net, &spec, &tol).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut checked = 0;
    for _ in 0..4 * samples {
        let x0 = SystemState {
            angles: DVector::from_vec(vec![0.0, eq.angles[1] + rng.gen_range(-1.0..1.0)]),
            velocities: DVector::from_vec(vec![rng.gen_range(-0.5..0.5)]),
        };
        if !in_polytope(&net, &x0.angles, &spec).0 || member.evaluate(&x0) >= est.vmin {
            continue;
        }
        checked += 1;
        let traj = simulate(&net, &x0, &SimConfig::new(1e-3, 5.0)).unwrap();
        let mut prev = f64::INFINITY;
        for s in &traj.states {
            if !in_polytope(&net, &s.angles, &spec).0 {
                break;
            }
            let v = member.evaluate(s);
            assert!(v <= prev + 1e-7, "V increased: {prev:.9} -> {v:.9}");
            prev = v;
        }
        if checked >= samples {
            break;
        }
    }
    assert!(checked >= samples.min(10), "only {checked} certified samples");
    format!("V non-increasing along {checked} certified trajectories")
}

pub fn check_hessian_psd() -> String {
    let net = two_bus();
    let tol = Tolerances::default();
    let eq = solve_equilibrium(&net, &DVector::zeros(2), &tol).unwrap();
    let bf = build_bracket(&net, &eq);
    let (member, _) = solve_member(&bf, LmiVariant::Global, &[], None, &tol).expect("member");
    let spec = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
    assert!(gridshift_core::lyapunov::hessian_psd_on(
        &member, &net, &spec, 1000, 16
    ));
    "Hessian PSD at 1000 polytope samples".into()
}

pub fn check_lp_resubstitution(cases: usize) -> String {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..cases {
        let nv = rng.gen_range(2..5);
        let mut lp = LpProblem::new(DVector::from_fn(nv, |_, _| rng.gen_range(-1.0..1.0)));
        // a box keeps it bounded, plus a few random halfspaces
        for i in 0..nv {
            let mut e = DVector::zeros(nv);
            e[i] = 1.0;
            lp.push_ub(e.clone(), rng.gen_range(0.5..2.0));
            lp.push_ub(-e, rng.gen_range(0.5..2.0));
        }
        for _ in 0..rng.gen_range(0..3) {
            lp.push_ub(
                DVector::from_fn(nv, |_, _| rng.gen_range(-1.0..1.0)),
                rng.gen_range(0.2..1.5),
            );
        }
        let sol = solve_lp(&lp, &tol).unwrap();
        for r in 0..lp.g_ub.nrows() {
            let slack = lp.h_ub[r] - lp.g_ub.row(r).transpose().dot(&sol.x);
            assert!(slack >= -1e-7, "ub violated by {:.3e}", -slack);
        }
    }
    format!("LP re-substitution clean over {cases} problems")
}

pub fn check_qcqp_resubstitution(cases: usize) -> String {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..cases {
        let nv = rng.gen_range(2..4);
        let mut mk_psd = || {
            let a = DMatrix::from_fn(nv, nv, |_, _| rng.gen_range(-1.0..1.0));
            &a * a.transpose() + DMatrix::identity(nv, nv) * 0.1
        };
        let objective = Quadratic {
            p: mk_psd(),
            q: DVector::from_fn(nv, |_, _| rng.gen_range(-1.0..1.0)),
            r: 0.0,
        };
        // balls around the origin keep the problem strictly feasible
        let constraints = (0..rng.gen_range(1..3))
            .map(|_| Quadratic {
                p: DMatrix::identity(nv, nv) * 2.0,
                q: DVector::from_fn(nv, |_, _| rng.gen_range(-0.2..0.2)),
                r: -rng.gen_range(0.5..2.0),
            })
            .collect();
        let prob = QcqpProblem {
            objective,
            constraints,
        };
        let sol = solve_qcqp(&prob, None, &tol).unwrap();
        for c in &prob.constraints {
            assert!(
                c.value(&sol.x) <= 1e-9,
                "constraint violated: {:.3e}",
                c.value(&sol.x)
            );
        }
    }
    format!("QCQP re-substitution clean over {cases} problems")
}

/// Soundness: every state the certificate accepts must actually converge.
pub fn check_two_bus_soundness(required: usize) -> String {
    let net = two_bus();
    let tol = Tolerances::default();
    let eq = solve_equilibrium(&net, &DVector::zeros(2), &tol).unwrap();
    let bf = build_bracket(&net, &eq);
    let (member, _) = solve_member(&bf, LmiVariant::Global, &[], None, &tol).expect("member");
    let spec = PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2);
    let est = vmin(&member, &net, &spec, &tol).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut certified = 0;
    let mut convergent = 0;
    let mut tried = 0;
    while certified < required && tried < 40 * required {
        tried += 1;
        let x0 = SystemState {
            angles: DVector::from_vec(vec![0.0, eq.angles[1] + rng.gen_range(-1.6..1.6)]),
            velocities: DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]),
        };
        if !in_polytope(&net, &x0.angles, &spec).0 || member.evaluate(&x0) >= est.vmin {
            continue;
        }
        certified += 1;
        let traj = simulate(&net, &x0, &SimConfig::new(1e-3, 30.0)).unwrap();
        if distance_to(traj.states.last().unwrap(), &eq) < 1e-3 {
            convergent += 1;
        }
    }
    assert_eq!(certified, required, "could not draw {required} certified samples");
    assert_eq!(
        convergent, required,
        "{convergent}/{required} certified states converged"
    );
    format!("two-bus soundness {convergent}/{required} convergent")
}
