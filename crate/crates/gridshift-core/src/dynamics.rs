//! Structure-preserving swing dynamics: second-order generators, first-order
//! loads, fixed-step RK4 with one-shot event hooks for staged control actions.

use crate::error::{Error, Result};
use crate::netmodel::{BusKind, PowerNetwork};
use crate::powerflow::EquilibriumPoint;
use nalgebra::DVector;
use std::io::Write;

#[derive(Debug, Clone)]
pub struct SystemState {
    /// Per-bus angles, radians.
    pub angles: DVector<f64>,
    /// Per-generator angular velocities, in generator order (gen_indices).
    pub velocities: DVector<f64>,
}

impl SystemState {
    pub fn at_equilibrium(net: &PowerNetwork, eq: &EquilibriumPoint) -> Self {
        SystemState {
            angles: eq.angles.clone(),
            velocities: DVector::zeros(net.gen_indices().len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().all(|v| v.is_finite()) && self.velocities.iter().all(|v| v.is_finite())
    }
}

/// One-shot network mutation applied when its trigger fires.
#[derive(Debug, Clone)]
pub enum Mutation {
    SetInjections(DVector<f64>),
    /// (line index, new susceptance) pairs.
    SetSusceptances(Vec<(usize, f64)>),
}

#[derive(Debug, Clone)]
pub enum Trigger {
    AtTime(f64),
    /// Fires once distance_to(target) has stayed below tol for a full dwell window.
    OnConvergenceTo {
        target: EquilibriumPoint,
        tol: f64,
        dwell: f64,
    },
}

#[derive(Debug, Clone)]
pub struct EventHook {
    pub trigger: Trigger,
    pub mutation: Mutation,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub event_hooks: Vec<EventHook>,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        assert!(dt > 0.0 && horizon >= 0.0);
        SimConfig {
            dt,
            horizon,
            event_hooks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// (time, hook label) for every mutation applied.
    pub events: Vec<(f64, String)>,
    pub network_tag: String,
}

/// Right-hand side of the swing equations.
/// Generators: m ddot = P - d*omega - sum a sin(delta_kj); loads: d dot = P - sum a sin(delta_kj).
pub fn derivative(net: &PowerNetwork, x: &SystemState) -> (DVector<f64>, DVector<f64>) {
    let n = net.n_buses();
    let gens = net.gen_indices();
    let mut flow: DVector<f64> = DVector::zeros(n);
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let s = net.line_weight(e) * (x.angles[k] - x.angles[j]).sin();
        flow[k] += s;
        flow[j] -= s;
    }
    let mut dang = DVector::zeros(n);
    let mut dvel = DVector::zeros(gens.len());
    let mut g = 0usize;
    for (k, b) in net.buses.iter().enumerate() {
        match b.kind {
            BusKind::Generator => {
                let m = b.inertia.expect("generator inertia");
                let w = x.velocities[g];
                dang[k] = w;
                dvel[g] = (b.injection - b.damping * w - flow[k]) / m;
                g += 1;
            }
            BusKind::Load => {
                dang[k] = (b.injection - flow[k]) / b.damping;
            }
        }
    }
    (dang, dvel)
}

fn rk4_step(net: &PowerNetwork, x: &SystemState, dt: f64) -> SystemState {
    let (k1a, k1v) = derivative(net, x);
    let mid1 = SystemState {
        angles: &x.angles + &k1a * (dt / 2.0),
        velocities: &x.velocities + &k1v * (dt / 2.0),
    };
    let (k2a, k2v) = derivative(net, &mid1);
    let mid2 = SystemState {
        angles: &x.angles + &k2a * (dt / 2.0),
        velocities: &x.velocities + &k2v * (dt / 2.0),
    };
    let (k3a, k3v) = derivative(net, &mid2);
    let end = SystemState {
        angles: &x.angles + &k3a * dt,
        velocities: &x.velocities + &k3v * dt,
    };
    let (k4a, k4v) = derivative(net, &end);
    SystemState {
        angles: &x.angles + (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0),
        velocities: &x.velocities + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    }
}

/// Euclidean distance over angle differences to the first bus, velocities excluded.
pub fn distance_to(x: &SystemState, target: &EquilibriumPoint) -> f64 {
    let n = x.angles.len();
    let mut s = 0.0;
    for i in 1..n {
        let d = (x.angles[i] - x.angles[0]) - (target.angles[i] - target.angles[0]);
        s += d * d;
    }
    s.sqrt()
}

struct HookState {
    fired: bool,
    below_since: Option<f64>,
}

/// Integrate the swing dynamics with one-shot event hooks evaluated at step
/// boundaries; a triggered mutation applies atomically before the next step.
/// A non-finite state aborts with the last finite prefix recorded.
pub fn simulate(net: &PowerNetwork, x0: &SystemState, cfg: &SimConfig) -> Result<Trajectory> {
    let mut net = net.clone();
    let mut x = x0.clone();
    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        events: Vec::new(),
        network_tag: String::new(),
    };
    let mut hooks: Vec<HookState> = cfg
        .event_hooks
        .iter()
        .map(|_| HookState {
            fired: false,
            below_since: None,
        })
        .collect();

    for step in 0..=n_steps {
        let t = step as f64 * cfg.dt;
        if !x.is_finite() {
            return Err(Error::NonFiniteState { t });
        }
        // hooks fire at step boundaries, before the step that follows
        for (h, hs) in cfg.event_hooks.iter().zip(hooks.iter_mut()) {
            if hs.fired {
                continue;
            }
            let fire = match &h.trigger {
                Trigger::AtTime(t0) => t + 1e-12 >= *t0,
                Trigger::OnConvergenceTo { target, tol, dwell } => {
                    if distance_to(&x, target) < *tol {
                        let since = *hs.below_since.get_or_insert(t);
                        t - since + 1e-12 >= *dwell
                    } else {
                        hs.below_since = None;
                        false
                    }
                }
            };
            if fire {
                match &h.mutation {
                    Mutation::SetInjections(p) => {
                        net = net.with_injections(p);
                    }
                    Mutation::SetSusceptances(changes) => {
                        net = net.with_susceptances(changes);
                    }
                }
                traj.events.push((t, h.label.clone()));
                hs.fired = true;
            }
        }
        traj.times.push(t);
        traj.states.push(x.clone());
        if step < n_steps {
            x = rk4_step(&net, &x, cfg.dt);
        }
    }
    Ok(traj)
}

/// Earliest time after which distance_to(target) stays below tol for a full
/// dwell window (and through the end of the trajectory).
pub fn detect_convergence(
    traj: &Trajectory,
    target: &EquilibriumPoint,
    tol: f64,
    dwell: f64,
) -> Option<f64> {
    assert!(tol > 0.0);
    let mut below_since: Option<f64> = None;
    for (t, x) in traj.times.iter().zip(traj.states.iter()) {
        if distance_to(x, target) < tol {
            let since = *below_since.get_or_insert(*t);
            if t - since + 1e-12 >= dwell {
                return Some(since);
            }
        } else {
            below_since = None;
        }
    }
    // a trajectory ending inside the ball but shorter than the dwell window
    // does not count as converged
    None
}

/// Energy function W = 1/2 sum m w^2 - sum_e a_e cos(delta_kj) - sum_k P_k delta_k.
/// Used by the conservation / dissipation audits.
pub fn energy(net: &PowerNetwork, x: &SystemState) -> f64 {
    let gens = net.gen_indices();
    let mut w = 0.0;
    for (g, &k) in gens.iter().enumerate() {
        w += 0.5 * net.buses[k].inertia.unwrap() * x.velocities[g] * x.velocities[g];
    }
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        w -= net.line_weight(e) * (x.angles[k] - x.angles[j]).cos();
    }
    for (k, b) in net.buses.iter().enumerate() {
        w -= b.injection * x.angles[k];
    }
    w
}

/// CSV export: `t,delta_1..delta_N,omega_g1..omega_gM`, `%.9e` everywhere.
pub fn write_csv<W: Write>(net: &PowerNetwork, traj: &Trajectory, out: &mut W) -> Result<()> {
    let n = net.n_buses();
    let ng = net.gen_indices().len();
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",delta_{i}"));
    }
    for g in 1..=ng {
        header.push_str(&format!(",omega_g{g}"));
    }
    writeln!(out, "{header}")?;
    for (t, x) in traj.times.iter().zip(traj.states.iter()) {
        let mut row = format!("{t:.9e}");
        for v in x.angles.iter() {
            row.push_str(&format!(",{v:.9e}"));
        }
        for v in x.velocities.iter() {
            row.push_str(&format!(",{v:.9e}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_case;
    use crate::powerflow::solve_equilibrium;
    use crate::tol::Tolerances;

    fn two_bus_net() -> PowerNetwork {
        load_case(
            r#"{
              "buses": [
                {"id": 1, "kind": "gen",  "V": 1.0, "m": 1.0, "d": 1.0, "P": 0.0},
                {"id": 2, "kind": "load", "V": 1.0, "m": null, "d": 1.0, "P": 0.0}
              ],
              "lines": [
                {"from": 1, "to": 2, "B": 1.0, "controllable": false, "B_min": null, "B_max": null}
              ],
              "slack_bus": null
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn derivative_direct_substitution() {
        // two-bus gen-load, delta_12 = pi/2, a = 1, P = 0, m = d = 1
        let net = two_bus_net();
        let x = SystemState {
            angles: DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]),
            velocities: DVector::zeros(1),
        };
        let (da, dv) = derivative(&net, &x);
        assert!((dv[0] + 1.0).abs() < 1e-12);
        assert!((da[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let net = two_bus_net();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(2), &tol).unwrap();
        let x0 = SystemState::at_equilibrium(&net, &eq);
        let cfg = SimConfig::new(1e-3, 10.0);
        let traj = simulate(&net, &x0, &cfg).unwrap();
        let last = traj.states.last().unwrap();
        assert!(distance_to(last, &eq) < 1e-9);
    }

    #[test]
    fn convergence_detection_constant() {
        let net = two_bus_net();
        let tol = Tolerances::default();
        let eq = solve_equilibrium(&net, &DVector::zeros(2), &tol).unwrap();
        let x0 = SystemState::at_equilibrium(&net, &eq);
        let traj = simulate(&net, &x0, &SimConfig::new(1e-2, 3.0)).unwrap();
        assert_eq!(detect_convergence(&traj, &eq, 0.05, 1.0), Some(0.0));
    }

    #[test]
    fn at_time_hook_applies() {
        let net = two_bus_net();
        let mut cfg = SimConfig::new(1e-3, 2.0);
        cfg.event_hooks.push(EventHook {
            trigger: Trigger::AtTime(1.0),
            mutation: Mutation::SetInjections(DVector::from_vec(vec![0.5, -0.5])),
            label: "inject".into(),
        });
        let x0 = SystemState {
            angles: DVector::zeros(2),
            velocities: DVector::zeros(1),
        };
        let traj = simulate(&net, &x0, &cfg).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert!((traj.events[0].0 - 1.0).abs() < 1e-9);
        // after injection the angles drift apart
        let last = traj.states.last().unwrap();
        assert!((last.angles[0] - last.angles[1]).abs() > 0.05);
    }

    #[test]
    fn csv_header_shape() {
        let net = two_bus_net();
        let x0 = SystemState {
            angles: DVector::zeros(2),
            velocities: DVector::zeros(1),
        };
        let traj = simulate(&net, &x0, &SimConfig::new(0.5, 1.0)).unwrap();
        let mut buf = Vec::new();
        write_csv(&net, &traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,delta_1,delta_2,omega_g1");
        assert_eq!(lines.count(), 3);
    }
}
