//! gridshift: certify fault-cleared states, design remedial plans, and
//! simulate the staged response on structure-preserving grid models.

mod scenario;

use clap::{Parser, Subcommand};
use gridshift_core::dynamics::{simulate, write_csv, SimConfig};
use gridshift_core::lyapunov::{adapt, build_bracket, LmiVariant};
use gridshift_core::planner::{
    design_injection_lp, plan_remedial, residual_distance, verify_plan, PlanAction, RemedialPlan,
};
use gridshift_core::powerflow::{solve_equilibrium, EquilibriumPoint, PolytopeSpec};
use gridshift_core::{Error, PowerNetwork, Result, Tolerances};
use nalgebra::DVector;
use scenario::{load_scenario, Scenario};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "gridshift", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check whether the fault-cleared state is attracted to the operating point
    Certify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design the staged remedial plan for a scenario
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the post-fault dynamics, optionally under a plan
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the artifacts of prior runs in a directory
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}

fn tolerances(sc: &Scenario) -> Result<Tolerances> {
    let mut tol = match std::env::var("GRIDSHIFT_TOL_OVERRIDES") {
        Ok(s) => Tolerances::from_env_json(&s)
            .map_err(|e| Error::Parse(format!("GRIDSHIFT_TOL_OVERRIDES: {e}")))?,
        Err(_) => Tolerances::default(),
    };
    if let Some(dt) = sc.dt {
        tol.sim_dt = dt;
    }
    Ok(tol)
}

fn origin_equilibrium(net: &PowerNetwork, tol: &Tolerances) -> Result<EquilibriumPoint> {
    solve_equilibrium(net, &DVector::zeros(net.n_buses()), tol)
}

fn emit(out: &Option<PathBuf>, file: &str, value: &impl Serialize) -> Result<()> {
    let text = format!("{}\n", serde_json::to_string_pretty(value)?);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(file);
            std::fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Certify { scenario, out } => cmd_certify(&scenario, &out),
        Command::Plan { scenario, out } => cmd_plan(&scenario, &out),
        Command::Simulate {
            scenario,
            plan,
            out,
        } => cmd_simulate(&scenario, plan.as_deref(), &out),
        Command::Report { out } => cmd_report(&out),
    }
}

fn cmd_certify(path: &Path, out: &Option<PathBuf>) -> Result<i32> {
    let sc = load_scenario(path)?;
    let tol = tolerances(&sc)?;
    let origin = origin_equilibrium(&sc.net, &tol)?;
    let bf = build_bracket(&sc.net, &origin);
    let (variant, spec) = match sc.fault_node {
        Some(node) => (
            LmiVariant::FaultDependent(node),
            PolytopeSpec::FaultDependent {
                node,
                anchor: origin.angles.clone(),
            },
        ),
        None => (
            LmiVariant::Global,
            PolytopeSpec::uniform(std::f64::consts::FRAC_PI_2),
        ),
    };
    let result = adapt(&bf, variant, &spec, &sc.x0, &tol)?;
    let cert = result.certificate();
    emit(out, "certificate.json", cert)?;
    Ok(if cert.is_certified() { 0 } else { 3 })
}

fn cmd_plan(path: &Path, out: &Option<PathBuf>) -> Result<i32> {
    let sc = load_scenario(path)?;
    let tol = tolerances(&sc)?;
    let origin = origin_equilibrium(&sc.net, &tol)?;
    let plan = plan_remedial(
        &sc.net,
        &sc.x0,
        &origin,
        &sc.controllable_buses,
        &sc.controllable_lines,
        sc.fault_node,
        &sc.planner,
        &tol,
    )?;
    let plan = match plan {
        Some(p) => p,
        None => {
            eprintln!("no remedial plan found for {}", sc.name);
            return Ok(4);
        }
    };
    let artifact = json!({
        "scenario": sc.name,
        "metrics": plan_metrics(&sc, &plan, &tol),
        "plan": plan,
    });
    emit(out, "plan.json", &artifact)?;
    Ok(0)
}

/// Headline numbers for the report: the injection LP objective, the residual
/// distance of the first-stage equilibrium, and the stage susceptances.
fn plan_metrics(sc: &Scenario, plan: &RemedialPlan, tol: &Tolerances) -> Value {
    let lp_objective = if sc.controllable_buses.is_empty() {
        None
    } else {
        design_injection_lp(&sc.net, &sc.controllable_buses, tol)
            .ok()
            .map(|(_, obj)| obj)
    };
    let d1 = plan.stages.first().and_then(|s| {
        matches!(s.actions.first(), Some(PlanAction::ApplyInjections { .. })).then(|| {
            residual_distance(&sc.net, &DVector::from_row_slice(&s.target_angles)).value
        })
    });
    let stage_susceptances: Vec<Value> = plan
        .stages
        .iter()
        .flat_map(|s| s.actions.iter())
        .filter_map(|a| match a {
            PlanAction::ApplySusceptances { lines } => Some(json!(lines)),
            _ => None,
        })
        .collect();
    json!({
        "lp_objective": lp_objective,
        "d1": d1,
        "stage_susceptances": stage_susceptances,
    })
}

fn load_plan(path: &Path) -> Result<RemedialPlan> {
    let text = std::fs::read_to_string(path)?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    // accept both the plan artifact and a bare plan object
    let inner = v.get("plan").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn cmd_simulate(path: &Path, plan_path: Option<&Path>, out: &Option<PathBuf>) -> Result<i32> {
    let sc = load_scenario(path)?;
    let tol = tolerances(&sc)?;
    let origin = origin_equilibrium(&sc.net, &tol)?;

    let (summary, traj) = match plan_path {
        Some(pp) => {
            let plan = load_plan(pp)?;
            let (rep, traj) = verify_plan(&sc.net, &sc.x0, &plan, &origin, sc.horizon, &tol)?;
            (json!({"scenario": sc.name, "mode": "controlled", "report": rep}), traj)
        }
        None => {
            let cfg = SimConfig::new(tol.sim_dt, sc.horizon);
            let traj = simulate(&sc.net, &sc.x0, &cfg)?;
            let mut max_diff: f64 = 0.0;
            for s in &traj.states {
                for e in 0..sc.net.n_lines() {
                    let (k, j) = sc.net.line_endpoints(e);
                    max_diff = max_diff.max((s.angles[k] - s.angles[j]).abs());
                }
            }
            let final_distance = traj
                .states
                .last()
                .map(|s| gridshift_core::dynamics::distance_to(s, &origin))
                .unwrap_or(f64::INFINITY);
            (
                json!({
                    "scenario": sc.name,
                    "mode": "uncontrolled",
                    "max_angle_difference": max_diff,
                    "final_distance": final_distance,
                }),
                traj,
            )
        }
    };

    let mut csv: Vec<u8> = Vec::new();
    if sc.horizon == 0.0 {
        // zero integration steps: emit the header only
        let empty = gridshift_core::dynamics::Trajectory {
            times: vec![],
            states: vec![],
            events: vec![],
            network_tag: traj.network_tag.clone(),
        };
        write_csv(&sc.net, &empty, &mut csv)?;
    } else {
        write_csv(&sc.net, &traj, &mut csv)?;
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("trajectory.csv");
            std::fs::write(&path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => {
            // keep stdout for the summary; the CSV needs --out
        }
    }
    emit(out, "simulation.json", &summary)?;
    Ok(0)
}

fn cmd_report(dir: &Path) -> Result<i32> {
    let read = |name: &str| -> Option<Value> {
        std::fs::read_to_string(dir.join(name))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
    };
    let certificate = read("certificate.json");
    let plan = read("plan.json");
    let simulation = read("simulation.json");
    if certificate.is_none() && plan.is_none() && simulation.is_none() {
        return Err(Error::InvalidInput(format!(
            "no artifacts (certificate.json / plan.json / simulation.json) in {}",
            dir.display()
        )));
    }

    println!("{:<28} {:>16}", "metric", "value");
    let row = |k: &str, v: String| println!("{k:<28} {v:>16}");
    if let Some(c) = &certificate {
        row("certify verdict", compact(&c["verdict"]));
        row("V(x0)", compact(&c["value"]));
        row("vmin", compact(&c["vmin"]));
    }
    if let Some(p) = &plan {
        row("stages", compact(&p["plan"]["stages"].as_array().map(|a| a.len()).into()));
        row("lp objective", compact(&p["metrics"]["lp_objective"]));
        row("d1", compact(&p["metrics"]["d1"]));
        if let Some(stages) = p["metrics"]["stage_susceptances"].as_array() {
            for (i, s) in stages.iter().enumerate() {
                row(&format!("stage B values [{i}]"), compact(s));
            }
        }
    }
    if let Some(s) = &simulation {
        row("sim mode", compact(&s["mode"]));
        if s["mode"] == "controlled" {
            row("final distance", compact(&s["report"]["final_distance"]));
            row("converged at", compact(&s["report"]["converged_at"]));
        } else {
            row("max angle difference", compact(&s["max_angle_difference"]));
        }
    }

    let summary = json!({
        "certificate": certificate,
        "plan": plan,
        "simulation": simulation,
    });
    std::fs::write(
        dir.join("summary.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    println!("wrote {}", dir.join("summary.json").display());
    Ok(0)
}

fn compact(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
