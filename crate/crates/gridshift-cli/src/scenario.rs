//! Scenario files: the case reference, the fault-cleared state, actuator
//! sets, and sim/planner knobs. Bus and line references use the 1-based ids
//! from the case file; everything is converted to positions on load.

use gridshift_core::dynamics::SystemState;
use gridshift_core::netmodel::load_case;
use gridshift_core::planner::PlannerOptions;
use gridshift_core::{Error, PowerNetwork, Result};
use nalgebra::DVector;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Path to the case file, relative to the scenario file.
    pub case: String,
    pub fault_cleared_state: FaultClearedState,
    /// 1-based bus id where the fault widened the angle polytope; absent
    /// means the uniform pi/2 polytope.
    pub fault_node: Option<usize>,
    pub controllable_buses: Vec<usize>,
    /// Pairs of 1-based endpoint ids.
    pub controllable_lines: Vec<(usize, usize)>,
    pub sim: Option<SimSection>,
    pub planner: Option<PlannerSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultClearedState {
    pub angles: Vec<f64>,
    pub velocities: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub decrement: Option<f64>,
    #[serde(default)]
    pub allow_uncertified_first_hop: bool,
    #[serde(default)]
    pub force_sequence: bool,
}

/// Everything resolved to network positions and library types.
pub struct Scenario {
    pub name: String,
    pub net: PowerNetwork,
    pub x0: SystemState,
    pub fault_node: Option<usize>,
    pub controllable_buses: Vec<usize>,
    pub controllable_lines: Vec<usize>,
    pub dt: Option<f64>,
    pub horizon: f64,
    pub planner: PlannerOptions,
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let sf: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let case_path = path
        .parent()
        .map(|d| d.join(&sf.case))
        .filter(|p| p.exists())
        .unwrap_or_else(|| sf.case.clone().into());
    let net = load_case(&std::fs::read_to_string(&case_path).map_err(|e| {
        Error::Parse(format!("case file {}: {e}", case_path.display()))
    })?)?;

    let bus_index = |id: usize| -> Result<usize> {
        net.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown bus id {id}")))
    };
    let line_index = |a: usize, b: usize| -> Result<usize> {
        let (ai, bi) = (bus_index(a)?, bus_index(b)?);
        (0..net.n_lines())
            .find(|&e| {
                let (k, j) = net.line_endpoints(e);
                (k, j) == (ai, bi) || (k, j) == (bi, ai)
            })
            .ok_or_else(|| Error::InvalidInput(format!("no line between buses {a} and {b}")))
    };

    let n = net.n_buses();
    let ng = net.gen_indices().len();
    if sf.fault_cleared_state.angles.len() != n {
        return Err(Error::InvalidInput(format!(
            "fault-cleared state has {} angles for {} buses",
            sf.fault_cleared_state.angles.len(),
            n
        )));
    }
    if sf.fault_cleared_state.velocities.len() != ng {
        return Err(Error::InvalidInput(format!(
            "fault-cleared state has {} velocities for {} generators",
            sf.fault_cleared_state.velocities.len(),
            ng
        )));
    }
    // angles are referenced to the first bus, matching equilibrium output
    let base = sf.fault_cleared_state.angles[0];
    let x0 = SystemState {
        angles: DVector::from_fn(n, |i, _| sf.fault_cleared_state.angles[i] - base),
        velocities: DVector::from_row_slice(&sf.fault_cleared_state.velocities),
    };

    let fault_node = sf.fault_node.map(bus_index).transpose()?;
    let controllable_buses = sf
        .controllable_buses
        .iter()
        .map(|&id| bus_index(id))
        .collect::<Result<Vec<_>>>()?;
    let controllable_lines = sf
        .controllable_lines
        .iter()
        .map(|&(a, b)| line_index(a, b))
        .collect::<Result<Vec<_>>>()?;
    for &e in &controllable_lines {
        if !net.lines[e].controllable {
            let (k, j) = net.line_endpoints(e);
            return Err(Error::InvalidInput(format!(
                "line {}-{} is not controllable in the case file",
                net.buses[k].id, net.buses[j].id
            )));
        }
    }

    let planner_sec = sf.planner.unwrap_or_default();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    Ok(Scenario {
        name,
        net,
        x0,
        fault_node,
        controllable_buses,
        controllable_lines,
        dt: sf.sim.as_ref().and_then(|s| s.dt),
        horizon: sf.sim.as_ref().and_then(|s| s.horizon).unwrap_or(120.0),
        planner: PlannerOptions {
            decrement: planner_sec.decrement,
            allow_uncertified_first_hop: planner_sec.allow_uncertified_first_hop,
            force_sequence: planner_sec.force_sequence,
        },
    })
}
