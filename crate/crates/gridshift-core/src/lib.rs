//! gridshift-core: structural emergency control for lossless power grids.
//!
//! Pipeline: load a network, simulate post-fault swing dynamics, synthesize
//! fault-dependent convex Lyapunov functions by LMI feasibility, certify
//! attraction of fault-cleared states, and design injection / susceptance
//! plans that walk the grid back to its original operating point through a
//! finite chain of relocated equilibria.

pub mod error;
pub mod tol;

pub mod netmodel;
pub mod powerflow;
pub mod dynamics;
pub mod optim;
pub mod lyapunov;
pub mod planner;

pub use error::{Error, Result};
pub use tol::Tolerances;

pub use netmodel::{Bus, BusKind, Line, PowerNetwork};
pub use powerflow::{EquilibriumPoint, PolytopeSpec};
pub use dynamics::{SimConfig, SystemState, Trajectory};
pub use lyapunov::{BracketForm, Certificate, LyapunovFunction, RegionEstimate, Verdict};
pub use planner::{InjectionPlan, RemedialPlan, SusceptancePlan};
