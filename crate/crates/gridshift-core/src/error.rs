use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case file parse error: {0}")]
    Parse(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("network graph is disconnected")]
    Disconnected,

    #[error("injections do not balance (sum = {sum:.6e}) and no slack bus is set")]
    Unbalanced { sum: f64 },

    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("Jacobian singular: equilibrium at stability margin")]
    JacobianSingular,

    #[error("LP: {0}")]
    Lp(String),

    #[error("QCQP: {0}")]
    Qcqp(String),

    #[error("SDP feasibility: no feasible point found within sweep budget")]
    SdpBudgetExhausted,

    #[error("facet solver did not converge: {0}")]
    FacetSolver(String),

    #[error("planner: {0}")]
    Planner(String),

    #[error("simulation state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
