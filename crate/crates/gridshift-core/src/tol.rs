//! Central tolerance configuration. Every solver gate lives here so tests and
//! the CLI (via `GRIDSHIFT_TOL_OVERRIDES`) can tighten or relax them in one place.

use serde::Deserialize;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Newton power-flow residual gate (max-norm of the mismatch).
    pub newton_residual: f64,
    /// Newton iteration cap.
    pub newton_max_iter: usize,
    /// Step-halving cap for the damped Newton line search.
    pub newton_max_halvings: usize,
    /// LP KKT residual / duality gap gate.
    pub lp_kkt: f64,
    /// QCQP gradient-of-Lagrangian gate.
    pub qcqp_grad: f64,
    /// QCQP constraint violation gate.
    pub qcqp_feas: f64,
    /// Strictness margin for LMI blocks (audit requires margin >= eps_psd/2).
    pub eps_psd: f64,
    /// Alternating-projection sweep budget.
    pub sdp_budget: usize,
    /// Pseudoinverse zero-eigenvalue cutoff, relative to the largest eigenvalue.
    pub pinv_cutoff_rel: f64,
    /// Default integration step (seconds).
    pub sim_dt: f64,
    /// Convergence detection: angle-distance threshold (radians).
    pub conv_tol: f64,
    /// Convergence detection: dwell window (seconds).
    pub conv_dwell: f64,
    /// Adaptation: initial cut slack epsilon_0.
    pub adapt_eps0: f64,
    /// Adaptation: epsilon is halved on stall down to eps0 / 2^adapt_halvings.
    pub adapt_halvings: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            newton_residual: 1e-8,
            newton_max_iter: 50,
            newton_max_halvings: 10,
            lp_kkt: 1e-8,
            qcqp_grad: 1e-7,
            qcqp_feas: 1e-9,
            eps_psd: 1e-6,
            sdp_budget: 5000,
            pinv_cutoff_rel: 1e-8,
            sim_dt: 1e-3,
            conv_tol: 0.05,
            conv_dwell: 1.0,
            adapt_eps0: 1.0,
            adapt_halvings: 10,
        }
    }
}

/// Partial override set, deserialized from JSON (e.g. the CLI env var).
/// Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolOverrides {
    pub newton_residual: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub lp_kkt: Option<f64>,
    pub qcqp_grad: Option<f64>,
    pub qcqp_feas: Option<f64>,
    pub eps_psd: Option<f64>,
    pub sdp_budget: Option<usize>,
    pub sim_dt: Option<f64>,
    pub conv_tol: Option<f64>,
    pub conv_dwell: Option<f64>,
    pub adapt_eps0: Option<f64>,
}

impl Tolerances {
    pub fn with_overrides(mut self, ov: &TolOverrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = ov.$f { self.$f = v; } )* };
        }
        take!(
            newton_residual,
            newton_max_iter,
            lp_kkt,
            qcqp_grad,
            qcqp_feas,
            eps_psd,
            sdp_budget,
            sim_dt,
            conv_tol,
            conv_dwell,
            adapt_eps0
        );
        self
    }

    pub fn from_env_json(json: &str) -> Result<Self, serde_json::Error> {
        let ov: TolOverrides = serde_json::from_str(json)?;
        Ok(Tolerances::default().with_overrides(&ov))
    }
}
