//! Network data model: case-file ingestion and graph algebra (weighted
//! Laplacian, pseudoinverse, edge infinity norm).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage magnitude, per unit.
    pub voltage: f64,
    /// Dimensionless inertia; generators only.
    pub inertia: Option<f64>,
    /// Damping coefficient, > 0 for every bus.
    pub damping: f64,
    /// Net injection: P_m for generators, minus the static load for load buses.
    pub injection: f64,
}

#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance, per unit, >= 0.
    pub susceptance: f64,
    pub controllable: bool,
    /// [B_min, B_max]; present exactly when controllable.
    pub susceptance_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PowerNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

// ---- case-file schema (external interface; unknown fields rejected) ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    buses: Vec<CaseBus>,
    lines: Vec<CaseLine>,
    slack_bus: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseBus {
    id: usize,
    kind: String,
    #[serde(rename = "V")]
    v: f64,
    m: Option<f64>,
    d: f64,
    #[serde(rename = "P")]
    p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseLine {
    from: usize,
    to: usize,
    #[serde(rename = "B")]
    b: f64,
    controllable: bool,
    #[serde(rename = "B_min")]
    b_min: Option<f64>,
    #[serde(rename = "B_max")]
    b_max: Option<f64>,
}

const BALANCE_TOL: f64 = 1e-9;

/// Parse and validate a case file. Parallel lines between the same bus pair
/// are merged by summing susceptances (double-circuit convention); an injection
/// imbalance is absorbed at `slack_bus` when set, otherwise rejected.
pub fn load_case(text: &str) -> Result<PowerNetwork> {
    let cf: CaseFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let mut buses = Vec::with_capacity(cf.buses.len());
    for b in &cf.buses {
        let kind = match b.kind.as_str() {
            "gen" => BusKind::Generator,
            "load" => BusKind::Load,
            other => return Err(Error::Parse(format!("unknown bus kind {other:?}"))),
        };
        if kind == BusKind::Generator && b.m.unwrap_or(0.0) <= 0.0 {
            return Err(Error::InvalidNetwork(format!(
                "generator bus {} needs inertia m > 0",
                b.id
            )));
        }
        if b.d <= 0.0 {
            return Err(Error::InvalidNetwork(format!("bus {} has damping d <= 0", b.id)));
        }
        if b.v <= 0.0 {
            return Err(Error::InvalidNetwork(format!("bus {} has voltage V <= 0", b.id)));
        }
        buses.push(Bus {
            id: b.id,
            kind,
            voltage: b.v,
            inertia: if kind == BusKind::Generator { b.m } else { None },
            damping: b.d,
            injection: b.p,
        });
    }

    // duplicate bus ids
    let mut ids: Vec<usize> = buses.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != buses.len() {
        return Err(Error::InvalidNetwork("duplicate bus id".into()));
    }

    let idx_of = |id: usize| buses.iter().position(|b| b.id == id);

    // merge parallel circuits; controllable lines may not be duplicated
    let mut lines: Vec<Line> = Vec::new();
    for l in &cf.lines {
        if l.from == l.to {
            return Err(Error::InvalidNetwork(format!("self-loop at bus {}", l.from)));
        }
        if idx_of(l.from).is_none() || idx_of(l.to).is_none() {
            return Err(Error::InvalidNetwork(format!(
                "line {}-{} references a missing bus",
                l.from, l.to
            )));
        }
        if l.b < 0.0 {
            return Err(Error::InvalidNetwork(format!(
                "line {}-{} has negative susceptance",
                l.from, l.to
            )));
        }
        let bounds = if l.controllable {
            let (lo, hi) = match (l.b_min, l.b_max) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "controllable line {}-{} needs B_min and B_max",
                        l.from, l.to
                    )))
                }
            };
            if lo < 0.0 || l.b < lo || l.b > hi {
                return Err(Error::InvalidNetwork(format!(
                    "line {}-{}: need 0 <= B_min <= B <= B_max",
                    l.from, l.to
                )));
            }
            Some((lo, hi))
        } else {
            None
        };

        if let Some(existing) = lines
            .iter_mut()
            .find(|e| (e.from, e.to) == (l.from, l.to) || (e.from, e.to) == (l.to, l.from))
        {
            if existing.controllable || l.controllable {
                return Err(Error::InvalidNetwork(format!(
                    "parallel circuits on controllable line {}-{}",
                    l.from, l.to
                )));
            }
            existing.susceptance += l.b;
        } else {
            lines.push(Line {
                from: l.from,
                to: l.to,
                susceptance: l.b,
                controllable: l.controllable,
                susceptance_bounds: bounds,
            });
        }
    }

    let mut net = PowerNetwork { buses, lines };

    if !net.is_connected() {
        return Err(Error::Disconnected);
    }

    let sum: f64 = net.buses.iter().map(|b| b.injection).sum();
    if sum.abs() > BALANCE_TOL {
        match cf.slack_bus {
            Some(id) => {
                let i = net
                    .bus_index(id)
                    .ok_or_else(|| Error::InvalidNetwork(format!("slack bus {id} not found")))?;
                net.buses[i].injection -= sum;
            }
            None => return Err(Error::Unbalanced { sum }),
        }
    }

    Ok(net)
}

impl PowerNetwork {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Positions of generator buses in bus order.
    pub fn gen_indices(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Generator)
            .map(|(i, _)| i)
            .collect()
    }

    /// Line endpoints as bus *positions* (not ids).
    pub fn line_endpoints(&self, e: usize) -> (usize, usize) {
        let l = &self.lines[e];
        (
            self.bus_index(l.from).expect("validated"),
            self.bus_index(l.to).expect("validated"),
        )
    }

    /// Edge weight a_kj = V_k V_j B_kj.
    pub fn line_weight(&self, e: usize) -> f64 {
        let (k, j) = self.line_endpoints(e);
        self.buses[k].voltage * self.buses[j].voltage * self.lines[e].susceptance
    }

    /// All edge weights in line order.
    pub fn line_weights(&self) -> Vec<f64> {
        (0..self.lines.len()).map(|e| self.line_weight(e)).collect()
    }

    pub fn injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.injection))
    }

    /// Copy of the network with susceptances replaced on the given lines.
    pub fn with_susceptances(&self, changes: &[(usize, f64)]) -> PowerNetwork {
        let mut net = self.clone();
        for &(e, b) in changes {
            net.lines[e].susceptance = b;
        }
        net
    }

    /// Copy of the network with per-bus injections replaced wholesale.
    pub fn with_injections(&self, p: &DVector<f64>) -> PowerNetwork {
        let mut net = self.clone();
        for (b, pi) in net.buses.iter_mut().zip(p.iter()) {
            b.injection = *pi;
        }
        net
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for e in 0..self.lines.len() {
                let (a, b) = self.line_endpoints(e);
                let other = if a == k {
                    b
                } else if b == k {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Weighted Laplacian with weights a_kj = V_k V_j B_kj.
pub fn weighted_laplacian(net: &PowerNetwork) -> DMatrix<f64> {
    let n = net.n_buses();
    let mut l = DMatrix::zeros(n, n);
    for e in 0..net.n_lines() {
        let (k, j) = net.line_endpoints(e);
        let a = net.line_weight(e);
        l[(k, k)] += a;
        l[(j, j)] += a;
        l[(k, j)] -= a;
        l[(j, k)] -= a;
    }
    l
}

/// Moore-Penrose pseudoinverse of a symmetric matrix by eigendecomposition.
/// Eigenvalues below `cutoff_rel * lambda_max` are treated as the zero mode;
/// more than one zero mode means the graph is disconnected.
pub fn pseudoinverse(l: &DMatrix<f64>, cutoff_rel: f64) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    let eig = l.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = cutoff_rel * lmax.max(1e-300);
    let n_zero = eig.eigenvalues.iter().filter(|&&w| w.abs() <= cutoff).count();
    if n_zero > 1 {
        return Err(Error::Disconnected);
    }
    let mut inv = DMatrix::zeros(n, n);
    for (i, &w) in eig.eigenvalues.iter().enumerate() {
        if w.abs() > cutoff {
            let u = eig.eigenvectors.column(i);
            inv += u * u.transpose() / w;
        }
    }
    Ok(inv)
}

/// max over lines |(L^+ p)_k - (L^+ p)_j|.
pub fn edge_infnorm(net: &PowerNetwork, l_pinv: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    let x = l_pinv * p;
    (0..net.n_lines())
        .map(|e| {
            let (k, j) = net.line_endpoints(e);
            (x[k] - x[j]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_text() -> &'static str {
        r#"{
          "buses": [
            {"id": 1, "kind": "gen",  "V": 1.0, "m": 1.0, "d": 1.0, "P": 1.0},
            {"id": 2, "kind": "load", "V": 1.0, "m": null, "d": 1.0, "P": -1.0}
          ],
          "lines": [
            {"from": 1, "to": 2, "B": 2.0, "controllable": false, "B_min": null, "B_max": null}
          ],
          "slack_bus": null
        }"#
    }

    #[test]
    fn two_bus_loads() {
        let net = load_case(two_bus_text()).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_lines(), 1);
        let l = weighted_laplacian(&net);
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], -2.0);
    }

    #[test]
    fn unknown_field_rejected() {
        let text = two_bus_text().replace("\"slack_bus\": null", "\"slack_bus\": null, \"extra\": 1");
        assert!(matches!(load_case(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn imbalance_needs_slack() {
        let text = two_bus_text().replace("\"P\": -1.0", "\"P\": -0.8");
        assert!(matches!(load_case(&text), Err(Error::Unbalanced { .. })));
        let text = text.replace("\"slack_bus\": null", "\"slack_bus\": 2");
        let net = load_case(&text).unwrap();
        let sum: f64 = net.buses.iter().map(|b| b.injection).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn parallel_circuits_summed() {
        let text = two_bus_text().replace(
            "{\"from\": 1, \"to\": 2, \"B\": 2.0, \"controllable\": false, \"B_min\": null, \"B_max\": null}",
            "{\"from\": 1, \"to\": 2, \"B\": 2.0, \"controllable\": false, \"B_min\": null, \"B_max\": null},
             {\"from\": 2, \"to\": 1, \"B\": 0.5, \"controllable\": false, \"B_min\": null, \"B_max\": null}",
        );
        let net = load_case(&text).unwrap();
        assert_eq!(net.n_lines(), 1);
        assert_eq!(net.lines[0].susceptance, 2.5);
    }

    #[test]
    fn pinv_two_bus_closed_form() {
        let net = load_case(two_bus_text()).unwrap();
        let l = weighted_laplacian(&net);
        let li = pseudoinverse(&l, 1e-8).unwrap();
        // nonzero eigenvalue 4, eigenvector (1,-1)/sqrt(2) -> entries +-1/8
        assert!((li[(0, 0)] - 0.125).abs() < 1e-12);
        assert!((li[(0, 1)] + 0.125).abs() < 1e-12);
    }

    #[test]
    fn pinv_1x1_zero() {
        let l = DMatrix::from_element(1, 1, 0.0);
        let li = pseudoinverse(&l, 1e-8).unwrap();
        assert_eq!(li[(0, 0)], 0.0);
    }
}
