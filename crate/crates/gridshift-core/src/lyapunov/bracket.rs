//! Bracket reformulation of the swing dynamics around an equilibrium:
//! x' = A x - B F(C x) with x = (delta - delta*, omega_gen) and
//! F_e(sigma) = sin(sigma + delta*_e) - sin(delta*_e).

use crate::netmodel::{BusKind, PowerNetwork};
use crate::powerflow::EquilibriumPoint;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BracketForm {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Anchor angle difference per edge, delta*_kj.
    pub dstar: DVector<f64>,
    pub anchor: EquilibriumPoint,
    pub net: PowerNetwork,
}

impl BracketForm {
    pub fn n_buses(&self) -> usize {
        self.net.n_buses()
    }

    pub fn n_gens(&self) -> usize {
        self.net.gen_indices().len()
    }

    pub fn n_state(&self) -> usize {
        self.n_buses() + self.n_gens()
    }

    pub fn n_edges(&self) -> usize {
        self.net.n_lines()
    }

    /// F(sigma) componentwise.
    pub fn f_nonlinearity(&self, sigma: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(sigma.len(), |e, _| {
            (sigma[e] + self.dstar[e]).sin() - self.dstar[e].sin()
        })
    }

    /// x' = Ax - B F(Cx); used by the behavioral agreement test.
    pub fn derivative(&self, x: &DVector<f64>) -> DVector<f64> {
        let sigma = &self.c * x;
        &self.a * x - &self.b * self.f_nonlinearity(&sigma)
    }
}

pub fn build_bracket(net: &PowerNetwork, eq: &EquilibriumPoint) -> BracketForm {
    let n = net.n_buses();
    let gens = net.gen_indices();
    let ng = gens.len();
    let ne = net.n_lines();
    let nx = n + ng;

    let mut a = DMatrix::zeros(nx, nx);
    for (g, &k) in gens.iter().enumerate() {
        let bus = &net.buses[k];
        let m = bus.inertia.expect("generator inertia");
        a[(k, n + g)] = 1.0;
        a[(n + g, n + g)] = -bus.damping / m;
    }

    let mut b = DMatrix::zeros(nx, ne);
    let mut c = DMatrix::zeros(ne, nx);
    let mut dstar = DVector::zeros(ne);
    let gen_pos: Vec<Option<usize>> = (0..n)
        .map(|k| gens.iter().position(|&g| g == k))
        .collect();
    for e in 0..ne {
        let (k, j) = net.line_endpoints(e);
        let w = net.line_weight(e);
        c[(e, k)] = 1.0;
        c[(e, j)] = -1.0;
        dstar[e] = eq.angles[k] - eq.angles[j];
        for (bus, sign) in [(k, 1.0), (j, -1.0)] {
            match net.buses[bus].kind {
                BusKind::Generator => {
                    let g = gen_pos[bus].unwrap();
                    b[(n + g, e)] = sign * w / net.buses[bus].inertia.unwrap();
                }
                BusKind::Load => {
                    b[(bus, e)] = sign * w / net.buses[bus].damping;
                }
            }
        }
    }

    BracketForm {
        a,
        b,
        c,
        dstar,
        anchor: eq.clone(),
        net: net.clone(),
    }
}
