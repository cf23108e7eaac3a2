//! SDP feasibility by alternating projections with Dykstra correction.
//!
//! The feasible sets here (LMI families over a handful of matrix variables)
//! tend to intersect tangentially, so plain POCS crawls. Three devices make
//! the sweep budget workable:
//!  * a presolve pins structurally-zero block rows to zero via affine
//!    equalities, so the cone projections only act on the active principal
//!    submatrix;
//!  * the cone / nonnegativity / cut projections aim a small depth *inside*
//!    their sets, giving the affine projection a cushion to land in;
//!  * success is decided by an eigenvalue audit of a rounded candidate
//!    (nonnegative variables clamped up to zero), run every 50 sweeps and
//!    entirely separate from the projection loop.
//!
//! Budget exhaustion means "no point found", never an infeasibility proof.

use crate::tol::Tolerances;
use nalgebra::{DMatrix, DVector};

/// Depth of the cone projection past the boundary.
const DEPTH: f64 = 3e-3;
/// Clamp level for nonnegative variables during projection.
const DEPTH_NONNEG: f64 = 2e-3;
/// Slack pushed into linear cuts during projection.
const DEPTH_CUT: f64 = 3e-3;
const AUDIT_EVERY: usize = 50;

/// An affine matrix block: mat(v) = reshape(map * v, dim x dim) + offset,
/// required PSD (sign = +1) or NSD (sign = -1) with margin eps_psd.
#[derive(Debug, Clone)]
pub struct MatrixBlock {
    /// dim*dim rows by n_vars columns, row-major ravel of the block.
    pub map: DMatrix<f64>,
    pub offset: DMatrix<f64>,
    pub dim: usize,
    pub sign: f64,
}

impl MatrixBlock {
    pub fn eval(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let flat = &self.map * v;
        let mut m = self.offset.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] += flat[i * self.dim + j];
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct SdpFeasibility {
    pub n_vars: usize,
    pub blocks: Vec<MatrixBlock>,
    /// Variable indices required nonnegative (diagonal-matrix variables).
    pub nonneg: Vec<usize>,
    /// a'v = b rows (normalizations).
    pub equalities: Vec<(DVector<f64>, f64)>,
    /// a'v <= b rows (adaptation cuts).
    pub cuts: Vec<(DVector<f64>, f64)>,
    pub warm_start: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct SdpOutcome {
    pub v: DVector<f64>,
    pub sweeps: usize,
}

struct Presolved {
    /// Active row indices per block (structurally-nonzero diagonal).
    active: Vec<Vec<usize>>,
    /// Deduplicated equality system E v = f.
    e: DMatrix<f64>,
    f: DVector<f64>,
}

fn presolve(p: &SdpFeasibility) -> Presolved {
    let nv = p.n_vars;
    let mut rows: Vec<(DVector<f64>, f64)> = p.equalities.clone();
    let mut active = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let dim = b.dim;
        let mut act = Vec::new();
        for i in 0..dim {
            let diag_row = b.map.row(i * dim + i);
            let structurally_zero =
                diag_row.iter().all(|&x| x == 0.0) && b.offset[(i, i)] == 0.0;
            if structurally_zero {
                // a zero diagonal in a semidefinite matrix forces the row to zero
                for j in 0..dim {
                    let r = b.map.row(i * dim + j);
                    if r.iter().any(|&x| x != 0.0) {
                        rows.push((r.transpose().into_owned(), -b.offset[(i, j)]));
                    }
                }
            } else {
                act.push(i);
            }
        }
        active.push(act);
    }
    // modified Gram-Schmidt dedupe
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep: Vec<(DVector<f64>, f64)> = Vec::new();
    for (row, rhs) in rows {
        let mut r = row.clone();
        for b in &basis {
            let c = b.dot(&row);
            r -= b * c;
        }
        let nr = r.norm();
        if nr > 1e-10 * row.norm().max(1.0) {
            basis.push(&r / nr);
            keep.push((row, rhs));
        }
    }
    let ne = keep.len();
    let mut e = DMatrix::zeros(ne, nv);
    let mut f = DVector::zeros(ne);
    for (i, (row, rhs)) in keep.into_iter().enumerate() {
        e.row_mut(i).copy_from(&row.transpose());
        f[i] = rhs;
    }
    Presolved { active, e, f }
}

/// Verify a candidate independently of the projection loop. Returns the
/// rounded variable vector on success.
pub fn audit(p: &SdpFeasibility, v: &DVector<f64>, eps_psd: f64) -> Option<DVector<f64>> {
    let mut r = v.clone();
    for &i in &p.nonneg {
        r[i] = r[i].max(0.0);
    }
    for b in &p.blocks {
        let m = b.eval(&r);
        let sym = (&m + m.transpose()) * 0.5;
        let full = sym.clone().symmetric_eigenvalues();
        let (fmin, fmax) = (full.min(), full.max());
        if b.sign < 0.0 && fmax > 1e-10 {
            return None;
        }
        if b.sign > 0.0 && fmin < -1e-10 {
            return None;
        }
        // strict margin on the active submatrix
        let act: Vec<usize> = (0..b.dim)
            .filter(|&i| {
                b.map.row(i * b.dim + i).iter().any(|&x| x != 0.0) || b.offset[(i, i)] != 0.0
            })
            .collect();
        if act.is_empty() {
            continue;
        }
        let mut sub = DMatrix::zeros(act.len(), act.len());
        for (a, &i) in act.iter().enumerate() {
            for (c, &j) in act.iter().enumerate() {
                sub[(a, c)] = sym[(i, j)];
            }
        }
        let ev = sub.symmetric_eigenvalues();
        if b.sign < 0.0 && ev.max() > -eps_psd / 2.0 {
            return None;
        }
        if b.sign > 0.0 && ev.min() < eps_psd / 2.0 {
            return None;
        }
    }
    for (a, bnd) in &p.cuts {
        if a.dot(&r) - bnd > 1e-6 {
            return None;
        }
    }
    for (a, bnd) in &p.equalities {
        if (a.dot(&r) - bnd).abs() > 1e-6 {
            return None;
        }
    }
    Some(r)
}

pub fn solve_sdp_feasibility(p: &SdpFeasibility, tol: &Tolerances) -> Option<SdpOutcome> {
    let nv = p.n_vars;
    let pre = presolve(p);
    let neq = pre.e.nrows();
    let nc = p.cuts.len();

    // KKT system for the metric projection onto {E v = f} in the lifted
    // (v, Y_blocks, s_cuts) space: G = I + sum F'F + C'C.
    let mut g = DMatrix::identity(nv, nv);
    for b in &p.blocks {
        g += b.map.transpose() * &b.map;
    }
    let mut cmat = DMatrix::zeros(nc, nv);
    for (i, (a, _)) in p.cuts.iter().enumerate() {
        cmat.row_mut(i).copy_from(&a.transpose());
    }
    if nc > 0 {
        g += cmat.transpose() * &cmat;
    }
    let dim = nv + neq;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&g);
    if neq > 0 {
        kkt.view_mut((nv, 0), (neq, nv)).copy_from(&pre.e);
        kkt.view_mut((0, nv), (nv, neq)).copy_from(&pre.e.transpose());
    }
    let kkt_lu = kkt.lu();

    let mut v = match &p.warm_start {
        Some(w) => w.clone(),
        None => DVector::zeros(nv),
    };
    let mut y: Vec<DMatrix<f64>> = p.blocks.iter().map(|b| b.eval(&v)).collect();
    let mut s = DVector::from_fn(nc, |i, _| p.cuts[i].0.dot(&v));
    let mut pv = DVector::zeros(nv);
    let mut py: Vec<DMatrix<f64>> = y.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
    let mut ps = DVector::zeros(nc);

    for it in 0..tol.sdp_budget {
        // --- projection onto the product of cones, with Dykstra memory
        let vq = &v + &pv;
        let yq: Vec<DMatrix<f64>> = y.iter().zip(py.iter()).map(|(a, b)| a + b).collect();
        let sq = &s + &ps;

        let mut v2 = vq.clone();
        for &i in &p.nonneg {
            v2[i] = v2[i].max(DEPTH_NONNEG);
        }
        let mut y2 = Vec::with_capacity(yq.len());
        for ((b, act), m) in p.blocks.iter().zip(pre.active.iter()).zip(yq.iter()) {
            let sym = (m + m.transpose()) * 0.5;
            let na = act.len();
            let mut sub = DMatrix::zeros(na, na);
            for (a, &i) in act.iter().enumerate() {
                for (c, &j) in act.iter().enumerate() {
                    sub[(a, c)] = sym[(i, j)];
                }
            }
            let eig = sub.symmetric_eigen();
            let mut w = eig.eigenvalues.clone();
            for x in w.iter_mut() {
                *x = if b.sign < 0.0 {
                    x.min(-DEPTH)
                } else {
                    x.max(DEPTH)
                };
            }
            let proj_sub = &eig.eigenvectors * DMatrix::from_diagonal(&w) * eig.eigenvectors.transpose();
            let mut out = DMatrix::zeros(b.dim, b.dim);
            for (a, &i) in act.iter().enumerate() {
                for (c, &j) in act.iter().enumerate() {
                    out[(i, j)] = proj_sub[(a, c)];
                }
            }
            y2.push(out);
        }
        let mut s2 = sq.clone();
        for i in 0..nc {
            s2[i] = s2[i].min(p.cuts[i].1 - DEPTH_CUT);
        }

        pv = &vq - &v2;
        py = yq.iter().zip(y2.iter()).map(|(a, b)| a - b).collect();
        ps = &sq - &s2;

        // --- projection onto the affine set (consistency + equalities)
        let mut rhs_top = v2.clone();
        for (b, m) in p.blocks.iter().zip(y2.iter()) {
            let mut flat = DVector::zeros(b.dim * b.dim);
            for i in 0..b.dim {
                for j in 0..b.dim {
                    flat[i * b.dim + j] = m[(i, j)] - b.offset[(i, j)];
                }
            }
            rhs_top += b.map.transpose() * flat;
        }
        if nc > 0 {
            rhs_top += cmat.transpose() * &s2;
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nv).copy_from(&rhs_top);
        if neq > 0 {
            rhs.rows_mut(nv, neq).copy_from(&pre.f);
        }
        let sol = kkt_lu.solve(&rhs)?;
        v = sol.rows(0, nv).into_owned();
        y = p.blocks.iter().map(|b| b.eval(&v)).collect();
        s = DVector::from_fn(nc, |i, _| p.cuts[i].0.dot(&v));

        if it % AUDIT_EVERY == AUDIT_EVERY - 1 || it == tol.sdp_budget - 1 {
            if let Some(r) = audit(p, &v, tol.eps_psd) {
                return Some(SdpOutcome { v: r, sweeps: it + 1 });
            }
        }
    }
    None
}
