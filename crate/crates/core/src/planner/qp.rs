//! Primal active-set QP solver.
//!
//! Solves `min ½zᵀHz + cᵀz` subject to sparse equality rows `Ez = e` and inequality
//! rows `Cz ≥ d`. The equality-constrained KKT matrix `K = [H Eᵀ; E 0]` is factored once
//! with a banded LU after ordering unknowns by stage (dense LU when the band is wide); working-set changes are handled
//! through the Schur complement `S = C_W K⁻¹ C_Wᵀ`, which is positive definite whenever
//! `H` is positive definite on the null space of `E` and the working rows are
//! independent there. Every iterate is feasible, so an interrupted solve returns a
//! usable point.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: RowKind,
    /// Stage used to order equality rows inside the KKT band.
    pub stage: usize,
}

impl SparseRow {
    pub fn dot(&self, z: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, a)| a * z[j]).sum()
    }

    fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a * a).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, Default)]
pub struct QpProblem {
    /// Diagonal Hessian blocks `(offset, block)`; blocks may overlap and are summed.
    pub hessian_blocks: Vec<(usize, DMatrix<f64>)>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    pub rows: Vec<SparseRow>,
    pub var_stage: Vec<usize>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_eq(&self) -> usize {
        self.rows.iter().filter(|r| r.kind == RowKind::Eq).count()
    }

    pub fn num_ineq(&self) -> usize {
        self.rows.iter().filter(|r| r.kind == RowKind::Ge).count()
    }

    pub fn hessian_times(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(z.len());
        for (off, b) in &self.hessian_blocks {
            let k = b.nrows();
            let prod = b * z.rows(*off, k);
            let mut view = out.rows_mut(*off, k);
            view += prod;
        }
        out
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.hessian_times(z)) + self.gradient.dot(z) + self.constant
    }

    pub fn dense_hessian(&self) -> DMatrix<f64> {
        let n = self.num_vars();
        let mut h = DMatrix::zeros(n, n);
        for (off, b) in &self.hessian_blocks {
            let k = b.nrows();
            let mut v = h.view_mut((*off, *off), (k, k));
            v += b;
        }
        h
    }

    pub fn max_eq_violation(&self, z: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.kind == RowKind::Eq)
            .map(|r| (r.dot(z.as_slice()) - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Largest inequality violation (0 when all rows hold).
    pub fn max_ineq_violation(&self, z: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.kind == RowKind::Ge)
            .map(|r| (r.rhs - r.dot(z.as_slice())).max(0.0))
            .fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        if self.var_stage.len() != n {
            return Err(Error::dim("variable stages", n, self.var_stage.len()));
        }
        for (off, b) in &self.hessian_blocks {
            if b.nrows() != b.ncols() || off + b.nrows() > n {
                return Err(Error::dim("hessian block", n, off + b.nrows()));
            }
        }
        for r in &self.rows {
            if r.entries.iter().any(|&(j, _)| j >= n) {
                return Err(Error::dim("constraint row", n, r.entries.iter().map(|e| e.0 + 1).max().unwrap_or(0)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QpSettings {
    pub max_iters: usize,
    pub kkt_tol: f64,
    pub deadline: Option<Instant>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iters: 500, kkt_tol: 1e-6, deadline: None }
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stationarity residual plus the magnitude of any negative multiplier.
    pub kkt_residual: f64,
    /// Working set at exit (row indices), in insertion order.
    pub active: Vec<usize>,
    /// Multipliers of the working rows (`≥ 0` at a KKT point).
    pub multipliers: Vec<f64>,
    /// Lower/upper bandwidth of the ordered KKT matrix.
    pub bandwidth: usize,
}

enum Factor {
    Band(BandLu),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// KKT matrix of the equality-constrained problem, ordered and factored.
struct Kkt {
    factor: Factor,
    /// Position in the band ordering of variable `j` (first `n`) and equality row `r`.
    pos: Vec<usize>,
    n: usize,
    eq_rows: Vec<usize>,
    bandwidth: usize,
}

impl Kkt {
    fn build(p: &QpProblem) -> Result<Self> {
        let n = p.num_vars();
        let eq_rows: Vec<usize> = (0..p.rows.len()).filter(|&i| p.rows[i].kind == RowKind::Eq).collect();
        let m = eq_rows.len();
        // order by (stage, variables before rows, index)
        let mut keys: Vec<(usize, usize, usize)> = (0..n).map(|j| (p.var_stage[j], 0, j)).collect();
        keys.extend(eq_rows.iter().enumerate().map(|(k, &r)| (p.rows[r].stage, 1, n + k)));
        keys.sort_unstable();
        let mut pos = vec![0usize; n + m];
        for (ord, &(_, _, u)) in keys.iter().enumerate() {
            pos[u] = ord;
        }

        let mut bw = 0usize;
        for (off, b) in &p.hessian_blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    if b[(i, j)] != 0.0 {
                        bw = bw.max(pos[off + i].abs_diff(pos[off + j]));
                    }
                }
            }
        }
        for (k, &r) in eq_rows.iter().enumerate() {
            for &(j, _) in &p.rows[r].entries {
                bw = bw.max(pos[n + k].abs_diff(pos[j]));
            }
        }

        let dense = 4 * bw >= n + m;
        let mut band = BandMatrix::zeros(if dense { 0 } else { n + m }, bw, bw);
        let mut full = DMatrix::zeros(if dense { n + m } else { 0 }, if dense { n + m } else { 0 });
        let mut put = |i: usize, j: usize, v: f64| {
            if dense {
                full[(i, j)] += v;
            } else {
                band.add(i, j, v);
            }
        };
        for (off, b) in &p.hessian_blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    let v = b[(i, j)];
                    if v != 0.0 {
                        put(pos[off + i], pos[off + j], v);
                    }
                }
            }
        }
        for (k, &r) in eq_rows.iter().enumerate() {
            for &(j, a) in &p.rows[r].entries {
                put(pos[n + k], pos[j], a);
                put(pos[j], pos[n + k], a);
            }
        }
        let factor = if dense {
            let lu = full.lu();
            if !lu.is_invertible() {
                return Err(Error::SolverAbort("singular KKT matrix".into()));
            }
            Factor::Dense(lu)
        } else {
            Factor::Band(band.factor()?)
        };
        Ok(Self { factor, pos, n, eq_rows, bandwidth: bw })
    }

    /// Solves `K [z; y] = [top; bottom]`.
    fn solve(&self, top: &[f64], bottom: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut b = vec![0.0; self.pos.len()];
        for (j, v) in top.iter().enumerate() {
            b[self.pos[j]] = *v;
        }
        for (k, v) in bottom.iter().enumerate() {
            b[self.pos[self.n + k]] = *v;
        }
        match &self.factor {
            Factor::Band(lu) => lu.solve_in_place(&mut b),
            Factor::Dense(lu) => {
                let mut v = DVector::from_vec(b);
                lu.solve_mut(&mut v);
                b = v.data.into();
            }
        }
        let z = (0..self.n).map(|j| b[self.pos[j]]).collect();
        let y = (0..bottom.len()).map(|k| b[self.pos[self.n + k]]).collect();
        (z, y)
    }
}

/// Cholesky factor of the Schur complement, grown one row at a time.
struct SchurChol {
    l: DMatrix<f64>,
}

impl SchurChol {
    fn empty() -> Self {
        Self { l: DMatrix::zeros(0, 0) }
    }

    fn size(&self) -> usize {
        self.l.nrows()
    }

    /// Appends a row/column `(s, diag)`; returns false when the new row is dependent.
    fn append(&mut self, s: &[f64], diag: f64) -> bool {
        let k = self.size();
        let mut l_row = vec![0.0; k];
        for i in 0..k {
            let mut v = s[i];
            for j in 0..i {
                v -= self.l[(i, j)] * l_row[j];
            }
            l_row[i] = v / self.l[(i, i)];
        }
        let d = diag - l_row.iter().map(|v| v * v).sum::<f64>();
        if !(d > 1e-12 * diag.abs().max(1e-300)) {
            return false;
        }
        let mut l = DMatrix::zeros(k + 1, k + 1);
        l.view_mut((0, 0), (k, k)).copy_from(&self.l);
        for (j, v) in l_row.iter().enumerate() {
            l[(k, j)] = *v;
        }
        l[(k, k)] = d.sqrt();
        self.l = l;
        true
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.size();
        let mut x = rhs.to_vec();
        for i in 0..k {
            for j in 0..i {
                x[i] -= self.l[(i, j)] * x[j];
            }
            x[i] /= self.l[(i, i)];
        }
        for i in (0..k).rev() {
            for j in i + 1..k {
                x[i] -= self.l[(j, i)] * x[j];
            }
            x[i] /= self.l[(i, i)];
        }
        x
    }
}

struct WorkingSet<'a> {
    p: &'a QpProblem,
    rows: Vec<usize>,
    /// `K⁻¹[c_i; 0]`, variable and equality parts.
    cols_z: Vec<Vec<f64>>,
    cols_y: Vec<Vec<f64>>,
    chol: SchurChol,
}

impl<'a> WorkingSet<'a> {
    fn add(&mut self, kkt: &Kkt, row: usize) -> bool {
        let mut top = vec![0.0; kkt.n];
        for &(j, a) in &self.p.rows[row].entries {
            top[j] = a;
        }
        let (yz, yy) = kkt.solve(&top, &vec![0.0; kkt.eq_rows.len()]);
        let s: Vec<f64> = self.rows.iter().map(|&r| self.p.rows[r].dot(&yz)).collect();
        let diag = self.p.rows[row].dot(&yz);
        if !self.chol.append(&s, diag) {
            return false;
        }
        self.rows.push(row);
        self.cols_z.push(yz);
        self.cols_y.push(yy);
        true
    }

    fn remove(&mut self, slot: usize) {
        self.rows.remove(slot);
        self.cols_z.remove(slot);
        self.cols_y.remove(slot);
        let mut chol = SchurChol::empty();
        for i in 0..self.rows.len() {
            let s: Vec<f64> = (0..i).map(|j| self.p.rows[self.rows[i]].dot(&self.cols_z[j])).collect();
            let diag = self.p.rows[self.rows[i]].dot(&self.cols_z[i]);
            let ok = chol.append(&s, diag);
            debug_assert!(ok, "subset of an independent working set stays independent");
        }
        self.chol = chol;
    }
}

/// Solves the QP from a feasible starting point.
pub fn solve_qp(p: &QpProblem, start: &DVector<f64>, settings: &QpSettings) -> Result<QpSolution> {
    p.check()?;
    let n = p.num_vars();
    if start.len() != n {
        return Err(Error::dim("QP start", n, start.len()));
    }
    let scale = 1.0 + start.amax();
    let feas_tol = 1e-8 * scale;
    if p.max_eq_violation(start) > feas_tol || p.max_ineq_violation(start) > feas_tol {
        return Err(Error::SolverAbort(format!(
            "infeasible QP start (equality {:.3e}, inequality {:.3e})",
            p.max_eq_violation(start),
            p.max_ineq_violation(start)
        )));
    }

    let kkt = Kkt::build(p)?;
    let eq_rhs: Vec<f64> = kkt.eq_rows.iter().map(|&r| p.rows[r].rhs).collect();
    let neg_c: Vec<f64> = p.gradient.iter().map(|v| -v).collect();
    let (w0z, w0y) = kkt.solve(&neg_c, &eq_rhs);
    let ineq: Vec<usize> = (0..p.rows.len()).filter(|&i| p.rows[i].kind == RowKind::Ge).collect();
    let norms: Vec<f64> = p.rows.iter().map(SparseRow::norm).collect();

    let mut ws = WorkingSet { p, rows: Vec::new(), cols_z: Vec::new(), cols_y: Vec::new(), chol: SchurChol::empty() };
    let mut in_ws = vec![false; p.rows.len()];
    // rows found dependent on the working set; ignored until the working set shrinks
    let mut parked = vec![false; p.rows.len()];
    let mut z: Vec<f64> = start.iter().cloned().collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut mu: Vec<f64> = Vec::new();

    while iterations < settings.max_iters {
        if settings.deadline.is_some_and(|d| Instant::now() >= d) {
            log::debug!("QP deadline reached after {iterations} iterations");
            break;
        }
        iterations += 1;
        let rhs: Vec<f64> = ws.rows.iter().map(|&r| p.rows[r].dot(&w0z) - p.rows[r].rhs).collect();
        mu = ws.chol.solve(&rhs);
        let mut zstar = w0z.clone();
        for (col, &m) in ws.cols_z.iter().zip(&mu) {
            if m != 0.0 {
                for (zi, ci) in zstar.iter_mut().zip(col) {
                    *zi -= m * ci;
                }
            }
        }
        let step: Vec<f64> = zstar.iter().zip(&z).map(|(a, b)| a - b).collect();
        let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        if step_norm <= 1e-11 * scale {
            // at the subspace minimizer: inspect multipliers (λ = −μ)
            let mut worst: Option<(usize, f64)> = None;
            for (slot, &m) in mu.iter().enumerate() {
                let lam = -m;
                if lam < -settings.kkt_tol * 1e-2 && worst.is_none_or(|(_, w)| lam < w) {
                    worst = Some((slot, lam));
                }
            }
            match worst {
                None => {
                    z = zstar;
                    converged = true;
                    break;
                }
                Some((slot, _)) => {
                    in_ws[ws.rows[slot]] = false;
                    ws.remove(slot);
                    parked.iter_mut().for_each(|b| *b = false);
                    continue;
                }
            }
        }

        // ratio test; ties go to the lowest row index
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &ineq {
            if in_ws[i] || parked[i] {
                continue;
            }
            let row = &p.rows[i];
            let ap = row.dot(&step);
            if ap >= -1e-14 * norms[i] * step_norm {
                continue;
            }
            let slack = (row.dot(&z) - row.rhs).max(0.0);
            let a = slack / -ap;
            if a < alpha {
                alpha = a;
                blocking = Some(i);
            }
        }
        if let Some(i) = blocking {
            for (zi, si) in z.iter_mut().zip(&step) {
                *zi += alpha * si;
            }
            if ws.add(&kkt, i) {
                in_ws[i] = true;
            } else {
                log::debug!("QP row {i} is dependent on the working set");
                parked[i] = true;
            }
        } else {
            z = zstar;
        }
    }

    let zv = DVector::from_vec(z);
    // stationarity residual Hz + c + Eᵀy + C_Wᵀμ
    let mut y = w0y.clone();
    for (col, &m) in ws.cols_y.iter().zip(&mu) {
        for (yi, ci) in y.iter_mut().zip(col) {
            *yi -= m * ci;
        }
    }
    let mut grad = p.hessian_times(&zv) + &p.gradient;
    for (k, &r) in kkt.eq_rows.iter().enumerate() {
        for &(j, a) in &p.rows[r].entries {
            grad[j] += a * y[k];
        }
    }
    let mu_full = if mu.len() == ws.rows.len() { mu.clone() } else { vec![0.0; ws.rows.len()] };
    for (&r, &m) in ws.rows.iter().zip(&mu_full) {
        for &(j, a) in &p.rows[r].entries {
            grad[j] += a * m;
        }
    }
    let dual_violation = mu_full.iter().map(|m| m.max(0.0)).fold(0.0, f64::max);
    let kkt_residual = grad.amax() + dual_violation;
    let grad_scale = 1.0 + p.gradient.amax();
    let converged = converged && kkt_residual <= settings.kkt_tol * grad_scale && p.max_ineq_violation(&zv) <= 1e-6 * scale;

    Ok(QpSolution {
        objective: p.objective(&zv),
        z: zv,
        iterations,
        converged,
        kkt_residual,
        active: ws.rows.clone(),
        multipliers: mu_full.iter().map(|m| -m).collect(),
        bandwidth: kkt.bandwidth,
    })
}
