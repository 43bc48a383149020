//! Linear quantile regression by check-loss minimization.
//!
//! [`qr_fit`] runs in two phases. A majorize-minimize iteratively reweighted
//! least-squares pass with a shrinking smoothing floor brings the coefficients
//! close to the optimum. The `p` observations with the smallest residuals then
//! seed a basic solution (an exact fit through `p` points), and simplex-style
//! pivots along the edges of the polyhedral objective move to an optimal vertex.
//! A vertex is accepted once no edge direction decreases the loss.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::least_squares;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

// The smoothing pass only needs to land near the optimum; pivots finish the job.
const SMOOTHING_ITERATIONS: usize = 60;

#[derive(Debug, Clone)]
pub struct QrProblem {
    design: DMatrix<f64>,
    response: DVector<f64>,
    tau: f64,
    tol: f64,
    max_iter: usize,
}

impl QrProblem {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, tau: f64) -> Result<Self> {
        let (m, p) = design.shape();
        if response.len() != m {
            return Err(Error::Dimension { expected: m, got: response.len() });
        }
        if p == 0 || m < p {
            return Err(Error::Domain(format!("need m >= p >= 1 observations, got m = {m}, p = {p}")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau = {tau} must lie in (0, 1)")));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("quantile regression data must be finite".into()));
        }
        let sv = design.clone().qr().r().singular_values();
        if sv.max() == 0.0 || sv.min() <= sv.max() * (m as f64) * f64::EPSILON {
            return Err(Error::RankDeficient("quantile regression design is not of full column rank".into()));
        }
        Ok(Self { design, response, tau, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER })
    }

    /// Builds a problem from a row-major `m × p` design.
    pub fn from_rows(design: &[f64], p: usize, response: &[f64], tau: f64) -> Result<Self> {
        if p == 0 || design.len() != response.len() * p {
            return Err(Error::Dimension { expected: response.len() * p.max(1), got: design.len() });
        }
        Self::new(DMatrix::from_row_slice(response.len(), p, design), DVector::from_column_slice(response), tau)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter.max(1);
        self
    }

    pub fn m(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }
}

#[inline]
pub fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// `Σ_i ρ_τ(y_i − x_i'b)`.
pub fn check_loss(b: &[f64], prob: &QrProblem) -> f64 {
    let b = DVector::from_column_slice(b);
    let r = &prob.response - &prob.design * b;
    loss_of_residuals(&r, prob.tau)
}

fn loss_of_residuals(r: &DVector<f64>, tau: f64) -> f64 {
    r.iter().map(|&u| rho(u, tau)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    /// Smoothing iterations used.
    pub iterations: usize,
    /// Simplex pivots used.
    pub pivots: usize,
}

pub fn qr_fit(prob: &QrProblem) -> Result<QrSolution> {
    let (b0, iterations) = smoothed_start(prob);
    let r0 = &prob.response - &prob.design * &b0;
    if r0.iter().all(|&u| u == 0.0) {
        return Ok(QrSolution { coefficients: b0.iter().copied().collect(), objective: 0.0, iterations, pivots: 0 });
    }
    let basis = initial_basis(&prob.design, &r0)?;
    let (b, pivots) = simplex_polish(prob, basis)?;
    let r = &prob.response - &prob.design * &b;
    Ok(QrSolution {
        objective: loss_of_residuals(&r, prob.tau),
        coefficients: b.iter().copied().collect(),
        iterations,
        pivots,
    })
}

/// MM iteration: minimizes `Σ r_i²/(2c_i) + (2τ−1) r_i` with `c_i = max(|r_i|, ε)`.
fn smoothed_start(prob: &QrProblem) -> (DVector<f64>, usize) {
    let x = &prob.design;
    let y = &prob.response;
    let (m, p) = x.shape();
    let mut b = match least_squares(x, y) {
        Some((b, _, _)) => b,
        None => DVector::zeros(p),
    };
    let mut r = y - x * &b;
    let scale = r.iter().map(|u| u.abs()).sum::<f64>() / m as f64;
    if scale == 0.0 {
        return (b, 0);
    }
    let floor = scale * 1e-9;
    let mut eps = scale;
    let mut objective = loss_of_residuals(&r, prob.tau);
    let col_sums: DVector<f64> = x.row_sum().transpose();
    let mut used = 0;
    for it in 0..prob.max_iter.min(SMOOTHING_ITERATIONS) {
        used = it + 1;
        let w = DVector::from_iterator(m, r.iter().map(|u| 1.0 / u.abs().max(eps)));
        let mut xw = x.clone();
        for (mut col, _) in xw.column_iter_mut().zip(0..p) {
            col.component_mul_assign(&w);
        }
        let gram = xw.tr_mul(x);
        let rhs = xw.tr_mul(y) + &col_sums * (2.0 * prob.tau - 1.0);
        let Some(next) = gram.cholesky().map(|c| c.solve(&rhs)) else { break };
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let next_r = y - x * &next;
        let next_obj = loss_of_residuals(&next_r, prob.tau);
        let settled = (objective - next_obj).abs() <= prob.tol * objective.max(f64::MIN_POSITIVE);
        if next_obj <= objective {
            b = next;
            r = next_r;
            objective = next_obj;
        }
        if settled && eps <= floor {
            break;
        }
        eps = (eps * 0.3).max(floor);
    }
    (b, used)
}

/// `p` linearly independent rows, preferring small residuals.
fn initial_basis(x: &DMatrix<f64>, r: &DVector<f64>) -> Result<Vec<usize>> {
    let (m, p) = x.shape();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for i in order {
        let row = x.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for q in &ortho {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let vn = v.norm();
        if vn > 1e-8 * norm {
            ortho.push(v / vn);
            basis.push(i);
            if basis.len() == p {
                return Ok(basis);
            }
        }
    }
    Err(Error::RankDeficient("could not find p independent observations".into()))
}

/// Descends along vertex edges until every edge direction is non-decreasing.
fn simplex_polish(prob: &QrProblem, mut basis: Vec<usize>) -> Result<(DVector<f64>, usize)> {
    let x = &prob.design;
    let y = &prob.response;
    let tau = prob.tau;
    let (m, p) = x.shape();
    let y_scale = y.amax().max(1.0);
    let zero_tol = 1e-12 * y_scale;
    let mut in_basis = vec![false; m];
    for &h in &basis {
        in_basis[h] = true;
    }
    let mut best = DVector::zeros(p);
    let mut gap = f64::INFINITY;
    let mut breakpoints: Vec<(f64, f64, usize)> = Vec::with_capacity(m);
    for pivot in 0..prob.max_iter {
        let xb = DMatrix::from_fn(p, p, |a, c| x[(basis[a], c)]);
        let inv = xb.try_inverse().ok_or_else(|| Error::Solver {
            best: best.iter().copied().collect(),
            gap,
            iterations: pivot,
        })?;
        let yb = DVector::from_iterator(p, basis.iter().map(|&h| y[h]));
        let b = &inv * yb;
        let mut r = y - x * &b;
        for &h in &basis {
            r[h] = 0.0;
        }
        best = b.clone();
        // a[(i, j)] = x_i' δ_j where δ_j moves only the residual of basis row j
        let a = x * &inv;

        let mut pick: Option<(usize, f64, f64)> = None;
        for j in 0..p {
            let (mut plus, mut minus, mut mass) = (1.0 - tau, tau, 0.0);
            for i in 0..m {
                if in_basis[i] {
                    continue;
                }
                let aij = a[(i, j)];
                mass += aij.abs();
                let ri = r[i];
                if ri > zero_tol {
                    plus -= tau * aij;
                    minus += tau * aij;
                } else if ri < -zero_tol {
                    plus += (1.0 - tau) * aij;
                    minus -= (1.0 - tau) * aij;
                } else {
                    plus += ((1.0 - tau) * aij).max(-tau * aij);
                    minus += (-(1.0 - tau) * aij).max(tau * aij);
                }
            }
            let tol = 1e-11 * (1.0 + mass);
            for (s, g) in [(1.0, plus), (-1.0, minus)] {
                if g < -tol && pick.is_none_or(|(_, _, gb)| g < gb) {
                    pick = Some((j, s, g));
                }
            }
        }
        let Some((j, s, g)) = pick else {
            return Ok((b, pivot));
        };
        gap = -g;

        breakpoints.clear();
        for i in 0..m {
            if in_basis[i] || r[i].abs() <= zero_tol {
                continue;
            }
            let c = s * a[(i, j)];
            let t = r[i] / c;
            if c != 0.0 && t > 0.0 {
                breakpoints.push((t, c.abs(), i));
            }
        }
        breakpoints.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.2.cmp(&v.2)));
        let mut slope = g;
        let mut entering = None;
        for &(_, w, i) in &breakpoints {
            slope += w;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(i) = entering else {
            return Err(Error::Solver { best: b.iter().copied().collect(), gap, iterations: pivot });
        };
        in_basis[basis[j]] = false;
        in_basis[i] = true;
        basis[j] = i;
    }
    Err(Error::Solver { best: best.iter().copied().collect(), gap, iterations: prob.max_iter })
}
