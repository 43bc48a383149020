//! The rank-sorting estimator and its comparison baselines.
//!
//! [`fit_all_units`] runs OLS on each unit's own time series, [`coefficient_path`]
//! evaluates those fits at a sorting point and orders the units, and
//! [`RankedPath::beta_at`] reads off the coefficient vector at rank `τ`.
//! [`within_fe`] and [`canay_feqr`] are the additive fixed-effects baselines.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel_data::PanelDataset;
use crate::qr_solver::{qr_fit, QrProblem};

/// Least-squares fit of one unit's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFit {
    /// Zero-based position of the unit in the dataset.
    pub unit_index: usize,
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Condition number of `X_i'X_i`.
    pub gram_condition: f64,
}

/// Singular values of a `rows × cols` row-major design, largest first.
pub(crate) fn design_singular_values(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(rows, cols, x);
    let r = if rows > cols { m.qr().r() } else { m };
    let mut sv: Vec<f64> = r.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(cols, 0.0);
    sv
}

/// Householder least squares with a rank check; returns `(beta, residuals, gram condition)`.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let (rows, cols) = x.shape();
    if rows < cols {
        return None;
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= smax * (rows.max(cols) as f64) * f64::EPSILON {
        return None;
    }
    let qty = qr.q().tr_mul(y);
    let beta = r.solve_upper_triangular(&qty)?;
    let residuals = y - x * &beta;
    Some((beta, residuals, (smax / smin).powi(2)))
}

/// OLS of `y` (length `T`) on the `T × K` row-major design `x`.
pub fn ts_ols_unit(x: &[f64], y: &[f64], k: usize) -> Result<UnitFit> {
    if k == 0 || x.len() != y.len() * k {
        return Err(Error::Dimension { expected: y.len() * k.max(1), got: x.len() });
    }
    let t = y.len();
    let design = DMatrix::from_row_slice(t, k, x);
    let response = DVector::from_column_slice(y);
    let (beta, residuals, cond) =
        least_squares(&design, &response).ok_or_else(|| Error::SingularDesign { unit: "<unnamed>".into() })?;
    Ok(UnitFit {
        unit_index: 0,
        beta_hat: beta.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        gram_condition: cond,
    })
}

/// TS-OLS for every unit, in unit order. Units are fitted in parallel.
pub fn fit_all_units(d: &PanelDataset) -> Result<Vec<UnitFit>> {
    fit_units_each(d).into_iter().collect()
}

/// Like [`fit_all_units`] but keeps the per-unit outcome instead of stopping at the first failure.
pub fn fit_units_each(d: &PanelDataset) -> Vec<Result<UnitFit>> {
    (0..d.n())
        .into_par_iter()
        .map(|i| {
            ts_ols_unit(d.unit_x(i), d.unit_y(i), d.k())
                .map(|mut fit| {
                    fit.unit_index = i;
                    fit
                })
                .map_err(|e| match e {
                    Error::SingularDesign { .. } => Error::SingularDesign { unit: d.unit_ids()[i].clone() },
                    other => other,
                })
        })
        .collect()
}

/// `x*'β̂_i` for each fit.
pub fn counterfactual_outcomes<'a, I>(fits: I, x_star: &[f64]) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a UnitFit>,
{
    fits.into_iter()
        .map(|f| {
            if f.beta_hat.len() != x_star.len() {
                return Err(Error::Dimension { expected: f.beta_hat.len(), got: x_star.len() });
            }
            Ok(f.beta_hat.iter().zip(x_star).map(|(b, x)| b * x).sum())
        })
        .collect()
}

/// Zero-based indices ordering `values` ascending; ties keep ascending index order.
pub fn rank_permutation(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// `⌈nτ⌉`, clamped to `1..=n`.
///
/// Products within a few ulps of an integer are snapped to it so that decimal
/// ranks such as `τ = 0.1, n = 10` land on plateau `k = nτ` rather than `k + 1`.
pub fn rank_index(n: usize, tau: f64) -> usize {
    let p = n as f64 * tau;
    let nearest = p.round();
    let idx = if (p - nearest).abs() <= 8.0 * f64::EPSILON * p.abs().max(1.0) { nearest } else { p.ceil() };
    (idx as usize).clamp(1, n.max(1))
}

/// Units ordered by their counterfactual outcome at `x_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPath {
    /// `sigma_hat[k]` is the (zero-based) unit holding the `k+1`-th smallest outcome.
    pub sigma_hat: Vec<usize>,
    /// Row `k` is the coefficient vector of unit `sigma_hat[k]`.
    pub sorted_beta: Vec<Vec<f64>>,
    pub x_star: Vec<f64>,
    pub sorted_counterfactual: Vec<f64>,
}

impl RankedPath {
    pub fn n(&self) -> usize {
        self.sigma_hat.len()
    }

    /// `β̂(τ)`: row `⌈nτ⌉` of the sorted coefficients.
    ///
    /// Right-continuous step function, constant on `((k-1)/n, k/n]`.
    pub fn beta_at(&self, tau: f64) -> Result<&[f64]> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("rank tau = {tau} must lie in the open interval (0, 1)")));
        }
        if self.n() == 0 {
            return Err(Error::Domain("path is empty".into()));
        }
        Ok(&self.sorted_beta[rank_index(self.n(), tau) - 1])
    }
}

/// Counterfactual outcomes, sorting permutation and sorted coefficients in one step.
pub fn coefficient_path(fits: &[UnitFit], x_star: &[f64]) -> Result<RankedPath> {
    path_from_refs(fits.iter(), x_star)
}

pub(crate) fn path_from_refs<'a, I>(fits: I, x_star: &[f64]) -> Result<RankedPath>
where
    I: IntoIterator<Item = &'a UnitFit> + Clone,
{
    let betas: Vec<&[f64]> = fits.clone().into_iter().map(|f| f.beta_hat.as_slice()).collect();
    let y_star = counterfactual_outcomes(fits, x_star)?;
    let sigma_hat = rank_permutation(&y_star);
    Ok(RankedPath {
        sorted_beta: sigma_hat.iter().map(|&i| betas[i].to_vec()).collect(),
        sorted_counterfactual: sigma_hat.iter().map(|&i| y_star[i]).collect(),
        sigma_hat,
        x_star: x_star.to_vec(),
    })
}

/// Within (fixed-effects) estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinFit {
    /// Slopes for the non-intercept regressors.
    pub beta_fe: Vec<f64>,
    /// Unit effects `ȳ_i − x̄_i'β_fe`.
    pub alpha_hat: Vec<f64>,
}

fn require_intercept(d: &PanelDataset) -> Result<()> {
    if !d.has_intercept_column() {
        return Err(Error::Schema("estimator requires an intercept column".into()));
    }
    if d.k() < 2 {
        return Err(Error::Schema("estimator requires at least one non-intercept regressor".into()));
    }
    Ok(())
}

/// Pooled OLS on unit-demeaned data.
pub fn within_fe(d: &PanelDataset) -> Result<WithinFit> {
    require_intercept(d)?;
    let (n, t, k) = (d.n(), d.t(), d.k());
    let p = k - 1;
    let mut design = DMatrix::zeros(n * t, p);
    let mut response = DVector::zeros(n * t);
    let mut means = Vec::with_capacity(n);
    for i in 0..n {
        let y_bar = d.unit_y(i).iter().sum::<f64>() / t as f64;
        let x_bar: Vec<f64> = (1..k).map(|j| (0..t).map(|s| d.x_at(i, s, j)).sum::<f64>() / t as f64).collect();
        for s in 0..t {
            let row = i * t + s;
            response[row] = d.y_at(i, s) - y_bar;
            for j in 1..k {
                design[(row, j - 1)] = d.x_at(i, s, j) - x_bar[j - 1];
            }
        }
        means.push((y_bar, x_bar));
    }
    let (mut beta, residuals, _) = least_squares(&design, &response)
        .ok_or_else(|| Error::RankDeficient("demeaned regressors are collinear (time-invariant regressor?)".into()))?;
    // one step of iterative refinement
    if let Some((delta, _, _)) = least_squares(&design, &residuals) {
        beta += delta;
    }
    let beta_fe: Vec<f64> = beta.iter().copied().collect();
    let alpha_hat = means
        .iter()
        .map(|(y_bar, x_bar)| y_bar - x_bar.iter().zip(&beta_fe).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    Ok(WithinFit { beta_fe, alpha_hat })
}

/// Two-step fixed-effects quantile regression at rank `tau`.
///
/// Unit effects come from the within fit; the pooled quantile regression of
/// `Y_it − α̂_i` on `(1, X_it)` then gives the returned non-intercept slopes.
pub fn canay_feqr(d: &PanelDataset, tau: f64) -> Result<Vec<f64>> {
    require_intercept(d)?;
    if d.t() < 2 {
        return Err(Error::Domain("FE-QR needs at least two periods".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau = {tau} must lie in (0, 1)")));
    }
    let fe = within_fe(d)?;
    let (n, t, k) = (d.n(), d.t(), d.k());
    let design = DMatrix::from_row_slice(n * t, k, d.x());
    let response = DVector::from_iterator(
        n * t,
        (0..n).flat_map(|i| {
            let a = fe.alpha_hat[i];
            d.unit_y(i).iter().map(move |y| y - a)
        }),
    );
    let problem = QrProblem::new(design, response, tau)?;
    let sol = qr_fit(&problem)?;
    Ok(sol.coefficients[1..].to_vec())
}

/// Default finite-difference bandwidth `n^{-1/5}`, shrunk so that `τ ± h` stays in `(0.01, 0.99)`.
pub fn default_bandwidth(n: usize, tau: f64) -> f64 {
    let h = (n.max(1) as f64).powf(-0.2);
    h.min(tau - 0.01).min(0.99 - tau)
}

/// Plug-in pointwise variance `τ(1−τ)β'_k(τ)²/n` with a central-difference derivative.
pub fn pointwise_asy_variance(path: &RankedPath, k: usize, tau: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && tau - h > 0.0 && tau + h < 1.0) {
        return Err(Error::Domain(format!("bandwidth {h} puts tau ± h outside (0, 1) at tau = {tau}")));
    }
    let hi = path.beta_at(tau + h)?;
    let lo = path.beta_at(tau - h)?;
    if k >= hi.len() {
        return Err(Error::Dimension { expected: hi.len(), got: k });
    }
    let slope = (hi[k] - lo[k]) / (2.0 * h);
    Ok(tau * (1.0 - tau) * slope * slope / path.n() as f64)
}
