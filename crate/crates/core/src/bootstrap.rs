//! Cross-sectional bootstrap standard errors for `β̂(τ)`.
//!
//! Units are resampled with replacement as whole `T`-period blocks. The standard
//! error is the interquartile range of the replicate estimates divided by the
//! interquartile range of the standard normal, `2Φ⁻¹(0.75)`.

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{fit_units_each, path_from_refs, UnitFit};
use crate::panel_data::PanelDataset;
use crate::rng::{substream, Stream};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub replications: usize,
    pub taus: Vec<f64>,
    pub coefficient_names: Vec<String>,
    /// `se[q][k]` for `taus[q]` and coefficient `k`.
    pub se: Vec<Vec<f64>>,
    /// Successful replicates in replicate order; each is `|taus| × K`.
    pub replicate_estimates: Vec<Vec<Vec<f64>>>,
    /// Zero-based indices of replicates that hit a singular unit.
    pub failed: Vec<usize>,
    pub seed: u64,
}

impl BootstrapResult {
    /// Writes `tau,coefficient,se,B,seed,failed_replicates`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tau", "coefficient", "se", "B", "seed", "failed_replicates"])?;
        for (q, tau) in self.taus.iter().enumerate() {
            for (k, name) in self.coefficient_names.iter().enumerate() {
                w.write_record([
                    tau.to_string(),
                    name.clone(),
                    self.se[q][k].to_string(),
                    self.replications.to_string(),
                    self.seed.to_string(),
                    self.failed.len().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sample quantile by linear interpolation at position `1 + (B−1)p` of the sorted values.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `z_{0.75} − z_{0.25}` for the standard normal.
pub fn normal_iqr() -> f64 {
    let norm = Normal::standard();
    norm.inverse_cdf(0.75) - norm.inverse_cdf(0.25)
}

/// IQR-rescaled spread of a sample of estimates.
pub fn iqr_se(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    (spread / normal_iqr()).max(0.0)
}

/// Unit indices drawn for replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = substream(seed, Stream::Resample, b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn bootstrap_se(
    d: &PanelDataset,
    taus: &[f64],
    x_star: &[f64],
    replications: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replications < 2 {
        return Err(Error::InvalidConfig("bootstrap needs B >= 2 replications".into()));
    }
    if taus.is_empty() {
        return Err(Error::InvalidConfig("no ranks requested".into()));
    }
    if let Some(tau) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Domain(format!("rank tau = {tau} must lie in (0, 1)")));
    }
    if x_star.len() != d.k() {
        return Err(Error::Dimension { expected: d.k(), got: x_star.len() });
    }
    // A TS-OLS fit depends only on its own unit, so a replicate is a multiset of
    // the original fits.
    let fits: Vec<Option<UnitFit>> = fit_units_each(d).into_iter().map(Result::ok).collect();
    let n = d.n();

    let outcomes: Vec<Option<Vec<Vec<f64>>>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let draw = resample_indices(n, seed, b);
            let sampled: Option<Vec<&UnitFit>> = draw.iter().map(|&i| fits[i].as_ref()).collect();
            let sampled = sampled?;
            let path = path_from_refs(sampled.iter().copied(), x_star).ok()?;
            taus.iter().map(|&tau| path.beta_at(tau).ok().map(<[f64]>::to_vec)).collect()
        })
        .collect();

    let failed: Vec<usize> = outcomes.iter().enumerate().filter(|(_, o)| o.is_none()).map(|(b, _)| b).collect();
    if failed.len() as f64 > MAX_FAILURE_SHARE * replications as f64 {
        return Err(Error::TooManyFailures { failed: failed.len(), total: replications });
    }
    let replicate_estimates: Vec<Vec<Vec<f64>>> = outcomes.into_iter().flatten().collect();
    let se = se_from_replicates(&replicate_estimates, taus.len(), d.k());
    Ok(BootstrapResult {
        replications,
        taus: taus.to_vec(),
        coefficient_names: d.regressor_names().to_vec(),
        se,
        replicate_estimates,
        failed,
        seed,
    })
}

/// Per-`(τ, k)` IQR standard errors from replicate estimates shaped `B × |taus| × K`.
pub fn se_from_replicates(replicates: &[Vec<Vec<f64>>], n_taus: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n_taus)
        .map(|q| {
            (0..k)
                .map(|j| {
                    let values: Vec<f64> = replicates.iter().map(|r| r[q][j]).collect();
                    iqr_se(&values)
                })
                .collect()
        })
        .collect()
}
