//! Seeded Monte Carlo experiments and the theory probes.
//!
//! Replicate `r` of grid entry `s` draws its panel with seed
//! `derive_seed(&[cfg.seed, s, r])`, so every replicate is independent of
//! scheduling. Errors are reduced in replicate order with compensated sums,
//! which makes [`run_mc`] bitwise reproducible for any thread count.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{self, DgpSpec, DrawTruth, Family, FE_SLOPE_TARGET};
use crate::error::{Error, Result};
use crate::estimators::{canay_feqr, coefficient_path, fit_all_units, rank_permutation, within_fe};
use crate::panel_data::{column_means, PanelDataset};
use crate::rng::{derive_seed, substream, Stream};
use crate::sum::CompensatedSum;

/// Share of failed replicates above which a cell is flagged invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Rank-sorting estimator.
    Nafe,
    /// Two-step fixed-effects quantile regression.
    Feqr,
    /// Within estimator.
    Fe,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Nafe => "nafe",
            Estimator::Feqr => "feqr",
            Estimator::Fe => "fe",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nafe" => Ok(Estimator::Nafe),
            "feqr" => Ok(Estimator::Feqr),
            "fe" => Ok(Estimator::Fe),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}` (expected nafe, feqr or fe)"))),
        }
    }
}

/// How the sorting point is chosen for each dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum XStarRule {
    /// Pooled column means of the regressors.
    Mean,
    Fixed(Vec<f64>),
}

impl XStarRule {
    pub fn resolve(&self, d: &PanelDataset) -> Result<Vec<f64>> {
        match self {
            XStarRule::Mean => Ok(column_means(d)),
            XStarRule::Fixed(v) if v.len() == d.k() => Ok(v.clone()),
            XStarRule::Fixed(v) => Err(Error::Dimension { expected: d.k(), got: v.len() }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            XStarRule::Mean => "mean".into(),
            XStarRule::Fixed(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub spec_grid: Vec<DgpSpec>,
    pub estimators: Vec<Estimator>,
    pub taus: Vec<f64>,
    /// Sorting points for the rank-sorting estimator; every rule sees the same draws.
    pub x_star_rules: Vec<XStarRule>,
    pub reps: usize,
    pub seed: u64,
    /// Grid entries with `n·T` above this are skipped.
    pub cell_budget: Option<usize>,
}

impl McConfig {
    pub fn check(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.spec_grid.is_empty() {
            return Err(Error::InvalidConfig("empty DGP grid".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators selected".into()));
        }
        if let Some(tau) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidConfig(format!("tau = {tau} must lie in (0, 1)")));
        }
        let needs_tau = self.estimators.iter().any(|e| *e != Estimator::Fe);
        if needs_tau && self.taus.is_empty() {
            return Err(Error::InvalidConfig("no ranks requested".into()));
        }
        if self.estimators.contains(&Estimator::Nafe) && self.x_star_rules.is_empty() {
            return Err(Error::InvalidConfig("no sorting point given".into()));
        }
        for spec in &self.spec_grid {
            spec.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCell {
    pub spec_index: usize,
    pub spec: DgpSpec,
    pub estimator: Estimator,
    /// Sorting point, for the rank-sorting estimator only.
    pub x_star: Option<XStarRule>,
    /// Rank, absent for the within estimator.
    pub tau: Option<f64>,
    pub coefficient: usize,
    pub bias: f64,
    pub mse: f64,
    pub reps_used: usize,
    pub failures: usize,
    pub invalid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub cells: Vec<McCell>,
    pub seed: u64,
    pub reps: usize,
    pub skipped: Vec<DgpSpec>,
    /// True when the within estimator was scored against `E[U²]` outside the multiplicative family.
    pub fe_target_extended: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl McResult {
    /// The first cell matching the given coordinates.
    pub fn find(
        &self,
        spec_index: usize,
        estimator: Estimator,
        x_star: Option<&XStarRule>,
        tau: Option<f64>,
        coefficient: usize,
    ) -> Option<&McCell> {
        self.cells.iter().find(|c| {
            c.spec_index == spec_index
                && c.estimator == estimator
                && c.x_star.as_ref() == x_star
                && c.tau == tau
                && c.coefficient == coefficient
        })
    }

    /// Writes one row per cell:
    /// `family,n,T,rho,sigma_v,x_star,estimator,tau,coefficient,bias,mse,reps_used,seed`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "family",
            "n",
            "T",
            "rho",
            "sigma_v",
            "x_star",
            "estimator",
            "tau",
            "coefficient",
            "bias",
            "mse",
            "reps_used",
            "seed",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.spec.family.name().to_string(),
                c.spec.n.to_string(),
                c.spec.t.to_string(),
                c.spec.rho.to_string(),
                c.spec.sigma_v.to_string(),
                c.x_star.as_ref().map(XStarRule::label).unwrap_or_default(),
                c.estimator.name().to_string(),
                c.tau.map(|t| t.to_string()).unwrap_or_default(),
                COEFFICIENT_NAMES[c.coefficient].to_string(),
                c.bias.to_string(),
                c.mse.to_string(),
                c.reps_used.to_string(),
                self.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

const COEFFICIENT_NAMES: [&str; 2] = ["const", "x1"];

/// `T = round(n^rate)`, at least 2.
pub fn rate_to_t(n: usize, rate: f64) -> usize {
    ((n as f64).powf(rate).round() as usize).max(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CellKey {
    estimator: Estimator,
    x_star: Option<usize>,
    tau: Option<usize>,
    coefficient: usize,
}

fn cell_layout(cfg: &McConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for &estimator in &cfg.estimators {
        match estimator {
            Estimator::Nafe => {
                for x in 0..cfg.x_star_rules.len() {
                    for q in 0..cfg.taus.len() {
                        for coefficient in 0..2 {
                            keys.push(CellKey { estimator, x_star: Some(x), tau: Some(q), coefficient });
                        }
                    }
                }
            }
            Estimator::Feqr => {
                for q in 0..cfg.taus.len() {
                    keys.push(CellKey { estimator, x_star: None, tau: Some(q), coefficient: 1 });
                }
            }
            Estimator::Fe => keys.push(CellKey { estimator, x_star: None, tau: None, coefficient: 1 }),
        }
    }
    keys
}

/// Estimation errors of one replicate, in [`cell_layout`] order; `None` marks a failure.
fn replicate_errors(cfg: &McConfig, d: &PanelDataset) -> Vec<Option<f64>> {
    let mut out = Vec::new();
    for &estimator in &cfg.estimators {
        match estimator {
            Estimator::Nafe => {
                let fits = fit_all_units(d).ok();
                for rule in &cfg.x_star_rules {
                    let path =
                        fits.as_ref().and_then(|f| rule.resolve(d).ok().and_then(|x| coefficient_path(f, &x).ok()));
                    for &tau in &cfg.taus {
                        let truth = DrawTruth::beta_at(tau);
                        let beta = path.as_ref().and_then(|p| p.beta_at(tau).ok());
                        for (k, target) in truth.iter().enumerate() {
                            out.push(beta.map(|b| b[k] - target));
                        }
                    }
                }
            }
            Estimator::Feqr => {
                for &tau in &cfg.taus {
                    out.push(canay_feqr(d, tau).ok().map(|b| b[0] - DrawTruth::beta1(tau)));
                }
            }
            Estimator::Fe => out.push(within_fe(d).ok().map(|fe| fe.beta_fe[0] - FE_SLOPE_TARGET)),
        }
    }
    out
}

pub fn run_mc(cfg: &McConfig) -> Result<McResult> {
    cfg.check()?;
    let start = Instant::now();
    let layout = cell_layout(cfg);
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for (s, spec) in cfg.spec_grid.iter().enumerate() {
        if cfg.cell_budget.is_some_and(|b| spec.n * spec.t > b) {
            skipped.push(*spec);
            continue;
        }
        let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(&[cfg.seed, s as u64, r as u64]);
                match dgp::sample(spec, seed) {
                    Ok((d, _)) => replicate_errors(cfg, &d),
                    Err(_) => vec![None; layout.len()],
                }
            })
            .collect();
        for (c, key) in layout.iter().enumerate() {
            let mut sum = CompensatedSum::default();
            let mut sum_sq = CompensatedSum::default();
            let mut used = 0;
            for rep in &per_rep {
                if let Some(e) = rep[c] {
                    sum.add(e);
                    sum_sq.add(e * e);
                    used += 1;
                }
            }
            let failures = cfg.reps - used;
            let (bias, mse) =
                if used > 0 { (sum.value() / used as f64, sum_sq.value() / used as f64) } else { (f64::NAN, f64::NAN) };
            cells.push(McCell {
                spec_index: s,
                spec: *spec,
                estimator: key.estimator,
                x_star: key.x_star.map(|x| cfg.x_star_rules[x].clone()),
                tau: key.tau.map(|q| cfg.taus[q]),
                coefficient: key.coefficient,
                bias,
                mse,
                reps_used: used,
                failures,
                invalid: failures as f64 > MAX_FAILURE_SHARE * cfg.reps as f64,
            });
        }
    }
    let fe_target_extended =
        cfg.estimators.contains(&Estimator::Fe) && cfg.spec_grid.iter().any(|s| s.family != Family::Multiplicative);
    Ok(McResult { cells, seed: cfg.seed, reps: cfg.reps, skipped, fe_target_extended, wall_time: start.elapsed() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentificationPoint {
    pub tau: f64,
    pub p_hat: f64,
    pub n: usize,
}

fn counterfactual_at(x_star: &[f64], u: f64) -> f64 {
    x_star[0] * DrawTruth::beta0(u) + x_star[1] * DrawTruth::beta1(u)
}

fn require_baseline(spec: &DgpSpec) -> Result<()> {
    if spec.family != Family::Baseline {
        return Err(Error::InvalidConfig(format!("probe needs the baseline family, got {}", spec.family)));
    }
    Ok(())
}

/// Share of noiseless counterfactual outcomes `x*'β(U_i)` at or below `x*'β(τ)`.
pub fn identification_probe(
    n: usize,
    taus: &[f64],
    spec: &DgpSpec,
    x_star: &[f64],
    seed: u64,
) -> Result<Vec<IdentificationPoint>> {
    require_baseline(spec)?;
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    if x_star.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: x_star.len() });
    }
    if let Some(tau) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Domain(format!("tau = {tau} must lie in (0, 1)")));
    }
    let y_star: Vec<f64> = dgp::draw_ranks(n, seed).into_iter().map(|u| counterfactual_at(x_star, u)).collect();
    Ok(taus
        .iter()
        .map(|&tau| {
            let threshold = counterfactual_at(x_star, tau);
            let hits = y_star.iter().filter(|&&y| y <= threshold).count();
            IdentificationPoint { tau, p_hat: hits as f64 / n as f64, n }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryCell {
    pub n: usize,
    pub t: usize,
    pub sigma_v: f64,
    pub recovered: usize,
    pub reps: usize,
    pub frequency: f64,
}

/// How often the estimated sorting permutation equals the order of the latent ranks.
pub fn permutation_recovery_probe(
    grid: &[DgpSpec],
    x_star: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<RecoveryCell>> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    grid.iter()
        .enumerate()
        .map(|(s, spec)| {
            require_baseline(spec)?;
            spec.check()?;
            let recovered = (0..reps)
                .into_par_iter()
                .map(|r| -> Result<bool> {
                    let (d, truth) = dgp::sample(spec, derive_seed(&[seed, s as u64, r as u64]))?;
                    let Ok(fits) = fit_all_units(&d) else { return Ok(false) };
                    let path = coefficient_path(&fits, x_star)?;
                    Ok(path.sigma_hat == rank_permutation(&truth.u))
                })
                .collect::<Result<Vec<bool>>>()?
                .into_iter()
                .filter(|&ok| ok)
                .count();
            Ok(RecoveryCell {
                n: spec.n,
                t: spec.t,
                sigma_v: spec.sigma_v,
                recovered,
                reps,
                frequency: recovered as f64 / reps as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpacingPoint {
    pub x: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error of `empirical`.
    pub std_error: f64,
    /// `empirical ≤ bound + 3·std_error`.
    pub within_bound: bool,
}

/// Smallest derivative of `u ↦ u + c·u²` on `[0, 1]`.
pub fn spacing_lipschitz(slope_point: f64) -> f64 {
    if slope_point >= 0.0 {
        1.0
    } else {
        1.0 + 2.0 * slope_point
    }
}

/// `1 − [1 − (n+1)x/L]^n`.
pub fn spacing_bound(n: usize, x: f64, lower_derivative: f64) -> f64 {
    1.0 - (1.0 - (n as f64 + 1.0) * x / lower_derivative).max(0.0).powi(n as i32)
}

/// Empirical law of the smallest gap between sorted outcomes `u + c·u²`, against its analytic bound.
///
/// `slope_point` is the regressor value `c` in the sorting point `(1, c)`.
pub fn spacing_bound_probe(
    n: usize,
    x_grid: &[f64],
    slope_point: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<SpacingPoint>> {
    if n < 2 || reps == 0 {
        return Err(Error::InvalidConfig("spacing probe needs n >= 2 and reps >= 1".into()));
    }
    let l = spacing_lipschitz(slope_point);
    if l.is_nan() || l <= 0.0 {
        return Err(Error::Domain(format!("outcomes are not increasing in u at x* = (1, {slope_point})")));
    }
    let upper = l / (n as f64 + 1.0);
    if let Some(x) = x_grid.iter().find(|x| !(**x >= 0.0 && **x <= upper)) {
        return Err(Error::Domain(format!("x = {x} outside [0, {upper}]")));
    }
    let x_star = [1.0, slope_point];
    let min_gaps: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, Stream::Probe, r as u64);
            let mut y: Vec<f64> = (0..n).map(|_| counterfactual_at(&x_star, rng.sample::<f64, _>(Open01))).collect();
            y.sort_by(f64::total_cmp);
            y.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(x_grid
        .iter()
        .map(|&x| {
            let hits = min_gaps.iter().filter(|&&g| g <= x).count();
            let p = hits as f64 / reps as f64;
            let bound = spacing_bound(n, x, l);
            let std_error = (p * (1.0 - p) / reps as f64).sqrt();
            SpacingPoint { x, empirical: p, bound, std_error, within_bound: p <= bound + 3.0 * std_error }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_round_to_panel_lengths() {
        assert_eq!(rate_to_t(10_000, 0.25), 10);
        assert_eq!(rate_to_t(100, 0.5), 10);
        assert_eq!(rate_to_t(100, 0.25), 3);
        assert_eq!(rate_to_t(100, 1.0), 100);
        assert_eq!(rate_to_t(1, 0.5), 2);
    }

    #[test]
    fn layout_matches_replicate_output() {
        let cfg = McConfig {
            spec_grid: vec![DgpSpec::new(Family::Baseline, 8, 4)],
            estimators: vec![Estimator::Nafe, Estimator::Feqr, Estimator::Fe],
            taus: vec![0.25, 0.5],
            x_star_rules: vec![XStarRule::Mean, XStarRule::Fixed(vec![1.0, 4.5])],
            reps: 1,
            seed: 1,
            cell_budget: None,
        };
        let (d, _) = dgp::sample(&cfg.spec_grid[0], 0).unwrap();
        assert_eq!(cell_layout(&cfg).len(), replicate_errors(&cfg, &d).len());
        assert_eq!(cell_layout(&cfg).len(), 2 * 2 * 2 + 2 + 1);
    }

    #[test]
    fn single_noiseless_replicate() {
        let spec = DgpSpec::new(Family::Baseline, 50, 5).sigma_v(0.0);
        let cfg = McConfig {
            spec_grid: vec![spec],
            estimators: vec![Estimator::Nafe],
            taus: vec![0.5],
            x_star_rules: vec![XStarRule::Fixed(vec![1.0, 4.5])],
            reps: 1,
            seed: 77,
            cell_budget: None,
        };
        let res = run_mc(&cfg).unwrap();
        let cell = res.find(0, Estimator::Nafe, Some(&cfg.x_star_rules[0]), Some(0.5), 1).unwrap();
        let (_, truth) = dgp::sample(&spec, derive_seed(&[77, 0, 0])).unwrap();
        let mut u = truth.u.clone();
        u.sort_by(f64::total_cmp);
        let expected = u[24] * u[24] - 0.25;
        assert!((cell.bias - expected).abs() < 1e-10);
        assert_eq!(cell.mse, cell.bias * cell.bias);
        assert_eq!(cell.reps_used, 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = McConfig {
            spec_grid: vec![DgpSpec::new(Family::Baseline, 8, 4)],
            estimators: vec![Estimator::Nafe],
            taus: vec![0.5],
            x_star_rules: vec![XStarRule::Mean],
            reps: 0,
            seed: 1,
            cell_budget: None,
        };
        assert!(run_mc(&base).is_err());
        let bad_tau = McConfig { reps: 2, taus: vec![1.0], ..base.clone() };
        assert!(run_mc(&bad_tau).is_err());
        let no_x = McConfig { reps: 2, x_star_rules: vec![], ..base };
        assert!(run_mc(&no_x).is_err());
    }

    #[test]
    fn cell_budget_skips_large_entries() {
        let cfg = McConfig {
            spec_grid: vec![DgpSpec::new(Family::Baseline, 8, 4), DgpSpec::new(Family::Baseline, 100, 100)],
            estimators: vec![Estimator::Fe],
            taus: vec![],
            x_star_rules: vec![],
            reps: 2,
            seed: 1,
            cell_budget: Some(1000),
        };
        let res = run_mc(&cfg).unwrap();
        assert_eq!(res.skipped.len(), 1);
        assert_eq!(res.cells.len(), 1);
        assert!(res.fe_target_extended);
    }

    #[test]
    fn identification_probe_edge_cases() {
        let spec = DgpSpec::new(Family::Baseline, 1, 2);
        let p = identification_probe(1, &[0.5], &spec, &[1.0, 4.5], 3).unwrap();
        assert!(p[0].p_hat == 0.0 || p[0].p_hat == 1.0);
        let mult = DgpSpec::new(Family::Multiplicative, 1, 2);
        assert!(identification_probe(1, &[0.5], &mult, &[1.0, 4.5], 3).is_err());
    }

    #[test]
    fn spacing_probe_endpoints() {
        let n = 10;
        let upper = 1.0 / (n as f64 + 1.0);
        let pts = spacing_bound_probe(n, &[0.0, upper], 4.5, 2000, 5).unwrap();
        assert_eq!(pts[0].empirical, 0.0);
        assert_eq!(pts[0].bound, 0.0);
        assert_eq!(pts[1].bound, 1.0);
        assert!(spacing_bound_probe(n, &[upper * 1.01], 4.5, 10, 5).is_err());
        assert!(spacing_bound_probe(n, &[-1e-9], 4.5, 10, 5).is_err());
    }
}
