//! Simulation designs with recorded latent truth.
//!
//! All three families share `β_0(u) = u`, `β_1(u) = u²` and a regressor built
//! from `Z_it ~ N(0, 1)` shifted by `shift`:
//!
//! * `Baseline`: `X_it = Z_it + shift + ρU_i`, `Y_it = β_0(U_i) + β_1(U_i)X_it + V_it`.
//! * `RankMixture`: same `X`, but the rank varies over time,
//!   `U_it = F(U_i + V_it)` with `F` the CDF of `U + V`, and `Y_it = β_0(U_it) + β_1(U_it)X_it`.
//! * `Multiplicative`: `X_it = (1 + ρU_i)(Z_it + shift)`, outcome as in `Baseline`.
//!
//! Draws use the substreams of [`crate::rng`]: `U_i` come from the rank stream of
//! the draw seed, `Z_i·` and `V_i·` from per-unit streams. Changing `T` leaves
//! `U` untouched and only extends each unit's sequences.

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel_data::{PanelDataset, INTERCEPT_NAME};
use crate::rng::{substream, Stream};

/// Mean of `β_1(U) = U²` for `U ~ Unif(0, 1)`; the target of the within estimator.
pub const FE_SLOPE_TARGET: f64 = 1.0 / 3.0;

pub const DEFAULT_SHIFT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Baseline,
    RankMixture,
    Multiplicative,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::RankMixture => "rank_mixture",
            Family::Multiplicative => "multiplicative",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Family::Baseline),
            "rank_mixture" | "mixture" => Ok(Family::RankMixture),
            "multiplicative" => Ok(Family::Multiplicative),
            other => Err(Error::InvalidConfig(format!("unknown DGP family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub family: Family,
    pub n: usize,
    pub t: usize,
    /// Endogeneity level.
    pub rho: f64,
    pub sigma_v: f64,
    pub shift: f64,
}

impl DgpSpec {
    pub fn new(family: Family, n: usize, t: usize) -> Self {
        Self { family, n, t, rho: 0.0, sigma_v: 1.0, shift: DEFAULT_SHIFT }
    }

    pub fn rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn sigma_v(mut self, sigma_v: f64) -> Self {
        self.sigma_v = sigma_v;
        self
    }

    pub fn shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 1 || self.t < 2 {
            return Err(Error::InvalidConfig(format!("need n >= 1 and T >= 2, got n = {}, T = {}", self.n, self.t)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho = {} must be a finite non-negative number", self.rho)));
        }
        if !(self.sigma_v >= 0.0 && self.sigma_v.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_v = {} must be finite and non-negative", self.sigma_v)));
        }
        if !self.shift.is_finite() {
            return Err(Error::InvalidConfig("shift must be finite".into()));
        }
        if self.family == Family::RankMixture && self.sigma_v <= 0.0 {
            return Err(Error::InvalidConfig("the rank-mixture family needs sigma_v > 0".into()));
        }
        Ok(())
    }
}

/// Latent quantities behind one simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTruth {
    pub family: Family,
    /// `U_i`, strictly inside (0, 1).
    pub u: Vec<f64>,
    /// Disturbance draws `V_it` (scaled by `σ_V`), unit-major.
    pub v: Vec<f64>,
    /// Time-varying ranks `U_it` for the rank-mixture family.
    pub u_it: Option<Vec<f64>>,
}

impl DrawTruth {
    pub fn beta0(u: f64) -> f64 {
        u
    }

    pub fn beta1(u: f64) -> f64 {
        u * u
    }

    /// `(β_0(τ), β_1(τ))`.
    pub fn beta_at(tau: f64) -> [f64; 2] {
        [Self::beta0(tau), Self::beta1(tau)]
    }

    /// Slope target used when comparing the within estimator.
    pub fn fe_target(&self) -> f64 {
        FE_SLOPE_TARGET
    }

    /// Writes `unit,u`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "u"])?;
        for (i, u) in self.u.iter().enumerate() {
            w.write_record([(i + 1).to_string(), u.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome formula shared by every family.
#[inline]
pub fn structural_outcome(u: f64, x: f64, v: f64) -> f64 {
    DrawTruth::beta0(u) + DrawTruth::beta1(u) * x + v
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `P(U + V ≤ w)` for `U ~ Unif(0, 1)` independent of `V ~ N(0, σ²)`.
///
/// Closed form `σ[G(w/σ) − G((w−1)/σ)]` with `G(z) = zΦ(z) + φ(z)`.
pub fn rank_cdf(w: f64, sigma_v: f64) -> Result<f64> {
    if sigma_v.is_nan() || sigma_v <= 0.0 {
        return Err(Error::Domain(format!(
            "rank_cdf needs sigma_v > 0 (got {sigma_v}); use rank_cdf_degenerate for the limit"
        )));
    }
    if w.is_nan() {
        return Err(Error::Domain("rank_cdf argument is NaN".into()));
    }
    let norm = standard_normal();
    let g = |z: f64| {
        if z == f64::INFINITY {
            f64::INFINITY
        } else if z == f64::NEG_INFINITY {
            0.0
        } else {
            z * norm.cdf(z) + norm.pdf(z)
        }
    };
    let hi = w / sigma_v;
    let lo = (w - 1.0) / sigma_v;
    if hi == f64::INFINITY && lo == f64::INFINITY {
        return Ok(1.0);
    }
    Ok((sigma_v * (g(hi) - g(lo))).clamp(0.0, 1.0))
}

/// The `σ → 0` limit of [`rank_cdf`]: the uniform CDF.
pub fn rank_cdf_degenerate(w: f64) -> f64 {
    w.clamp(0.0, 1.0)
}

/// Draws `n` values of `U_i` from the rank stream of `seed`.
pub fn draw_ranks(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, Stream::Rank, 0);
    (0..n).map(|_| rng.sample::<f64, _>(Open01)).collect()
}

struct Innovations {
    u: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
}

fn draw_innovations(spec: &DgpSpec, seed: u64) -> Innovations {
    let (n, t) = (spec.n, spec.t);
    let u = draw_ranks(n, seed);
    let mut z = Vec::with_capacity(n * t);
    let mut v = Vec::with_capacity(n * t);
    for i in 0..n as u64 {
        let mut zr = substream(seed, Stream::Regressor, i);
        let mut vr = substream(seed, Stream::Noise, i);
        for _ in 0..t {
            z.push(zr.sample::<f64, _>(StandardNormal));
            v.push(spec.sigma_v * vr.sample::<f64, _>(StandardNormal));
        }
    }
    Innovations { u, z, v }
}

fn assemble(spec: &DgpSpec, y: Vec<f64>, x1: &[f64]) -> PanelDataset {
    let x: Vec<f64> = x1.iter().flat_map(|&v| [1.0, v]).collect();
    PanelDataset::new(
        (1..=spec.n).map(|i| i.to_string()).collect(),
        (1..=spec.t).map(|t| t.to_string()).collect(),
        y,
        x,
        vec![INTERCEPT_NAME.to_string(), "x1".to_string()],
        true,
    )
    .expect("generated panel is well formed")
}

fn require_family(spec: &DgpSpec, family: Family) -> Result<()> {
    spec.check()?;
    if spec.family != family {
        return Err(Error::InvalidConfig(format!("expected a {family} spec, got {}", spec.family)));
    }
    Ok(())
}

pub fn sample_baseline(spec: &DgpSpec, seed: u64) -> Result<(PanelDataset, DrawTruth)> {
    require_family(spec, Family::Baseline)?;
    let Innovations { u, z, v } = draw_innovations(spec, seed);
    let t = spec.t;
    let x1: Vec<f64> = z.iter().enumerate().map(|(c, zi)| zi + spec.shift + spec.rho * u[c / t]).collect();
    let y = (0..x1.len()).map(|c| structural_outcome(u[c / t], x1[c], v[c])).collect();
    Ok((assemble(spec, y, &x1), DrawTruth { family: Family::Baseline, u, v, u_it: None }))
}

pub fn sample_rank_mixture(spec: &DgpSpec, seed: u64) -> Result<(PanelDataset, DrawTruth)> {
    require_family(spec, Family::RankMixture)?;
    let Innovations { u, z, v } = draw_innovations(spec, seed);
    let t = spec.t;
    let x1: Vec<f64> = z.iter().enumerate().map(|(c, zi)| zi + spec.shift + spec.rho * u[c / t]).collect();
    let u_it = (0..x1.len()).map(|c| rank_cdf(u[c / t] + v[c], spec.sigma_v)).collect::<Result<Vec<_>>>()?;
    let y = (0..x1.len()).map(|c| structural_outcome(u_it[c], x1[c], 0.0)).collect();
    Ok((assemble(spec, y, &x1), DrawTruth { family: Family::RankMixture, u, v, u_it: Some(u_it) }))
}

pub fn sample_multiplicative(spec: &DgpSpec, seed: u64) -> Result<(PanelDataset, DrawTruth)> {
    require_family(spec, Family::Multiplicative)?;
    let Innovations { u, z, v } = draw_innovations(spec, seed);
    let t = spec.t;
    let x1: Vec<f64> = z.iter().enumerate().map(|(c, zi)| (1.0 + spec.rho * u[c / t]) * (zi + spec.shift)).collect();
    let y = (0..x1.len()).map(|c| structural_outcome(u[c / t], x1[c], v[c])).collect();
    Ok((assemble(spec, y, &x1), DrawTruth { family: Family::Multiplicative, u, v, u_it: None }))
}

/// Dispatches on `spec.family`.
pub fn sample(spec: &DgpSpec, seed: u64) -> Result<(PanelDataset, DrawTruth)> {
    match spec.family {
        Family::Baseline => sample_baseline(spec, seed),
        Family::RankMixture => sample_rank_mixture(spec, seed),
        Family::Multiplicative => sample_multiplicative(spec, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_all_units;

    #[test]
    fn rank_cdf_is_symmetric_about_one_half() {
        for s in [0.01, 0.1, 1.0, 10.0] {
            assert!((rank_cdf(0.5, s).unwrap() - 0.5).abs() < 1e-14, "sigma {s}");
        }
    }

    #[test]
    fn rank_cdf_limits() {
        assert_eq!(rank_cdf(f64::NEG_INFINITY, 0.3).unwrap(), 0.0);
        assert_eq!(rank_cdf(f64::INFINITY, 0.3).unwrap(), 1.0);
        assert!(rank_cdf(-50.0, 1.0).unwrap() < 1e-12);
        assert!(rank_cdf(50.0, 1.0).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn rank_cdf_requires_positive_sigma() {
        assert!(rank_cdf(0.3, 0.0).is_err());
        assert_eq!(rank_cdf_degenerate(-0.2), 0.0);
        assert_eq!(rank_cdf_degenerate(0.3), 0.3);
        assert_eq!(rank_cdf_degenerate(1.7), 1.0);
    }

    #[test]
    fn noiseless_baseline_is_exact_for_ts_ols() {
        let spec = DgpSpec::new(Family::Baseline, 20, 6).sigma_v(0.0);
        let (d, truth) = sample_baseline(&spec, 3).unwrap();
        for (c, y) in d.y().iter().enumerate() {
            let u = truth.u[c / 6];
            assert_eq!(*y, u + u * u * d.x()[2 * c + 1]);
        }
        for f in fit_all_units(&d).unwrap() {
            assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        }
    }

    #[test]
    fn wrong_family_is_rejected() {
        let spec = DgpSpec::new(Family::Baseline, 5, 3);
        assert!(sample_multiplicative(&spec, 1).is_err());
        let bad = DgpSpec::new(Family::RankMixture, 5, 3).sigma_v(0.0);
        assert!(sample(&bad, 1).is_err());
        assert!(DgpSpec::new(Family::Baseline, 5, 1).check().is_err());
    }

    #[test]
    fn multiplicative_with_zero_rho_equals_baseline() {
        let base = DgpSpec::new(Family::Baseline, 30, 7).sigma_v(0.5);
        let mult = DgpSpec { family: Family::Multiplicative, ..base };
        let (a, ta) = sample(&base, 11).unwrap();
        let (b, tb) = sample(&mult, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.u, tb.u);
        assert_eq!(tb.fe_target(), 1.0 / 3.0);
    }

    #[test]
    fn changing_t_keeps_ranks_and_prefixes() {
        let short = DgpSpec::new(Family::Baseline, 10, 3);
        let long = DgpSpec { t: 8, ..short };
        let (a, ta) = sample(&short, 5).unwrap();
        let (b, tb) = sample(&long, 5).unwrap();
        assert_eq!(ta.u, tb.u);
        for i in 0..10 {
            assert_eq!(a.unit_y(i), &b.unit_y(i)[..3]);
        }
    }

    #[test]
    fn truth_csv_has_one_row_per_unit() {
        let (_, truth) = sample(&DgpSpec::new(Family::Baseline, 4, 2), 0).unwrap();
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("unit,u\n1,"));
    }
}
