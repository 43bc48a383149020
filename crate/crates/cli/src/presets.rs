//! Simulation grids for `nafe simulate`.

use nafe_core::dgp::{DgpSpec, Family};
use nafe_core::mc_harness::{rate_to_t, Estimator, McConfig, XStarRule};

use crate::failure::Failure;
use crate::{Method, SimulateArgs, Table};

const DEFAULT_TAUS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone)]
enum Lengths {
    Fixed(Vec<usize>),
    Rate(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Preset {
    family: Family,
    n: Vec<usize>,
    lengths: Lengths,
    rho: Vec<f64>,
    sigma_v: Vec<f64>,
    x_star: Vec<XStarRule>,
    estimators: Vec<Estimator>,
}

fn fixed(values: &[f64]) -> Vec<XStarRule> {
    values.iter().map(|&c| XStarRule::Fixed(vec![1.0, c])).collect()
}

fn preset(table: Table) -> Option<Preset> {
    let p = match table {
        Table::T1 => Preset {
            family: Family::Baseline,
            n: vec![100, 200, 500, 1000, 2000, 5000, 10000],
            lengths: Lengths::Rate(vec![0.25, 0.5, 0.75, 1.0]),
            rho: vec![1.0],
            sigma_v: vec![1.0],
            x_star: fixed(&[4.5]),
            estimators: vec![Estimator::Nafe],
        },
        Table::T2 => Preset {
            family: Family::Baseline,
            n: vec![100],
            lengths: Lengths::Fixed(vec![100]),
            rho: vec![0.0, 1.0],
            sigma_v: vec![0.1],
            x_star: fixed(&[2.5, 3.5, 4.5, 5.5, 6.5]),
            estimators: vec![Estimator::Nafe],
        },
        Table::T3 => Preset {
            family: Family::RankMixture,
            n: vec![100],
            lengths: Lengths::Fixed(vec![100]),
            rho: vec![0.0, 1.0, 3.0, 10.0],
            sigma_v: vec![0.01, 0.1, 1.0],
            x_star: fixed(&[4.0]),
            estimators: vec![Estimator::Nafe, Estimator::Feqr],
        },
        Table::T8 => Preset {
            family: Family::Multiplicative,
            n: vec![100],
            lengths: Lengths::Fixed(vec![100]),
            rho: vec![0.0, 1.0, 3.0, 10.0],
            sigma_v: vec![0.1],
            x_star: fixed(&[5.0, 6.0, 7.0, 8.0]),
            estimators: vec![Estimator::Nafe, Estimator::Fe],
        },
        Table::Custom => return None,
    };
    Some(p)
}

fn parse_rule(s: &str) -> Result<XStarRule, Failure> {
    let s = s.trim();
    if s == "mean" {
        return Ok(XStarRule::Mean);
    }
    s.parse::<f64>()
        .ok()
        .filter(|c| c.is_finite())
        .map(|c| XStarRule::Fixed(vec![1.0, c]))
        .ok_or_else(|| Failure::usage(format!("--x-star entry `{s}` is neither `mean` nor a number")))
}

pub fn estimator_of(m: Method) -> Estimator {
    match m {
        Method::Nafe => Estimator::Nafe,
        Method::Feqr => Estimator::Feqr,
        Method::Fe => Estimator::Fe,
    }
}

/// Resolves the preset named by `--table` and applies the grid overrides.
pub fn build_config(args: &SimulateArgs, seed: u64) -> Result<McConfig, Failure> {
    let base = preset(args.table);
    let mut p = match base {
        Some(p) => p,
        None => {
            let missing = |flag: &str| Failure::usage(format!("--table custom needs {flag}"));
            Preset {
                family: Family::Baseline,
                n: args.n.clone().ok_or_else(|| missing("--n"))?,
                lengths: match (&args.t, &args.rate) {
                    (Some(t), _) => Lengths::Fixed(t.clone()),
                    (None, Some(r)) => Lengths::Rate(r.clone()),
                    (None, None) => return Err(missing("--T or --rate")),
                },
                rho: vec![0.0],
                sigma_v: vec![1.0],
                x_star: vec![XStarRule::Mean],
                estimators: vec![Estimator::Nafe],
            }
        }
    };
    if let Some(f) = &args.family {
        p.family = f.parse().map_err(|e: nafe_core::Error| Failure::usage(e.to_string()))?;
    } else if args.table == Table::Custom {
        return Err(Failure::usage("--table custom needs --family"));
    }
    if let Some(n) = &args.n {
        p.n = n.clone();
    }
    if let Some(t) = &args.t {
        p.lengths = Lengths::Fixed(t.clone());
    }
    if let Some(r) = &args.rate {
        p.lengths = Lengths::Rate(r.clone());
    }
    if let Some(rho) = &args.rho {
        p.rho = rho.clone();
    }
    if let Some(s) = &args.sigma_v {
        p.sigma_v = s.clone();
    }
    if let Some(x) = &args.x_star {
        p.x_star = x.iter().map(|s| parse_rule(s)).collect::<Result<_, _>>()?;
    }
    if let Some(e) = &args.estimators {
        p.estimators = e.iter().copied().map(estimator_of).collect();
        p.estimators.dedup();
    }

    let mut spec_grid = Vec::new();
    for &n in &p.n {
        let lengths: Vec<usize> = match &p.lengths {
            Lengths::Fixed(t) => t.clone(),
            Lengths::Rate(r) => r.iter().map(|&rate| rate_to_t(n, rate)).collect(),
        };
        for &t in &lengths {
            for &rho in &p.rho {
                for &sigma_v in &p.sigma_v {
                    spec_grid.push(DgpSpec::new(p.family, n, t).rho(rho).sigma_v(sigma_v));
                }
            }
        }
    }
    let cfg = McConfig {
        spec_grid,
        estimators: p.estimators,
        taus: args.tau.clone().unwrap_or_else(|| DEFAULT_TAUS.to_vec()),
        x_star_rules: p.x_star,
        reps: args.reps,
        seed,
        cell_budget: Some(args.cell_budget),
    };
    cfg.check()?;
    Ok(cfg)
}
