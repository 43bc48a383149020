use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Duration;

use nafe_core::bootstrap::bootstrap_se;
use nafe_core::dgp::{DgpSpec, Family};
use nafe_core::estimators::{canay_feqr, coefficient_path, fit_all_units, within_fe};
use nafe_core::mc_harness::{
    identification_probe, permutation_recovery_probe, run_mc, spacing_bound_probe, spacing_lipschitz,
};
use nafe_core::panel_data::{column_means, load_csv, validate};
use nafe_core::{ColumnMap, PanelDataset};
use serde_json::{json, Value};

use crate::failure::Failure;
use crate::presets::build_config;
use crate::{BootstrapArgs, DataArgs, EstimateArgs, Method, Probe, ProbeArgs, SeKind, SimulateArgs};

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::data(e.to_string())
}

pub fn write_manifest(out: &Path, mut manifest: Value, seed: u64, wall: Duration) -> Result<(), Failure> {
    let mut path = out.as_os_str().to_owned();
    path.push(".meta.json");
    manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
    manifest["seed"] = json!(seed);
    manifest["wall_time_seconds"] = json!(wall.as_secs_f64());
    let file = create(Path::new(&path))?;
    serde_json::to_writer_pretty(file, &manifest)?;
    Ok(())
}

/// Loads and validates the panel; rank-deficient units are numerical failures.
fn load(args: &DataArgs) -> Result<PanelDataset, Failure> {
    let columns = ColumnMap {
        unit: args.unit_col.clone(),
        time: args.time_col.clone(),
        outcome: args.y_col.clone(),
        regressors: args.x_cols.clone(),
        add_intercept: !args.no_intercept,
    };
    let d = load_csv(&args.data, &columns).map_err(|e| {
        let f = Failure::from_data_error(e);
        Failure { message: format!("{}: {}", args.data.display(), f.message), ..f }
    })?;
    let report = validate(&d);
    if !report.issues.is_empty() {
        eprint!("{report}");
    }
    if !report.ok {
        let units: Vec<&str> = report.errors().filter_map(|i| i.unit.as_deref()).collect();
        return Err(if units.len() == report.errors().count() {
            Failure::numerical(format!("singular design in unit(s) {}", units.join(", ")))
        } else {
            Failure::data("panel failed validation")
        });
    }
    println!("panel: n = {}, T = {}, K = {}", d.n(), d.t(), d.k());
    Ok(d)
}

fn resolve_x_star(spec: &str, d: &PanelDataset) -> Result<Vec<f64>, Failure> {
    if spec.trim() == "mean" {
        return Ok(column_means(d));
    }
    let values: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Failure::usage(format!("bad --x-star entry `{s}`"))))
        .collect::<Result<_, _>>()?;
    if values.len() == d.k() {
        Ok(values)
    } else if d.has_intercept_column() && values.len() + 1 == d.k() {
        Ok(std::iter::once(1.0).chain(values).collect())
    } else {
        Err(Failure::usage(format!("--x-star has {} values, the panel has K = {} regressors", values.len(), d.k())))
    }
}

pub fn estimate(args: &EstimateArgs, seed: u64) -> Result<Value, Failure> {
    let d = load(&args.data)?;
    let names = d.regressor_names();
    let x_star = resolve_x_star(&args.data.x_star, &d)?;
    let taus = &args.data.tau;
    let mut w = csv_writer(&args.run.out)?;
    w.write_record(["method", "tau", "coefficient", "estimate", "se"]).map_err(csv_failure)?;
    let mut methods = args.method.clone();
    methods.dedup();
    for method in &methods {
        match method {
            Method::Nafe => {
                let fits = fit_all_units(&d)?;
                let path = coefficient_path(&fits, &x_star)?;
                let se = match args.se {
                    Some(SeKind::Bootstrap) => Some(bootstrap_se(&d, taus, &x_star, args.b, seed)?),
                    None => None,
                };
                for (q, &tau) in taus.iter().enumerate() {
                    let beta = path.beta_at(tau)?;
                    for (k, name) in names.iter().enumerate() {
                        let se = se.as_ref().map(|s| s.se[q][k].to_string()).unwrap_or_default();
                        w.write_record(["nafe", &tau.to_string(), name, &beta[k].to_string(), &se])
                            .map_err(csv_failure)?;
                    }
                    println!("nafe tau = {tau}: {}", fmt_coefs(names, beta));
                }
            }
            Method::Feqr => {
                for &tau in taus {
                    let slopes = canay_feqr(&d, tau)?;
                    for (name, b) in names[1..].iter().zip(&slopes) {
                        w.write_record(["feqr", &tau.to_string(), name, &b.to_string(), ""]).map_err(csv_failure)?;
                    }
                    println!("feqr tau = {tau}: {}", fmt_coefs(&names[1..], &slopes));
                }
            }
            Method::Fe => {
                let fe = within_fe(&d)?;
                for (name, b) in names[1..].iter().zip(&fe.beta_fe) {
                    w.write_record(["fe", "", name, &b.to_string(), ""]).map_err(csv_failure)?;
                }
                println!("fe: {}", fmt_coefs(&names[1..], &fe.beta_fe));
            }
        }
    }
    w.flush()?;
    Ok(json!({
        "command": "estimate",
        "data": args.data.data,
        "methods": methods.iter().map(|m| format!("{m:?}").to_lowercase()).collect::<Vec<_>>(),
        "tau": taus,
        "x_star": x_star,
        "se": args.se.map(|_| "bootstrap"),
        "B": args.se.map(|_| args.b),
    }))
}

fn fmt_coefs(names: &[String], values: &[f64]) -> String {
    names.iter().zip(values).map(|(n, v)| format!("{n} = {v:.6}")).collect::<Vec<_>>().join(", ")
}

pub fn bootstrap(args: &BootstrapArgs, seed: u64) -> Result<Value, Failure> {
    let d = load(&args.data)?;
    let x_star = resolve_x_star(&args.data.x_star, &d)?;
    let res = bootstrap_se(&d, &args.data.tau, &x_star, args.b, seed)?;
    res.write_csv(create(&args.run.out)?)?;
    for (q, tau) in res.taus.iter().enumerate() {
        println!("tau = {tau}: se {}", fmt_coefs(&res.coefficient_names, &res.se[q]));
    }
    println!("failed replicates: {} of {}", res.failed.len(), res.replications);
    Ok(json!({
        "command": "bootstrap",
        "data": args.data.data,
        "tau": args.data.tau,
        "x_star": x_star,
        "B": args.b,
        "failed_replicates": res.failed,
    }))
}

pub fn simulate(args: &SimulateArgs, seed: u64) -> Result<Value, Failure> {
    let cfg = build_config(args, seed)?;
    let res = run_mc(&cfg)?;
    res.write_csv(create(&args.run.out)?)?;
    println!(
        "{} cells from {} grid entries, {} reps each, {:.2}s",
        res.cells.len(),
        cfg.spec_grid.len() - res.skipped.len(),
        cfg.reps,
        res.wall_time.as_secs_f64()
    );
    for s in &res.skipped {
        println!("skipped n = {}, T = {} (n*T over the cell budget {})", s.n, s.t, args.cell_budget);
    }
    let invalid = res.cells.iter().filter(|c| c.invalid).count();
    if invalid > 0 {
        println!("{invalid} cells exceeded the failure cap");
    }
    if res.fe_target_extended {
        println!("note: fe is scored against E[U^2] = 1/3 outside the multiplicative design");
    }
    Ok(json!({
        "command": "simulate",
        "table": format!("{:?}", args.table).to_lowercase(),
        "config": cfg,
        "skipped": res.skipped,
    }))
}

pub fn probe(args: &ProbeArgs, seed: u64) -> Result<Value, Failure> {
    let out = &args.run.out;
    let x_star = [1.0, args.x_star];
    match args.which {
        Probe::Identification => {
            let n = args.n.unwrap_or(10_000);
            let taus = args.tau.clone().unwrap_or_else(|| (1..=9).map(|j| j as f64 / 10.0).collect());
            let spec = DgpSpec::new(Family::Baseline, n, 2);
            let pts = identification_probe(n, &taus, &spec, &x_star, seed)?;
            let mut w = csv_writer(out)?;
            w.write_record(["tau", "p_hat", "abs_dev", "std_error", "n"]).map_err(csv_failure)?;
            for p in &pts {
                let dev = (p.p_hat - p.tau).abs();
                let se = (p.tau * (1.0 - p.tau) / n as f64).sqrt();
                w.write_record([
                    p.tau.to_string(),
                    p.p_hat.to_string(),
                    dev.to_string(),
                    se.to_string(),
                    n.to_string(),
                ])
                .map_err(csv_failure)?;
                println!("tau = {}: p_hat = {:.5}, |p_hat - tau| = {dev:.5} ({:.2} se)", p.tau, p.p_hat, dev / se);
            }
            w.flush()?;
            Ok(json!({ "command": "probe", "which": "identification", "n": n, "tau": taus, "x_star": x_star }))
        }
        Probe::Permutation => {
            let n = args.n.unwrap_or(100);
            let reps = args.reps.unwrap_or(200);
            let lengths = args.t.clone().unwrap_or_else(|| vec![2, 5, 10, 20, 50]);
            let sigmas = args.sigma_v.clone().unwrap_or_else(|| vec![0.0, 0.1, 1.0]);
            let grid: Vec<DgpSpec> = sigmas
                .iter()
                .flat_map(|&s| lengths.iter().map(move |&t| DgpSpec::new(Family::Baseline, n, t).sigma_v(s)))
                .collect();
            let cells = permutation_recovery_probe(&grid, &x_star, reps, seed)?;
            let mut w = csv_writer(out)?;
            w.write_record(["n", "T", "sigma_v", "recovered", "reps", "frequency"]).map_err(csv_failure)?;
            for c in &cells {
                w.write_record([
                    c.n.to_string(),
                    c.t.to_string(),
                    c.sigma_v.to_string(),
                    c.recovered.to_string(),
                    c.reps.to_string(),
                    c.frequency.to_string(),
                ])
                .map_err(csv_failure)?;
                println!("n = {}, T = {}, sigma_v = {}: recovered {}/{}", c.n, c.t, c.sigma_v, c.recovered, c.reps);
            }
            w.flush()?;
            Ok(json!({ "command": "probe", "which": "permutation", "grid": grid, "reps": reps, "x_star": x_star }))
        }
        Probe::Spacing => {
            let n = args.n.unwrap_or(20);
            let reps = args.reps.unwrap_or(100_000);
            if args.points == 0 {
                return Err(Failure::usage("--points must be at least 1"));
            }
            let upper = spacing_lipschitz(args.x_star) / (n as f64 + 1.0);
            let grid: Vec<f64> = (1..=args.points).map(|j| upper * j as f64 / args.points as f64).collect();
            let pts = spacing_bound_probe(n, &grid, args.x_star, reps, seed)?;
            let mut w = csv_writer(out)?;
            w.write_record(["n", "x", "empirical", "bound", "std_error", "within_bound"]).map_err(csv_failure)?;
            for p in &pts {
                w.write_record([
                    n.to_string(),
                    p.x.to_string(),
                    p.empirical.to_string(),
                    p.bound.to_string(),
                    p.std_error.to_string(),
                    p.within_bound.to_string(),
                ])
                .map_err(csv_failure)?;
                println!(
                    "x = {:.5}: empirical {:.5} bound {:.5} {}",
                    p.x,
                    p.empirical,
                    p.bound,
                    if p.within_bound { "ok" } else { "ABOVE BOUND" }
                );
            }
            w.flush()?;
            Ok(
                json!({ "command": "probe", "which": "spacing", "n": n, "reps": reps, "x_grid": grid, "x_star": x_star }),
            )
        }
    }
}
