mod common;

use nafe_core::dgp::{self, rank_cdf, rank_cdf_degenerate, structural_outcome, DgpSpec, Family};
use nafe_core::estimators::within_fe;
use proptest::prelude::*;

#[test]
fn rank_cdf_matches_quadrature() {
    let cases = [(0.8, 0.1), (0.5, 1.0), (-0.3, 0.5), (1.2, 0.2), (0.05, 0.01), (0.999, 0.01), (2.5, 3.0)];
    for (w, s) in cases {
        let oracle = common::integrate(&|u| common::phi_cdf((w - u) / s), 0.0, 1.0, 1e-13);
        let got = rank_cdf(w, s).unwrap();
        assert!((got - oracle).abs() < 1e-10, "w {w} sigma {s}: {got} vs {oracle}");
    }
}

#[test]
fn rank_cdf_limits() {
    assert_eq!(rank_cdf(1e6, 0.1).unwrap(), 1.0);
    assert_eq!(rank_cdf(-1e6, 0.1).unwrap(), 0.0);
    assert!(rank_cdf(0.5, 0.0).is_err());
    assert!(rank_cdf(0.5, -1.0).is_err());
    for w in [0.1, 0.37, 0.9] {
        assert!((rank_cdf(w, 1e-6).unwrap() - rank_cdf_degenerate(w)).abs() < 1e-5);
    }
}

proptest! {
    #[test]
    fn rank_cdf_is_a_cdf(a in -3.0f64..4.0, b in -3.0f64..4.0, s in 0.005f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (rank_cdf(lo, s).unwrap(), rank_cdf(hi, s).unwrap());
        prop_assert!((0.0..=1.0).contains(&fl));
        prop_assert!(fl <= fh + 1e-15);
        prop_assert!((rank_cdf(0.5 + a, s).unwrap() + rank_cdf(0.5 - a, s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_is_increasing_in_rank(u1 in 0.0f64..1.0, u2 in 0.0f64..1.0, x in 0.0f64..20.0) {
        prop_assume!(u1 < u2);
        prop_assert!(structural_outcome(u1, x, 0.0) < structural_outcome(u2, x, 0.0));
    }

    #[test]
    fn draws_are_deterministic(seed in any::<u64>(), fam in 0usize..3) {
        let family = [Family::Baseline, Family::RankMixture, Family::Multiplicative][fam];
        let spec = DgpSpec::new(family, 6, 4).rho(1.0).sigma_v(0.3);
        let a = dgp::sample(&spec, seed).unwrap();
        let b = dgp::sample(&spec, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let c = dgp::sample(&spec, seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(a.1.u, c.1.u);
    }

    #[test]
    fn outcomes_rebuild_from_truth(seed in any::<u64>(), fam in 0usize..3) {
        let family = [Family::Baseline, Family::RankMixture, Family::Multiplicative][fam];
        let spec = DgpSpec::new(family, 5, 3).rho(2.0).sigma_v(0.5);
        let (d, truth) = dgp::sample(&spec, seed).unwrap();
        for i in 0..d.n() {
            for s in 0..d.t() {
                let c = i * d.t() + s;
                let x = d.x_at(i, s, 1);
                let y = match &truth.u_it {
                    Some(u_it) => structural_outcome(u_it[c], x, 0.0),
                    None => structural_outcome(truth.u[i], x, truth.v[c]),
                };
                prop_assert_eq!(d.y_at(i, s).to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn regressor_is_positive_with_overwhelming_probability() {
    let spec = DgpSpec::new(Family::Baseline, 1000, 100);
    let (d, _) = dgp::sample(&spec, 3).unwrap();
    let positive =
        (0..d.n()).flat_map(|i| (0..d.t()).map(move |s| (i, s))).filter(|&(i, s)| d.x_at(i, s, 1) > 0.0).count();
    assert!(positive as f64 / (d.n() * d.t()) as f64 > 0.9999);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn regressor_mean_tracks_rank_when_correlated() {
    let (d, truth) = dgp::sample(&DgpSpec::new(Family::Baseline, 1000, 5).rho(1.0), 8).unwrap();
    let x_bar: Vec<f64> = (0..d.n()).map(|i| (0..d.t()).map(|s| d.x_at(i, s, 1)).sum::<f64>() / d.t() as f64).collect();
    assert!(correlation(&x_bar, &truth.u) >= 0.2);
    let (d0, truth0) = dgp::sample(&DgpSpec::new(Family::Baseline, 1000, 5), 8).unwrap();
    let x_bar0: Vec<f64> = (0..d0.n()).map(|i| (0..d0.t()).map(|s| d0.x_at(i, s, 1)).sum::<f64>() / 5.0).collect();
    assert!(correlation(&x_bar0, &truth0.u).abs() < 0.1);
}

#[test]
fn mixture_ranks_are_uniform() {
    // ranks within a unit are dependent, so test one period across many units
    let spec = DgpSpec::new(Family::RankMixture, 10_000, 2).sigma_v(0.3);
    let (_, truth) = dgp::sample(&spec, 12).unwrap();
    let mut first: Vec<f64> = truth.u_it.unwrap().chunks(2).map(|c| c[0]).collect();
    first.sort_by(f64::total_cmp);
    let m = first.len() as f64;
    let ks = first
        .iter()
        .enumerate()
        .map(|(k, &u)| (u - k as f64 / m).abs().max(((k + 1) as f64 / m - u).abs()))
        .fold(0.0, f64::max);
    assert!(ks <= 1.63 / m.sqrt(), "ks {ks}");
}

fn within_unit_share(sigma_v: f64) -> f64 {
    let spec = DgpSpec::new(Family::RankMixture, 200, 20).sigma_v(sigma_v);
    let (_, truth) = dgp::sample(&spec, 5).unwrap();
    let u_it = truth.u_it.unwrap();
    let t = spec.t;
    let means: Vec<f64> = u_it.chunks(t).map(|c| c.iter().sum::<f64>() / t as f64).collect();
    let within: f64 = u_it.iter().enumerate().map(|(c, u)| (u - means[c / t]).powi(2)).sum::<f64>();
    let grand = u_it.iter().sum::<f64>() / u_it.len() as f64;
    let between: f64 = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * t as f64;
    within / between
}

#[test]
fn mixture_noise_controls_rank_persistence() {
    assert!(within_unit_share(0.01) < 0.1);
    assert!(within_unit_share(1.0) > 1.0);
}

#[test]
fn within_estimator_is_biased_under_multiplicative_design() {
    let spec = DgpSpec::new(Family::Multiplicative, 2000, 20).rho(10.0).sigma_v(0.1);
    let (d, truth) = dgp::sample(&spec, 31).unwrap();
    let bias = within_fe(&d).unwrap().beta_fe[0] - truth.fe_target();
    assert!((0.18..=0.28).contains(&bias), "bias {bias}");
    let (d0, truth0) = dgp::sample(&DgpSpec::new(Family::Multiplicative, 2000, 20).sigma_v(0.1), 31).unwrap();
    assert!((within_fe(&d0).unwrap().beta_fe[0] - truth0.fe_target()).abs() < 0.02);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(dgp::sample(&DgpSpec::new(Family::Baseline, 0, 5), 1).is_err());
    assert!(dgp::sample(&DgpSpec::new(Family::Baseline, 5, 1), 1).is_err());
    assert!(dgp::sample(&DgpSpec::new(Family::Baseline, 5, 5).rho(-1.0), 1).is_err());
    assert!(dgp::sample(&DgpSpec::new(Family::RankMixture, 5, 5).sigma_v(0.0), 1).is_err());
    assert!(dgp::sample_baseline(&DgpSpec::new(Family::Multiplicative, 5, 5), 1).is_err());
}
