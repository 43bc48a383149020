#![allow(dead_code)]

use nafe_core::PanelDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `Y_it = α_i + 2·X_it + σ·e_it` with `α_i, e_it ~ N(0,1)` and `X_it ~ N(4,1)`.
pub fn location_shift_panel(n: usize, t: usize, noise_sd: f64, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(2 * n * t);
    for _ in 0..n {
        let alpha: f64 = rng.sample(StandardNormal);
        for _ in 0..t {
            let xi = 4.0 + rng.sample::<f64, _>(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            y.push(alpha + 2.0 * xi + noise_sd * e);
            x.extend([1.0, xi]);
        }
    }
    PanelDataset::new(
        (1..=n).map(|i| format!("u{i}")).collect(),
        (1..=t).map(|s| s.to_string()).collect(),
        y,
        x,
        vec!["const".into(), "x1".into()],
        true,
    )
    .unwrap()
}

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, (tol / 2.0).max(1e-15), depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, (tol / 2.0).max(1e-15), depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Standard normal CDF, computed independently of the library's normal distribution.
pub fn phi_cdf(z: f64) -> f64 {
    0.5 * libm_erfc(-z / std::f64::consts::SQRT_2)
}

// erf Maclaurin series below 2, Lentz continued fraction above.
fn libm_erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - libm_erfc(-x);
    }
    if x < 2.0 {
        // Maclaurin series of erf
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        1.0 - sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // Lentz continued fraction for erfc
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for i in 1..300 {
            let a = i as f64 / 2.0;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}
