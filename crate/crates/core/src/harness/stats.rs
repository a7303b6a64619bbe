//! Kolmogorov-Smirnov distances and the reflected Brownian marginal.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Parameter("KS needs a nonempty sample".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Parameter("KS sample contains NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `sup_x |F_n(x) - F(x)|` against a continuous reference cdf.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    let s = sorted(samples)?;
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// `sup_x |F_n(x) - G_m(x)|`, evaluated after each tied group.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    // once one sample is exhausted the gap only shrinks toward 0
    d = d.max((i as f64 / n - j as f64 / m).abs());
    Ok(d)
}

/// Either reference accepted by [`empirical_cdf_and_ks`].
pub enum Reference<'a> {
    Cdf(&'a dyn Fn(f64) -> f64),
    Sample(&'a [f64]),
}

pub fn empirical_cdf_and_ks(samples: &[f64], reference: Reference<'_>) -> Result<f64> {
    match reference {
        Reference::Cdf(f) => ks_one_sample(samples, f),
        Reference::Sample(b) => ks_two_sample(samples, b),
    }
}

/// `ln Φ(x)`, accurate far into the lower tail.
fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills ratio expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(Γ[σB + μι](t) <= w)` for reflected Brownian motion started at 0.
pub fn reflected_bm_marginal_cdf(w: f64, t: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(w >= 0.0 && t > 0.0 && sigma > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "need w >= 0, t > 0, sigma > 0; got w={w}, t={t}, sigma={sigma}, mu={mu}"
        )));
    }
    if w.is_infinite() {
        return Ok(1.0);
    }
    let s = sigma * t.sqrt();
    let first = normal_cdf((w - mu * t) / s);
    let log_second = 2.0 * mu * w / (sigma * sigma) + ln_normal_cdf((-w - mu * t) / s);
    Ok((first - log_second.exp()).clamp(0.0, 1.0))
}
