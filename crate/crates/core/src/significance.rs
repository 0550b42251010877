//! Tukey–Kramer honestly-significant-difference test and the studentized range
//! distribution it relies on.
//!
//! The CDF of the studentized range for `k` means and `ν` error degrees of
//! freedom is
//!
//! ```text
//! P(Q ≤ q) = ∫₀^∞ f_s(s; ν) · W(q·s; k) ds
//! W(w; k)  = k ∫ φ(z) · [Φ(z + w) − Φ(z)]^(k−1) dz
//! ```
//!
//! where `f_s` is the density of `sqrt(χ²_ν / ν)`. Both integrals use composite
//! Gauss–Legendre quadrature; the quantile is found by
//! bracketed regula falsi.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GL_POINTS: usize = 16;

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let m = m as f64;
                    let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// ∫ f over [a, b] split into `panels` equal pieces.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + h * (p as f64 + 0.5);
        let half = h / 2.0;
        total += nodes
            .iter()
            .zip(weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half;
    }
    total
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Φ(b) − Φ(a) for a ≤ b, computed on the tail that avoids cancellation.
fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * libm::erfc(-a * FRAC_1_SQRT_2) - 0.5 * libm::erfc(b * FRAC_1_SQRT_2)
    }
}

/// Distribution of the range of `k` independent standard normals.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let v = integrate(
        |z| normal_pdf(z) * normal_interval(z, z + w).powi(km1),
        -8.5,
        8.5,
        12,
    );
    (k as f64 * v).clamp(0.0, 1.0)
}

fn ln_scale_density(s: f64, nu: f64) -> f64 {
    let half = nu / 2.0;
    half * nu.ln() - libm::lgamma(half) - (half - 1.0) * LN_2 + (nu - 1.0) * s.ln()
        - half * s * s
}

/// P(Q ≤ q) for the studentized range with `k` groups and `df` degrees of
/// freedom. `df` may be `f64::INFINITY`.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> Result<f64> {
    check_shape(k, df)?;
    if q.is_nan() {
        return Err(Error::InvalidArgument("q is NaN".into()));
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(1.0);
    }
    if df.is_infinite() {
        return Ok(range_cdf(q, k));
    }
    // sqrt(χ²_ν/ν) has mean ≈ 1 and sd ≈ 1/sqrt(2ν).
    let sd = (2.0 * df).sqrt().recip();
    let lo = (1.0 - 14.0 * sd).max(0.0);
    let hi = 1.0 + 14.0 * sd.max(0.1);
    let p = integrate(
        |s| {
            if s <= 0.0 {
                0.0
            } else {
                ln_scale_density(s, df).exp() * range_cdf(q * s, k)
            }
        },
        lo,
        hi,
        // Few degrees of freedom leave mass near s = 0 where W(q·s) turns sharply.
        if df < 5.0 { 96 } else { 16 },
    );
    Ok(p.clamp(0.0, 1.0))
}

fn check_shape(k: usize, df: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 groups, got {k}")));
    }
    if df.is_nan() || df < 1.0 {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be >= 1, got {df}")));
    }
    Ok(())
}

/// Upper-`alpha` critical value: the q with P(Q ≤ q) = 1 − alpha.
pub fn studentized_range_quantile(alpha: f64, k: usize, df: f64) -> Result<f64> {
    check_shape(k, df)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let g = |q: f64| studentized_range_cdf(q, k, df).map(|p| p - target);
    let (mut lo, mut hi) = (0.0, 2.0);
    let mut g_lo = -target;
    let mut g_hi = g(hi)?;
    while g_hi < 0.0 {
        (lo, g_lo) = (hi, g_hi);
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NonConvergence(format!(
                "no upper bracket for alpha={alpha}, k={k}, df={df}"
            )));
        }
        g_hi = g(hi)?;
    }
    // Illinois variant of regula falsi: keeps the bracket, converges superlinearly.
    let mut side = 0i8;
    for _ in 0..100 {
        let mid = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let g_mid = g(mid)?;
        if g_mid.abs() < 1e-13 || hi - lo < 1e-10 {
            return Ok(mid);
        }
        if g_mid < 0.0 {
            (lo, g_lo) = (mid, g_mid);
            if side == -1 {
                g_hi /= 2.0;
            }
            side = -1;
        } else {
            (hi, g_hi) = (mid, g_mid);
            if side == 1 {
                g_lo /= 2.0;
            }
            side = 1;
        }
    }
    Err(Error::NonConvergence(format!(
        "root search stalled in [{lo}, {hi}] for alpha={alpha}, k={k}, df={df}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledVariance {
    pub mse: f64,
    pub df: f64,
}

/// Within-group mean square with N − k degrees of freedom.
pub fn pooled_mse(groups: &[Vec<f64>]) -> Result<PooledVariance> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "every group needs at least 2 observations, found one with {}",
            g.len()
        )));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let ss: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    let df = (n - groups.len()) as f64;
    Ok(PooledVariance { mse: ss / df, df })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Studentized difference of two group means under the pooled variance.
/// Returns infinity for a nonzero difference with zero variance.
pub fn tukey_kramer_q(mean_i: f64, n_i: usize, mean_j: f64, n_j: usize, mse: f64) -> f64 {
    let diff = (mean_i - mean_j).abs();
    if diff == 0.0 {
        return 0.0;
    }
    let se = (mse / 2.0 * (1.0 / n_i as f64 + 1.0 / n_j as f64)).sqrt();
    if se == 0.0 {
        f64::INFINITY
    } else {
        diff / se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub i: usize,
    pub j: usize,
    pub mean_diff: f64,
    /// Infinite when the pooled variance is zero and the means differ.
    #[serde(with = "extended_f64")]
    pub q: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsdResult {
    pub alpha: f64,
    pub means: Vec<f64>,
    pub sizes: Vec<usize>,
    pub mse: f64,
    pub df: f64,
    pub q_critical: f64,
    /// All pairs with i < j.
    pub pairs: Vec<PairwiseComparison>,
}

impl HsdResult {
    pub fn pair(&self, a: usize, b: usize) -> Option<&PairwiseComparison> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }
}

/// All-pairs Tukey–Kramer comparison of group means at level `alpha`.
pub fn tukey_hsd(groups: &[Vec<f64>], alpha: f64) -> Result<HsdResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 groups, got {k}")));
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("observations must be finite".into()));
    }
    let PooledVariance { mse, df } = pooled_mse(groups)?;
    let q_critical = studentized_range_quantile(alpha, k, df)?;
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let q = tukey_kramer_q(means[i], sizes[i], means[j], sizes[j], mse);
            let p_value = 1.0 - studentized_range_cdf(q, k, df)?;
            pairs.push(PairwiseComparison {
                i,
                j,
                mean_diff: means[i] - means[j],
                q,
                p_value,
                significant: q > q_critical,
            });
        }
    }
    Ok(HsdResult {
        alpha,
        means,
        sizes,
        mse,
        df,
        q_critical,
        pairs,
    })
}

/// JSON has no infinity literal; write it as the string "inf".
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number, got `{t}`"))),
        }
    }
}
