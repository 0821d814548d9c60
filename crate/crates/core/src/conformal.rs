//! Distribution-free conformal machinery shared by the audit and the band.
//!
//! Two ingredients:
//!
//! * Finite-sample radii. With n calibration scores, the rank statistics used
//!   by the audit concentrate at rate sqrt(ln(c n / alpha) / (2n)); the audit
//!   splits alpha over 4n events and the band over 8n, giving
//!   `epsilon_audit = sqrt(-ln(alpha/4n)/2n)` and the same with 8n for
//!   `epsilon_band`.
//! * Exact order-statistic tails. For n iid uniforms, the k-th order statistic
//!   is Beta(k, n+1-k); its CDF is the binomial upper tail
//!   `sum_{j=k}^n C(n,j) x^j (1-x)^{n-j}`, evaluated here in log-space so it
//!   stays accurate for n up to 1e5. The Hoeffding relaxation
//!   `exp(-2 n delta^2)` dominates it at `x = k/(n+1) - delta`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("alpha must lie strictly in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("sample size must be >= 1, got {0}")]
    BadSampleSize(usize),
    #[error("rank k must satisfy 1 <= k <= n, got k = {k}, n = {n}")]
    BadRank { k: usize, n: usize },
    #[error("argument must not be NaN")]
    NanArgument,
    #[error("deviation delta must be finite and >= 0, got {0}")]
    BadDelta(f64),
}

/// Which union bound a radius was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusVariant {
    /// alpha split over 4n events (the point-DP audit).
    Audit,
    /// alpha split over 8n events (the two-sided band).
    Band,
}

/// A validated conformal radius: the (alpha, n) inputs plus the resulting
/// epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalRadius {
    pub alpha: f64,
    pub n: usize,
    pub variant: RadiusVariant,
    pub epsilon: f64,
}

impl ConformalRadius {
    pub fn audit(alpha: f64, n: usize) -> Result<Self, ConformalError> {
        Ok(ConformalRadius {
            alpha,
            n,
            variant: RadiusVariant::Audit,
            epsilon: epsilon_audit(alpha, n)?,
        })
    }

    pub fn band(alpha: f64, n: usize) -> Result<Self, ConformalError> {
        Ok(ConformalRadius {
            alpha,
            n,
            variant: RadiusVariant::Band,
            epsilon: epsilon_band(alpha, n)?,
        })
    }
}

fn check_alpha_n(alpha: f64, n: usize) -> Result<(), ConformalError> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(ConformalError::BadAlpha(alpha));
    }
    if n == 0 {
        return Err(ConformalError::BadSampleSize(n));
    }
    Ok(())
}

/// Audit radius `sqrt(-ln(alpha/(4n)) / (2n))`.
pub fn epsilon_audit(alpha: f64, n: usize) -> Result<f64, ConformalError> {
    check_alpha_n(alpha, n)?;
    let n = n as f64;
    Ok((-(alpha / (4.0 * n)).ln() / (2.0 * n)).sqrt())
}

/// Band radius `sqrt(-ln(alpha/(8n)) / (2n))`.
pub fn epsilon_band(alpha: f64, n: usize) -> Result<f64, ConformalError> {
    check_alpha_n(alpha, n)?;
    let n = n as f64;
    Ok((-(alpha / (8.0 * n)).ln() / (2.0 * n)).sqrt())
}

/// CDF of Beta(k, n+1-k) at `x` — equivalently the probability that a
/// Binomial(n, x) reaches k — via the finite sum
/// `sum_{j=k}^n C(n,j) x^j (1-x)^{n-j}`.
///
/// Terms are accumulated in log-space against their running maximum, so the
/// sum neither overflows nor collapses for n up to 1e5. Following the CDF
/// convention, `x < 0` evaluates to 0 and `x > 1` to 1 (the audit feeds in
/// thresholds like k/(n+1) - delta, which can be negative).
pub fn beta_tail_exact(k: usize, n: usize, x: f64) -> Result<f64, ConformalError> {
    if n == 0 {
        return Err(ConformalError::BadSampleSize(n));
    }
    if k < 1 || k > n {
        return Err(ConformalError::BadRank { k, n });
    }
    if x.is_nan() {
        return Err(ConformalError::NanArgument);
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_x = x.ln();
    let ln_1mx = (-x).ln_1p();
    // ln C(n, k) by accumulation: sum_{i=1}^{k} ln((n-k+i)/i)
    let mut ln_binom = 0.0;
    for i in 1..=k {
        ln_binom += ((n - k + i) as f64 / i as f64).ln();
    }
    // scan j = k..n, tracking log-terms and their maximum
    let mut ln_terms = Vec::with_capacity(n - k + 1);
    let mut ln_c = ln_binom;
    let mut max_ln = f64::NEG_INFINITY;
    for j in k..=n {
        let t = ln_c + j as f64 * ln_x + (n - j) as f64 * ln_1mx;
        if t > max_ln {
            max_ln = t;
        }
        ln_terms.push(t);
        // C(n, j+1) = C(n, j) * (n-j)/(j+1)
        if j < n {
            ln_c += ((n - j) as f64 / (j + 1) as f64).ln();
        }
    }
    let sum: f64 = ln_terms.iter().map(|&t| (t - max_ln).exp()).sum();
    Ok((max_ln + sum.ln()).exp().min(1.0))
}

/// Hoeffding tail `exp(-2 n delta^2)`.
pub fn hoeffding_bound(n: usize, delta: f64) -> Result<f64, ConformalError> {
    if n == 0 {
        return Err(ConformalError::BadSampleSize(n));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(ConformalError::BadDelta(delta));
    }
    Ok((-2.0 * n as f64 * delta * delta).exp())
}
