//! Trade-off functions: the hypothesis-testing curves audited by this crate.
//!
//! A trade-off function maps a type-I error level x in [0, 1] to the smallest
//! achievable type-II error when distinguishing two distributions. Every value
//! here is convex, non-increasing, lies in [0, 1], and satisfies f(1) = 0 and
//! f(x) <= 1 - x. Supported families:
//!
//! * `Identity`: 1 - x (indistinguishable distributions — the perfect-privacy
//!   claim).
//! * `Zero`: identically 0 (perfectly distinguishable).
//! * `Gdp { mu }`: Gaussian curve Phi(Phi^-1(1 - x) - mu).
//! * `EpsDelta { eps, delta }`: max{0, 1 - delta - e^eps x, e^-eps (1 - delta - x)}.
//! * `PiecewiseLinear`: user-supplied vertices, validated at construction.
//! * `UniformShift { zeta }`: max{0, 1 - x/(1 - zeta)}, the curve of a uniform
//!   support shrink by zeta.
//!
//! `TruncatedTradeoff` zeroes a curve beyond a radius r; it is the relative
//! form used by power bounds and is deliberately not a `TradeoffFn` (it is
//! neither convex nor a trade-off curve).
//!
//! Evaluation clamps its argument into [0, 1] so conformal thresholds like
//! k/(n+1) + epsilon can be passed verbatim; a non-finite argument is a
//! domain error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{MechanismKind, MechanismPair};
use crate::normal;

#[derive(Debug, Error)]
pub enum TradeoffError {
    #[error("evaluation argument must be finite, got {0}")]
    NonFiniteArgument(f64),
    #[error("invalid {family} parameter: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("piecewise-linear vertices invalid: {0}")]
    InvalidVertices(String),
    #[error("truncation radius must lie in (0, 1], got {0}")]
    InvalidRadius(f64),
    #[error("no closed-form trade-off for mechanism family {0}")]
    NoClosedForm(&'static str),
    #[error("cannot parse trade-off spec {spec:?}: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("reading piecewise-linear file: {0}")]
    Io(#[from] std::io::Error),
}

/// A trade-off curve. Construct through the validating constructors; the
/// variants are public for matching and serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TradeoffFn {
    Identity,
    Zero,
    Gdp { mu: f64 },
    EpsDelta { eps: f64, delta: f64 },
    PiecewiseLinear { points: Vec<(f64, f64)> },
    UniformShift { zeta: f64 },
}

impl TradeoffFn {
    /// Gaussian trade-off with privacy parameter `mu >= 0`.
    pub fn gdp(mu: f64) -> Result<Self, TradeoffError> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(TradeoffError::InvalidParameter {
                family: "gdp",
                reason: format!("mu must be finite and >= 0, got {mu}"),
            });
        }
        Ok(TradeoffFn::Gdp { mu })
    }

    /// (eps, delta) trade-off curve; `eps >= 0`, `delta` in [0, 1].
    pub fn eps_delta(eps: f64, delta: f64) -> Result<Self, TradeoffError> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(TradeoffError::InvalidParameter {
                family: "epsdelta",
                reason: format!("eps must be finite and >= 0, got {eps}"),
            });
        }
        if !delta.is_finite() || !(0.0..=1.0).contains(&delta) {
            return Err(TradeoffError::InvalidParameter {
                family: "epsdelta",
                reason: format!("delta must lie in [0, 1], got {delta}"),
            });
        }
        Ok(TradeoffFn::EpsDelta { eps, delta })
    }

    /// Uniform-shift trade-off with shrink parameter `zeta` in (0, 1).
    pub fn uniform_shift(zeta: f64) -> Result<Self, TradeoffError> {
        if !zeta.is_finite() || zeta <= 0.0 || zeta >= 1.0 {
            return Err(TradeoffError::InvalidParameter {
                family: "unifshift",
                reason: format!("zeta must lie in (0, 1), got {zeta}"),
            });
        }
        Ok(TradeoffFn::UniformShift { zeta })
    }

    /// Piecewise-linear trade-off through `points`. The vertices must span
    /// [0, 1] with strictly increasing x, end at (1, 0), have values in
    /// [0, 1] below the identity curve, be non-increasing, and be convex
    /// (non-decreasing slopes). Tolerance 1e-12 on the inequalities.
    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self, TradeoffError> {
        const TOL: f64 = 1e-12;
        let bad = |reason: String| Err(TradeoffError::InvalidVertices(reason));
        if points.len() < 2 {
            return bad(format!("need at least 2 vertices, got {}", points.len()));
        }
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return bad(format!("non-finite vertex ({x}, {y})"));
            }
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return bad(format!("vertex ({x}, {y}) outside the unit square"));
            }
            if y > 1.0 - x + TOL {
                return bad(format!("vertex ({x}, {y}) lies above the identity curve"));
            }
        }
        if points[0].0 != 0.0 {
            return bad(format!("first vertex must have x = 0, got x = {}", points[0].0));
        }
        let last = *points.last().expect("nonempty");
        if last.0 != 1.0 || last.1.abs() > TOL {
            return bad(format!("last vertex must be (1, 0), got ({}, {})", last.0, last.1));
        }
        let mut prev_slope = f64::NEG_INFINITY;
        for w in points.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if x1 <= x0 {
                return bad(format!("x must be strictly increasing ({x0} then {x1})"));
            }
            if y1 > y0 + TOL {
                return bad(format!("values must be non-increasing ({y0} then {y1})"));
            }
            let slope = (y1 - y0) / (x1 - x0);
            if slope + TOL < prev_slope {
                return bad(format!(
                    "slopes must be non-decreasing for convexity ({prev_slope} then {slope})"
                ));
            }
            prev_slope = slope;
        }
        Ok(TradeoffFn::PiecewiseLinear { points })
    }

    /// Evaluate at `x`. Out-of-range arguments clamp to [0, 1]; non-finite
    /// arguments are a domain error.
    pub fn eval(&self, x: f64) -> Result<f64, TradeoffError> {
        if !x.is_finite() {
            return Err(TradeoffError::NonFiniteArgument(x));
        }
        Ok(self.value_clamped(x))
    }

    /// Evaluation core: clamps `x` into [0, 1]. `x` must not be NaN.
    pub(crate) fn value_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            TradeoffFn::Identity => 1.0 - x,
            TradeoffFn::Zero => 0.0,
            TradeoffFn::Gdp { mu } => normal::cdf(normal::quantile(1.0 - x) - mu),
            TradeoffFn::EpsDelta { eps, delta } => {
                let a = 1.0 - delta - eps.exp() * x;
                let b = (-eps).exp() * (1.0 - delta - x);
                a.max(b).max(0.0)
            }
            TradeoffFn::PiecewiseLinear { points } => {
                // rightmost segment whose start is <= x
                let idx = points.partition_point(|&(px, _)| px <= x);
                if idx == points.len() {
                    return points[points.len() - 1].1;
                }
                let (x1, y1) = points[idx];
                let (x0, y0) = points[idx - 1];
                if x == x0 {
                    return y0;
                }
                y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
            }
            TradeoffFn::UniformShift { zeta } => (1.0 - x / (1.0 - zeta)).max(0.0),
        }
    }
}

impl std::fmt::Display for TradeoffFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TradeoffFn::Identity => write!(f, "identity"),
            TradeoffFn::Zero => write!(f, "zero"),
            TradeoffFn::Gdp { mu } => write!(f, "gdp:mu={mu}"),
            TradeoffFn::EpsDelta { eps, delta } => write!(f, "epsdelta:eps={eps},delta={delta}"),
            TradeoffFn::PiecewiseLinear { points } => {
                write!(f, "pwl:")?;
                for (i, (x, y)) in points.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{x},{y}")?;
                }
                Ok(())
            }
            TradeoffFn::UniformShift { zeta } => write!(f, "unifshift:zeta={zeta}"),
        }
    }
}

/// A trade-off curve zeroed beyond the truncation radius `r`:
/// `g_r(x) = g(x)` for `x <= r`, else 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTradeoff {
    base: TradeoffFn,
    r: f64,
}

impl TruncatedTradeoff {
    pub fn new(base: TradeoffFn, r: f64) -> Result<Self, TradeoffError> {
        if !r.is_finite() || r <= 0.0 || r > 1.0 {
            return Err(TradeoffError::InvalidRadius(r));
        }
        Ok(TruncatedTradeoff { base, r })
    }

    pub fn base(&self) -> &TradeoffFn {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    /// Evaluate at `x` (clamped to [0, 1]); non-finite `x` is a domain error.
    pub fn eval(&self, x: f64) -> Result<f64, TradeoffError> {
        if !x.is_finite() {
            return Err(TradeoffError::NonFiniteArgument(x));
        }
        Ok(self.value_clamped(x))
    }

    pub(crate) fn value_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if x <= self.r {
            self.base.value_clamped(x)
        } else {
            0.0
        }
    }
}

impl std::fmt::Display for TruncatedTradeoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@r={}", self.base, self.r)
    }
}

/// The analytic trade-off curve of a built-in mechanism pair, where one
/// exists: Gaussian shifts, uniform shifts, and the truncated-Gaussian pair
/// (whose distributions have essentially disjoint supports, hence `Zero`).
/// Other pairs — Laplace shifts, interval mixtures, subprocess mechanisms —
/// have no closed form here and return an error.
pub fn exact_tradeoff(pair: &MechanismPair) -> Result<TradeoffFn, TradeoffError> {
    match pair.kind() {
        MechanismKind::GaussianShift { mu, sigma } => {
            let m = mu.abs() / sigma;
            if m == 0.0 {
                Ok(TradeoffFn::Identity)
            } else {
                TradeoffFn::gdp(m)
            }
        }
        MechanismKind::UniformShift { zeta } => TradeoffFn::uniform_shift(*zeta),
        MechanismKind::TruncatedGaussianPair { .. } => Ok(TradeoffFn::Zero),
        MechanismKind::LaplaceShift { .. } => Err(TradeoffError::NoClosedForm("laplace")),
        MechanismKind::IntervalMixture { .. } => Err(TradeoffError::NoClosedForm("mixture")),
        MechanismKind::External { .. } => Err(TradeoffError::NoClosedForm("cmd")),
    }
}

/// True iff `f(x) <= g(x)` at every point of the uniform grid of `grid_size`
/// points spanning [0, 1] (endpoints included).
pub fn pointwise_leq(f: &TradeoffFn, g: &TradeoffFn, grid_size: usize) -> bool {
    assert!(grid_size >= 2, "grid needs at least the two endpoints");
    (0..grid_size).all(|i| {
        let x = i as f64 / (grid_size - 1) as f64;
        f.value_clamped(x) <= g.value_clamped(x)
    })
}

/// Parsed form of a textual trade-off spec: the curve plus an optional
/// truncation radius from an `@r=` suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTradeoff {
    pub curve: TradeoffFn,
    pub r: Option<f64>,
}

/// Parse a trade-off spec: `identity`, `zero`, `gdp:mu=<v>`,
/// `epsdelta:eps=<v>,delta=<v>`, `pwl:<path>`, `unifshift:zeta=<v>`, each
/// optionally suffixed `@r=<v>`. The `pwl` payload is a file of `x,y` lines
/// in ascending x (blank lines and `#` comments ignored).
pub fn parse_tradeoff_spec(spec: &str) -> Result<ParsedTradeoff, TradeoffError> {
    let bad = |reason: &str| TradeoffError::BadSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let (body, r) = match spec.rsplit_once("@r=") {
        Some((body, rs)) => {
            let r: f64 = rs.parse().map_err(|_| bad("radius after @r= is not a number"))?;
            (body, Some(r))
        }
        None => (spec, None),
    };
    let curve = match body.split_once(':') {
        None => match body {
            "identity" => TradeoffFn::Identity,
            "zero" => TradeoffFn::Zero,
            _ => return Err(bad("unknown family (expected identity, zero, gdp, epsdelta, pwl, or unifshift)")),
        },
        Some(("gdp", args)) => {
            let mu = parse_kv(args, &["mu"]).map_err(|e| bad(&e))?[0];
            TradeoffFn::gdp(mu)?
        }
        Some(("epsdelta", args)) => {
            let v = parse_kv(args, &["eps", "delta"]).map_err(|e| bad(&e))?;
            TradeoffFn::eps_delta(v[0], v[1])?
        }
        Some(("unifshift", args)) => {
            let zeta = parse_kv(args, &["zeta"]).map_err(|e| bad(&e))?[0];
            TradeoffFn::uniform_shift(zeta)?
        }
        Some(("pwl", path)) => {
            let text = std::fs::read_to_string(path)?;
            let mut points = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (xs, ys) = line
                    .split_once(',')
                    .ok_or_else(|| bad(&format!("{path}:{}: expected x,y", lineno + 1)))?;
                let x: f64 = xs.trim().parse().map_err(|_| {
                    bad(&format!("{path}:{}: x is not a number", lineno + 1))
                })?;
                let y: f64 = ys.trim().parse().map_err(|_| {
                    bad(&format!("{path}:{}: y is not a number", lineno + 1))
                })?;
                points.push((x, y));
            }
            TradeoffFn::piecewise_linear(points)?
        }
        Some((family, _)) => {
            return Err(bad(&format!("unknown family {family:?}")));
        }
    };
    Ok(ParsedTradeoff { curve, r })
}

/// Parse `key=value` pairs separated by commas, in the given order.
pub(crate) fn parse_kv(args: &str, keys: &[&str]) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = args.split(',').collect();
    if parts.len() != keys.len() {
        return Err(format!("expected {} comma-separated key=value pairs", keys.len()));
    }
    let mut out = Vec::with_capacity(keys.len());
    for (part, key) in parts.iter().zip(keys) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected {key}=<value>, got {part:?}"))?;
        if k.trim() != *key {
            return Err(format!("expected key {key}, got {k:?}"));
        }
        let v: f64 = v.trim().parse().map_err(|_| format!("{key} is not a number: {v:?}"))?;
        out.push(v);
    }
    Ok(out)
}
