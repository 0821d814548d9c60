//! Conformal confidence band for an unknown trade-off curve.
//!
//! From one sample pair the band constructor derives, for each rank k, an
//! upper grid point U(k) and a lower grid point L(k) built from the same rank
//! counts as the audit but with the wider band radius
//! eps = sqrt(-ln(alpha/8n)/(2n)):
//!
//! * `U_x(k) = min{k/(n+1) + eps, 1}`,
//!   `U_y(k) = min{(n+1-l_k)/(n+1) + eps, l*_{n+1-k}/(n+1) + eps, 1}`
//! * `L_x(k) = max{k/(n+1) - eps, 0}`,
//!   `L_y(k) = max{min{(n+1-l*_k)/(n+1) - eps, l_{n+1-k}/(n+1) - eps}, 0}`
//!
//! plus the boundary points U(0) = (0, 1), L_x(0) = 0 (its ordinate is
//! deliberately unset — no finite sample bounds the curve from below at 0),
//! and U(n+1) = L(n+1) = (1, 0). The upper envelope interpolates linearly
//! through the U points; the lower envelope is the right-continuous step
//! function sitting at `L_y(k+1)` on `(L_x(k), L_x(k+1)]`. With probability
//! at least 1 - alpha the true curve of the sampled pair lies between them.
//!
//! Clamping can place several trailing U points at abscissa 1. Interpolation
//! then uses the first point that reaches a shared abscissa for the segment
//! approaching it, and evaluation exactly at the shared abscissa takes the
//! smallest ordinate there — the minimum of valid upper bounds is a valid
//! upper bound. Consequently `eval_upper` is continuous on [0, 1) but may
//! step down at x = 1.
//!
//! The optional monotonize pass replaces the lower envelope by its running
//! maximum from the right — valid because the true curve is non-increasing.
//! It is off by default and recorded in the serialized form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipa::{count_all, AuditError, SamplePair};
use crate::conformal::{epsilon_band, ConformalError};

#[derive(Debug, Error)]
pub enum BandError {
    #[error(transparent)]
    Samples(#[from] AuditError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("width grid start x_min must lie in [0, 1), got {0}")]
    BadXMin(f64),
    #[error("band serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("band deserialization: {0}")]
    BadRepr(String),
}

/// Serialized form: exactly the grid data plus its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BandRepr {
    n: usize,
    alpha: f64,
    epsilon: f64,
    upper_pts: Vec<(f64, f64)>,
    lower_pts: Vec<(f64, Option<f64>)>,
    monotonized: bool,
}

/// One abscissa of the upper envelope after merging coincident points:
/// `y_in` is the ordinate of the first grid point at this x (governs the
/// segment arriving from the left), `y_out` the smallest ordinate here
/// (the value exactly at x and the start of the outgoing segment).
#[derive(Debug, Clone, Copy, PartialEq)]
struct UpperNode {
    x: f64,
    y_in: f64,
    y_out: f64,
}

/// A two-sided confidence band over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBand {
    n: usize,
    alpha: f64,
    epsilon: f64,
    /// U(k) for k = 0..=n+1.
    upper_pts: Vec<(f64, f64)>,
    /// L(k) for k = 0..=n+1; the ordinate at k = 0 is unset.
    lower_pts: Vec<(f64, Option<f64>)>,
    monotonized: bool,
    upper_nodes: Vec<UpperNode>,
    /// lower_eval[k] is the envelope value used on (L_x(k-1), L_x(k)];
    /// after monotonizing, the running maximum from the right.
    lower_eval: Vec<f64>,
}

/// Build the confidence band at level `1 - alpha` from a sample pair.
pub fn build_band(pair: &SamplePair, alpha: f64) -> Result<ConfidenceBand, BandError> {
    let n = pair.n();
    let eps = epsilon_band(alpha, n)?;
    let (l, l_star) = count_all(pair);
    let np1 = (n + 1) as f64;
    let mut upper_pts = Vec::with_capacity(n + 2);
    let mut lower_pts = Vec::with_capacity(n + 2);
    upper_pts.push((0.0, 1.0));
    lower_pts.push((0.0, None));
    for k in 1..=n {
        let xk = k as f64 / np1;
        let ux = (xk + eps).min(1.0);
        let uy = ((n + 1 - l[k - 1]) as f64 / np1 + eps)
            .min(l_star[n - k] as f64 / np1 + eps)
            .min(1.0);
        upper_pts.push((ux, uy));
        let lx = (xk - eps).max(0.0);
        let ly = ((n + 1 - l_star[k - 1]) as f64 / np1 - eps)
            .min(l[n - k] as f64 / np1 - eps)
            .max(0.0);
        lower_pts.push((lx, Some(ly)));
    }
    upper_pts.push((1.0, 0.0));
    lower_pts.push((1.0, Some(0.0)));
    ConfidenceBand::assemble(n, alpha, eps, upper_pts, lower_pts, false)
}

impl ConfidenceBand {
    fn assemble(
        n: usize,
        alpha: f64,
        epsilon: f64,
        upper_pts: Vec<(f64, f64)>,
        lower_pts: Vec<(f64, Option<f64>)>,
        monotonized: bool,
    ) -> Result<Self, BandError> {
        if upper_pts.len() != n + 2 || lower_pts.len() != n + 2 {
            return Err(BandError::BadRepr(format!(
                "expected {} grid points per envelope, got {} upper / {} lower",
                n + 2,
                upper_pts.len(),
                lower_pts.len()
            )));
        }
        if lower_pts[0].1.is_some() {
            return Err(BandError::BadRepr("lower ordinate at k = 0 must be unset".into()));
        }
        if lower_pts[1..].iter().any(|(_, y)| y.is_none()) {
            return Err(BandError::BadRepr("lower ordinates past k = 0 must be set".into()));
        }
        let mut upper_nodes: Vec<UpperNode> = Vec::with_capacity(upper_pts.len());
        for &(x, y) in &upper_pts {
            match upper_nodes.last_mut() {
                Some(node) if node.x == x => node.y_out = node.y_out.min(y),
                _ => upper_nodes.push(UpperNode { x, y_in: y, y_out: y }),
            }
        }
        let mut lower_eval: Vec<f64> = lower_pts[1..]
            .iter()
            .map(|&(_, y)| y.expect("checked above"))
            .collect();
        if monotonized {
            let mut running = f64::NEG_INFINITY;
            for v in lower_eval.iter_mut().rev() {
                running = running.max(*v);
                *v = running;
            }
        }
        Ok(ConfidenceBand {
            n,
            alpha,
            epsilon,
            upper_pts,
            lower_pts,
            monotonized,
            upper_nodes,
            lower_eval,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Upper grid points U(k), k = 0..=n+1.
    pub fn upper_pts(&self) -> &[(f64, f64)] {
        &self.upper_pts
    }

    /// Lower grid points L(k), k = 0..=n+1 (ordinate unset at k = 0).
    pub fn lower_pts(&self) -> &[(f64, Option<f64>)] {
        &self.lower_pts
    }

    pub fn monotonized(&self) -> bool {
        self.monotonized
    }

    /// The same band with the monotonize flag set or cleared.
    pub fn with_monotonized(&self, monotonized: bool) -> Self {
        ConfidenceBand::assemble(
            self.n,
            self.alpha,
            self.epsilon,
            self.upper_pts.clone(),
            self.lower_pts.clone(),
            monotonized,
        )
        .expect("re-assembling a valid band cannot fail")
    }

    /// Upper envelope at `x` in [0, 1].
    pub fn eval_upper(&self, x: f64) -> f64 {
        assert!((0.0..=1.0).contains(&x), "x = {x} outside [0, 1]");
        let nodes = &self.upper_nodes;
        let i = nodes.partition_point(|node| node.x < x);
        // i is the first node with node.x >= x; x <= 1 guarantees it exists
        let right = nodes[i];
        if right.x == x {
            return right.y_out;
        }
        let left = nodes[i - 1];
        left.y_out + (right.y_in - left.y_out) * ((x - left.x) / (right.x - left.x))
    }

    /// Lower envelope at `x` in [0, 1]: the step value on `(L_x(k), L_x(k+1)]`,
    /// with the k = 0 convention `eval_lower(0) = L_y(1)`.
    pub fn eval_lower(&self, x: f64) -> f64 {
        assert!((0.0..=1.0).contains(&x), "x = {x} outside [0, 1]");
        let c = self.lower_pts.partition_point(|&(lx, _)| lx < x);
        self.lower_eval[c.max(1) - 1]
    }

    /// Largest band width `eval_upper - eval_lower` over the 2001-point
    /// uniform grid spanning [x_min, 1].
    pub fn sup_width(&self, x_min: f64) -> Result<f64, BandError> {
        if !x_min.is_finite() || !(0.0..1.0).contains(&x_min) {
            return Err(BandError::BadXMin(x_min));
        }
        let mut widest = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let x = x_min + (1.0 - x_min) * (i as f64 / 2000.0);
            let w = self.eval_upper(x) - self.eval_lower(x);
            if w > widest {
                widest = w;
            }
        }
        Ok(widest)
    }

    /// The abscissa `eps + 1/(n+1)` below which no two-sided width guarantee
    /// exists; the conventional grid start for width summaries.
    pub fn default_x_min(&self) -> f64 {
        self.epsilon + 1.0 / (self.n + 1) as f64
    }

    fn repr(&self) -> BandRepr {
        BandRepr {
            n: self.n,
            alpha: self.alpha,
            epsilon: self.epsilon,
            upper_pts: self.upper_pts.clone(),
            lower_pts: self.lower_pts.clone(),
            monotonized: self.monotonized,
        }
    }

    /// JSON form: `{n, alpha, epsilon, upper_pts, lower_pts, monotonized}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.repr()).expect("band serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, BandError> {
        let repr: BandRepr = serde_json::from_str(text)?;
        ConfidenceBand::assemble(
            repr.n,
            repr.alpha,
            repr.epsilon,
            repr.upper_pts,
            repr.lower_pts,
            repr.monotonized,
        )
    }

    /// CSV of `x,upper,lower` over a uniform grid of `grid_points` >= 2
    /// points spanning [0, 1].
    pub fn to_grid_csv(&self, grid_points: usize) -> String {
        assert!(grid_points >= 2, "grid needs at least the two endpoints");
        let mut out = String::from("x,upper,lower\n");
        for i in 0..grid_points {
            let x = i as f64 / (grid_points - 1) as f64;
            out.push_str(&format!("{},{},{}\n", x, self.eval_upper(x), self.eval_lower(x)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tradeoff::TradeoffFn;

    /// Two points per sample, alpha = 0.3: the radius 0.99707 clamps every
    /// interior grid point, leaving a vacuous band.
    fn vacuous_band() -> ConfidenceBand {
        let pair = SamplePair::new(vec![1.0, 2.0], vec![10.0, 20.0]).unwrap();
        build_band(&pair, 0.3).unwrap()
    }

    #[test]
    fn two_point_example_grid_table() {
        let band = vacuous_band();
        // sqrt(ln(16/0.3)/4), 40-digit reference 0.9970658863091392
        assert!((band.epsilon() - 0.9970658863091392).abs() < 1e-15);
        assert_eq!(
            band.upper_pts(),
            &[(0.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 0.0)]
        );
        assert_eq!(
            band.lower_pts(),
            &[(0.0, None), (0.0, Some(0.0)), (0.0, Some(0.0)), (1.0, Some(0.0))]
        );
    }

    #[test]
    fn vacuous_band_evaluates_to_the_unit_strip() {
        let band = vacuous_band();
        assert_eq!(band.eval_upper(0.0), 1.0);
        assert_eq!(band.eval_upper(0.5), 1.0); // degenerate segment, not the chord to (1, 0)
        assert_eq!(band.eval_upper(1.0 - 1e-12), 1.0);
        assert_eq!(band.eval_upper(1.0), 0.0); // smallest ordinate at the shared abscissa
        assert_eq!(band.eval_lower(0.0), 0.0);
        assert_eq!(band.eval_lower(0.7), 0.0);
        assert_eq!(band.eval_lower(1.0), 0.0);
        assert_eq!(band.sup_width(0.5).unwrap(), 1.0);
    }

    fn typical_band(n: usize, alpha: f64) -> ConfidenceBand {
        // deterministic separated-ish samples over [0, 1] and [0.3, 1.3]
        let d: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        let dp: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64 + 0.3).collect();
        build_band(&SamplePair::new(d, dp).unwrap(), alpha).unwrap()
    }

    #[test]
    fn envelopes_are_ordered_and_shaped() {
        let band = typical_band(400, 0.1);
        let mut prev_u = f64::INFINITY;
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let u = band.eval_upper(x);
            let lo = band.eval_lower(x);
            assert!((0.0..=1.0).contains(&u));
            assert!((0.0..=1.0).contains(&lo));
            assert!(lo <= u + 1e-12, "lower exceeds upper at {x}");
            assert!(u <= prev_u + 1e-12, "upper not non-increasing at {x}");
            prev_u = u;
        }
        assert_eq!(band.eval_upper(0.0), 1.0);
        assert_eq!(band.eval_upper(1.0), 0.0);
        assert_eq!(band.eval_lower(1.0), 0.0);
    }

    #[test]
    fn upper_envelope_continuous_before_one() {
        let band = typical_band(300, 0.05);
        // continuity on [0, 1): compare one-sided limits across every node
        for node in band.upper_nodes.iter().filter(|nd| nd.x < 1.0) {
            if node.x > 0.0 {
                let before = band.eval_upper(node.x - 1e-12);
                assert!((before - band.eval_upper(node.x)).abs() < 1e-9);
            }
            let after = band.eval_upper((node.x + 1e-12).min(1.0 - 1e-9));
            assert!((after - band.eval_upper(node.x)).abs() < 1e-9);
        }
    }

    #[test]
    fn lower_envelope_steps_are_right_continuous() {
        let band = typical_band(50, 0.2);
        for &(lx, _) in band.lower_pts().iter().filter(|(lx, _)| *lx > 0.0 && *lx < 1.0) {
            let at = band.eval_lower(lx);
            let just_after = band.eval_lower(lx + 1e-12);
            let just_before = band.eval_lower(lx - 1e-12);
            // value at the step belongs to the left piece: (prev, lx]
            assert_eq!(at, just_before);
            assert!(just_after <= at + 1e-12);
        }
    }

    #[test]
    fn monotonize_only_raises_and_sorts_the_lower_envelope() {
        let band = typical_band(200, 0.1);
        let mono = band.with_monotonized(true);
        assert!(mono.monotonized());
        assert_eq!(mono.upper_pts(), band.upper_pts());
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let x = i as f64 / 500.0;
            let raw = band.eval_lower(x);
            let m = mono.eval_lower(x);
            assert!(m >= raw - 1e-15, "monotonized must dominate raw at {x}");
            assert!(m <= prev + 1e-15, "monotonized must be non-increasing at {x}");
            prev = m;
        }
    }

    #[test]
    fn band_covers_the_true_curve_on_identical_samples() {
        // d and d' from the same distribution: truth is the identity curve
        let xs: Vec<f64> = (0..800).map(|i| ((i * 37) % 800) as f64 / 800.0).collect();
        let ys: Vec<f64> = (0..800).map(|i| ((i * 53 + 11) % 800) as f64 / 800.0).collect();
        let band = build_band(&SamplePair::new(xs, ys).unwrap(), 0.1).unwrap();
        let truth = TradeoffFn::Identity;
        for i in 0..=500 {
            let x = i as f64 / 500.0;
            let f = truth.eval(x).unwrap();
            assert!(f <= band.eval_upper(x) + 1e-12, "upper fails at {x}");
            assert!(f >= band.eval_lower(x) - 1e-12, "lower fails at {x}");
        }
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let band = typical_band(37, 0.15).with_monotonized(true);
        let text = band.to_json();
        let back = ConfidenceBand::from_json(&text).unwrap();
        assert_eq!(band, back);
        // schema spot-check
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["n"], 37);
        assert_eq!(v["monotonized"], true);
        assert!(v["lower_pts"][0][1].is_null());
        assert_eq!(v["upper_pts"].as_array().unwrap().len(), 39);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let band = typical_band(20, 0.2);
        let csv = band.to_grid_csv(11);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,upper,lower");
        assert_eq!(lines.len(), 12);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[11].starts_with("1,"));
    }

    #[test]
    fn sup_width_validates_and_shrinks_with_n() {
        let band = typical_band(20, 0.2);
        assert!(band.sup_width(1.0).is_err());
        assert!(band.sup_width(-0.1).is_err());
        assert!(band.sup_width(f64::NAN).is_err());
        let small = typical_band(200, 0.2);
        let large = typical_band(5000, 0.2);
        let ws = small.sup_width(small.default_x_min()).unwrap();
        let wl = large.sup_width(large.default_x_min()).unwrap();
        assert!(wl < ws, "width should shrink: {wl} !< {ws}");
    }
}
