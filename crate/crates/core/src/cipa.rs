//! Conformal point-DP audit.
//!
//! Given one score sample per neighboring input (d from the mechanism on D,
//! d' from the mechanism on D') and a claimed trade-off curve f, the audit
//! checks whether the observed rank statistics are consistent with the claim
//! at confidence level 1 - alpha. For each rank k it compares
//!
//! * `l_k`  = #{j : d'_j < d_k}  against  (n+1) * (1 - f(k/(n+1) + eps) + eps)
//! * `l*_k` = n + 1 - #{j : d'_j > d_k}  against  (n+1) * (f(1 - k/(n+1) + eps) - eps)
//!
//! with the audit radius eps = sqrt(-ln(alpha/4n)/(2n)). The first rank whose
//! count escapes its envelope is returned as a witness; if no rank does, the
//! claim stands. Ties count in neither direction (strict comparisons), and
//! both samples are sorted once up front, so the scan is O(n log n) total.
//!
//! A rejection is a certificate: with probability at least 1 - alpha under
//! any mechanism actually meeting the claim, no witness exists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{epsilon_audit, ConformalError};
use crate::tradeoff::TradeoffFn;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("samples must have equal length, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("samples must be non-empty")]
    Empty,
    #[error("sample {which} contains a non-finite value at position {index}")]
    NonFinite { which: &'static str, index: usize },
    #[error(transparent)]
    Conformal(#[from] ConformalError),
}

/// A pair of score samples of common size n, held sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    d: Vec<f64>,
    d_prime: Vec<f64>,
}

impl SamplePair {
    /// Validate (equal non-zero lengths, all finite) and sort both samples.
    pub fn new(mut d: Vec<f64>, mut d_prime: Vec<f64>) -> Result<Self, AuditError> {
        if d.len() != d_prime.len() {
            return Err(AuditError::LengthMismatch(d.len(), d_prime.len()));
        }
        if d.is_empty() {
            return Err(AuditError::Empty);
        }
        for (which, s) in [("d", &d), ("d'", &d_prime)] {
            if let Some(index) = s.iter().position(|v| !v.is_finite()) {
                return Err(AuditError::NonFinite { which, index });
            }
        }
        d.sort_by(f64::total_cmp);
        d_prime.sort_by(f64::total_cmp);
        Ok(SamplePair { d, d_prime })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// The first sample, sorted ascending.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// The second sample, sorted ascending.
    pub fn d_prime(&self) -> &[f64] {
        &self.d_prime
    }
}

/// Which envelope a witness rank escaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessSide {
    /// l_k exceeded its upper envelope.
    Lower,
    /// l*_k fell below its lower envelope.
    Upper,
}

/// The first rank at which the observed counts contradict the claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// 1-indexed rank k.
    pub k: usize,
    pub side: WitnessSide,
    pub l: usize,
    pub l_star: usize,
    /// The envelope value the count escaped.
    pub threshold: f64,
}

/// Outcome of an audit: either the claim survived, or a witness explains why
/// it did not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    /// True iff no rank contradicted the claim.
    pub accepted: bool,
    /// Present exactly when `accepted` is false.
    pub witness: Option<Witness>,
}

impl AuditVerdict {
    pub fn rejected(&self) -> bool {
        !self.accepted
    }
}

/// Rank counts at a single 1-indexed rank k: `l = #{j : d'_j < d_k}` and
/// `l* = n + 1 - #{j : d'_j > d_k}`. Ties contribute to neither count.
pub fn count_l(pair: &SamplePair, k: usize) -> (usize, usize) {
    let n = pair.n();
    assert!(k >= 1 && k <= n, "rank k = {k} outside 1..={n}");
    let dk = pair.d[k - 1];
    let l = pair.d_prime.partition_point(|&v| v < dk);
    let le = pair.d_prime.partition_point(|&v| v <= dk);
    let greater = n - le;
    (l, n + 1 - greater)
}

/// All rank counts at once via a two-pointer merge over the sorted samples.
pub(crate) fn count_all(pair: &SamplePair) -> (Vec<usize>, Vec<usize>) {
    let n = pair.n();
    let dp = &pair.d_prime;
    let mut l = Vec::with_capacity(n);
    let mut l_star = Vec::with_capacity(n);
    let (mut lt, mut le) = (0usize, 0usize);
    for &dk in &pair.d {
        while lt < n && dp[lt] < dk {
            lt += 1;
        }
        while le < n && dp[le] <= dk {
            le += 1;
        }
        l.push(lt);
        l_star.push(n + 1 - (n - le));
    }
    (l, l_star)
}

/// Audit the claim `f` at level `alpha` against the observed sample pair.
pub fn audit(pair: &SamplePair, f: &TradeoffFn, alpha: f64) -> Result<AuditVerdict, AuditError> {
    let n = pair.n();
    let eps = epsilon_audit(alpha, n)?;
    let (l, l_star) = count_all(pair);
    let np1 = (n + 1) as f64;
    for k in 1..=n {
        let x = k as f64 / np1;
        let threshold = np1 * (1.0 - f.value_clamped(x + eps) + eps);
        if (l[k - 1] as f64) > threshold {
            return Ok(AuditVerdict {
                accepted: false,
                witness: Some(Witness {
                    k,
                    side: WitnessSide::Lower,
                    l: l[k - 1],
                    l_star: l_star[k - 1],
                    threshold,
                }),
            });
        }
        let threshold = np1 * (f.value_clamped(1.0 - x + eps) - eps);
        if (l_star[k - 1] as f64) < threshold {
            return Ok(AuditVerdict {
                accepted: false,
                witness: Some(Witness {
                    k,
                    side: WitnessSide::Upper,
                    l: l[k - 1],
                    l_star: l_star[k - 1],
                    threshold,
                }),
            });
        }
    }
    Ok(AuditVerdict { accepted: true, witness: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_examples_by_hand() {
        let p = SamplePair::new(vec![5.0], vec![3.0]).unwrap();
        assert_eq!(count_l(&p, 1), (1, 2));
        // an exact tie counts in neither direction
        let p = SamplePair::new(vec![5.0], vec![5.0]).unwrap();
        assert_eq!(count_l(&p, 1), (0, 2));
        let p = SamplePair::new(vec![1.0, 4.0, 9.0], vec![2.0, 3.0, 10.0]).unwrap();
        assert_eq!(count_l(&p, 2), (2, 3));
    }

    #[test]
    fn batched_counts_agree_with_single_rank_counts() {
        // deterministic data with plenty of ties
        let d: Vec<f64> = (0..60).map(|i| ((i * 7) % 13) as f64).collect();
        let dp: Vec<f64> = (0..60).map(|i| ((i * 5 + 3) % 13) as f64).collect();
        let pair = SamplePair::new(d, dp).unwrap();
        let (l, ls) = count_all(&pair);
        for k in 1..=pair.n() {
            assert_eq!((l[k - 1], ls[k - 1]), count_l(&pair, k), "rank {k}");
        }
    }

    #[test]
    fn fully_separated_fixture_rejects_at_rank_152() {
        // d = k/1000, d' = k/1000 + 10: every d' exceeds every d, so the
        // first upper-envelope failure under the identity claim lands at the
        // first k > 1 + 2 eps (n+1), which is 152 at alpha = 0.05, n = 1000.
        let n = 1000;
        let d: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        let dp: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64 + 10.0).collect();
        let pair = SamplePair::new(d, dp).unwrap();
        let v = audit(&pair, &TradeoffFn::Identity, 0.05).unwrap();
        assert!(v.rejected());
        let w = v.witness.unwrap();
        assert_eq!(w.k, 152);
        assert_eq!(w.side, WitnessSide::Upper);
        assert_eq!(w.l, 0);
        assert_eq!(w.l_star, 1);
        let eps = crate::conformal::epsilon_audit(0.05, n).unwrap();
        assert!((w.threshold - (152.0 - 2.0 * 1001.0 * eps)).abs() < 1e-9);
    }

    #[test]
    fn single_observation_never_rejects_identity() {
        // n = 1, alpha = 0.5: eps > 1 pushes both envelopes out of reach.
        for d in [-3.0, 0.0, 7.5] {
            for dp in [-5.0, 0.0, 100.0] {
                let pair = SamplePair::new(vec![d], vec![dp]).unwrap();
                let v = audit(&pair, &TradeoffFn::Identity, 0.5).unwrap();
                assert!(v.accepted, "d = {d}, d' = {dp}");
                assert!(v.witness.is_none());
            }
        }
    }

    #[test]
    fn identical_samples_accept_identity() {
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin()).collect();
        let pair = SamplePair::new(xs.clone(), xs).unwrap();
        assert!(audit(&pair, &TradeoffFn::Identity, 0.05).unwrap().accepted);
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(
            SamplePair::new(vec![1.0], vec![1.0, 2.0]),
            Err(AuditError::LengthMismatch(1, 2))
        ));
        assert!(matches!(SamplePair::new(vec![], vec![]), Err(AuditError::Empty)));
        assert!(matches!(
            SamplePair::new(vec![1.0, f64::NAN], vec![1.0, 2.0]),
            Err(AuditError::NonFinite { which: "d", index: 1 })
        ));
        assert!(matches!(
            SamplePair::new(vec![1.0, 2.0], vec![f64::INFINITY, 2.0]),
            Err(AuditError::NonFinite { which: "d'", index: 0 })
        ));
    }

    #[test]
    fn input_order_does_not_matter() {
        let d = vec![3.0, 1.0, 2.0, -4.0, 0.5];
        let dp = vec![2.5, 2.5, -1.0, 8.0, 0.0];
        let mut d_rev = d.clone();
        d_rev.reverse();
        let mut dp_rev = dp.clone();
        dp_rev.reverse();
        let a = SamplePair::new(d, dp).unwrap();
        let b = SamplePair::new(d_rev, dp_rev).unwrap();
        assert_eq!(a, b);
        let f = TradeoffFn::gdp(0.5).unwrap();
        assert_eq!(audit(&a, &f, 0.2).unwrap(), audit(&b, &f, 0.2).unwrap());
    }

    #[test]
    fn audit_propagates_bad_alpha() {
        let pair = SamplePair::new(vec![1.0], vec![2.0]).unwrap();
        assert!(audit(&pair, &TradeoffFn::Identity, 0.0).is_err());
        assert!(audit(&pair, &TradeoffFn::Identity, 1.0).is_err());
    }
}
