//! Mechanism pairs: the black boxes an audit draws scores from.
//!
//! A `MechanismPair` produces two score distributions — arm `D` and arm
//! `DPrime`, the mechanism run on two neighboring inputs. Built-in families:
//!
//! * `GaussianShift { mu, sigma }`: N(0, sigma^2) vs N(mu, sigma^2)
//! * `LaplaceShift { mu, b }`: Lap(0, b) vs Lap(mu, b)
//! * `UniformShift { zeta }`: U(0, 1) vs U(0, 1 - zeta)
//! * `TruncatedGaussianPair { sigma }`: N(-1, sigma^2) | x <= 0 vs
//!   N(1, sigma^2) | x >= 0 — near-identical in total variation for small
//!   sigma yet perfectly distinguishable in the trade-off sense
//! * `IntervalMixture { m }`: U(0, 1) vs the hierarchical interval-mixture
//!   adversary (a fresh m-subset of the m^2 intervals per sample call)
//! * `External { command }`: an arbitrary subprocess speaking the line
//!   protocol below
//!
//! All built-in sampling is inverse-CDF over the crate's counter-based
//! uniforms (truncated Gaussians use rejection), so a call is a pure function
//! of `(pair, arm, count, seed)`.
//!
//! Subprocess wire protocol, one request per dataset:
//!
//! ```text
//! -> SAMPLE <D|DPRIME> <count> <seed>\n
//! <- <count lines, one decimal float each>
//! <- OK\n
//! ```
//!
//! The child is spawned once per pair on first use (`sh -c <command>`),
//! receives `QUIT\n` at shutdown, and each request times out after 30 s by
//! default. Requests are serialized through a lock, so one pair value can be
//! shared across experiment threads; the child must answer deterministically
//! for a given request line or reproducibility is forfeited.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;
use crate::rng::{streams, CounterRng};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("invalid {family} parameter: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("cannot parse mechanism spec {spec:?}: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("spawning {command:?}: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("writing to mechanism subprocess: {0}")]
    ChildWrite(std::io::Error),
    #[error("mechanism subprocess protocol violation: {0}")]
    Protocol(String),
    #[error("mechanism subprocess produced no response within {0:?}")]
    Timeout(Duration),
    #[error("mechanism subprocess closed its output stream")]
    ChildClosed,
    #[error("internal sampling failure: {0}")]
    Internal(String),
}

/// The two neighboring inputs of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    D,
    DPrime,
}

impl Arm {
    fn protocol_token(self) -> &'static str {
        match self {
            Arm::D => "D",
            Arm::DPrime => "DPRIME",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Arm::D => streams::ARM_D,
            Arm::DPrime => streams::ARM_DPRIME,
        }
    }
}

/// Mechanism family and parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MechanismKind {
    GaussianShift { mu: f64, sigma: f64 },
    LaplaceShift { mu: f64, b: f64 },
    UniformShift { zeta: f64 },
    TruncatedGaussianPair { sigma: f64 },
    IntervalMixture { m: usize },
    External { command: String },
}

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// A mechanism pair ready to sample. Construct through the family
/// constructors or [`parse_mechanism_spec`].
#[derive(Debug)]
pub struct MechanismPair {
    kind: MechanismKind,
    timeout: Duration,
    client: Mutex<Option<ExternalClient>>,
}

impl MechanismPair {
    fn from_kind(kind: MechanismKind) -> Self {
        MechanismPair { kind, timeout: DEFAULT_TIMEOUT, client: Mutex::new(None) }
    }

    pub fn gaussian_shift(mu: f64, sigma: f64) -> Result<Self, MechanismError> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(MechanismError::InvalidParameter {
                family: "gaussian",
                reason: format!("need finite mu and sigma > 0, got mu = {mu}, sigma = {sigma}"),
            });
        }
        Ok(Self::from_kind(MechanismKind::GaussianShift { mu, sigma }))
    }

    pub fn laplace_shift(mu: f64, b: f64) -> Result<Self, MechanismError> {
        if !mu.is_finite() || !b.is_finite() || b <= 0.0 {
            return Err(MechanismError::InvalidParameter {
                family: "laplace",
                reason: format!("need finite mu and b > 0, got mu = {mu}, b = {b}"),
            });
        }
        Ok(Self::from_kind(MechanismKind::LaplaceShift { mu, b }))
    }

    pub fn uniform_shift(zeta: f64) -> Result<Self, MechanismError> {
        if !zeta.is_finite() || zeta <= 0.0 || zeta >= 1.0 {
            return Err(MechanismError::InvalidParameter {
                family: "unifshift",
                reason: format!("need zeta in (0, 1), got {zeta}"),
            });
        }
        Ok(Self::from_kind(MechanismKind::UniformShift { zeta }))
    }

    pub fn truncated_gaussian(sigma: f64) -> Result<Self, MechanismError> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(MechanismError::InvalidParameter {
                family: "truncgauss",
                reason: format!("need sigma > 0, got {sigma}"),
            });
        }
        Ok(Self::from_kind(MechanismKind::TruncatedGaussianPair { sigma }))
    }

    pub fn interval_mixture(m: usize) -> Result<Self, MechanismError> {
        if m < 2 {
            return Err(MechanismError::InvalidParameter {
                family: "mixture",
                reason: format!("need m >= 2 intervals, got {m}"),
            });
        }
        Ok(Self::from_kind(MechanismKind::IntervalMixture { m }))
    }

    pub fn external(command: impl Into<String>) -> Self {
        Self::from_kind(MechanismKind::External { command: command.into() })
    }

    pub fn external_with_timeout(command: impl Into<String>, timeout: Duration) -> Self {
        let mut pair = Self::external(command);
        pair.timeout = timeout;
        pair
    }

    pub fn kind(&self) -> &MechanismKind {
        &self.kind
    }

    /// Whether this family is known to satisfy the monotone-likelihood-ratio
    /// assumption the point-DP reading relies on: the fixed-scale location
    /// families (Gaussian, Laplace, uniform shifts).
    pub fn mlr_known(&self) -> bool {
        matches!(
            self.kind,
            MechanismKind::GaussianShift { .. }
                | MechanismKind::LaplaceShift { .. }
                | MechanismKind::UniformShift { .. }
        )
    }

    /// Draw `count` scores from one arm. Bit-identical for identical
    /// `(pair, arm, count, seed)`.
    pub fn sample(&self, arm: Arm, count: usize, seed: u64) -> Result<Vec<f64>, MechanismError> {
        match &self.kind {
            MechanismKind::GaussianShift { mu, sigma } => {
                let shift = if arm == Arm::D { 0.0 } else { *mu };
                let mut rng = CounterRng::new(seed, arm.stream());
                Ok((0..count).map(|_| shift + sigma * normal::quantile(rng.next_unit())).collect())
            }
            MechanismKind::LaplaceShift { mu, b } => {
                let shift = if arm == Arm::D { 0.0 } else { *mu };
                let mut rng = CounterRng::new(seed, arm.stream());
                Ok((0..count).map(|_| shift + laplace_quantile(rng.next_unit(), *b)).collect())
            }
            MechanismKind::UniformShift { zeta } => {
                let width = if arm == Arm::D { 1.0 } else { 1.0 - zeta };
                let mut rng = CounterRng::new(seed, arm.stream());
                Ok((0..count).map(|_| width * rng.next_unit()).collect())
            }
            MechanismKind::TruncatedGaussianPair { sigma } => {
                Ok(truncated_normal_sample(*sigma, arm, count, seed).0)
            }
            MechanismKind::IntervalMixture { m } => match arm {
                Arm::D => {
                    let mut rng = CounterRng::new(seed, arm.stream());
                    Ok((0..count).map(|_| rng.next_unit()).collect())
                }
                Arm::DPrime => crate::adversary::sample_qstar_dataset(*m, count, seed)
                    .map_err(|e| MechanismError::Internal(e.to_string())),
            },
            MechanismKind::External { command } => {
                let mut guard = self.client.lock().unwrap_or_else(|p| p.into_inner());
                if guard.is_none() {
                    *guard = Some(ExternalClient::spawn(command)?);
                }
                guard.as_mut().expect("just spawned").request(arm, count, seed, self.timeout)
            }
        }
    }
}

impl std::fmt::Display for MechanismPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            MechanismKind::GaussianShift { mu, sigma } => write!(f, "gaussian:mu={mu},sigma={sigma}"),
            MechanismKind::LaplaceShift { mu, b } => write!(f, "laplace:mu={mu},b={b}"),
            MechanismKind::UniformShift { zeta } => write!(f, "unifshift:zeta={zeta}"),
            MechanismKind::TruncatedGaussianPair { sigma } => write!(f, "truncgauss:sigma={sigma}"),
            MechanismKind::IntervalMixture { m } => write!(f, "mixture:m={m}"),
            MechanismKind::External { command } => write!(f, "cmd:{command}"),
        }
    }
}

/// Laplace(0, b) quantile.
fn laplace_quantile(u: f64, b: f64) -> f64 {
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else {
        -b * (2.0 * (1.0 - u)).ln()
    }
}

/// Rejection sampler for the truncated pair; returns the draws and the total
/// number of proposal attempts (for acceptance-rate diagnostics). Arm `D` is
/// N(-1, sigma^2) conditioned on x <= 0, arm `DPrime` the mirror image.
fn truncated_normal_sample(sigma: f64, arm: Arm, count: usize, seed: u64) -> (Vec<f64>, u64) {
    let (center, keep_nonpositive) = match arm {
        Arm::D => (-1.0, true),
        Arm::DPrime => (1.0, false),
    };
    let mut rng = CounterRng::new(seed, arm.stream());
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0u64;
    while out.len() < count {
        attempts += 1;
        let z = center + sigma * normal::quantile(rng.next_unit());
        if (keep_nonpositive && z <= 0.0) || (!keep_nonpositive && z >= 0.0) {
            out.push(z);
        }
    }
    (out, attempts)
}

/// Parse a mechanism spec: `gaussian:mu=<v>,sigma=<v>`, `laplace:mu=<v>,b=<v>`,
/// `unifshift:zeta=<v>`, `truncgauss:sigma=<v>`, `mixture:m=<int>`, or
/// `cmd:<shell command>`.
pub fn parse_mechanism_spec(spec: &str) -> Result<MechanismPair, MechanismError> {
    let bad = |reason: &str| MechanismError::BadSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let (family, args) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected <family>:<args> (families: gaussian, laplace, unifshift, truncgauss, mixture, cmd)"))?;
    match family {
        "gaussian" => {
            let v = crate::tradeoff::parse_kv(args, &["mu", "sigma"]).map_err(|e| bad(&e))?;
            MechanismPair::gaussian_shift(v[0], v[1])
        }
        "laplace" => {
            let v = crate::tradeoff::parse_kv(args, &["mu", "b"]).map_err(|e| bad(&e))?;
            MechanismPair::laplace_shift(v[0], v[1])
        }
        "unifshift" => {
            let v = crate::tradeoff::parse_kv(args, &["zeta"]).map_err(|e| bad(&e))?;
            MechanismPair::uniform_shift(v[0])
        }
        "truncgauss" => {
            let v = crate::tradeoff::parse_kv(args, &["sigma"]).map_err(|e| bad(&e))?;
            MechanismPair::truncated_gaussian(v[0])
        }
        "mixture" => {
            let v = crate::tradeoff::parse_kv(args, &["m"]).map_err(|e| bad(&e))?;
            if v[0].fract() != 0.0 || v[0] < 0.0 || v[0] > u32::MAX as f64 {
                return Err(bad("m must be a non-negative integer"));
            }
            MechanismPair::interval_mixture(v[0] as usize)
        }
        "cmd" => {
            if args.trim().is_empty() {
                return Err(bad("cmd: needs a shell command"));
            }
            Ok(MechanismPair::external(args))
        }
        other => Err(bad(&format!("unknown family {other:?}"))),
    }
}

/// Handle to a spawned mechanism subprocess: its stdin plus a reader thread
/// feeding stdout lines through a channel (so reads can time out).
#[derive(Debug)]
struct ExternalClient {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl ExternalClient {
    fn spawn(command: &str) -> Result<Self, MechanismError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|source| MechanismError::Spawn { command: command.to_string(), source })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Ok(ExternalClient { child, stdin, lines })
    }

    fn next_line(&self, deadline: Instant, timeout: Duration) -> Result<String, MechanismError> {
        let now = Instant::now();
        let remaining = deadline.saturating_duration_since(now);
        if remaining.is_zero() {
            return Err(MechanismError::Timeout(timeout));
        }
        match self.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(MechanismError::Protocol(format!("reading child stdout: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(MechanismError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(MechanismError::ChildClosed),
        }
    }

    fn request(
        &mut self,
        arm: Arm,
        count: usize,
        seed: u64,
        timeout: Duration,
    ) -> Result<Vec<f64>, MechanismError> {
        writeln!(self.stdin, "SAMPLE {} {} {}", arm.protocol_token(), count, seed)
            .and_then(|_| self.stdin.flush())
            .map_err(MechanismError::ChildWrite)?;
        let deadline = Instant::now() + timeout;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let line = self.next_line(deadline, timeout)?;
            let value: f64 = line.trim().parse().map_err(|_| {
                MechanismError::Protocol(format!("expected float on response line {}, got {line:?}", i + 1))
            })?;
            if !value.is_finite() {
                return Err(MechanismError::Protocol(format!(
                    "non-finite value on response line {}: {line:?}",
                    i + 1
                )));
            }
            out.push(value);
        }
        let terminator = self.next_line(deadline, timeout)?;
        if terminator.trim() != "OK" {
            return Err(MechanismError::Protocol(format!(
                "expected OK terminator, got {terminator:?}"
            )));
        }
        Ok(out)
    }
}

impl Drop for ExternalClient {
    fn drop(&mut self) {
        // Best effort: ask politely, give the child a moment, then reap.
        let _ = writeln!(self.stdin, "QUIT");
        let _ = self.stdin.flush();
        for _ in 0..25 {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(_) => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical_cdf_at(xs: &[f64], q: f64) -> f64 {
        xs.iter().filter(|&&x| x <= q).count() as f64 / xs.len() as f64
    }

    /// Assert the sample's empirical CDF matches `quantile_of(p)` at the 9
    /// deciles within 2/sqrt(count).
    fn check_deciles(xs: &[f64], quantile_of: impl Fn(f64) -> f64, label: &str) {
        let tol = 2.0 / (xs.len() as f64).sqrt();
        for d in 1..10 {
            let p = d as f64 / 10.0;
            let emp = empirical_cdf_at(xs, quantile_of(p));
            assert!((emp - p).abs() <= tol, "{label}: decile {p} off by {}", (emp - p).abs());
        }
    }

    #[test]
    fn sampling_is_deterministic_in_all_arguments() {
        let pair = MechanismPair::gaussian_shift(1.0, 2.0).unwrap();
        assert_eq!(pair.sample(Arm::D, 50, 7).unwrap(), pair.sample(Arm::D, 50, 7).unwrap());
        assert_ne!(pair.sample(Arm::D, 50, 7).unwrap(), pair.sample(Arm::D, 50, 8).unwrap());
        assert_ne!(pair.sample(Arm::D, 50, 7).unwrap(), pair.sample(Arm::DPrime, 50, 7).unwrap());
        // a prefix of a longer call is the same draw sequence
        let long = pair.sample(Arm::D, 50, 7).unwrap();
        let short = pair.sample(Arm::D, 10, 7).unwrap();
        assert_eq!(&long[..10], &short[..]);
    }

    #[test]
    fn gaussian_and_laplace_match_their_cdfs() {
        let n = 4000;
        let g = MechanismPair::gaussian_shift(1.5, 2.0).unwrap();
        check_deciles(
            &g.sample(Arm::D, n, 11).unwrap(),
            |p| 2.0 * normal::quantile(p),
            "gaussian D",
        );
        check_deciles(
            &g.sample(Arm::DPrime, n, 11).unwrap(),
            |p| 1.5 + 2.0 * normal::quantile(p),
            "gaussian D'",
        );
        let l = MechanismPair::laplace_shift(0.5, 1.5).unwrap();
        check_deciles(
            &l.sample(Arm::DPrime, n, 13).unwrap(),
            |p| 0.5 + laplace_quantile(p, 1.5),
            "laplace D'",
        );
    }

    #[test]
    fn uniform_shift_shrinks_the_support() {
        let pair = MechanismPair::uniform_shift(0.25).unwrap();
        let d = pair.sample(Arm::D, 4000, 3).unwrap();
        let dp = pair.sample(Arm::DPrime, 4000, 3).unwrap();
        assert!(d.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(dp.iter().all(|&x| (0.0..0.75).contains(&x)));
        check_deciles(&d, |p| p, "uniform D");
        check_deciles(&dp, |p| 0.75 * p, "uniform D'");
    }

    #[test]
    fn truncated_pair_respects_supports_and_cdf() {
        let sigma = 1.0;
        let pair = MechanismPair::truncated_gaussian(sigma).unwrap();
        let d = pair.sample(Arm::D, 3000, 5).unwrap();
        let dp = pair.sample(Arm::DPrime, 3000, 5).unwrap();
        assert!(d.iter().all(|&x| x <= 0.0), "arm D must be non-positive");
        assert!(dp.iter().all(|&x| x >= 0.0), "arm D' must be non-negative");
        // CDF of N(-1, s^2) | x <= 0 at quantile p: -1 + s * Phi^-1(p * Phi(1/s))
        let phi_cap = normal::cdf(1.0 / sigma);
        check_deciles(
            &d,
            |p| -1.0 + sigma * normal::quantile(p * phi_cap),
            "truncated D",
        );
    }

    #[test]
    fn truncated_acceptance_rate_matches_theory() {
        // Acceptance probability is Phi(1/sigma) per attempt.
        for sigma in [0.5, 1.0, 2.0] {
            let (xs, attempts) = truncated_normal_sample(sigma, Arm::DPrime, 5000, 99);
            assert_eq!(xs.len(), 5000);
            let rate = 5000.0 / attempts as f64;
            let expect = normal::cdf(1.0 / sigma);
            assert!(
                rate >= expect - 3.0 / (attempts as f64).sqrt(),
                "sigma {sigma}: rate {rate} vs Phi(1/sigma) {expect}"
            );
        }
    }

    #[test]
    fn mixture_arms() {
        let pair = MechanismPair::interval_mixture(20).unwrap();
        let d = pair.sample(Arm::D, 4000, 17).unwrap();
        check_deciles(&d, |p| p, "mixture D");
        // one dataset concentrates on 20 of the 400 intervals
        let dp = pair.sample(Arm::DPrime, 4000, 17).unwrap();
        assert!(dp.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mut intervals: Vec<usize> = dp.iter().map(|&x| (x * 400.0) as usize).collect();
        intervals.sort_unstable();
        intervals.dedup();
        assert!(intervals.len() <= 20, "dataset spilled outside its chosen subset");
        // marginally over fresh subsets, single draws are uniform
        let marginal: Vec<f64> = (0..4000)
            .map(|i| pair.sample(Arm::DPrime, 1, i as u64).unwrap()[0])
            .collect();
        check_deciles(&marginal, |p| p, "mixture D' marginal");
    }

    #[test]
    fn mlr_flags() {
        assert!(MechanismPair::gaussian_shift(1.0, 1.0).unwrap().mlr_known());
        assert!(MechanismPair::laplace_shift(1.0, 1.0).unwrap().mlr_known());
        assert!(MechanismPair::uniform_shift(0.5).unwrap().mlr_known());
        assert!(!MechanismPair::truncated_gaussian(1.0).unwrap().mlr_known());
        assert!(!MechanismPair::interval_mixture(4).unwrap().mlr_known());
        assert!(!MechanismPair::external("cat").mlr_known());
    }

    #[test]
    fn spec_round_trip_and_validation() {
        for spec in [
            "gaussian:mu=1,sigma=1",
            "laplace:mu=0.5,b=2",
            "unifshift:zeta=0.3",
            "truncgauss:sigma=0.25",
            "mixture:m=400",
            "cmd:python3 server.py",
        ] {
            assert_eq!(parse_mechanism_spec(spec).unwrap().to_string(), spec);
        }
        assert!(parse_mechanism_spec("gaussian:mu=1").is_err());
        assert!(parse_mechanism_spec("gaussian:sigma=1,mu=1").is_err());
        assert!(parse_mechanism_spec("normal:mu=1,sigma=1").is_err());
        assert!(parse_mechanism_spec("mixture:m=1.5").is_err());
        assert!(parse_mechanism_spec("mixture:m=1").is_err());
        assert!(parse_mechanism_spec("cmd:").is_err());
        assert!(MechanismPair::gaussian_shift(0.0, 0.0).is_err());
        assert!(MechanismPair::laplace_shift(0.0, -1.0).is_err());
        assert!(MechanismPair::uniform_shift(1.0).is_err());
    }
}
