//! KL-LUCB machinery: Bernoulli KL divergence, KL confidence bounds found by
//! bisection, the precision certificate, and best-arm identification over
//! candidate rules.
//!
//! Arms are sampled through caller-supplied callbacks that draw `count`
//! perturbations and return how many kept the target label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rule::RuleStats;

/// `q` is clamped to `[KL_CLAMP, 1 - KL_CLAMP]` before evaluation.
pub const KL_CLAMP: f64 = 1e-12;

const BISECTION_STEPS: usize = 200;

/// `KL(Bernoulli(p) || Bernoulli(q))` with `0 ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let q = q.clamp(KL_CLAMP, 1.0 - KL_CLAMP);
    let term = |a: f64, b: f64| if a <= 0.0 { 0.0 } else { a * (a / b).ln() };
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// Largest `q` in `[p_hat, 1]` with `trials * kl(p_hat, q) <= level`.
pub fn kl_upper_bound(p_hat: f64, trials: u64, level: f64) -> f64 {
    if level <= 0.0 {
        return p_hat;
    }
    if p_hat >= 1.0 {
        return 1.0;
    }
    let budget = level / trials.max(1) as f64;
    if kl_bernoulli(p_hat, 1.0) <= budget {
        return 1.0;
    }
    let (mut lo, mut hi) = (p_hat, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(p_hat, mid) > budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Smallest `q` in `[0, p_hat]` with `trials * kl(p_hat, q) <= level`.
pub fn kl_lower_bound(p_hat: f64, trials: u64, level: f64) -> f64 {
    if level <= 0.0 {
        return p_hat;
    }
    if p_hat <= 0.0 {
        return 0.0;
    }
    let budget = level / trials.max(1) as f64;
    if kl_bernoulli(p_hat, 0.0) <= budget {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p_hat);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(p_hat, mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Exploration rate `ln(n_arms * t^alpha / delta)`.
pub fn exploration_rate(n_arms: usize, t: u64, delta: f64, alpha: f64) -> f64 {
    ((n_arms.max(1) as f64) * (t.max(1) as f64).powf(alpha) / delta).ln().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBound {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceBound {
    /// Bounds around the stats' precision estimate; `[0, 1]` before any trial.
    pub fn of(stats: &RuleStats, level: f64) -> Self {
        match stats.precision_hat() {
            Some(p) => ConfidenceBound {
                lower: kl_lower_bound(p, stats.trials, level),
                upper: kl_upper_bound(p, stats.trials, level),
                level,
            },
            None => ConfidenceBound { lower: 0.0, upper: 1.0, level },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    /// Failure probability of a precision certificate.
    pub delta: f64,
    /// Best-arm slack.
    pub epsilon: f64,
    /// Samples per arm per round.
    pub batch: usize,
    /// Exponent of `t` in the exploration rate.
    pub alpha: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig { delta: 0.6, epsilon: 0.05, batch: 100, alpha: 1.1 }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Argument(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Argument(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        if self.batch == 0 {
            return Err(Error::Argument("batch must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Argument("alpha must be positive".into()));
        }
        Ok(())
    }

    /// Rate for an arm with `trials` samples among `n_arms` live candidates.
    pub fn level(&self, n_arms: usize, trials: u64) -> f64 {
        let rounds = trials.div_ceil(self.batch as u64).max(1);
        exploration_rate(n_arms, rounds, self.delta, self.alpha)
    }

    pub fn bound(&self, stats: &RuleStats, n_arms: usize) -> ConfidenceBound {
        ConfidenceBound::of(stats, self.level(n_arms, stats.trials))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    CertifiedAbove,
    CertifiedBelow,
    BudgetExhausted,
}

/// Samples `batch` at a time until the KL bounds put precision on one side
/// of `tau`, or `budget` new samples have been drawn. Existing trials in
/// `stats` count toward the decision.
pub fn certify_precision(
    stats: &mut RuleStats,
    mut sample: impl FnMut(usize) -> Result<u64>,
    tau: f64,
    n_arms: usize,
    cfg: &BanditConfig,
    budget: u64,
) -> Result<Certificate> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Argument(format!("tau {tau} outside (0, 1)")));
    }
    let mut drawn = 0u64;
    loop {
        if stats.trials > 0 {
            let b = cfg.bound(stats, n_arms);
            if b.lower >= tau {
                return Ok(Certificate::CertifiedAbove);
            }
            if b.upper < tau {
                return Ok(Certificate::CertifiedBelow);
            }
        }
        if drawn >= budget {
            return Ok(Certificate::BudgetExhausted);
        }
        let n = (cfg.batch as u64).min(budget - drawn) as usize;
        let hits = sample(n)?;
        stats.record_precision(hits, n as u64);
        drawn += n as u64;
    }
}

/// Index of the highest precision estimate, ties to the lowest index.
pub fn argmax_precision(stats: &[RuleStats]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in stats.iter().enumerate() {
        let p = s.precision_hat().unwrap_or(0.0);
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
}

/// LUCB best-arm identification. Every unsampled arm first receives one
/// batch; then the empirical best and its strongest challenger are sampled
/// until `best.lower >= challenger.upper - epsilon` or `budget` samples have
/// been spent in total. Returns the arm with the highest precision estimate
/// at stop.
pub fn best_candidate(
    stats: &mut [RuleStats],
    mut sample: impl FnMut(usize, usize) -> Result<u64>,
    cfg: &BanditConfig,
    budget: u64,
) -> Result<usize> {
    if stats.is_empty() {
        return Err(Error::Argument("best_candidate needs at least one arm".into()));
    }
    let n_arms = stats.len();
    let batch = cfg.batch;
    let mut spent = 0u64;
    for (i, s) in stats.iter_mut().enumerate() {
        if s.trials == 0 {
            let hits = sample(i, batch)?;
            s.record_precision(hits, batch as u64);
            spent += batch as u64;
        }
    }
    if n_arms == 1 {
        return Ok(0);
    }
    loop {
        let best = argmax_precision(stats).expect("non-empty");
        let best_bound = cfg.bound(&stats[best], n_arms);
        let mut challenger: Option<(usize, f64)> = None;
        for (i, s) in stats.iter().enumerate() {
            if i == best {
                continue;
            }
            let ub = cfg.bound(s, n_arms).upper;
            if challenger.is_none_or(|(_, cu)| ub > cu) {
                challenger = Some((i, ub));
            }
        }
        let (challenger, challenger_upper) = challenger.expect("at least two arms");
        if best_bound.lower >= challenger_upper - cfg.epsilon || spent >= budget {
            return Ok(best);
        }
        for arm in [best, challenger] {
            let hits = sample(arm, batch)?;
            stats[arm].record_precision(hits, batch as u64);
            spent += batch as u64;
        }
    }
}
