//! Concentration bounds that turn an observed count into a confidence
//! interval on its expectation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval on the expectation of `observed` successes out of `trials`
/// independent trials, failing with probability at most `eps` per side.
pub trait ConcentrationBound: Send + Sync {
    fn name(&self) -> &'static str;

    fn interval(&self, observed: f64, trials: f64, eps: f64) -> Result<(f64, f64)>;
}

/// Additive Hoeffding bound: half-width `sqrt(trials/2 · ln(1/eps))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hoeffding;

/// Multiplicative Chernoff bound in its relative-entropy form,
/// `trials · D(observed/trials ‖ p) = ln(1/eps)`, inverted numerically.
/// By Pinsker's inequality it is never wider than [`Hoeffding`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Chernoff;

/// Zero-width interval: the infinite-block limit.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Hoeffding,
    Chernoff,
}

impl BoundKind {
    pub fn strategy(self) -> &'static dyn ConcentrationBound {
        match self {
            BoundKind::Hoeffding => &Hoeffding,
            BoundKind::Chernoff => &Chernoff,
        }
    }

    pub fn label(self) -> &'static str {
        self.strategy().name()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")))
    }
}

impl ConcentrationBound for Hoeffding {
    fn name(&self) -> &'static str {
        "hoeffding"
    }

    fn interval(&self, observed: f64, trials: f64, eps: f64) -> Result<(f64, f64)> {
        check_eps(eps)?;
        let delta = (trials.max(0.0) / 2.0 * (1.0 / eps).ln()).sqrt();
        Ok(((observed - delta).max(0.0), observed + delta))
    }
}

impl ConcentrationBound for Exact {
    fn name(&self) -> &'static str {
        "asymptotic"
    }

    fn interval(&self, observed: f64, _trials: f64, _eps: f64) -> Result<(f64, f64)> {
        Ok((observed, observed))
    }
}

/// Relative entropy between Bernoulli(q) and Bernoulli(p), in nats.
fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let mut d = 0.0;
    if q > 0.0 {
        d += q * (q / p).ln();
    }
    if q < 1.0 {
        d += (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    }
    d
}

const MAX_BISECTIONS: usize = 200;

/// Root of `f` on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let f_lo = f(lo);
    for _ in 0..MAX_BISECTIONS {
        // Geometric steps while the bracket spans orders of magnitude, so
        // roots near zero are reached within the iteration budget.
        let mid = if lo > 0.0 && hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Internal(format!(
        "interval inversion did not converge on [{lo}, {hi}]"
    )))
}

impl ConcentrationBound for Chernoff {
    fn name(&self) -> &'static str {
        "chernoff"
    }

    fn interval(&self, observed: f64, trials: f64, eps: f64) -> Result<(f64, f64)> {
        check_eps(eps)?;
        if !(observed >= 0.0 && observed <= trials) {
            return Err(Error::invalid(format!(
                "need 0 <= observed <= trials, got {observed} of {trials}"
            )));
        }
        if trials == 0.0 {
            return Ok((0.0, 0.0));
        }
        let q = observed / trials;
        let t = (1.0 / eps).ln() / trials;
        let lower = if q == 0.0 {
            0.0
        } else if q == 1.0 {
            (-t).exp()
        } else if bernoulli_kl(q, f64::MIN_POSITIVE) <= t {
            0.0
        } else {
            bisect(f64::MIN_POSITIVE, q, |p| bernoulli_kl(q, p) - t)?
        };
        let upper = if q == 1.0 {
            1.0
        } else if q == 0.0 {
            1.0 - (-t).exp()
        } else {
            bisect(q, 1.0 - f64::EPSILON / 2.0, |p| bernoulli_kl(q, p) - t)?
        };
        Ok((lower * trials, upper * trials))
    }
}

/// Hoeffding interval for a count taken as its own trial total.
pub fn hoeffding_interval(count: f64, eps: f64) -> Result<(f64, f64)> {
    Hoeffding.interval(count, count, eps)
}

/// Chernoff interval for a count taken as its own trial total.
pub fn chernoff_interval(count: f64, eps: f64) -> Result<(f64, f64)> {
    Chernoff.interval(count, count, eps)
}
