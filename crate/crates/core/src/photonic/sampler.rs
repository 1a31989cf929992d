use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use super::CellProbs;
use crate::error::{Error, Result};
use crate::protocol::ObservedCounts;

/// One sampled key block: the tallies plus the number of slots it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSample {
    pub counts: ObservedCounts,
    pub slots: u64,
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    if p >= 1.0 {
        return Ok(n);
    }
    Binomial::new(n, p)
        .map(|d| d.sample(rng))
        .map_err(|e| Error::Internal(format!("binomial({n}, {p}): {e}")))
}

/// Splits `n` trials over categories with probabilities `p` (the remainder
/// is an implicit "none" category).
fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: &[f64]) -> Result<Vec<u64>> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for &pi in p {
        let k = if mass > 0.0 {
            binomial(rng, left, (pi / mass).min(1.0))?
        } else {
            0
        };
        out.push(k);
        left -= k;
        mass -= pi;
    }
    Ok(out)
}

/// Samples the slots needed to collect exactly `n_key` sifted key-basis
/// detections, and the full sifted tallies observed over those slots.
///
/// Exact under the per-slot independence of the cell probabilities: the
/// number of non-key slots is negative binomial (drawn as a gamma-Poisson
/// mixture), the key cells split multinomially given `n_key`, and the
/// check-basis cells split multinomially over the non-key slots.
pub fn sample_block<R: Rng + ?Sized>(
    probs: &CellProbs,
    n_key: u64,
    rep_rate_hz: f64,
    rng: &mut R,
) -> Result<BlockSample> {
    let p_key = probs.p_key();
    if !(p_key > 0.0) {
        return Err(Error::invalid("key-basis detection probability is zero"));
    }
    if n_key == 0 {
        return Err(Error::invalid("block length must be at least 1"));
    }
    let failures = if p_key >= 1.0 {
        0
    } else {
        let scale = (1.0 - p_key) / p_key;
        let lambda = Gamma::new(n_key as f64, scale)
            .map_err(|e| Error::Internal(format!("gamma: {e}")))?
            .sample(rng);
        if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::Internal(format!("poisson: {e}")))?
                .sample(rng) as u64
        } else {
            0
        }
    };
    let slots = n_key + failures;

    let mut c = ObservedCounts::default();
    // Key cells: (k, ok/err) conditioned on a key detection.
    let key_cells = [
        probs.n[0][0] - probs.m[0][0],
        probs.m[0][0],
        probs.n[0][1] - probs.m[0][1],
        probs.m[0][1],
    ];
    let key_split = multinomial(rng, n_key, &key_cells.map(|q| q / p_key))?;
    c.n[0][0] = (key_split[0] + key_split[1]) as f64;
    c.m[0][0] = key_split[1] as f64;
    c.n[0][1] = (key_split[2] + key_split[3]) as f64;
    c.m[0][1] = key_split[3] as f64;

    let check_cells = [
        probs.n[1][0] - probs.m[1][0],
        probs.m[1][0],
        probs.n[1][1] - probs.m[1][1],
        probs.m[1][1],
    ];
    let rest = 1.0 - p_key;
    let check_split = if rest > 0.0 {
        multinomial(rng, failures, &check_cells.map(|q| (q / rest).max(0.0)))?
    } else {
        vec![0; 4]
    };
    c.n[1][0] = (check_split[0] + check_split[1]) as f64;
    c.m[1][0] = check_split[1] as f64;
    c.n[1][1] = (check_split[2] + check_split[3]) as f64;
    c.m[1][1] = check_split[3] as f64;

    let signal_share = probs.sent[0] / (probs.sent[0] + probs.sent[1]);
    let signal = binomial(rng, slots, signal_share)?;
    c.slots_sent = [signal as f64, (slots - signal) as f64];
    c.acquisition_time_s = slots as f64 / rep_rate_hz;
    Ok(BlockSample { counts: c, slots })
}
