//! Clock recovery from the quantum detections alone: period from the
//! periodicity of arrival times, absolute slot offset from correlation with
//! a public prefix, then slot assignment.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonic::{Channel, TimeTag, TxClock};
use crate::protocol::SymbolRecord;

/// Standard deviation of a unit normal truncated at ±3σ.
const CLIPPED_SIGMA_3: f64 = 0.986_578_392_558_108_6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockEstimate {
    pub period_ps: f64,
    /// Time of slot 0.
    pub offset_ps: f64,
    pub residual_sigma_ps: f64,
    /// Offset correlation peak height in units of the noise floor.
    pub confidence: f64,
}

impl ClockEstimate {
    pub fn clock(&self) -> TxClock {
        TxClock {
            period_ps: self.period_ps,
            offset_ps: self.offset_ps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    pub nominal_period_ps: f64,
    #[serde(skip)]
    pub public_prefix: Vec<SymbolRecord>,
    /// Tags used for the coarse frequency search.
    pub window_tags: usize,
    pub lock_threshold: f64,
    /// Frequency search half-span, parts per million.
    pub max_ppm: f64,
    /// Tags per piecewise re-lock segment.
    pub relock_tags: usize,
}

impl SyncConfig {
    pub fn new(nominal_period_ps: f64, public_prefix: Vec<SymbolRecord>) -> Self {
        SyncConfig {
            nominal_period_ps,
            public_prefix,
            window_tags: 10_000,
            lock_threshold: 6.0,
            max_ppm: 50.0,
            relock_tags: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_period_ps > 0.0) {
            return Err(Error::invalid("nominal period must be positive"));
        }
        if self.window_tags < 10_000 {
            return Err(Error::invalid(format!(
                "window_tags must be >= 10000, got {}",
                self.window_tags
            )));
        }
        if !(self.lock_threshold > 0.0) || !(self.max_ppm > 0.0) {
            return Err(Error::invalid("lock threshold and search span must be positive"));
        }
        if self.relock_tags < self.window_tags {
            return Err(Error::invalid("relock_tags must be at least window_tags"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodEstimate {
    pub period_ps: f64,
    /// Periodogram peak over the RMS amplitude of aperiodic arrivals.
    pub confidence: f64,
}

fn rel_times(tags: &[TimeTag]) -> Vec<f64> {
    let t0 = tags[0].time_ps;
    tags.iter().map(|t| (t.time_ps - t0) as f64).collect()
}

fn amplitude(x: &[f64], period: f64) -> f64 {
    let inv = 1.0 / period;
    let (c, s) = x.iter().fold((0.0, 0.0), |(c, s), &t| {
        let ph = TAU * (t * inv).fract();
        (c + ph.cos(), s + ph.sin())
    });
    (c * c + s * s).sqrt() / x.len() as f64
}

/// Time of the slot grid's phase origin: the circular mean of arrival
/// phases, in `[-period/2, period/2)`.
fn phase_center(x: &[f64], period: f64) -> f64 {
    let inv = 1.0 / period;
    let (c, s) = x.iter().fold((0.0, 0.0), |(c, s), &t| {
        let ph = TAU * (t * inv).fract();
        (c + ph.cos(), s + ph.sin())
    });
    s.atan2(c) / TAU * period
}

/// Least-squares fit of `x = a + k·P` over tags within a quarter period of
/// the predicted grid. Returns `(a, P, kept)`.
fn grid_fit(x: &[f64], a: f64, period: f64) -> Option<(f64, f64, usize)> {
    let mut pts = Vec::with_capacity(x.len());
    for &t in x {
        let k = ((t - a) / period).round();
        let r = t - a - k * period;
        if r.abs() < period / 4.0 {
            pts.push((k, t));
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mk, mt) = pts.iter().fold((0.0, 0.0), |(a, b), &(k, t)| (a + k, b + t));
    let (mk, mt) = (mk / n, mt / n);
    let (skk, skt) = pts.iter().fold((0.0, 0.0), |(a, b), &(k, t)| {
        (a + (k - mk) * (k - mk), b + (k - mk) * (t - mt))
    });
    if skk <= 0.0 {
        return None;
    }
    let p = skt / skk;
    Some((mt - p * mk, p, pts.len()))
}

/// Recovers the slot period from arrival times.
///
/// A coarse periodogram over ±`max_ppm` of nominal on the first
/// `window_tags` tags, parabolic peak interpolation, then least-squares
/// refinement of the slot grid over windows growing fourfold up to all
/// tags.
pub fn estimate_period_with(tags: &[TimeTag], cfg: &SyncConfig) -> Result<PeriodEstimate> {
    cfg.validate()?;
    if tags.len() < cfg.window_tags {
        return Err(Error::invalid(format!(
            "need {} tags, got {}",
            cfg.window_tags,
            tags.len()
        )));
    }
    if tags.windows(2).any(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::invalid("tags must be in time order"));
    }
    let x = rel_times(tags);
    let nominal = cfg.nominal_period_ps;
    let win = &x[..cfg.window_tags];
    let span_periods = win[win.len() - 1] / nominal;
    if !(span_periods >= 1.0) {
        return Err(Error::NoLock("tag window shorter than one period".into()));
    }
    let step = 0.2 * nominal / span_periods;
    let half = cfg.max_ppm * 1e-6 * nominal;
    let n_grid = (2.0 * half / step).ceil() as i64 + 1;
    let lo = nominal - half;
    let amps: Vec<f64> = (0..n_grid)
        .into_par_iter()
        .map(|i| amplitude(win, lo + i as f64 * step))
        .collect();
    let (best, &peak) = amps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    // Uniform phases give a mean-square amplitude of 1/n.
    let floor = 1.0 / (win.len() as f64).sqrt();
    let confidence = peak / floor;
    log::debug!(
        "period search: {} grid points, peak {peak:.4}, floor {floor:.4}",
        amps.len()
    );
    if !(confidence >= cfg.lock_threshold) {
        return Err(Error::NoLock(format!(
            "no periodicity: peak/floor {confidence:.2} below {}",
            cfg.lock_threshold
        )));
    }
    let mut period = lo + best as f64 * step;
    if best > 0 && best + 1 < amps.len() {
        let (y0, y1, y2) = (amps[best - 1], amps[best], amps[best + 1]);
        let d = y0 - 2.0 * y1 + y2;
        if d < 0.0 {
            period += 0.5 * (y0 - y2) / d * step;
        }
    }

    let mut a = phase_center(win, period);
    let mut n = cfg.window_tags;
    loop {
        let (a2, p2, _) =
            grid_fit(&x[..n], a, period).ok_or_else(|| Error::NoLock("grid refinement lost all tags".into()))?;
        a = a2;
        period = p2;
        if n == x.len() {
            break;
        }
        n = (n * 4).min(x.len());
    }
    // Final pass on the full set with the converged grid.
    let (_, p, _) = grid_fit(&x, a, period).ok_or_else(|| Error::NoLock("grid refinement lost all tags".into()))?;
    Ok(PeriodEstimate {
        period_ps: p,
        confidence,
    })
}

pub fn estimate_period(tags: &[TimeTag], nominal_period_ps: f64, window_tags: usize) -> Result<f64> {
    let mut cfg = SyncConfig::new(nominal_period_ps, Vec::new());
    cfg.window_tags = window_tags;
    cfg.relock_tags = cfg.relock_tags.max(window_tags);
    Ok(estimate_period_with(tags, &cfg)?.period_ps)
}

/// Weight of a detection on `channel` if the transmitter sent `sym`:
/// +1 for the expected detector, −1 for its partner, 0 for the other arm.
fn prefix_weight(sym: &SymbolRecord, channel: Channel) -> i32 {
    let (basis, bit) = channel.decode();
    if basis != sym.basis {
        0
    } else if bit == sym.bit {
        1
    } else {
        -1
    }
}

/// Offset of slot 0, found by correlating detections against the public
/// prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    pub offset_ps: f64,
    pub confidence: f64,
    /// Slot index of the first tag.
    pub first_slot: u64,
}

/// Slots of lag searched per expected detection gap; the first tag lands
/// beyond this with probability `e^-LAG_GAPS`.
const LAG_GAPS: f64 = 30.0;

pub fn estimate_offset_with(
    tags: &[TimeTag],
    period_ps: f64,
    prefix: &[SymbolRecord],
    lock_threshold: f64,
) -> Result<OffsetEstimate> {
    if tags.is_empty() || prefix.is_empty() {
        return Err(Error::NoLock("no tags or no public prefix".into()));
    }
    if !(period_ps > 0.0) {
        return Err(Error::invalid("period must be positive"));
    }
    let x = rel_times(tags);
    let c0 = phase_center(&x, period_ps);
    let rel: Vec<i64> = x.iter().map(|t| ((t - c0) / period_ps).round() as i64).collect();
    let first = rel[0];
    let span = (rel[rel.len() - 1] - first + 1) as f64;
    let rate = tags.len() as f64 / span;
    let prefix_len = prefix.len() as i64;
    let max_lag = ((LAG_GAPS / rate).ceil() as i64).clamp(1, prefix_len / 2);
    // Tags that fall inside the prefix for every candidate lag.
    let usable: Vec<(i64, Channel)> = rel
        .iter()
        .zip(tags)
        .map(|(&j, t)| (j - first, t.channel))
        .take_while(|&(j, _)| j < prefix_len - max_lag)
        .collect();
    if usable.len() < 10 {
        return Err(Error::NoLock(format!(
            "only {} detections inside the public prefix",
            usable.len()
        )));
    }
    let scores: Vec<f64> = (0..max_lag)
        .into_par_iter()
        .map(|lag| {
            usable
                .iter()
                .map(|&(j, ch)| prefix_weight(&prefix[(j + lag) as usize], ch))
                .sum::<i32>() as f64
        })
        .collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1.0);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let best = order[0];
    let excess = scores[best] - mean;
    let confidence = excess / sd;
    if !(confidence >= lock_threshold) {
        return Err(Error::NoLock(format!(
            "prefix correlation {confidence:.2} below threshold {lock_threshold}"
        )));
    }
    if let Some(&second) = order.get(1) {
        if scores[second] - mean >= excess / std::f64::consts::SQRT_2 {
            return Err(Error::NoLock(format!(
                "ambiguous prefix alignment: lags {best} and {second} within 3 dB"
            )));
        }
    }
    let first_slot = best as u64;
    let offset_ps = tags[0].time_ps as f64 + c0 + first as f64 * period_ps - best as f64 * period_ps;
    Ok(OffsetEstimate {
        offset_ps,
        confidence,
        first_slot,
    })
}

pub fn estimate_offset(tags: &[TimeTag], period_ps: f64, public_prefix: &[SymbolRecord]) -> Result<f64> {
    Ok(estimate_offset_with(tags, period_ps, public_prefix, 6.0)?.offset_ps)
}

/// Slot-assigned tags with their timing residuals.
#[derive(Debug, Clone, Default)]
pub struct SlotAssignment {
    pub assigned: Vec<(u64, Channel)>,
    pub residuals_ps: Vec<f64>,
    pub sigma_ps: f64,
    pub fwhm_ps: f64,
    pub warnings: Vec<String>,
}

/// Robust Gaussian width of a residual sample: iterative 3σ clipping,
/// corrected for truncation.
pub fn clipped_sigma(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let mut lim = f64::INFINITY;
    let mut sigma = 0.0;
    for _ in 0..50 {
        let (n, s, ss) = residuals
            .iter()
            .filter(|r| r.abs() <= lim)
            .fold((0usize, 0.0, 0.0), |(n, s, ss), &r| (n + 1, s + r, ss + r * r));
        if n < 2 {
            break;
        }
        let m = s / n as f64;
        let raw = (ss / n as f64 - m * m).max(0.0).sqrt();
        let next = if lim.is_finite() { raw / CLIPPED_SIGMA_3 } else { raw };
        let done = (next - sigma).abs() <= 1e-9 * next.max(1e-12);
        sigma = next;
        lim = 3.0 * sigma;
        if done || sigma == 0.0 {
            break;
        }
    }
    sigma
}

pub fn assign_slots(tags: &[TimeTag], clock: &ClockEstimate) -> SlotAssignment {
    let p = clock.period_ps;
    let mut out = SlotAssignment::default();
    out.assigned.reserve(tags.len());
    out.residuals_ps.reserve(tags.len());
    for t in tags {
        let rel = t.time_ps as f64 - clock.offset_ps;
        // A tag exactly on a slot boundary belongs to the earlier slot.
        let k = (rel / p - 0.5).ceil();
        if k < 0.0 {
            continue;
        }
        out.assigned.push((k as u64, t.channel));
        out.residuals_ps.push(rel - k * p);
    }
    let dropped = tags.len() - out.assigned.len();
    if dropped > 0 {
        out.warnings.push(format!("{dropped} tags before slot 0 dropped"));
    }
    out.sigma_ps = clipped_sigma(&out.residuals_ps);
    out.fwhm_ps = crate::photonic::FWHM_PER_SIGMA * out.sigma_ps;
    if out.sigma_ps > p / 4.0 {
        let w = format!(
            "degraded lock: residual sigma {:.1} ps exceeds a quarter period",
            out.sigma_ps
        );
        log::warn!("{w}");
        out.warnings.push(w);
    }
    out
}

/// Re-fits period and offset on one segment, keeping the slot numbering of
/// the previous clock.
fn relock(tags: &[TimeTag], prev: &ClockEstimate) -> Result<ClockEstimate> {
    let base = tags[0].time_ps;
    let x: Vec<f64> = tags.iter().map(|t| (t.time_ps - base) as f64).collect();
    let a0 = prev.offset_ps - base as f64;
    let (a, p, _) = grid_fit(&x, a0, prev.period_ps).ok_or_else(|| Error::NoLock("re-lock lost all tags".into()))?;
    // Slot k sits at base + a + k·p in both the old and new numbering.
    Ok(ClockEstimate {
        period_ps: p,
        offset_ps: base as f64 + a,
        residual_sigma_ps: prev.residual_sigma_ps,
        confidence: prev.confidence,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SyncResult {
    /// One clock per re-lock segment.
    pub clocks: Vec<ClockEstimate>,
    pub assignment: SlotAssignment,
}

impl SyncResult {
    pub fn clock(&self) -> ClockEstimate {
        self.clocks[0]
    }
}

/// Full pipeline: frequency, offset, assignment, with a fresh fit every
/// `relock_tags` tags.
pub fn synchronize(tags: &[TimeTag], cfg: &SyncConfig) -> Result<SyncResult> {
    let period = estimate_period_with(&tags[..tags.len().min(cfg.relock_tags)], cfg)?;
    let off = estimate_offset_with(tags, period.period_ps, &cfg.public_prefix, cfg.lock_threshold)?;
    let mut clock = ClockEstimate {
        period_ps: period.period_ps,
        offset_ps: off.offset_ps,
        residual_sigma_ps: 0.0,
        confidence: off.confidence,
    };
    let mut result = SyncResult::default();
    let mut residuals = Vec::new();
    for (i, chunk) in tags.chunks(cfg.relock_tags).enumerate() {
        if i > 0 {
            clock = relock(chunk, &clock)?;
        }
        let part = assign_slots(chunk, &clock);
        clock.residual_sigma_ps = part.sigma_ps;
        log::info!(
            "lock segment={i} period_ps={:.6} offset_ps={:.1} confidence={:.1} sigma_ps={:.2}",
            clock.period_ps,
            clock.offset_ps,
            clock.confidence,
            clock.residual_sigma_ps
        );
        result.clocks.push(clock);
        result.assignment.assigned.extend(part.assigned);
        result.assignment.warnings.extend(part.warnings);
        residuals.extend(part.residuals_ps);
    }
    result.assignment.sigma_ps = clipped_sigma(&residuals);
    result.assignment.fwhm_ps = crate::photonic::FWHM_PER_SIGMA * result.assignment.sigma_ps;
    result.assignment.residuals_ps = residuals;
    Ok(result)
}

/// Histogram of residuals over `[-half_range, half_range)`.
pub fn jitter_histogram(residuals_ps: &[f64], bin_ps: f64, half_range_ps: f64) -> Result<Vec<(f64, u64)>> {
    if !(bin_ps > 0.0 && half_range_ps > 0.0) {
        return Err(Error::invalid("histogram bin and range must be positive"));
    }
    let bins = (2.0 * half_range_ps / bin_ps).ceil() as usize;
    let mut counts = vec![0u64; bins];
    for &r in residuals_ps {
        let i = ((r + half_range_ps) / bin_ps).floor();
        if i >= 0.0 && (i as usize) < bins {
            counts[i as usize] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-half_range_ps + (i as f64 + 0.5) * bin_ps, c))
        .collect())
}

pub fn write_histogram_csv<W: Write>(hist: &[(f64, u64)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bin_center_ps", "count"])?;
    for (c, n) in hist {
        wtr.write_record([format!("{c:.3}"), n.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Fraction of tags whose assigned slot equals the true one.
pub fn assignment_accuracy(assigned: &[(u64, Channel)], truth: &[u64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let ok = assigned.iter().zip(truth).filter(|((s, _), t)| s == *t).count();
    ok as f64 / truth.len() as f64
}
