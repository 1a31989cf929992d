use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{click_probability, Channel, TimeTag};
use super::{ChannelModel, DetectorModel, LinkState, SlotClass, SourceModel};
use crate::error::{Error, Result};
use crate::protocol::{accumulate_counts, sift, Basis, ObservedCounts, RxOutcome, SequenceStats, SymbolRecord};

/// Slots simulated per RNG stream.
const SHARD_SLOTS: u64 = 1 << 20;

/// Transmitter clock: slot `i` is centered at `offset_ps + i * period_ps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxClock {
    pub period_ps: f64,
    pub offset_ps: f64,
}

impl TxClock {
    pub fn slot_center(&self, slot: u64) -> f64 {
        self.offset_ps + slot as f64 * self.period_ps
    }
}

/// The transmitted symbol stream: an optional public prefix followed by a
/// fixed block repeated indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub prefix: Vec<SymbolRecord>,
    pub block: Vec<SymbolRecord>,
}

impl SymbolStream {
    pub fn new(prefix: Vec<SymbolRecord>, block: Vec<SymbolRecord>) -> Result<Self> {
        if block.is_empty() {
            return Err(Error::invalid("repeating block must be non-empty"));
        }
        Ok(SymbolStream { prefix, block })
    }

    pub fn prefix_len(&self) -> u64 {
        self.prefix.len() as u64
    }

    pub fn is_prefix(&self, slot: u64) -> bool {
        slot < self.prefix_len()
    }

    pub fn symbol(&self, slot: u64) -> SymbolRecord {
        let p = self.prefix_len();
        let mut s = if slot < p {
            self.prefix[slot as usize]
        } else {
            self.block[((slot - p) % self.block.len() as u64) as usize]
        };
        s.slot_index = slot;
        s
    }

    pub fn class(&self, slot: u64) -> SlotClass {
        let s = self.symbol(slot);
        SlotClass::new(s.basis, s.bit, s.intensity)
    }

    /// Number of slots at each intensity in `[from, to)`.
    pub fn intensity_tally(&self, from: u64, to: u64) -> [f64; 2] {
        let mut out = [0.0; 2];
        let p = self.prefix_len();
        for s in from.min(p)..to.min(p) {
            out[self.prefix[s as usize].intensity.index()] += 1.0;
        }
        let (a, b) = (from.max(p) - p, to.max(p) - p);
        if b > a {
            let len = self.block.len() as u64;
            let head = |x: u64| -> [f64; 2] {
                let mut t = [0.0; 2];
                for s in &self.block[..(x % len) as usize] {
                    t[s.intensity.index()] += 1.0;
                }
                let mut per_block = [0.0; 2];
                for s in &self.block {
                    per_block[s.intensity.index()] += 1.0;
                }
                let cycles = (x / len) as f64;
                [t[0] + cycles * per_block[0], t[1] + cycles * per_block[1]]
            };
            let (hb, ha) = (head(b), head(a));
            out[0] += hb[0] - ha[0];
            out[1] += hb[1] - ha[1];
        }
        out
    }

    pub fn block_stats(&self) -> SequenceStats {
        SequenceStats::tally(&self.block)
    }
}

/// Ground truth attached to each emitted tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagTruth {
    pub slot_index: u64,
    /// False for dark or background clicks.
    pub from_signal: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SlotSimulation {
    pub tags: Vec<TimeTag>,
    pub truth: Vec<TagTruth>,
    pub slots: u64,
    pub dead_time_drops: u64,
    pub warnings: Vec<String>,
}

impl SlotSimulation {
    /// Tags paired with their true slot index, in time order.
    pub fn true_assignments(&self) -> Vec<(u64, Channel)> {
        self.tags
            .iter()
            .zip(&self.truth)
            .map(|(t, g)| (g.slot_index, t.channel))
            .collect()
    }
}

struct ClassTable {
    /// Raw per-detector click probability.
    p: [f64; 4],
    /// Probability the click includes a signal photon.
    p_signal: [f64; 4],
    /// `1 - prod_{i >= j}(1 - p_i)`.
    tail_any: [f64; 4],
}

impl ClassTable {
    fn new(state: &LinkState, class: SlotClass) -> Self {
        let means = state.detector_means(class);
        let mut p = [0.0; 4];
        let mut p_signal = [0.0; 4];
        for j in 0..4 {
            p[j] = click_probability(means[j], 1.0, state.noise_prob);
            p_signal[j] = if p[j] > 0.0 {
                (1.0 - (-means[j]).exp()) / p[j]
            } else {
                0.0
            };
        }
        let mut tail_any = [0.0; 4];
        let mut none = 1.0;
        for j in (0..4).rev() {
            none *= 1.0 - p[j];
            tail_any[j] = 1.0 - none;
        }
        ClassTable { p, p_signal, tail_any }
    }
}

/// Slot-level Monte Carlo of the optical link, producing receiver time tags.
///
/// Slots are split into shards of 2²⁰; each shard draws from its own
/// ChaCha stream `(seed, shard)`, so the output is identical whether
/// shards run serially or in parallel. Link conditions (drift, fading) are
/// evaluated once per shard. Dead time is applied to the merged stream.
pub fn simulate_slots(
    stream: &SymbolStream,
    num_slots: u64,
    source: &SourceModel,
    channel: &ChannelModel,
    detector: &DetectorModel,
    clock: TxClock,
    seed: u64,
) -> Result<SlotSimulation> {
    if num_slots == 0 {
        return Err(Error::invalid("nothing to simulate"));
    }
    source.validate()?;
    channel.validate()?;
    detector.validate()?;
    let rate = source.params.rep_rate_hz;
    let fading = match &channel.fading {
        Some(f) => Some(f.series(num_slots as f64 / rate)?),
        None => None,
    };
    let jitter = (detector.jitter_sigma_ps.powi(2) + source.pulse_sigma_ps().powi(2)).sqrt();
    let normal = Normal::new(0.0, jitter).map_err(|e| Error::Internal(e.to_string()))?;

    let mut warnings = Vec::new();
    {
        let stats = stream.block_stats();
        let raw = LinkState::raw(source, channel, detector, 1.0, 0.0);
        let (_, rates) = raw.with_dead_time(&stats, detector.dead_time_ns, rate);
        if let Some(j) = rates.iter().position(|r| r * detector.dead_time_ns * 1e-9 >= 1.0) {
            warnings.push(format!(
                "detector {} in saturation regime ({:.3e} clicks/s)",
                Channel::ALL[j].label(),
                rates[j]
            ));
        }
    }

    let shards = num_slots.div_ceil(SHARD_SLOTS);
    let per_shard: Vec<Result<Vec<(TimeTag, TagTruth)>>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let start = shard * SHARD_SLOTS;
            let end = (start + SHARD_SLOTS).min(num_slots);
            let t_s = start as f64 / rate;
            let mult = match &fading {
                Some(f) => f.multiplier_at(t_s)?,
                None => 1.0,
            };
            let state = LinkState::raw(source, channel, detector, mult, t_s);
            // SlotClass::ALL is laid out in SlotClass::index order.
            let tables: Vec<ClassTable> = SlotClass::ALL.iter().map(|&c| ClassTable::new(&state, c)).collect();
            let p_max = tables.iter().map(|t| t.tail_any[0]).fold(0.0, f64::max);
            let mut out = Vec::new();
            if p_max <= 0.0 {
                return Ok(out);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let log_miss = (1.0 - p_max).ln();
            let mut slot = start;
            loop {
                if p_max < 1.0 {
                    let u: f64 = 1.0 - rng.gen::<f64>();
                    let skip = (u.ln() / log_miss).floor();
                    if skip >= (end - slot) as f64 {
                        break;
                    }
                    slot += skip as u64;
                }
                if slot >= end {
                    break;
                }
                let table = &tables[stream.class(slot).index()];
                if rng.gen::<f64>() * p_max < table.tail_any[0] {
                    let center = clock.slot_center(slot);
                    let mut any = false;
                    for j in 0..4 {
                        let pj = if any {
                            table.p[j]
                        } else if table.tail_any[j] > 0.0 {
                            table.p[j] / table.tail_any[j]
                        } else {
                            0.0
                        };
                        if rng.gen::<f64>() < pj {
                            any = true;
                            let from_signal = rng.gen::<f64>() < table.p_signal[j];
                            let t = if from_signal {
                                center + normal.sample(&mut rng)
                            } else {
                                center + (rng.gen::<f64>() - 0.5) * clock.period_ps
                            };
                            out.push((
                                TimeTag {
                                    channel: Channel::ALL[j],
                                    time_ps: t.max(0.0).round() as u64,
                                },
                                TagTruth {
                                    slot_index: slot,
                                    from_signal,
                                },
                            ));
                        }
                    }
                }
                slot += 1;
            }
            Ok(out)
        })
        .collect();

    let mut merged = Vec::new();
    for part in per_shard {
        merged.extend(part?);
    }
    merged.sort_by_key(|(t, g)| (t.time_ps, g.slot_index, t.channel));

    let dead_ps = detector.dead_time_ns * 1e3;
    let mut last: [Option<u64>; 4] = [None; 4];
    let mut sim = SlotSimulation {
        slots: num_slots,
        warnings,
        ..Default::default()
    };
    for (tag, truth) in merged {
        let ch = tag.channel.id() as usize;
        if let Some(prev) = last[ch] {
            if ((tag.time_ps - prev) as f64) < dead_ps {
                sim.dead_time_drops += 1;
                continue;
            }
        }
        last[ch] = Some(tag.time_ps);
        sim.tags.push(tag);
        sim.truth.push(truth);
    }
    Ok(sim)
}

/// Turns slot-assigned clicks into receiver decisions.
///
/// Clicks in both measurement arms pick an arm uniformly; two clicks in one
/// arm pick a bit uniformly. Input need not be sorted.
pub fn decode_outcomes(assigned: &[(u64, Channel)], seed: u64) -> Vec<RxOutcome> {
    let mut sorted = assigned.to_vec();
    sorted.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let slot = sorted[i].0;
        let mut mask = 0u8;
        while i < sorted.len() && sorted[i].0 == slot {
            mask |= 1 << sorted[i].1.id();
            i += 1;
        }
        let arms = [mask & 0b0011, (mask >> 2) & 0b0011];
        let arm = match (arms[0] != 0, arms[1] != 0) {
            (true, true) => usize::from(rng.gen_bool(0.5)),
            (true, false) => 0,
            _ => 1,
        };
        let bit = match arms[arm] {
            0b01 => 0,
            0b10 => 1,
            _ => u8::from(rng.gen_bool(0.5)),
        };
        let basis = if arm == 0 { Basis::Y } else { Basis::X };
        out.push(RxOutcome {
            slot_index: slot,
            basis,
            bit,
        });
    }
    out
}

/// Sifts slot-assigned clicks against the stream and tallies them,
/// excluding the public prefix. Slots outside `[0, num_slots)` are dropped.
pub fn counts_from_assignments(
    stream: &SymbolStream,
    assigned: &[(u64, Channel)],
    num_slots: u64,
    rep_rate_hz: f64,
    seed: u64,
) -> Result<ObservedCounts> {
    let outcomes: Vec<RxOutcome> = decode_outcomes(assigned, seed)
        .into_iter()
        .filter(|o| !stream.is_prefix(o.slot_index) && o.slot_index < num_slots)
        .collect();
    let tx: Vec<SymbolRecord> = outcomes.iter().map(|o| stream.symbol(o.slot_index)).collect();
    let block = sift(&tx, &outcomes)?;
    let mut counts = accumulate_counts(&[block], &[])?;
    let from = stream.prefix_len().min(num_slots);
    counts.slots_sent = stream.intensity_tally(from, num_slots);
    counts.acquisition_time_s = (num_slots - from) as f64 / rep_rate_hz;
    Ok(counts)
}
