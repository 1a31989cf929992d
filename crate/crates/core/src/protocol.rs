//! Transmitter symbol generation, sifting, and count accumulation for the
//! three-state one-decoy BB84 protocol.
//!
//! The key basis is `Y` (circular states |L⟩, |R⟩). The check basis `X`
//! only ever carries |D⟩, so every X-basis symbol has bit 0.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Key basis.
    Y,
    /// Check basis.
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Y, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Y => 0,
            Basis::X => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::Y => "Y",
            Basis::X => "X",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "Y" => Ok(Basis::Y),
            "X" => Ok(Basis::X),
            other => Err(Error::invalid(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intensity {
    Signal,
    Decoy,
}

impl Intensity {
    pub const ALL: [Intensity; 2] = [Intensity::Signal, Intensity::Decoy];

    pub fn index(self) -> usize {
        match self {
            Intensity::Signal => 0,
            Intensity::Decoy => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Intensity::Signal => "mu",
            Intensity::Decoy => "nu",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Intensity::Signal),
            "nu" => Ok(Intensity::Decoy),
            other => Err(Error::invalid(format!("unknown intensity {other:?}"))),
        }
    }
}

/// Transmitter truth for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub slot_index: u64,
    pub basis: Basis,
    pub bit: u8,
    pub intensity: Intensity,
}

impl SymbolRecord {
    pub fn is_valid(&self) -> bool {
        self.bit <= 1 && !(self.basis == Basis::X && self.bit != 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub rep_rate_hz: f64,
    /// Signal mean photon number.
    pub mu: f64,
    /// Decoy mean photon number.
    pub nu: f64,
    /// Probability of sending the signal intensity.
    pub p_mu: f64,
    /// Transmitter key-basis probability.
    pub p_z_tx: f64,
    /// Receiver key-basis probability (beamsplitter ratio).
    #[serde(default = "default_p_z_rx")]
    pub p_z_rx: f64,
}

fn default_p_z_rx() -> f64 {
    0.5
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl ProtocolParams {
    /// Parameters of the 1.5 GHz laboratory run.
    pub fn lab_1p5ghz() -> Self {
        ProtocolParams {
            rep_rate_hz: 1.5e9,
            mu: 0.28,
            nu: 0.1232,
            p_mu: 0.5,
            p_z_tx: 0.9,
            p_z_rx: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate_hz > 0.0 && self.rep_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "rep_rate_hz must be positive, got {}",
                self.rep_rate_hz
            )));
        }
        if !(self.nu > 0.0 && self.nu < self.mu && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < nu < mu, got mu={} nu={}",
                self.mu, self.nu
            )));
        }
        open_unit("p_mu", self.p_mu)?;
        open_unit("p_z_tx", self.p_z_tx)?;
        open_unit("p_z_rx", self.p_z_rx)
    }

    pub fn mean_photon(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.mu,
            Intensity::Decoy => self.nu,
        }
    }

    pub fn intensity_prob(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.p_mu,
            Intensity::Decoy => 1.0 - self.p_mu,
        }
    }

    pub fn tx_basis_prob(&self, b: Basis) -> f64 {
        match b {
            Basis::Y => self.p_z_tx,
            Basis::X => 1.0 - self.p_z_tx,
        }
    }

    pub fn rx_basis_prob(&self, b: Basis) -> f64 {
        match b {
            Basis::Y => self.p_z_rx,
            Basis::X => 1.0 - self.p_z_rx,
        }
    }

    pub fn slot_period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }
}

/// Generates `length` transmitter symbols from a seeded generator.
pub fn generate_sequence(seed: u64, length: usize, params: &ProtocolParams) -> Result<Vec<SymbolRecord>> {
    if length == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = (0..length as u64)
        .map(|slot_index| {
            let basis = if rng.gen_bool(params.p_z_tx) {
                Basis::Y
            } else {
                Basis::X
            };
            let bit = match basis {
                Basis::Y => rng.gen_range(0..=1u8),
                Basis::X => 0,
            };
            let intensity = if rng.gen_bool(params.p_mu) {
                Intensity::Signal
            } else {
                Intensity::Decoy
            };
            SymbolRecord {
                slot_index,
                basis,
                bit,
                intensity,
            }
        })
        .collect();
    Ok(seq)
}

/// Fraction of slots in each (basis, intensity) class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub frac: [[f64; 2]; 2],
}

impl SequenceStats {
    /// Class fractions in the limit of an infinitely long random sequence.
    pub fn from_params(params: &ProtocolParams) -> Self {
        let mut frac = [[0.0; 2]; 2];
        for b in Basis::ALL {
            for k in Intensity::ALL {
                frac[b.index()][k.index()] = params.tx_basis_prob(b) * params.intensity_prob(k);
            }
        }
        SequenceStats { frac }
    }

    /// Empirical class fractions of a concrete sequence.
    pub fn tally(seq: &[SymbolRecord]) -> Self {
        let mut frac = [[0.0; 2]; 2];
        for s in seq {
            frac[s.basis.index()][s.intensity.index()] += 1.0;
        }
        let len = seq.len().max(1) as f64;
        for row in frac.iter_mut() {
            for v in row.iter_mut() {
                *v /= len;
            }
        }
        SequenceStats { frac }
    }

    pub fn get(&self, b: Basis, k: Intensity) -> f64 {
        self.frac[b.index()][k.index()]
    }

    pub fn intensity_frac(&self, k: Intensity) -> f64 {
        self.frac[0][k.index()] + self.frac[1][k.index()]
    }
}

/// One receiver decision: the basis it measured in and the bit it read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RxOutcome {
    pub slot_index: u64,
    pub basis: Basis,
    pub bit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedEntry {
    pub slot_index: u64,
    pub basis: Basis,
    pub tx_bit: u8,
    pub rx_bit: u8,
    pub intensity: Intensity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftedBlock {
    pub block_id: u64,
    pub entries: Vec<SiftedEntry>,
}

impl SiftedBlock {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The receiver outcomes that produced this block.
    pub fn as_outcomes(&self) -> Vec<RxOutcome> {
        self.entries
            .iter()
            .map(|e| RxOutcome {
                slot_index: e.slot_index,
                basis: e.basis,
                bit: e.rx_bit,
            })
            .collect()
    }

    fn slot_range(&self) -> Option<(u64, u64)> {
        Some((self.entries.first()?.slot_index, self.entries.last()?.slot_index))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["block_id", "slot_index", "basis", "tx_bit", "rx_bit", "intensity"])?;
        for e in &self.entries {
            wtr.write_record([
                self.block_id.to_string(),
                e.slot_index.to_string(),
                e.basis.label().to_string(),
                e.tx_bit.to_string(),
                e.rx_bit.to_string(),
                e.intensity.label().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Keeps the detections whose receiver basis matches the transmitted basis.
///
/// `tx` must be sorted by slot index. Outcomes may arrive in any order but
/// at most one per slot.
pub fn sift(tx: &[SymbolRecord], rx_outcomes: &[RxOutcome]) -> Result<SiftedBlock> {
    let mut rx: Vec<RxOutcome> = rx_outcomes.to_vec();
    rx.sort_by_key(|o| o.slot_index);
    if let Some(w) = rx.windows(2).find(|w| w[0].slot_index == w[1].slot_index) {
        return Err(Error::integrity(format!(
            "more than one outcome for slot {}",
            w[0].slot_index
        )));
    }
    let mut entries = Vec::new();
    for o in &rx {
        let idx = tx
            .binary_search_by_key(&o.slot_index, |s| s.slot_index)
            .map_err(|_| Error::integrity(format!("slot {} not present in transmitter record", o.slot_index)))?;
        let s = tx[idx];
        if s.basis == o.basis {
            entries.push(SiftedEntry {
                slot_index: o.slot_index,
                basis: s.basis,
                tx_bit: s.bit,
                rx_bit: o.bit,
                intensity: s.intensity,
            });
        }
    }
    Ok(SiftedBlock { block_id: 0, entries })
}

/// Detection and error tallies per (basis, intensity).
///
/// Counts are stored as `f64` so that the same type carries both sampled
/// tallies and analytic expectations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservedCounts {
    pub n: [[f64; 2]; 2],
    pub m: [[f64; 2]; 2],
    pub slots_sent: [f64; 2],
    pub acquisition_time_s: f64,
}

impl ObservedCounts {
    pub fn n(&self, b: Basis, k: Intensity) -> f64 {
        self.n[b.index()][k.index()]
    }

    pub fn m(&self, b: Basis, k: Intensity) -> f64 {
        self.m[b.index()][k.index()]
    }

    pub fn n_basis(&self, b: Basis) -> f64 {
        self.n[b.index()].iter().sum()
    }

    pub fn m_basis(&self, b: Basis) -> f64 {
        self.m[b.index()].iter().sum()
    }

    pub fn total_sent(&self) -> f64 {
        self.slots_sent.iter().sum()
    }

    pub fn with_acquisition_time(mut self, t: f64) -> Self {
        self.acquisition_time_s = t;
        self
    }

    /// Element-wise sum. Associative and commutative.
    pub fn merge(&self, other: &ObservedCounts) -> ObservedCounts {
        let mut out = *self;
        for b in 0..2 {
            for k in 0..2 {
                out.n[b][k] += other.n[b][k];
                out.m[b][k] += other.m[b][k];
            }
        }
        for k in 0..2 {
            out.slots_sent[k] += other.slots_sent[k];
        }
        out.acquisition_time_s += other.acquisition_time_s;
        out
    }

    /// Multiplies every tally and the acquisition time by `factor`.
    pub fn scaled(&self, factor: f64) -> ObservedCounts {
        let mut out = *self;
        for b in 0..2 {
            for k in 0..2 {
                out.n[b][k] *= factor;
                out.m[b][k] *= factor;
            }
        }
        for k in 0..2 {
            out.slots_sent[k] *= factor;
        }
        out.acquisition_time_s *= factor;
        out
    }

    pub fn validate(&self) -> Result<()> {
        for b in Basis::ALL {
            for k in Intensity::ALL {
                let (n, m) = (self.n(b, k), self.m(b, k));
                if !(n >= 0.0 && m >= 0.0 && m <= n) {
                    return Err(Error::integrity(format!(
                        "need 0 <= m <= n for ({}, {}), got n={n} m={m}",
                        b.label(),
                        k.label()
                    )));
                }
            }
        }
        let detected = self.n_basis(Basis::Y) + self.n_basis(Basis::X);
        if self.total_sent() > 0.0 && detected > self.total_sent() {
            return Err(Error::integrity("more detections than emitted slots"));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["basis", "intensity", "n", "m", "slots_sent", "acquisition_time_s"])?;
        for b in Basis::ALL {
            for k in Intensity::ALL {
                wtr.write_record([
                    b.label().to_string(),
                    k.label().to_string(),
                    self.n(b, k).to_string(),
                    self.m(b, k).to_string(),
                    self.slots_sent[k.index()].to_string(),
                    self.acquisition_time_s.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut out = ObservedCounts::default();
        let mut seen = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::invalid(format!("expected 6 columns, got {}", rec.len())));
            }
            let b = Basis::parse(&rec[0])?;
            let k = Intensity::parse(&rec[1])?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("column {i}: {e}")))
            };
            out.n[b.index()][k.index()] = num(2)?;
            out.m[b.index()][k.index()] = num(3)?;
            out.slots_sent[k.index()] = num(4)?;
            out.acquisition_time_s = num(5)?;
            seen += 1;
        }
        if seen != 4 {
            return Err(Error::invalid(format!("expected 4 rows, got {seen}")));
        }
        out.validate()?;
        Ok(out)
    }
}

/// Tallies detections and errors over a set of sifted blocks.
///
/// `slots_sent` comes from the transmitter record; the acquisition time is
/// left at zero for the caller to fill in.
pub fn accumulate_counts(blocks: &[SiftedBlock], tx_truth: &[SymbolRecord]) -> Result<ObservedCounts> {
    let mut ranges: Vec<(u64, u64)> = blocks.iter().filter_map(SiftedBlock::slot_range).collect();
    ranges.sort_unstable();
    if let Some(w) = ranges.windows(2).find(|w| w[1].0 <= w[0].1) {
        return Err(Error::integrity(format!(
            "blocks overlap: [{}, {}] and [{}, {}]",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    let mut counts = ObservedCounts::default();
    for s in tx_truth {
        counts.slots_sent[s.intensity.index()] += 1.0;
    }
    for block in blocks {
        for e in &block.entries {
            let (b, k) = (e.basis.index(), e.intensity.index());
            counts.n[b][k] += 1.0;
            if e.tx_bit != e.rx_bit {
                counts.m[b][k] += 1.0;
            }
        }
    }
    Ok(counts)
}

/// Error fraction `m / n` for one (basis, intensity) cell.
pub fn qber(counts: &ObservedCounts, basis: Basis, intensity: Intensity) -> Result<f64> {
    let n = counts.n(basis, intensity);
    if n <= 0.0 {
        return Err(Error::UndefinedStatistic(format!(
            "no detections in ({}, {})",
            basis.label(),
            intensity.label()
        )));
    }
    Ok(counts.m(basis, intensity) / n)
}

/// Error fraction over both intensities of one basis.
pub fn qber_basis(counts: &ObservedCounts, basis: Basis) -> Result<f64> {
    let n = counts.n_basis(basis);
    if n <= 0.0 {
        return Err(Error::UndefinedStatistic(format!(
            "no detections in basis {}",
            basis.label()
        )));
    }
    Ok(counts.m_basis(basis) / n)
}
