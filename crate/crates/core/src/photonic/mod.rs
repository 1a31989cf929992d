//! Optical layer: weak-coherent-pulse source, lossy and fading channel,
//! threshold detectors with dead time and jitter.
//!
//! Three paths share one per-slot outcome model ([`SlotResponse`]):
//! the closed-form expectation ([`expected_counts`]), the count-level block
//! sampler ([`sample_block`]), and the slot-level time-tag simulator
//! ([`simulate_slots`]).

mod fading;
mod sampler;
mod slots;
mod timetag;

pub use fading::{apply_fading, FadingModel, FadingSeries};
pub use sampler::{sample_block, BlockSample};
pub use slots::{
    counts_from_assignments, decode_outcomes, simulate_slots, SlotSimulation, SymbolStream, TagTruth, TxClock,
};
pub use timetag::{read_tags_binary, read_tags_csv, write_tags_binary, write_tags_csv, Channel, TimeTag};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Basis, Intensity, ObservedCounts, ProtocolParams, SequenceStats};

/// Probability that a threshold detector fires when a Poisson pulse of
/// `mean_photon` photons meets an overall efficiency `total_efficiency`.
pub fn click_probability(mean_photon: f64, total_efficiency: f64, dark_prob_per_slot: f64) -> f64 {
    1.0 - (1.0 - dark_prob_per_slot) * (-mean_photon * total_efficiency).exp()
}

pub fn db_to_linear(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn linear_to_db(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub params: ProtocolParams,
    /// Intrinsic polarization error angle for key-basis states, radians.
    pub misalignment_angle: f64,
    /// Check-basis misalignment; the key-basis angle is used when absent.
    pub misalignment_angle_x: Option<f64>,
    /// Residual light in nominally dark states, as a ratio in dB.
    pub extinction_ratio_db: Option<f64>,
    pub pulse_width_fwhm_ps: f64,
    /// Linear ramp of the error probability, fraction per second.
    pub qber_drift_rate: f64,
}

impl SourceModel {
    pub fn new(params: ProtocolParams) -> Self {
        SourceModel {
            params,
            misalignment_angle: 0.0,
            misalignment_angle_x: None,
            extinction_ratio_db: None,
            pulse_width_fwhm_ps: 0.0,
            qber_drift_rate: 0.0,
        }
    }

    /// Sets the misalignment so that `sin²θ` equals the given error fraction.
    pub fn with_intrinsic_qber(mut self, qber_y: f64, qber_x: Option<f64>) -> Self {
        self.misalignment_angle = misalignment_for_qber(qber_y);
        self.misalignment_angle_x = qber_x.map(misalignment_for_qber);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let quarter = std::f64::consts::FRAC_PI_4;
        for a in std::iter::once(self.misalignment_angle).chain(self.misalignment_angle_x) {
            if !(0.0..quarter).contains(&a) {
                return Err(Error::invalid(format!("misalignment angle {a} outside [0, pi/4)")));
            }
        }
        if self.pulse_width_fwhm_ps < 0.0 || self.qber_drift_rate < 0.0 {
            return Err(Error::invalid("pulse width and drift rate must be non-negative"));
        }
        if let Some(er) = self.extinction_ratio_db {
            if er <= 0.0 {
                return Err(Error::invalid("extinction ratio must be positive dB"));
            }
        }
        Ok(())
    }

    /// Phase swing of the intensity modulator that attenuates the signal
    /// level down to the decoy level (`cos²Δφ = ν/μ`).
    pub fn decoy_phase(&self) -> f64 {
        (self.params.nu / self.params.mu).sqrt().acos()
    }

    /// Mean photon number emitted for an intensity class.
    pub fn emitted_mean(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.params.mu,
            Intensity::Decoy => self.params.mu * self.decoy_phase().cos().powi(2),
        }
    }

    /// Probability that a photon lands on the orthogonal detector of its
    /// own basis at time `t_s` into the run.
    pub fn error_prob(&self, basis: Basis, t_s: f64) -> f64 {
        let angle = match basis {
            Basis::Y => self.misalignment_angle,
            Basis::X => self.misalignment_angle_x.unwrap_or(self.misalignment_angle),
        };
        let leak = self.extinction_ratio_db.map_or(0.0, |db| 10f64.powf(-db / 10.0));
        (angle.sin().powi(2) + leak + self.qber_drift_rate * t_s.max(0.0)).min(0.5)
    }

    /// Gaussian sigma of the optical pulse envelope.
    pub fn pulse_sigma_ps(&self) -> f64 {
        self.pulse_width_fwhm_ps / FWHM_PER_SIGMA
    }
}

pub(crate) const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

pub fn misalignment_for_qber(qber: f64) -> f64 {
    qber.clamp(0.0, 0.5).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub fixed_loss_db: f64,
    pub fading: Option<FadingModel>,
    /// Background counts per second per detector.
    pub background_rate_hz: f64,
}

impl ChannelModel {
    pub fn lossy(fixed_loss_db: f64) -> Self {
        ChannelModel {
            fixed_loss_db,
            fading: None,
            background_rate_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_loss_db >= 0.0 && self.fixed_loss_db.is_finite()) {
            return Err(Error::invalid(format!(
                "fixed_loss_db must be >= 0, got {}",
                self.fixed_loss_db
            )));
        }
        if self.background_rate_hz < 0.0 {
            return Err(Error::invalid("background rate must be non-negative"));
        }
        if let Some(f) = &self.fading {
            f.validate()?;
        }
        Ok(())
    }

    pub fn transmittance(&self) -> f64 {
        db_to_linear(self.fixed_loss_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            efficiency: 0.85,
            dark_rate_hz: 10.0,
            dead_time_ns: 75.0,
            jitter_sigma_ps: 30.0,
        }
    }
}

impl DetectorModel {
    pub const NUM_CHANNELS: usize = 4;

    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            jitter_sigma_ps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "efficiency must be in (0, 1], got {}",
                self.efficiency
            )));
        }
        if self.dark_rate_hz < 0.0 || self.dead_time_ns < 0.0 || self.jitter_sigma_ps < 0.0 {
            return Err(Error::invalid("detector rates and times must be non-negative"));
        }
        Ok(())
    }
}

/// Everything that fixes the per-slot detection statistics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    /// Mean photon numbers for (signal, decoy).
    pub means: [f64; 2],
    /// Channel, fading and detector efficiency combined.
    pub eta: f64,
    pub p_z_rx: f64,
    /// Orthogonal-detector leakage for (Y, X).
    pub error: [f64; 2],
    /// Dark plus background click probability per slot per detector.
    pub noise_prob: f64,
    /// Fraction of time each detector is live (dead-time correction).
    pub availability: [f64; 4],
}

impl LinkState {
    /// Link state without dead-time correction.
    pub fn raw(
        source: &SourceModel,
        channel: &ChannelModel,
        detector: &DetectorModel,
        multiplier: f64,
        t_s: f64,
    ) -> Self {
        let rate = source.params.rep_rate_hz;
        LinkState {
            means: [
                source.emitted_mean(Intensity::Signal),
                source.emitted_mean(Intensity::Decoy),
            ],
            eta: channel.transmittance() * multiplier * detector.efficiency,
            p_z_rx: source.params.p_z_rx,
            error: [source.error_prob(Basis::Y, t_s), source.error_prob(Basis::X, t_s)],
            noise_prob: 1.0 - (-(detector.dark_rate_hz + channel.background_rate_hz) / rate).exp(),
            availability: [1.0; 4],
        }
    }

    /// Applies the non-paralyzable dead-time correction for a sequence with
    /// class fractions `stats`, returning the corrected state together with
    /// each detector's dead-time-free click rate.
    pub fn with_dead_time(mut self, stats: &SequenceStats, dead_time_ns: f64, rep_rate_hz: f64) -> (Self, [f64; 4]) {
        let mut mean_click = [0.0; 4];
        for (class, frac) in slot_classes(stats) {
            let p = self.click_probs(class);
            for j in 0..4 {
                mean_click[j] += frac * p[j];
            }
        }
        let dead_slots = dead_time_ns * 1e-9 * rep_rate_hz;
        let mut rates = [0.0; 4];
        for j in 0..4 {
            self.availability[j] = 1.0 / (1.0 + dead_slots * mean_click[j]);
            rates[j] = mean_click[j] * rep_rate_hz;
        }
        (self, rates)
    }

    /// Mean photon number reaching each detector (L, R, D, A).
    pub fn detector_means(&self, class: SlotClass) -> [f64; 4] {
        let m = self.means[class.intensity.index()] * self.eta;
        let y_arm = m * self.p_z_rx;
        let x_arm = m * (1.0 - self.p_z_rx);
        match class.basis {
            Basis::Y => {
                let e = self.error[0];
                let (right, wrong) = (y_arm * (1.0 - e), y_arm * e);
                let (l, r) = if class.bit == 0 { (right, wrong) } else { (wrong, right) };
                [l, r, x_arm / 2.0, x_arm / 2.0]
            }
            Basis::X => {
                let e = self.error[1];
                [y_arm / 2.0, y_arm / 2.0, x_arm * (1.0 - e), x_arm * e]
            }
        }
    }

    /// Per-detector click probability including noise and availability.
    pub fn click_probs(&self, class: SlotClass) -> [f64; 4] {
        let means = self.detector_means(class);
        let mut p = [0.0; 4];
        for j in 0..4 {
            p[j] = self.availability[j] * click_probability(means[j], 1.0, self.noise_prob);
        }
        p
    }

    /// Probability of each receiver decision for one slot class.
    pub fn response(&self, class: SlotClass) -> SlotResponse {
        SlotResponse::from_click_probs(self.click_probs(class))
    }
}

/// A transmitted symbol up to the slot index: what the optics care about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotClass {
    pub basis: Basis,
    pub bit: u8,
    pub intensity: Intensity,
}

impl SlotClass {
    pub const ALL: [SlotClass; 6] = [
        SlotClass::new(Basis::Y, 0, Intensity::Signal),
        SlotClass::new(Basis::Y, 1, Intensity::Signal),
        SlotClass::new(Basis::X, 0, Intensity::Signal),
        SlotClass::new(Basis::Y, 0, Intensity::Decoy),
        SlotClass::new(Basis::Y, 1, Intensity::Decoy),
        SlotClass::new(Basis::X, 0, Intensity::Decoy),
    ];

    pub const fn new(basis: Basis, bit: u8, intensity: Intensity) -> Self {
        SlotClass { basis, bit, intensity }
    }

    pub fn index(self) -> usize {
        let b = match (self.basis, self.bit) {
            (Basis::Y, 0) => 0,
            (Basis::Y, _) => 1,
            (Basis::X, _) => 2,
        };
        b + 3 * self.intensity.index()
    }
}

/// Slot classes weighted by their frequency; Y-basis bits split evenly.
pub fn slot_classes(stats: &SequenceStats) -> impl Iterator<Item = (SlotClass, f64)> + '_ {
    SlotClass::ALL.into_iter().map(move |c| {
        let f = stats.get(c.basis, c.intensity);
        let w = if c.basis == Basis::Y { f / 2.0 } else { f };
        (c, w)
    })
}

/// Distribution of the receiver's decision in one slot.
///
/// `decided[basis][bit]` is the probability that the receiver registers
/// that basis and bit; the remainder is no detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotResponse {
    pub decided: [[f64; 2]; 2],
}

impl SlotResponse {
    /// Enumerates the 16 click patterns of four independent detectors and
    /// applies the double-click rules: clicks in both arms pick an arm
    /// uniformly, both detectors of an arm pick a bit uniformly.
    pub fn from_click_probs(p: [f64; 4]) -> Self {
        let mut decided = [[0.0; 2]; 2];
        for pattern in 1u8..16 {
            let mut prob = 1.0;
            for (j, &pj) in p.iter().enumerate() {
                prob *= if pattern & (1 << j) != 0 { pj } else { 1.0 - pj };
            }
            let arms = [pattern & 0b0011, (pattern >> 2) & 0b0011];
            let live = arms.iter().filter(|&&a| a != 0).count() as f64;
            for (b, &arm) in arms.iter().enumerate() {
                let w = prob / live;
                match arm {
                    0 => {}
                    0b01 => decided[b][0] += w,
                    0b10 => decided[b][1] += w,
                    _ => {
                        decided[b][0] += w / 2.0;
                        decided[b][1] += w / 2.0;
                    }
                }
            }
        }
        SlotResponse { decided }
    }

    pub fn p_basis(&self, b: Basis) -> f64 {
        self.decided[b.index()][0] + self.decided[b.index()][1]
    }

    pub fn p_any(&self) -> f64 {
        self.p_basis(Basis::Y) + self.p_basis(Basis::X)
    }
}

/// Per-slot probabilities of each sifted cell: `n[b][k]` is the chance a
/// slot yields a sifted detection in basis `b` at intensity `k`, `m[b][k]`
/// the chance it yields a sifted error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellProbs {
    pub n: [[f64; 2]; 2],
    pub m: [[f64; 2]; 2],
    /// Fraction of slots at each intensity.
    pub sent: [f64; 2],
}

impl CellProbs {
    pub fn compute(state: &LinkState, stats: &SequenceStats) -> Self {
        let mut out = CellProbs::default();
        for (class, w) in slot_classes(stats) {
            if w == 0.0 {
                continue;
            }
            let r = state.response(class);
            let (b, k) = (class.basis.index(), class.intensity.index());
            let hit = r.p_basis(class.basis);
            let err = r.decided[b][1 - class.bit as usize];
            out.n[b][k] += w * hit;
            out.m[b][k] += w * err;
            out.sent[k] += w;
        }
        out
    }

    pub fn to_counts(&self, slots: f64, rep_rate_hz: f64) -> ObservedCounts {
        let mut c = ObservedCounts::default();
        for b in 0..2 {
            for k in 0..2 {
                c.n[b][k] = self.n[b][k] * slots;
                c.m[b][k] = self.m[b][k] * slots;
            }
        }
        for k in 0..2 {
            c.slots_sent[k] = self.sent[k] * slots;
        }
        c.acquisition_time_s = slots / rep_rate_hz;
        c
    }

    /// Probability that a slot yields a sifted key-basis detection.
    pub fn p_key(&self) -> f64 {
        self.n[0][0] + self.n[0][1]
    }
}

/// Closed-form expectation model evaluated at a point in time.
#[derive(Debug, Clone)]
pub struct ExpectedModel {
    /// Weighted link states (fading quadrature); weights sum to one.
    pub states: Vec<(f64, LinkState)>,
    pub rep_rate_hz: f64,
    pub warnings: Vec<String>,
}

impl ExpectedModel {
    pub fn new(
        stats: &SequenceStats,
        source: &SourceModel,
        channel: &ChannelModel,
        detector: &DetectorModel,
        t_s: f64,
        horizon_s: f64,
    ) -> Result<Self> {
        source.validate()?;
        channel.validate()?;
        detector.validate()?;
        let rate = source.params.rep_rate_hz;
        let weights = match &channel.fading {
            None => vec![(1.0, 1.0)],
            Some(f) => f.quadrature(t_s, horizon_s)?,
        };
        let mut warnings = Vec::new();
        let mut states = Vec::with_capacity(weights.len());
        for (w, mult) in weights {
            let raw = LinkState::raw(source, channel, detector, mult, t_s);
            let (state, rates) = raw.with_dead_time(stats, detector.dead_time_ns, rate);
            for (j, r) in rates.iter().enumerate() {
                if r * detector.dead_time_ns * 1e-9 >= 1.0 && warnings.is_empty() {
                    warnings.push(format!(
                        "detector {} in saturation regime: {:.3e} clicks/s with {} ns dead time",
                        Channel::ALL[j].label(),
                        r,
                        detector.dead_time_ns
                    ));
                }
            }
            states.push((w, state));
        }
        Ok(ExpectedModel {
            states,
            rep_rate_hz: rate,
            warnings,
        })
    }

    pub fn cell_probs(&self, stats: &SequenceStats) -> CellProbs {
        let mut out = CellProbs::default();
        for (w, state) in &self.states {
            let c = CellProbs::compute(state, stats);
            for b in 0..2 {
                for k in 0..2 {
                    out.n[b][k] += w * c.n[b][k];
                    out.m[b][k] += w * c.m[b][k];
                }
            }
            for k in 0..2 {
                out.sent[k] += w * c.sent[k];
            }
        }
        out
    }
}

/// Analytic expectation of the sifted tallies over `duration_s` seconds.
pub fn expected_counts(
    sequence_stats: &SequenceStats,
    source: &SourceModel,
    channel: &ChannelModel,
    detector: &DetectorModel,
    duration_s: f64,
) -> Result<ObservedCounts> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    let model = ExpectedModel::new(sequence_stats, source, channel, detector, 0.0, duration_s)?;
    let probs = model.cell_probs(sequence_stats);
    Ok(probs.to_counts(duration_s * source.params.rep_rate_hz, source.params.rep_rate_hz))
}
