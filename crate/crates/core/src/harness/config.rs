use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{smf_coupling, CouplingModel, LinkSegments, Segment};
use crate::photonic::{linear_to_db, ChannelModel, DetectorModel, FadingModel, SourceModel};
use crate::protocol::{ProtocolParams, SequenceStats};
use crate::security::{LinkScenario, SecurityParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExpectedValue,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: Option<u64>,
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub source: SourceSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub security: SecurityParams,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Key-basis error fraction from source misalignment.
    pub intrinsic_qber_y: f64,
    /// Check-basis error fraction; the key-basis value when absent.
    pub intrinsic_qber_x: Option<f64>,
    pub extinction_ratio_db: Option<f64>,
    pub pulse_width_fwhm_ps: f64,
    pub qber_drift_rate: f64,
}

/// Either a fixed loss or a list of dB segments, optionally with the SMF
/// coupling term derived from residual AoA jitter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub fixed_loss_db: Option<f64>,
    pub segments: Option<Vec<Segment>>,
    pub smf_coupling: Option<SmfSection>,
    pub extra_loss_db: f64,
    pub background_rate_hz: f64,
    pub fading: Option<FadingModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmfSection {
    pub sigma_aoa_urad: f64,
    #[serde(default)]
    pub model: Option<CouplingModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    #[default]
    GroundTruth,
    Qubit4sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub mode: SyncMode,
    pub prefix_len: usize,
    pub prefix_seed: u64,
    pub window_tags: usize,
    pub lock_threshold: f64,
    pub max_ppm: f64,
    pub relock_tags: usize,
    /// Slots simulated at tag level for the synchronization bench.
    pub bench_slots: u64,
    pub clock_offset_ps: f64,
    /// Extra jitter of a shared reference clock (PLL path), for comparison.
    pub reference_jitter_ps: f64,
    pub histogram_bin_ps: f64,
    pub histogram_half_range_ps: f64,
}

impl Default for SyncSection {
    fn default() -> Self {
        SyncSection {
            mode: SyncMode::GroundTruth,
            prefix_len: 1_000_000,
            prefix_seed: 1,
            window_tags: 10_000,
            lock_threshold: 6.0,
            max_ppm: 50.0,
            relock_tags: 10_000_000,
            bench_slots: 100_000_000,
            clock_offset_ps: 123_456.0,
            reference_jitter_ps: 0.0,
            histogram_bin_ps: 2.0,
            histogram_half_range_ps: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl LossGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop >= self.start) || self.start < 0.0 {
            return Err(Error::Config(format!(
                "loss grid needs 0 <= start <= stop and step > 0, got {}:{}:{}",
                self.start, self.stop, self.step
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

impl FromStr for LossGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("loss grid must be start:stop:step, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let g = LossGrid {
            start: v[0],
            stop: v[1],
            step: v[2],
        };
        g.points()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Simulated acquisition time; 0 skips the block analysis.
    pub duration_s: f64,
    /// Larger key blocks built from consecutive minimum-size blocks.
    pub extra_block_lengths: Vec<u64>,
    /// Repeated transmitter block of the tag-level bench.
    pub sequence_length: usize,
    pub sequence_seed: u64,
    pub loss_grid: Option<LossGrid>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            duration_s: 0.0,
            extra_block_lengths: Vec::new(),
            sequence_length: 1024,
            sequence_seed: 7,
            loss_grid: None,
        }
    }
}

/// Resolved physical models for one scenario.
#[derive(Debug, Clone)]
pub struct Models {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    /// Slot-class frequencies of the transmitter.
    pub stats: SequenceStats,
    pub segments: Option<LinkSegments>,
}

impl Models {
    pub fn scenario(&self) -> LinkScenario {
        LinkScenario {
            source: self.source.clone(),
            channel: self.channel.clone(),
            detector: self.detector,
        }
    }
}

fn config_err(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(_) => e,
        e => Error::Config(format!("[{section}] {e}")),
    }
}

impl ChannelSection {
    /// Budget table, when the channel is given as segments.
    pub fn link_segments(&self) -> Result<Option<LinkSegments>> {
        let Some(segs) = &self.segments else {
            return Ok(None);
        };
        let mut items: Vec<(String, f64)> = segs.iter().map(|s| (s.label.clone(), s.loss_db)).collect();
        if let Some(smf) = &self.smf_coupling {
            if !(smf.sigma_aoa_urad >= 0.0) {
                return Err(Error::invalid("sigma_aoa_urad must be >= 0"));
            }
            let model = smf.model.unwrap_or_default();
            items.push(("eta_SMF".into(), linear_to_db(smf_coupling(smf.sigma_aoa_urad, &model))));
        }
        if self.extra_loss_db != 0.0 {
            items.push(("extra".into(), self.extra_loss_db));
        }
        LinkSegments::new(items).map(Some)
    }

    pub fn total_loss_db(&self) -> Result<f64> {
        match (self.fixed_loss_db, &self.segments) {
            (Some(l), None) => {
                if self.smf_coupling.is_some() {
                    return Err(Error::invalid("smf_coupling applies only to segment lists"));
                }
                Ok(l + self.extra_loss_db)
            }
            (None, Some(_)) => Ok(self.link_segments()?.map(|s| s.total_db()).unwrap_or(0.0)),
            _ => Err(Error::invalid("give exactly one of fixed_loss_db or segments")),
        }
    }
}

impl ScenarioConfig {
    /// Parses without the cross-field checks of [`validate`](Self::validate).
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg = Self::read_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid scenario name {:?}", self.name)));
        }
        let needs_seed = self.mode == Mode::MonteCarlo || self.sync.mode == SyncMode::Qubit4sync;
        if needs_seed && self.seed.is_none() {
            return Err(Error::Config("seed is required for Monte Carlo runs".into()));
        }
        self.models()?;
        self.security.validate().map_err(config_err("security"))?;
        let r = &self.run;
        if !(r.duration_s >= 0.0 && r.duration_s.is_finite()) {
            return Err(Error::Config("run.duration_s must be >= 0".into()));
        }
        if r.sequence_length == 0 {
            return Err(Error::Config("run.sequence_length must be >= 1".into()));
        }
        for &n in &r.extra_block_lengths {
            if n == 0 || n % self.security.block_n_z != 0 {
                return Err(Error::Config(format!(
                    "extra block length {n} must be a positive multiple of block_n_z {}",
                    self.security.block_n_z
                )));
            }
        }
        if let Some(g) = &r.loss_grid {
            g.points()?;
        }
        if self.sync.mode == SyncMode::Qubit4sync {
            self.sync_config(Vec::new()).validate().map_err(config_err("sync"))?;
            if self.sync.bench_slots <= self.sync.prefix_len as u64 {
                return Err(Error::Config("sync.bench_slots must exceed the public prefix".into()));
            }
            if self.sync.reference_jitter_ps < 0.0 {
                return Err(Error::Config("sync.reference_jitter_ps must be >= 0".into()));
            }
        }
        if r.duration_s == 0.0 && r.loss_grid.is_none() && self.sync.mode == SyncMode::GroundTruth {
            return Err(Error::Config(
                "nothing to run: set run.duration_s, run.loss_grid or sync.mode".into(),
            ));
        }
        Ok(())
    }

    pub fn models(&self) -> Result<Models> {
        self.protocol.validate().map_err(config_err("protocol"))?;
        let s = &self.source;
        for q in std::iter::once(s.intrinsic_qber_y).chain(s.intrinsic_qber_x) {
            if !(0.0..0.5).contains(&q) {
                return Err(Error::Config(format!("[source] intrinsic QBER {q} outside [0, 0.5)")));
            }
        }
        let mut source = SourceModel::new(self.protocol).with_intrinsic_qber(s.intrinsic_qber_y, s.intrinsic_qber_x);
        source.extinction_ratio_db = s.extinction_ratio_db;
        source.pulse_width_fwhm_ps = s.pulse_width_fwhm_ps;
        source.qber_drift_rate = s.qber_drift_rate;
        source.validate().map_err(config_err("source"))?;

        let c = &self.channel;
        let channel = ChannelModel {
            fixed_loss_db: c.total_loss_db().map_err(config_err("channel"))?,
            fading: c.fading.clone(),
            background_rate_hz: c.background_rate_hz,
        };
        channel.validate().map_err(config_err("channel"))?;
        self.detector.validate().map_err(config_err("detector"))?;

        Ok(Models {
            source,
            channel,
            detector: self.detector,
            stats: SequenceStats::from_params(&self.protocol),
            segments: c.link_segments().map_err(config_err("channel"))?,
        })
    }

    pub fn sync_config(&self, prefix: Vec<crate::protocol::SymbolRecord>) -> crate::sync::SyncConfig {
        let s = &self.sync;
        crate::sync::SyncConfig {
            nominal_period_ps: self.protocol.slot_period_ps(),
            public_prefix: prefix,
            window_tags: s.window_tags,
            lock_threshold: s.lock_threshold,
            max_ppm: s.max_ppm,
            relock_tags: s.relock_tags,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
