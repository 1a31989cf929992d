//! Scenario runner: wires the optical model, synchronization and key
//! analysis into timed runs and figure tables.

mod config;
mod figures;
mod output;
mod presets;

pub use config::{
    ChannelSection, LossGrid, Mode, Models, RunSection, ScenarioConfig, SmfSection, SourceSection, SyncMode,
    SyncSection, SCHEMA_VERSION,
};
pub use figures::{emit_figure_data, CsvTable, FigureId};
pub use output::{output_root, write_outputs, Manifest, OUTPUT_ROOT_ENV};
pub use presets::{preset, preset_names, PRESETS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonic::{counts_from_assignments, sample_block, simulate_slots, ExpectedModel, SymbolStream, TxClock};
use crate::protocol::{generate_sequence, qber_basis, Basis, ObservedCounts};
use crate::security::{decoy_bounds, key_length, skr_vs_loss_curve, CurvePoint, KeyResult, SecurityParams};
use crate::sync::{assignment_accuracy, clipped_sigma, jitter_histogram, synchronize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_id: u64,
    pub t_start_s: f64,
    pub counts: ObservedCounts,
    pub key: KeyResult,
}

impl BlockRecord {
    pub fn t_end_s(&self) -> f64 {
        self.t_start_s + self.counts.acquisition_time_s
    }
}

/// Key blocks of one size, in acquisition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSeries {
    pub block_n_z: u64,
    pub blocks: Vec<BlockRecord>,
}

impl BlockSeries {
    pub fn mean_skr(&self) -> f64 {
        mean(self.blocks.iter().map(|b| b.key.skr_bps))
    }

    pub fn mean_t_key(&self) -> f64 {
        mean(self.blocks.iter().map(|b| b.key.t_key_s))
    }

    /// Standard error of the mean block SKR.
    pub fn skr_std_error(&self) -> f64 {
        let n = self.blocks.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let m = self.mean_skr();
        let var = self.blocks.iter().map(|b| (b.key.skr_bps - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn all_positive(&self) -> bool {
        !self.blocks.is_empty() && self.blocks.iter().all(|b| b.key.key_length_bits > 0)
    }

    /// Tallies pooled over every block.
    pub fn pooled(&self) -> ObservedCounts {
        self.blocks
            .iter()
            .fold(ObservedCounts::default(), |acc, b| acc.merge(&b.counts))
    }

    /// `(block end time, cumulative key bits)` per block.
    pub fn cumulative_key(&self) -> Vec<(f64, u64)> {
        let mut total = 0;
        self.blocks
            .iter()
            .map(|b| {
                total += b.key.key_length_bits;
                (b.t_end_s(), total)
            })
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub period_ps: f64,
    pub offset_ps: f64,
    pub confidence: f64,
    pub segments: usize,
    pub tags: usize,
    pub accuracy: f64,
    pub qber_y_sync: f64,
    pub qber_x_sync: f64,
    pub qber_y_truth: f64,
    pub qber_x_truth: f64,
    pub sigma_ps: f64,
    pub fwhm_ps: f64,
    /// Residual width against the true clock degraded by the reference jitter.
    pub sigma_reference_ps: f64,
    pub histogram: Vec<(f64, u64)>,
    pub histogram_reference: Vec<(f64, u64)>,
}

/// A sub-module failure that stopped part of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub module: String,
    pub message: String,
    pub no_lock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub duration_s: f64,
    /// Base key blocks first, then any larger block sizes.
    pub series: Vec<BlockSeries>,
    pub curve: Vec<CurvePoint>,
    pub sync: Option<SyncReport>,
    pub warnings: Vec<String>,
    pub failure: Option<RunFailure>,
}

impl RunReport {
    pub fn empty(name: &str, mode: Mode) -> Self {
        RunReport {
            name: name.to_string(),
            mode,
            seed: None,
            duration_s: 0.0,
            series: Vec::new(),
            curve: Vec::new(),
            sync: None,
            warnings: Vec::new(),
            failure: None,
        }
    }

    pub fn base(&self) -> Option<&BlockSeries> {
        self.series.first().filter(|s| !s.blocks.is_empty())
    }

    pub fn series_for(&self, block_n_z: u64) -> Option<&BlockSeries> {
        self.series.iter().find(|s| s.block_n_z == block_n_z)
    }

    /// True when the run produced key-rate outputs and every one is zero.
    pub fn zero_key_everywhere(&self) -> bool {
        let blocks = self.series.iter().flat_map(|s| &s.blocks);
        let any_output = blocks.clone().next().is_some() || !self.curve.is_empty();
        let any_key = blocks.clone().any(|b| b.key.key_length_bits > 0)
            || self.curve.iter().any(|p| p.skr_chernoff > 0.0 || p.skr_hoeffding > 0.0);
        any_output && !any_key
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn push_unique(warnings: &mut Vec<String>, w: impl IntoIterator<Item = String>) {
    for w in w {
        if !warnings.contains(&w) {
            log::warn!("{w}");
            warnings.push(w);
        }
    }
}

fn analyse(counts: &ObservedCounts, cfg: &ScenarioConfig, sec: &SecurityParams) -> Result<KeyResult> {
    let bounds = decoy_bounds(counts, &cfg.protocol, sec)?;
    key_length(&bounds, counts, sec)
}

/// Consecutive minimum-size blocks of the acquisition, each carrying its key.
fn run_blocks(cfg: &ScenarioConfig, models: &Models, report: &mut RunReport) -> Result<()> {
    let sec = cfg.security;
    let n_key = sec.block_n_z;
    let rate = cfg.protocol.rep_rate_hz;
    let mut channel = models.channel.clone();
    // A time-resolved realization, so that consecutive blocks see different
    // fading in both modes.
    if let Some(f) = &channel.fading {
        channel.fading = Some(crate::photonic::FadingModel::Series(f.series(cfg.run.duration_s)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
    let mut blocks = Vec::new();
    let mut t = 0.0;
    let mut horizon = 0.0;
    loop {
        let model = ExpectedModel::new(&models.stats, &models.source, &channel, &models.detector, t, horizon)?;
        push_unique(&mut report.warnings, model.warnings.iter().cloned());
        let probs = model.cell_probs(&models.stats);
        let p_key = probs.p_key();
        if !(p_key > 0.0) {
            return Err(Error::invalid(format!("no key-basis detections at t = {t} s")));
        }
        let counts = match cfg.mode {
            Mode::ExpectedValue => probs.to_counts(n_key as f64 / p_key, rate),
            Mode::MonteCarlo => sample_block(&probs, n_key, rate, &mut rng)?.counts,
        };
        let dt = counts.acquisition_time_s;
        if t + dt > cfg.run.duration_s {
            break;
        }
        let key = analyse(&counts, cfg, &sec)?;
        blocks.push(BlockRecord {
            block_id: blocks.len() as u64,
            t_start_s: t,
            counts,
            key,
        });
        t += dt;
        horizon = dt;
    }
    if blocks.is_empty() {
        push_unique(
            &mut report.warnings,
            [format!("no complete {n_key}-bit block within {} s", cfg.run.duration_s)],
        );
    }

    let mut series = vec![BlockSeries {
        block_n_z: n_key,
        blocks,
    }];
    for &big in &cfg.run.extra_block_lengths {
        let per = (big / n_key) as usize;
        let sec_big = sec.with_block(big);
        let mut merged = Vec::new();
        for chunk in series[0].blocks.chunks_exact(per) {
            let counts = chunk[1..].iter().fold(chunk[0].counts, |acc, b| acc.merge(&b.counts));
            merged.push(BlockRecord {
                block_id: merged.len() as u64,
                t_start_s: chunk[0].t_start_s,
                counts,
                key: analyse(&counts, cfg, &sec_big)?,
            });
        }
        series.push(BlockSeries {
            block_n_z: big,
            blocks: merged,
        });
    }
    report.series = series;
    Ok(())
}

/// Tag-level bench of the clock recovery against the ground-truth clock.
fn run_sync_bench(cfg: &ScenarioConfig, models: &Models, report: &mut RunReport) -> Result<()> {
    let s = &cfg.sync;
    let seed = cfg.seed.unwrap_or(0);
    let prefix = generate_sequence(s.prefix_seed, s.prefix_len, &cfg.protocol)?;
    let block = generate_sequence(cfg.run.sequence_seed, cfg.run.sequence_length, &cfg.protocol)?;
    let stream = SymbolStream::new(prefix.clone(), block)?;
    let clock = TxClock {
        period_ps: cfg.protocol.slot_period_ps(),
        offset_ps: s.clock_offset_ps,
    };
    let sim = simulate_slots(
        &stream,
        s.bench_slots,
        &models.source,
        &models.channel,
        &models.detector,
        clock,
        seed,
    )
    .map_err(|e| e.in_module("photonic-sim"))?;
    push_unique(&mut report.warnings, sim.warnings.iter().cloned());

    let sync_cfg = cfg.sync_config(prefix);
    let res = synchronize(&sim.tags, &sync_cfg).map_err(|e| e.in_module("qubit-sync"))?;
    push_unique(&mut report.warnings, res.assignment.warnings.iter().cloned());

    let truth: Vec<u64> = sim.truth.iter().map(|t| t.slot_index).collect();
    let rate = cfg.protocol.rep_rate_hz;
    let got = counts_from_assignments(&stream, &res.assignment.assigned, sim.slots, rate, seed)?;
    let gt = counts_from_assignments(&stream, &sim.true_assignments(), sim.slots, rate, seed)?;
    let q = |c: &ObservedCounts, b| qber_basis(c, b).unwrap_or(f64::NAN);

    // Reference path: true clock, with the shared reference adding its own jitter.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let extra = Normal::new(0.0, s.reference_jitter_ps).map_err(|e| Error::Internal(e.to_string()))?;
    let reference: Vec<f64> = sim
        .tags
        .iter()
        .zip(&sim.truth)
        .filter(|(_, g)| g.from_signal)
        .map(|(tag, g)| tag.time_ps as f64 - clock.slot_center(g.slot_index) + extra.sample(&mut rng))
        .collect();
    let c = res.clock();
    report.sync = Some(SyncReport {
        period_ps: c.period_ps,
        offset_ps: c.offset_ps,
        confidence: c.confidence,
        segments: res.clocks.len(),
        tags: sim.tags.len(),
        accuracy: assignment_accuracy(&res.assignment.assigned, &truth),
        qber_y_sync: q(&got, Basis::Y),
        qber_x_sync: q(&got, Basis::X),
        qber_y_truth: q(&gt, Basis::Y),
        qber_x_truth: q(&gt, Basis::X),
        sigma_ps: res.assignment.sigma_ps,
        fwhm_ps: res.assignment.fwhm_ps,
        sigma_reference_ps: clipped_sigma(&reference),
        histogram: jitter_histogram(
            &res.assignment.residuals_ps,
            s.histogram_bin_ps,
            s.histogram_half_range_ps,
        )?,
        histogram_reference: jitter_histogram(&reference, s.histogram_bin_ps, s.histogram_half_range_ps)?,
    });
    Ok(())
}

fn module_of(e: &Error) -> String {
    match e {
        Error::Module { module, .. } => module.to_string(),
        _ => "experiment-harness".to_string(),
    }
}

type Stage = fn(&ScenarioConfig, &Models, &mut RunReport) -> Result<()>;

/// Runs every stage the config enables. A failing stage is recorded in
/// `failure` and the results of earlier stages are kept.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let models = cfg.models()?;
    let mut report = RunReport::empty(&cfg.name, cfg.mode);
    report.seed = cfg.seed;
    report.duration_s = cfg.run.duration_s;

    let stages: [(&'static str, bool, Stage); 3] = [
        ("security-analysis", cfg.run.loss_grid.is_some(), |cfg, m, r| {
            let grid = cfg.run.loss_grid.expect("checked").points()?;
            r.curve = skr_vs_loss_curve(&m.scenario(), &grid, &cfg.security)?;
            Ok(())
        }),
        ("security-analysis", cfg.run.duration_s > 0.0, run_blocks),
        ("qubit-sync", cfg.sync.mode == SyncMode::Qubit4sync, run_sync_bench),
    ];
    for (module, enabled, stage) in stages {
        if !enabled {
            continue;
        }
        if let Err(e) = stage(cfg, &models, &mut report) {
            let e = e.in_module(module);
            log::error!("{e}");
            report.failure = Some(RunFailure {
                module: module_of(&e),
                message: e.root().to_string(),
                no_lock: matches!(e.root(), Error::NoLock(_)),
            });
            break;
        }
    }
    Ok(report)
}
