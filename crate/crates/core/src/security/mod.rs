//! Finite-key analysis for three-state one-decoy BB84.

mod bounds;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bounds::{chernoff_interval, hoeffding_interval, BoundKind, Chernoff, ConcentrationBound, Exact, Hoeffding};

use crate::error::{Error, Result};
use crate::photonic::{ChannelModel, DetectorModel, ExpectedModel, SourceModel};
use crate::protocol::{Basis, Intensity, ObservedCounts, ProtocolParams, SequenceStats};

/// Number of failure events the secrecy parameter is split across.
pub const SECRECY_SPLIT: f64 = 19.0;

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("entropy argument must lie in [0, 1], got {x}")));
    }
    Ok(h2(x))
}

fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub f_ec: f64,
    pub block_n_z: u64,
    pub bound: BoundKind,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            eps_sec: 1e-10,
            eps_cor: 1e-15,
            f_ec: 1.16,
            block_n_z: 10_000_000,
            bound: BoundKind::Chernoff,
        }
    }
}

impl SecurityParams {
    pub fn with_bound(mut self, bound: BoundKind) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_block(mut self, block_n_z: u64) -> Self {
        self.block_n_z = block_n_z;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.eps_sec) || !unit(self.eps_cor) {
            return Err(Error::invalid("eps_sec and eps_cor must lie in (0, 1)"));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::invalid(format!("f_ec must be >= 1, got {}", self.f_ec)));
        }
        if self.block_n_z == 0 {
            return Err(Error::invalid("block_n_z must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SecurityBounds {
    pub s_z0_lower: f64,
    pub s_z1_lower: f64,
    pub phi_z_upper: f64,
    pub lambda_ec: f64,
    pub s_x1_lower: f64,
    pub v_x1_upper: f64,
    /// Statistics too poor to bound the single-photon content.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyResult {
    pub key_length_bits: u64,
    pub skr_bps: f64,
    pub t_key_s: f64,
}

/// Probability that intensity k emits n photons, averaged over intensities.
fn tau(params: &ProtocolParams, n: u32) -> f64 {
    let fact: f64 = (1..=n).map(f64::from).product();
    Intensity::ALL
        .iter()
        .map(|&k| {
            let m = params.mean_photon(k);
            params.intensity_prob(k) * (-m).exp() * m.powi(n as i32) / fact
        })
        .sum()
}

/// Per-intensity interval rescaled to the photon-number picture.
struct Adjusted<'a> {
    params: &'a ProtocolParams,
    bound: &'a dyn ConcentrationBound,
    eps: f64,
}

impl Adjusted<'_> {
    fn interval(&self, k: Intensity, count: f64, trials: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.bound.interval(count, trials, self.eps)?;
        let m = self.params.mean_photon(k);
        let w = m.exp() / self.params.intensity_prob(k);
        Ok((w * lo, w * hi))
    }
}

/// Lower bound on single-photon detections from per-intensity detection
/// counts `n` and error counts `m` of one basis.
fn single_photon_lower(adj: &Adjusted, n: [f64; 2], m: [f64; 2]) -> Result<(f64, f64)> {
    let p = adj.params;
    let (mu, nu) = (p.mu, p.nu);
    let (total_n, total_m) = (n[0] + n[1], m[0] + m[1]);
    let n_mu = adj.interval(Intensity::Signal, n[0], total_n)?;
    let n_nu = adj.interval(Intensity::Decoy, n[1], total_n)?;
    let m_nu = adj.interval(Intensity::Decoy, m[1], total_m)?;
    let (t0, t1) = (tau(p, 0), tau(p, 1));
    let s0 = (t0 / (mu - nu) * (mu * n_nu.0 - nu * n_mu.1)).max(0.0);
    let s0_upper = 2.0 * t0 * m_nu.1;
    let s1 = t1 * mu / (nu * (mu - nu))
        * (n_nu.0 - nu * nu / (mu * mu) * n_mu.1 - (mu * mu - nu * nu) / (mu * mu) * s0_upper / t0);
    Ok((s0.min(total_n), s1.clamp(0.0, total_n)))
}

/// Statistical correction to the phase-error rate.
fn phase_gap(eps_sec: f64, b: f64, c: f64, d: f64) -> f64 {
    if b <= 0.0 || b >= 1.0 {
        return 0.0;
    }
    let v = (c + d) * (1.0 - b) * b;
    let arg = (c + d) / (c * d * (1.0 - b) * b) * SECRECY_SPLIT * SECRECY_SPLIT / (eps_sec * eps_sec);
    (v / (c * d * std::f64::consts::LN_2) * arg.log2()).max(0.0).sqrt()
}

fn evaluate(
    counts: &ObservedCounts,
    params: &ProtocolParams,
    sec: &SecurityParams,
    bound: &dyn ConcentrationBound,
    finite: bool,
) -> Result<SecurityBounds> {
    params.validate()?;
    sec.validate()?;
    counts.validate()?;
    let adj = Adjusted {
        params,
        bound,
        eps: sec.eps_sec / SECRECY_SPLIT,
    };
    let y = Basis::Y.index();
    let x = Basis::X.index();
    let n_z = counts.n_basis(Basis::Y);
    let m_z = counts.m_basis(Basis::Y);
    let lambda_ec = if n_z > 0.0 { sec.f_ec * n_z * h2(m_z / n_z) } else { 0.0 };
    let mut out = SecurityBounds {
        lambda_ec,
        phi_z_upper: 0.5,
        degenerate: true,
        ..Default::default()
    };
    if counts.n[y][0] <= 0.0 || counts.n[y][1] <= 0.0 {
        return Ok(out);
    }

    let (s_z0, s_z1) = single_photon_lower(&adj, counts.n[y], counts.m[y])?;
    out.s_z0_lower = s_z0;
    out.s_z1_lower = s_z1;
    let (_, s_x1) = single_photon_lower(&adj, counts.n[x], counts.m[x])?;
    out.s_x1_lower = s_x1;

    let m_x = counts.m_basis(Basis::X);
    let mx_mu = adj.interval(Intensity::Signal, counts.m[x][0], m_x)?;
    let mx_nu = adj.interval(Intensity::Decoy, counts.m[x][1], m_x)?;
    let v_x1 = (tau(params, 1) / (params.mu - params.nu) * (mx_mu.1 - mx_nu.0)).clamp(0.0, m_x);
    out.v_x1_upper = v_x1;

    if s_z1 <= 0.0 || s_x1 <= 0.0 {
        return Ok(out);
    }
    let ratio = (v_x1 / s_x1).min(0.5);
    let gap = if finite {
        phase_gap(sec.eps_sec, ratio, s_z1, s_x1)
    } else {
        0.0
    };
    out.phi_z_upper = (ratio + gap).min(0.5);
    out.degenerate = false;
    Ok(out)
}

/// One-decoy lower bounds on vacuum and single-photon key-basis events and
/// the upper bound on their phase-error rate, using `sec.bound`.
pub fn decoy_bounds(counts: &ObservedCounts, params: &ProtocolParams, sec: &SecurityParams) -> Result<SecurityBounds> {
    evaluate(counts, params, sec, sec.bound.strategy(), true)
}

/// The same bounds with no statistical fluctuations.
pub fn asymptotic_bounds(
    counts: &ObservedCounts,
    params: &ProtocolParams,
    sec: &SecurityParams,
) -> Result<SecurityBounds> {
    evaluate(counts, params, sec, &Exact, false)
}

fn privacy_terms(sec: &SecurityParams) -> f64 {
    6.0 * (SECRECY_SPLIT / sec.eps_sec).log2() + (2.0 / sec.eps_cor).log2()
}

fn finish(raw: f64, degenerate: bool, counts: &ObservedCounts) -> Result<KeyResult> {
    let t = counts.acquisition_time_s;
    if !(t > 0.0) {
        return Err(Error::invalid(format!("acquisition time must be positive, got {t}")));
    }
    let bits = if degenerate || !(raw > 0.0) {
        0
    } else {
        raw.floor() as u64
    };
    Ok(KeyResult {
        key_length_bits: bits,
        skr_bps: bits as f64 / t,
        t_key_s: t,
    })
}

/// Secret key length extractable from one block.
pub fn key_length(bounds: &SecurityBounds, counts: &ObservedCounts, sec: &SecurityParams) -> Result<KeyResult> {
    let raw =
        bounds.s_z0_lower + bounds.s_z1_lower * (1.0 - h2(bounds.phi_z_upper)) - bounds.lambda_ec - privacy_terms(sec);
    finish(raw, bounds.degenerate, counts)
}

/// Infinite-block key length: exact intervals, no phase-error gap and no
/// composable-security overhead.
pub fn asymptotic_key_length(
    counts: &ObservedCounts,
    params: &ProtocolParams,
    sec: &SecurityParams,
) -> Result<KeyResult> {
    let b = asymptotic_bounds(counts, params, sec)?;
    let raw = b.s_z0_lower + b.s_z1_lower * (1.0 - h2(b.phi_z_upper)) - b.lambda_ec;
    finish(raw, b.degenerate, counts)
}

/// Source, channel and detector; the channel loss is overridden per point
/// when sweeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScenario {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
}

impl LinkScenario {
    /// Expected tallies of one key block of `block_n_z` sifted key-basis
    /// detections at the given loss.
    pub fn expected_block(&self, loss_db: f64, block_n_z: u64) -> Result<(ObservedCounts, Vec<String>)> {
        let channel = ChannelModel {
            fixed_loss_db: loss_db,
            ..self.channel.clone()
        };
        let stats = SequenceStats::from_params(&self.source.params);
        let model = ExpectedModel::new(&stats, &self.source, &channel, &self.detector, 0.0, 1.0)?;
        let probs = model.cell_probs(&stats);
        let p_key = probs.p_key();
        if !(p_key > 0.0) {
            return Err(Error::invalid(format!("no key-basis detections at {loss_db} dB")));
        }
        let slots = block_n_z as f64 / p_key;
        Ok((probs.to_counts(slots, self.source.params.rep_rate_hz), model.warnings))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub loss_db: f64,
    pub skr_asymptotic: f64,
    pub skr_hoeffding: f64,
    pub skr_chernoff: f64,
    pub qber_y: f64,
    pub qber_x: f64,
}

fn curve_point(scenario: &LinkScenario, loss_db: f64, sec: &SecurityParams) -> Result<CurvePoint> {
    let (counts, warnings) = scenario.expected_block(loss_db, sec.block_n_z)?;
    for w in warnings {
        log::warn!("{loss_db} dB: {w}");
    }
    let params = &scenario.source.params;
    let skr = |bound: BoundKind| -> Result<f64> {
        let s = sec.with_bound(bound);
        Ok(key_length(&decoy_bounds(&counts, params, &s)?, &counts, &s)?.skr_bps)
    };
    let ratio = |b: Basis| {
        let n = counts.n_basis(b);
        if n > 0.0 {
            counts.m_basis(b) / n
        } else {
            f64::NAN
        }
    };
    Ok(CurvePoint {
        loss_db,
        skr_asymptotic: asymptotic_key_length(&counts, params, sec)?.skr_bps,
        skr_hoeffding: skr(BoundKind::Hoeffding)?,
        skr_chernoff: skr(BoundKind::Chernoff)?,
        qber_y: ratio(Basis::Y),
        qber_x: ratio(Basis::X),
    })
}

/// Expected-value SKR for each loss in an ascending grid, under both
/// finite-key bounds and in the asymptotic limit.
pub fn skr_vs_loss_curve(
    scenario: &LinkScenario,
    loss_grid_db: &[f64],
    sec: &SecurityParams,
) -> Result<Vec<CurvePoint>> {
    sec.validate()?;
    if loss_grid_db.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("loss grid must be sorted ascending"));
    }
    loss_grid_db
        .par_iter()
        .map(|&l| curve_point(scenario, l, sec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn tau_weights() {
        let p = ProtocolParams::lab_1p5ghz();
        let t0 = 0.5 * (-0.28f64).exp() + 0.5 * (-0.1232f64).exp();
        assert!((tau(&p, 0) - t0).abs() < 1e-15);
        let t1 = 0.5 * 0.28 * (-0.28f64).exp() + 0.5 * 0.1232 * (-0.1232f64).exp();
        assert!((tau(&p, 1) - t1).abs() < 1e-15);
    }

    #[test]
    fn gap_vanishes_at_zero_error() {
        assert_eq!(phase_gap(1e-10, 0.0, 1e6, 1e5), 0.0);
        assert!(phase_gap(1e-10, 0.01, 1e6, 1e5) > 0.0);
    }

    #[test]
    fn zero_acquisition_time_rejected() {
        let b = SecurityBounds::default();
        let c = ObservedCounts::default();
        assert!(key_length(&b, &c, &SecurityParams::default()).is_err());
    }
}
