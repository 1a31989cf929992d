use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Slow multiplicative fading of the channel efficiency.
///
/// Multipliers are sampled on a coarse (kHz-scale) grid and held constant
/// in between, so a single value covers the ~10⁶ slots of one coherence
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FadingModel {
    Constant {
        multiplier: f64,
    },
    LogNormal {
        mean: f64,
        sigma_db: f64,
        coherence_s: f64,
        seed: u64,
    },
    Series(FadingSeries),
}

/// Sample-and-hold multiplier series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSeries {
    pub times_s: Vec<f64>,
    pub multipliers: Vec<f64>,
    #[serde(default)]
    pub periodic: bool,
}

impl FadingSeries {
    pub fn new(times_s: Vec<f64>, multipliers: Vec<f64>, periodic: bool) -> Result<Self> {
        let s = FadingSeries {
            times_s,
            multipliers,
            periodic,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times_s.is_empty() || self.times_s.len() != self.multipliers.len() {
            return Err(Error::invalid(
                "fading series needs equal, non-empty time and multiplier columns",
            ));
        }
        if self.times_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("fading series times must be strictly increasing"));
        }
        if let Some(m) = self.multipliers.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::invalid(format!("fading multiplier {m} outside [0, 1]")));
        }
        Ok(())
    }

    /// Length of time the series covers; the last sample holds for one
    /// median sample interval.
    pub fn span_s(&self) -> f64 {
        let n = self.times_s.len();
        let step = if n > 1 {
            (self.times_s[n - 1] - self.times_s[0]) / (n - 1) as f64
        } else {
            f64::INFINITY
        };
        self.times_s[n - 1] - self.times_s[0] + step
    }

    pub fn multiplier_at(&self, t_s: f64) -> Result<f64> {
        let t0 = self.times_s[0];
        let mut t = t_s;
        let span = self.span_s();
        if self.periodic && span.is_finite() {
            t = t0 + (t - t0).rem_euclid(span);
        } else if t >= t0 + span {
            return Err(Error::invalid(format!(
                "time {t_s} s beyond the end of a non-periodic fading series"
            )));
        }
        let idx = match self.times_s.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        Ok(self.multipliers[idx])
    }

    /// Loads a two-column CSV of `time_s, multiplier`.
    pub fn read_csv<R: Read>(r: R, periodic: bool) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let (mut times, mut mults) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::invalid(format!("fading CSV needs 2 columns, got {}", rec.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("fading CSV: {e}")))
            };
            times.push(parse(&rec[0])?);
            mults.push(parse(&rec[1])?);
        }
        FadingSeries::new(times, mults, periodic)
    }
}

impl FadingModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FadingModel::Constant { multiplier } => {
                if !(0.0..=1.0).contains(multiplier) {
                    return Err(Error::invalid(format!("fading multiplier {multiplier} outside [0, 1]")));
                }
            }
            FadingModel::LogNormal {
                mean,
                sigma_db,
                coherence_s,
                ..
            } => {
                if !(*mean > 0.0 && *mean <= 1.0) || *sigma_db < 0.0 || !(*coherence_s > 0.0) {
                    return Err(Error::invalid(
                        "lognormal fading needs mean in (0,1], sigma_db >= 0, coherence_s > 0",
                    ));
                }
            }
            FadingModel::Series(s) => s.validate()?,
        }
        Ok(())
    }

    /// Materializes the model as a sample-and-hold series covering
    /// `[0, duration_s)`.
    pub fn series(&self, duration_s: f64) -> Result<FadingSeries> {
        self.validate()?;
        match self {
            FadingModel::Constant { multiplier } => FadingSeries::new(vec![0.0], vec![*multiplier], true),
            FadingModel::LogNormal {
                mean,
                sigma_db,
                coherence_s,
                seed,
            } => {
                let n = ((duration_s / coherence_s).ceil() as usize).max(1);
                let mults = lognormal_samples(*mean, *sigma_db, n, *seed);
                let times = (0..n).map(|i| i as f64 * coherence_s).collect();
                FadingSeries::new(times, mults, true)
            }
            FadingModel::Series(s) => Ok(s.clone()),
        }
    }

    /// Weighted multipliers whose average reproduces the fading over
    /// `[t_s, t_s + horizon_s)`.
    pub(crate) fn quadrature(&self, t_s: f64, horizon_s: f64) -> Result<Vec<(f64, f64)>> {
        match self {
            FadingModel::Constant { multiplier } => Ok(vec![(1.0, *multiplier)]),
            FadingModel::LogNormal { mean, sigma_db, .. } => {
                // Mid-quantile rule on the standard normal.
                let nodes = 64;
                let sigma_n = sigma_db * std::f64::consts::LN_10 / 10.0;
                let pts: Vec<(f64, f64)> = (0..nodes)
                    .map(|i| {
                        let z = inverse_normal_cdf((i as f64 + 0.5) / nodes as f64);
                        (
                            1.0 / nodes as f64,
                            (mean * (sigma_n * z - sigma_n * sigma_n / 2.0).exp()).min(1.0),
                        )
                    })
                    .collect();
                Ok(pts)
            }
            FadingModel::Series(s) => {
                let t_end = t_s + horizon_s.max(0.0);
                let mut pts: Vec<(f64, f64)> = Vec::new();
                let mut t = t_s;
                let step = s.span_s() / s.times_s.len() as f64;
                let steps = ((t_end - t_s) / step).ceil().max(1.0) as usize;
                for _ in 0..steps.min(100_000) {
                    pts.push((1.0, s.multiplier_at(t)?));
                    t += step;
                }
                let w = 1.0 / pts.len() as f64;
                Ok(pts.into_iter().map(|(_, m)| (w, m)).collect())
            }
        }
    }
}

fn lognormal_samples(mean: f64, sigma_db: f64, n: usize, seed: u64) -> Vec<f64> {
    let sigma_n = sigma_db * std::f64::consts::LN_10 / 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (mean * (sigma_n * z - sigma_n * sigma_n / 2.0).exp()).min(1.0)
        })
        .collect()
}

fn inverse_normal_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Multiplies per-slot efficiencies by the fading multiplier in force at
/// each slot's time (`index / rep_rate_hz`).
pub fn apply_fading(slot_efficiencies: &[f64], fading: &FadingSeries, rep_rate_hz: f64) -> Result<Vec<f64>> {
    fading.validate()?;
    slot_efficiencies
        .iter()
        .enumerate()
        .map(|(i, eff)| Ok(eff * fading.multiplier_at(i as f64 / rep_rate_hz)?))
        .collect()
}
