use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunReport;
use crate::error::{Error, Result};
use crate::protocol::{Basis, Intensity, ObservedCounts};

/// Figure tables the harness can emit.
///
/// | id | columns |
/// |----|---------|
/// | `qber_trace` | time_s, qber_y_mu, qber_y_nu, qber_x_mu, qber_x_nu |
/// | `skr_vs_loss` | loss_db, skr_asym, skr_hoeffding, skr_chernoff, qber_y, qber_x |
/// | `jitter` | bin_center_ps, count, count_reference |
/// | `freespace_trace` | time_s, skr_bps, qber_y, qber_x, key_bits |
/// | `cumulative_bits` | time_s, sifted_bits, key_bits_n\<N\> per block size |
/// | `blocks` | block_id, n_z, t_start_s, t_key_s, qber_y, qber_x, key_bits, skr_bps |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureId {
    QberTrace,
    SkrVsLoss,
    Jitter,
    FreespaceTrace,
    CumulativeBits,
    Blocks,
}

impl FigureId {
    pub const ALL: [FigureId; 6] = [
        FigureId::QberTrace,
        FigureId::SkrVsLoss,
        FigureId::Jitter,
        FigureId::FreespaceTrace,
        FigureId::CumulativeBits,
        FigureId::Blocks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::QberTrace => "qber_trace",
            FigureId::SkrVsLoss => "skr_vs_loss",
            FigureId::Jitter => "jitter",
            FigureId::FreespaceTrace => "freespace_trace",
            FigureId::CumulativeBits => "cumulative_bits",
            FigureId::Blocks => "blocks",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnsupportedFigure(format!("unknown figure {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header)?;
        for r in &self.rows {
            wtr.write_record(r)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn g(x: f64) -> String {
    format!("{x:.9e}")
}

fn ratio(m: f64, n: f64) -> f64 {
    if n > 0.0 {
        m / n
    } else {
        f64::NAN
    }
}

fn basis_qber(c: &ObservedCounts, b: Basis) -> f64 {
    ratio(c.m_basis(b), c.n_basis(b))
}

fn missing(fig: FigureId, what: &str) -> Error {
    Error::UnsupportedFigure(format!("{fig}: report has no {what}"))
}

/// Builds one figure table from a finished report.
pub fn emit_figure_data(report: &RunReport, figure: FigureId) -> Result<CsvTable> {
    match figure {
        FigureId::QberTrace => {
            let base = report.base().ok_or_else(|| missing(figure, "key blocks"))?;
            let mut t = CsvTable::new(&["time_s", "qber_y_mu", "qber_y_nu", "qber_x_mu", "qber_x_nu"]);
            for b in &base.blocks {
                let c = &b.counts;
                let mut row = vec![g(b.t_end_s())];
                for basis in Basis::ALL {
                    for k in Intensity::ALL {
                        row.push(g(ratio(c.m(basis, k), c.n(basis, k))));
                    }
                }
                t.push(row);
            }
            Ok(t)
        }
        FigureId::SkrVsLoss => {
            if report.curve.is_empty() {
                return Err(missing(figure, "loss curve"));
            }
            let mut t = CsvTable::new(&[
                "loss_db",
                "skr_asym",
                "skr_hoeffding",
                "skr_chernoff",
                "qber_y",
                "qber_x",
            ]);
            for p in &report.curve {
                t.push(vec![
                    format!("{:.3}", p.loss_db),
                    g(p.skr_asymptotic),
                    g(p.skr_hoeffding),
                    g(p.skr_chernoff),
                    g(p.qber_y),
                    g(p.qber_x),
                ]);
            }
            Ok(t)
        }
        FigureId::Jitter => {
            let s = report
                .sync
                .as_ref()
                .ok_or_else(|| missing(figure, "synchronization bench"))?;
            let mut t = CsvTable::new(&["bin_center_ps", "count", "count_reference"]);
            for ((c, n), (_, r)) in s.histogram.iter().zip(&s.histogram_reference) {
                t.push(vec![format!("{c:.3}"), n.to_string(), r.to_string()]);
            }
            Ok(t)
        }
        FigureId::FreespaceTrace => {
            let base = report.base().ok_or_else(|| missing(figure, "key blocks"))?;
            let mut t = CsvTable::new(&["time_s", "skr_bps", "qber_y", "qber_x", "key_bits"]);
            for b in &base.blocks {
                t.push(vec![
                    g(b.t_end_s()),
                    g(b.key.skr_bps),
                    g(basis_qber(&b.counts, Basis::Y)),
                    g(basis_qber(&b.counts, Basis::X)),
                    b.key.key_length_bits.to_string(),
                ]);
            }
            Ok(t)
        }
        FigureId::CumulativeBits => {
            let base = report.base().ok_or_else(|| missing(figure, "key blocks"))?;
            let mut header = vec!["time_s".to_string(), "sifted_bits".to_string()];
            header.extend(report.series.iter().map(|s| format!("key_bits_n{}", s.block_n_z)));
            let steps: Vec<Vec<(f64, u64)>> = report.series.iter().map(|s| s.cumulative_key()).collect();
            let mut t = CsvTable {
                header,
                rows: Vec::new(),
            };
            let mut sifted = 0.0;
            let mut cursor = vec![0usize; steps.len()];
            for b in &base.blocks {
                let now = b.t_end_s();
                sifted += b.counts.n_basis(Basis::Y) + b.counts.n_basis(Basis::X);
                let mut row = vec![g(now), format!("{sifted:.0}")];
                for (s, cur) in steps.iter().zip(cursor.iter_mut()) {
                    // Larger blocks end on a base-block boundary; allow for rounding.
                    while *cur < s.len() && s[*cur].0 <= now * (1.0 + 1e-12) {
                        *cur += 1;
                    }
                    row.push(if *cur == 0 {
                        "0".into()
                    } else {
                        s[*cur - 1].1.to_string()
                    });
                }
                t.push(row);
            }
            Ok(t)
        }
        FigureId::Blocks => {
            let mut t = CsvTable::new(&[
                "block_id",
                "n_z",
                "t_start_s",
                "t_key_s",
                "qber_y",
                "qber_x",
                "key_bits",
                "skr_bps",
            ]);
            for s in &report.series {
                for b in &s.blocks {
                    t.push(vec![
                        b.block_id.to_string(),
                        s.block_n_z.to_string(),
                        g(b.t_start_s),
                        g(b.key.t_key_s),
                        g(basis_qber(&b.counts, Basis::Y)),
                        g(basis_qber(&b.counts, Basis::X)),
                        b.key.key_length_bits.to_string(),
                        g(b.key.skr_bps),
                    ]);
                }
            }
            if t.rows.is_empty() {
                return Err(missing(figure, "key blocks"));
            }
            Ok(t)
        }
    }
}
