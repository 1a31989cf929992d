//! Link budget for the free-space channel: dB segments, single-mode fiber
//! coupling versus angle-of-arrival jitter, receiver focal length.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonic::{db_to_linear, linear_to_db};

/// Residual AoA jitter with the steering mirror closed, μrad.
pub const SIGMA_FSM_ON_URAD: f64 = 0.2;
/// Residual AoA jitter with the steering mirror open, μrad.
pub const SIGMA_FSM_OFF_URAD: f64 = 9.0;
/// Measured coupling at the two operating points.
pub const ETA_SMF_FSM_ON: f64 = 0.3542;
pub const ETA_SMF_FSM_OFF: f64 = 0.2275;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub label: String,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkSegments {
    pub segments: Vec<Segment>,
}

impl LinkSegments {
    pub fn new<S: Into<String>>(items: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let s = LinkSegments {
            segments: items
                .into_iter()
                .map(|(label, loss_db)| Segment {
                    label: label.into(),
                    loss_db,
                })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Intermodal testbed: transmitter fiber, terminal, free-space path,
    /// receiver optics, SMF coupling at `sigma_urad`, deployed fiber.
    pub fn freespace_testbed(coupling: &dyn CouplingCurve, sigma_urad: f64) -> Self {
        let eta_smf_db = linear_to_db(coupling.efficiency(sigma_urad));
        LinkSegments::new([
            ("fiber_tx", 3.75),
            ("tx_terminal", 1.2),
            ("eta_F", 2.0),
            ("rx_optics", 1.9),
            ("eta_SMF", eta_smf_db),
            ("fiber_rx", 4.24),
        ])
        .expect("testbed segments are non-negative")
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.loss_db >= 0.0 && s.loss_db.is_finite()) {
                return Err(Error::invalid(format!("segment {} has loss {} dB", s.label, s.loss_db)));
            }
        }
        Ok(())
    }

    pub fn total_db(&self) -> f64 {
        self.segments.iter().map(|s| s.loss_db).sum()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.segments.iter().find(|s| s.label == label).map(|s| s.loss_db)
    }

    /// Labeled budget table with a trailing total row.
    pub fn write_report<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["segment", "loss_db", "transmittance"])?;
        for s in &self.segments {
            wtr.write_record([
                s.label.clone(),
                format!("{:.4}", s.loss_db),
                format!("{:.6}", db_to_linear(s.loss_db)),
            ])?;
        }
        let t = self.total_db();
        wtr.write_record([
            "total".to_string(),
            format!("{t:.4}"),
            format!("{:.6}", db_to_linear(t)),
        ])?;
        wtr.flush()?;
        Ok(())
    }
}

/// Channel efficiency of free-space path, receiver optics and SMF
/// coupling, all in dB of loss.
pub fn compose_efficiency(eta_f_db: f64, eta_optics_db: f64, eta_smf_db: f64) -> f64 {
    eta_f_db + eta_optics_db + eta_smf_db
}

/// SMF coupling efficiency as a function of residual AoA jitter.
pub trait CouplingCurve {
    fn efficiency(&self, sigma_urad: f64) -> f64;
}

/// Lorentzian roll-off `eta_peak / (1 + (σ/σ_ref)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingModel {
    pub eta_peak: f64,
    pub sigma_ref_urad: f64,
    pub beam_waist_mm: f64,
    pub wavelength_nm: f64,
}

impl CouplingModel {
    /// Solves for `(eta_peak, sigma_ref)` through two `(σ, η)` points.
    pub fn through(a: (f64, f64), b: (f64, f64)) -> Result<Self> {
        let ((s1, e1), (s2, e2)) = (a, b);
        let denom = e2 - e1;
        let num = e1 * s1 * s1 - e2 * s2 * s2;
        let r2 = num / denom;
        if !(r2 > 0.0) || !(r2.is_finite()) {
            return Err(Error::invalid("anchor points do not fit a monotone roll-off"));
        }
        let eta_peak = e1 * (1.0 + s1 * s1 / r2);
        if !(eta_peak > 0.0 && eta_peak <= 1.0) {
            return Err(Error::invalid(format!(
                "fitted peak coupling {eta_peak} outside (0, 1]"
            )));
        }
        Ok(CouplingModel {
            eta_peak,
            sigma_ref_urad: r2.sqrt(),
            beam_waist_mm: 25.0,
            wavelength_nm: 1550.0,
        })
    }

    /// Calibrated to the FSM-on and FSM-off measurements.
    pub fn testbed() -> Self {
        Self::through(
            (SIGMA_FSM_OFF_URAD, ETA_SMF_FSM_OFF),
            (SIGMA_FSM_ON_URAD, ETA_SMF_FSM_ON),
        )
        .expect("testbed anchors are consistent")
    }
}

impl Default for CouplingModel {
    fn default() -> Self {
        Self::testbed()
    }
}

impl CouplingCurve for CouplingModel {
    fn efficiency(&self, sigma_urad: f64) -> f64 {
        let x = sigma_urad / self.sigma_ref_urad;
        self.eta_peak / (1.0 + x * x)
    }
}

pub fn smf_coupling(sigma_aoa_urad: f64, model: &dyn CouplingCurve) -> f64 {
    model.efficiency(sigma_aoa_urad.max(0.0))
}

/// Coupling gain from closing the steering loop, dB.
pub fn fsm_improvement_db(model: &dyn CouplingCurve) -> f64 {
    fsm_gain_between(model, SIGMA_FSM_ON_URAD, SIGMA_FSM_OFF_URAD)
}

pub fn fsm_gain_between(model: &dyn CouplingCurve, sigma_on_urad: f64, sigma_off_urad: f64) -> f64 {
    10.0 * (model.efficiency(sigma_on_urad) / model.efficiency(sigma_off_urad)).log10()
}

/// `f_eff = π·Ø·MFD / (4·λ·β)`, in mm.
pub fn effective_focal_length(pupil_diameter_mm: f64, mfd_um: f64, wavelength_nm: f64, beta: f64) -> Result<f64> {
    if !(pupil_diameter_mm > 0.0 && mfd_um > 0.0 && wavelength_nm > 0.0 && beta > 0.0) {
        return Err(Error::invalid("focal length inputs must be positive"));
    }
    let mfd_mm = mfd_um * 1e-3;
    let lambda_mm = wavelength_nm * 1e-6;
    Ok(std::f64::consts::PI * pupil_diameter_mm * mfd_mm / (4.0 * lambda_mm * beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_both_anchors() {
        let m = CouplingModel::testbed();
        assert!((m.efficiency(9.0) - 0.2275).abs() < 1e-12);
        assert!((m.efficiency(0.2) - 0.3542).abs() < 1e-12);
        assert_eq!(m.efficiency(0.0), m.eta_peak);
    }

    #[test]
    fn bad_anchors_rejected() {
        assert!(CouplingModel::through((1.0, 0.3), (2.0, 0.4)).is_err());
        assert!(CouplingModel::through((1.0, 0.3), (1.0, 0.3)).is_err());
    }

    #[test]
    fn negative_segment_rejected() {
        assert!(LinkSegments::new([("a", 1.0), ("b", -0.1)]).is_err());
    }

    #[test]
    fn report_has_total_row() {
        let s = LinkSegments::new([("a", 1.0), ("b", 2.0)]).unwrap();
        let mut buf = Vec::new();
        s.write_report(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().last().unwrap().starts_with("total,3.0000"));
    }
}
