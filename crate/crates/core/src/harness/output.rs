use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{emit_figure_data, FigureId, Mode, RunReport, ScenarioConfig};
use crate::error::{Error, Result};

pub const OUTPUT_ROOT_ENV: &str = "QKDSIM_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("qkdsim-out"))
}

/// Machine-readable summary of one run. Holds no timestamps, so reruns
/// with the same config and seed reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub mode: Mode,
    pub crate_version: String,
    pub schema_version: u32,
    pub outputs: Vec<String>,
    pub failure: Option<String>,
}

fn create(dir: &Path, name: &str, outputs: &mut Vec<String>) -> Result<BufWriter<File>> {
    outputs.push(name.to_string());
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the report, every figure table it supports and the manifest to
/// `<root>/<scenario name>/`. Returns that directory.
pub fn write_outputs(cfg: &ScenarioConfig, report: &RunReport, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();

    serde_json::to_writer_pretty(create(&dir, "config.json", &mut outputs)?, cfg)?;
    serde_json::to_writer_pretty(create(&dir, "report.json", &mut outputs)?, report)?;
    for fig in FigureId::ALL {
        match emit_figure_data(report, fig) {
            Ok(table) => table.write_csv(create(&dir, &format!("fig_{fig}.csv"), &mut outputs)?)?,
            Err(Error::UnsupportedFigure(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(segments) = cfg.models()?.segments {
        segments.write_report(create(&dir, "budget.csv", &mut outputs)?)?;
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        mode: cfg.mode,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: cfg.schema_version,
        outputs,
        failure: report.failure.as_ref().map(|f| format!("{}: {}", f.module, f.message)),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)?;
    Ok(dir)
}
