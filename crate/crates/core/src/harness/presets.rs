use super::ScenarioConfig;
use crate::error::{Error, Result};

/// Bundled scenario files, by name.
pub const PRESETS: [(&str, &str); 6] = [
    ("lab-nominal", include_str!("../../presets/lab-nominal.toml")),
    ("fiber-stability", include_str!("../../presets/fiber-stability.toml")),
    ("skr-vs-loss", include_str!("../../presets/skr-vs-loss.toml")),
    (
        "freespace-nominal",
        include_str!("../../presets/freespace-nominal.toml"),
    ),
    (
        "satellite-emulation",
        include_str!("../../presets/satellite-emulation.toml"),
    ),
    ("sync-bench", include_str!("../../presets/sync-bench.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset {name:?}; known: {}",
            preset_names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    ScenarioConfig::from_toml_str(text)
}
