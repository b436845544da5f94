//! Scenario presets shipped with the binary.

use crate::config::ScenarioConfig;
use crate::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5-timeseries", include_str!("../presets/fig5-timeseries.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn toml_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load(name: &str) -> Result<ScenarioConfig, CliError> {
    let text = toml_source(name).ok_or_else(|| {
        CliError::config(
            "--preset",
            format!("unknown preset `{name}`; available: {}", names().join(", ")),
        )
    })?;
    let cfg = ScenarioConfig::from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}
