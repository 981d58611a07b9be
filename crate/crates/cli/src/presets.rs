//! Bundled experiment presets.

use crate::config::ExperimentConfig;
use kinlab::{Error, Result};

/// `(name, TOML)` for every shipped preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1-left", include_str!("../presets/fig1-left.toml")),
    ("fig1-right", include_str!("../presets/fig1-right.toml")),
    ("fig2-specular", include_str!("../presets/fig2-specular.toml")),
    ("fig2-diffusive", include_str!("../presets/fig2-diffusive.toml")),
    ("example3-harmonic", include_str!("../presets/example3-harmonic.toml")),
    ("example4-hypoelliptic", include_str!("../presets/example4-hypoelliptic.toml")),
    ("cheeger-battery", include_str!("../presets/cheeger-battery.toml")),
    ("gamma2-battery", include_str!("../presets/gamma2-battery.toml")),
    ("bogovskii-square", include_str!("../presets/bogovskii-square.toml")),
    ("korn-square", include_str!("../presets/korn-square.toml")),
    ("commutator-suite", include_str!("../presets/commutator-suite.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Invalid(format!("unknown preset `{name}`")))
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(preset_text(name)?)
}
