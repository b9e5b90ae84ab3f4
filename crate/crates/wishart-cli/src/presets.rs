//! Built-in experiment configurations: the four timing-table rows, the
//! convergence-figure setups and the two-asset option examples.

use crate::config::ExperimentConfig;
use crate::CliError;

pub const PRESET_NAMES: &[&str] = &[
    "table1_row1",
    "table1_row2",
    "table1_row3",
    "table1_row4",
    "fig_d3_left",
    "fig_d3_right",
    "fig_d10_left",
    "fig_d10_right",
    "fig_maxtrace",
    "gourieroux_alpha45",
    "gourieroux_alpha105",
];

pub fn preset_json(name: &str) -> Option<&'static str> {
    match name {
        "table1_row1" => Some(include_str!("../presets/table1_row1.json")),
        "table1_row2" => Some(include_str!("../presets/table1_row2.json")),
        "table1_row3" => Some(include_str!("../presets/table1_row3.json")),
        "table1_row4" => Some(include_str!("../presets/table1_row4.json")),
        "fig_d3_left" => Some(include_str!("../presets/fig_d3_left.json")),
        "fig_d3_right" => Some(include_str!("../presets/fig_d3_right.json")),
        "fig_d10_left" => Some(include_str!("../presets/fig_d10_left.json")),
        "fig_d10_right" => Some(include_str!("../presets/fig_d10_right.json")),
        "fig_maxtrace" => Some(include_str!("../presets/fig_maxtrace.json")),
        "gourieroux_alpha45" => Some(include_str!("../presets/gourieroux_alpha45.json")),
        "gourieroux_alpha105" => Some(include_str!("../presets/gourieroux_alpha105.json")),
        _ => None,
    }
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig, CliError> {
    let text = preset_json(name).ok_or_else(|| {
        CliError::config(format!(
            "unknown preset '{name}'; available: {}",
            PRESET_NAMES.join(", ")
        ))
    })?;
    ExperimentConfig::from_json(text)
}
