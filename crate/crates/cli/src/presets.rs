//! Checked-in run configurations, addressable by name.

const PRESETS: &[(&str, &str)] = &[
    ("fig1a-sim", include_str!("../presets/fig1a-sim.json")),
    ("fig2", include_str!("../presets/fig2.json")),
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
    ("cpmg-aht", include_str!("../presets/cpmg-aht.json")),
    ("ostroff-waugh-aht", include_str!("../presets/ostroff-waugh-aht.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// The `description` field of a preset.
pub fn description(name: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(get(name)?).ok()?;
    value.get("description")?.as_str().map(str::to_string)
}
