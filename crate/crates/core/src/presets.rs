//! Bundled run configurations.

use crate::config::{ConfigError, RunConfig};

const PRESETS: &[(&str, &str)] = &[
    ("n19-fig2", include_str!("../presets/n19-fig2.toml")),
    ("n13-fig5-left", include_str!("../presets/n13-fig5-left.toml")),
    ("n31-fig5-right", include_str!("../presets/n31-fig5-right.toml")),
    ("n1-rabi", include_str!("../presets/n1-rabi.toml")),
    ("n2-blockade", include_str!("../presets/n2-blockade.toml")),
    ("lz-benchmark", include_str!("../presets/lz-benchmark.toml")),
    ("n4-oracle", include_str!("../presets/n4-oracle.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// TOML source of a preset.
pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let src = source(name).ok_or_else(|| ConfigError {
        key: String::new(),
        line: None,
        message: format!(
            "unknown preset `{name}`; available: {}",
            names().collect::<Vec<_>>().join(", ")
        ),
    })?;
    RunConfig::from_toml(src, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates_and_round_trips() {
        for name in names() {
            let c = load(name, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c, RunConfig::from_toml(&c.to_toml(), &[]).unwrap(), "{name}");
        }
        assert!(load("nope", &[]).is_err());
    }

    #[test]
    fn shared_pulse_between_chain_presets() {
        let a = load("n19-fig2", &[]).unwrap();
        let b = load("n13-fig5-left", &[]).unwrap();
        assert_eq!(a.schedule, b.schedule);
        assert_eq!(a.scan, b.scan);
    }
}
