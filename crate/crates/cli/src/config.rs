//! TOML scenario files and `--set` overrides.

use std::path::Path;

use capsim::analysis::{MinCapGrid, SweepGrid};
use capsim::energy::CapacitorParams;
use capsim::engine::{RunSettings, TraceSettings};
use capsim::harvester::HarvestConfig;
use capsim::{CurrentTable, LorawanParams, ScenarioConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

/// Keys accepted although the serialized defaults leave them out.
const OPTIONAL_KEYS: &[&str] = &["scenario.first_packet_offset"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("override `{0}` is not of the form key=value")]
    MalformedOverride(String),
    #[error("override key `{0}` matches no configuration key")]
    UnknownOverride(String),
    #[error("override key `{key}` is ambiguous, use one of: {}", .candidates.join(", "))]
    AmbiguousOverride { key: String, candidates: Vec<String> },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// A whole scenario file: the run itself plus the optional grids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub scenario: RunSettings,
    pub capacitor: CapacitorParams,
    pub harvester: HarvestConfig,
    pub lorawan: LorawanParams,
    pub currents: CurrentTable,
    pub trace: TraceSettings,
    pub sweep: SweepGrid,
    pub mincap: MinCapGrid,
}

impl Config {
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            scenario: self.scenario.clone(),
            capacitor: self.capacitor.clone(),
            harvester: self.harvester.clone(),
            lorawan: self.lorawan.clone(),
            currents: self.currents.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.scenario().violations();
        v.extend(self.sweep.violations());
        v.extend(self.mincap.violations());
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Every `section.key` the format knows about.
pub fn known_keys() -> Vec<String> {
    let defaults = Table::try_from(Config::default()).expect("defaults serialize");
    let mut keys: Vec<String> = defaults
        .iter()
        .flat_map(|(section, body)| {
            body.as_table()
                .into_iter()
                .flat_map(|t| t.keys())
                .map(move |k| format!("{section}.{k}"))
        })
        .collect();
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys.sort();
    keys
}

fn unknown_keys(table: &Table, known: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (section, body) in table {
        match body.as_table() {
            Some(t) => {
                for k in t.keys() {
                    let full = format!("{section}.{k}");
                    if !known.contains(&full) {
                        out.push(full);
                    }
                }
            }
            None => out.push(section.clone()),
        }
    }
    out
}

fn parse_value(raw: &str) -> Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn resolve_key(key: &str, known: &[String]) -> Result<String, ConfigError> {
    if known.iter().any(|k| k == key) {
        return Ok(key.to_string());
    }
    let candidates: Vec<String> = known
        .iter()
        .filter(|k| k.split_once('.').is_some_and(|(_, leaf)| leaf == key))
        .cloned()
        .collect();
    match candidates.len() {
        0 => Err(ConfigError::UnknownOverride(key.to_string())),
        1 => Ok(candidates.into_iter().next().unwrap()),
        _ => Err(ConfigError::AmbiguousOverride {
            key: key.to_string(),
            candidates,
        }),
    }
}

/// Applies `key=value` overrides; keys are `section.key` or a leaf name unique across sections.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<(), ConfigError> {
    let known = known_keys();
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(item.clone()))?;
        let full = resolve_key(key.trim(), &known)?;
        let (section, leaf) = full.split_once('.').expect("known keys are dotted");
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        match entry.as_table_mut() {
            Some(t) => {
                t.insert(leaf.to_string(), parse_value(raw.trim()));
            }
            None => return Err(ConfigError::UnknownKeys(vec![section.to_string()])),
        }
    }
    Ok(())
}

/// Parses and validates a scenario from TOML text plus overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut table: Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let unknown = unknown_keys(&table, &known_keys());
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    apply_overrides(&mut table, overrides)?;
    // Re-rendering gives the deserializer a document, so errors name the key.
    let merged = toml::to_string(&table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let config: Config = toml::from_str(&merged).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let violations = config.violations();
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.capacitor.v_th_low(), 1.8);
        assert_eq!(c.capacitor.v_th_high(), 3.0);
    }

    #[test]
    fn override_beats_file() {
        let c = parse_config(
            "[capacitor]\ncapacitance = 0.01\n",
            &["capacitance=0.02".into(), "scenario.seed=7".into()],
        )
        .unwrap();
        assert_eq!(c.capacitor.capacitance, 0.02);
        assert_eq!(c.scenario.seed, 7);
    }

    #[test]
    fn ambiguous_bare_key_is_rejected() {
        let err = parse_config("", &["seed=3".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::AmbiguousOverride { .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = parse_config("[capacitor]\nfoo = 1\n[bogus]\nx = 2\n", &[]).unwrap_err();
        match err {
            ConfigError::UnknownKeys(k) => assert_eq!(k, vec!["bogus.x", "capacitor.foo"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn optional_offset_is_accepted() {
        let c = parse_config("[scenario]\nfirst_packet_offset = 80\n", &[]).unwrap();
        assert_eq!(c.scenario.first_packet_offset, Some(80.0));
    }

    #[test]
    fn string_override_needs_no_quotes() {
        let c = parse_config("", &["off_packet_policy=defer".into()]).unwrap();
        assert_eq!(c.scenario.off_packet_policy, capsim::engine::OffPacketPolicy::Defer);
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config(
            "[scenario]\nfirst_packet_offset = 12.5\n[lorawan]\nconfirmed = true\n",
            &["capacitance=0.0047".into()],
        )
        .unwrap();
        assert_eq!(parse_config(&c.to_toml(), &[]).unwrap(), c);
    }
}
