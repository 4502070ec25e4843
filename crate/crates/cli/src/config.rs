//! Experiment configuration: TOML file plus `key=value` CLI overrides
//! (overrides win).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use spindetect_core::ensemble::Strategy;
use spindetect_core::model::Modulation;
use spindetect_core::oracle::DEFAULT_ENUM_BUDGET;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub instances_per_point: usize,
    #[serde(default = "default_packet_bits")]
    pub packet_bits: usize,
    pub output_dir: PathBuf,
    /// Channel trace file; i.i.d. Gaussian channels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_trace: Option<PathBuf>,
    /// Channel uses sharing one channel realization (equalizer reuse).
    #[serde(default = "default_coherence")]
    pub channel_uses_per_coherence: usize,
    #[serde(default)]
    pub oracle_mode: OracleMode,
    #[serde(default = "default_budget")]
    pub enumeration_budget: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub pt: PtSettings,
}

fn default_packet_bits() -> usize {
    12_000 // 1500-byte packets
}

fn default_coherence() -> usize {
    1
}

fn default_budget() -> u64 {
    DEFAULT_ENUM_BUDGET
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_t: Vec<usize>,
    pub n_r: Vec<usize>,
    pub modulation: Vec<Modulation>,
    pub snr_db: Vec<f64>,
    /// Detector specs: `mmse`, `zf`, `ml`, `xresq:4`, `xresq-split:4`,
    /// `paramax:4`, `iotresq:1` (the iotresq argument is `n_fs`).
    pub detectors: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Enumerate the exact ML reference whenever it fits the budget;
    /// otherwise fall back to the best energy any detector achieved.
    #[default]
    Auto,
    /// Never enumerate; best-known references only.
    Off,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtSettings {
    pub n_sweeps: usize,
    pub n_replicas: usize,
}

impl Default for PtSettings {
    fn default() -> Self {
        PtSettings {
            n_sweeps: 50,
            n_replicas: 8,
        }
    }
}

/// A detector entry after parsing; IoT-ResQ resolves its parallelism per
/// modulation at run time (`l_p = |O|^n_fs`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParsedDetector {
    Fixed { strategy: Strategy, l_p: usize },
    IotResq { n_fs: usize },
}

impl ParsedDetector {
    pub fn label(&self) -> String {
        match self {
            ParsedDetector::Fixed { strategy, l_p } => match strategy {
                Strategy::MmseOnly | Strategy::ZfOnly | Strategy::BruteForce => {
                    strategy.name().to_string()
                }
                _ => format!("{}:{}", strategy.name(), l_p),
            },
            ParsedDetector::IotResq { n_fs } => format!("iotresq:{n_fs}"),
        }
    }

    /// Base name without the parallelism argument; per-detector RNG streams
    /// key on this so growing `l_p` extends a task list instead of
    /// reshuffling it.
    pub fn seed_label(&self) -> &'static str {
        match self {
            ParsedDetector::Fixed { strategy, .. } => strategy.name(),
            ParsedDetector::IotResq { .. } => "iotresq",
        }
    }
}

pub fn parse_detector(spec: &str) -> Result<ParsedDetector> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let parse_arg = |what: &str, default: Option<usize>| -> Result<usize> {
        match (arg, default) {
            (Some(a), _) => a
                .parse::<usize>()
                .with_context(|| format!("detector {spec:?}: bad {what}")),
            (None, Some(d)) => Ok(d),
            (None, None) => bail!("detector {spec:?} requires an argument ({what})"),
        }
    };
    let det = match name {
        "mmse" => ParsedDetector::Fixed {
            strategy: Strategy::MmseOnly,
            l_p: 1,
        },
        "zf" => ParsedDetector::Fixed {
            strategy: Strategy::ZfOnly,
            l_p: 1,
        },
        "ml" | "brute-force" => ParsedDetector::Fixed {
            strategy: Strategy::BruteForce,
            l_p: 1,
        },
        "xresq" => ParsedDetector::Fixed {
            strategy: Strategy::XResQ,
            l_p: parse_arg("l_p", Some(1))?,
        },
        "xresq-split" => ParsedDetector::Fixed {
            strategy: Strategy::XResQSplit,
            l_p: parse_arg("l_p", Some(2))?,
        },
        "paramax" => ParsedDetector::Fixed {
            strategy: Strategy::ParaMax,
            l_p: parse_arg("l_p", Some(1))?,
        },
        "iotresq" => ParsedDetector::IotResq {
            n_fs: parse_arg("n_fs", None)?,
        },
        other => bail!("unknown detector {other:?}"),
    };
    if let ParsedDetector::Fixed { strategy, l_p } = &det {
        if *l_p == 0 {
            bail!("detector {spec:?}: l_p must be >= 1");
        }
        if *strategy == Strategy::XResQSplit && *l_p < 2 {
            bail!("detector {spec:?}: xresq-split needs l_p >= 2");
        }
    }
    Ok(det)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<Vec<ParsedDetector>> {
        if self.instances_per_point == 0 {
            bail!("instances_per_point must be >= 1");
        }
        if self.channel_uses_per_coherence == 0 {
            bail!("channel_uses_per_coherence must be >= 1");
        }
        let g = &self.grid;
        for (name, empty) in [
            ("grid.n_t", g.n_t.is_empty()),
            ("grid.n_r", g.n_r.is_empty()),
            ("grid.modulation", g.modulation.is_empty()),
            ("grid.snr_db", g.snr_db.is_empty()),
            ("grid.detectors", g.detectors.is_empty()),
        ] {
            if empty {
                bail!("{name} must be nonempty");
            }
        }
        if !g
            .n_t
            .iter()
            .any(|&n_t| g.n_r.iter().any(|&n_r| n_r >= n_t && n_t >= 1))
        {
            bail!("grid contains no valid (n_t, n_r) combination with n_r >= n_t");
        }
        g.detectors.iter().map(|d| parse_detector(d)).collect()
    }
}

/// Set `doc[path...] = value`, where `value` parses as a TOML literal and
/// falls back to a plain string.
fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {key:?}: {part:?} is not a table"))?;
    }
    let leaf: toml::Value = match format!("x = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").expect("parsed literal"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    table.insert(parts[parts.len() - 1].to_string(), leaf);
    Ok(())
}

/// Load a config file and apply `key=value` overrides on the raw document
/// before deserializing, so flags can change any field.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    config_from_str(&text, overrides)
}

pub fn config_from_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text.parse().context("parsing config TOML")?;
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| anyhow!("override {ov:?} is not key=value"))?;
        apply_override(&mut doc, key.trim(), value.trim())?;
    }
    let config: ExperimentConfig =
        toml::Value::Table(doc).try_into().context("invalid config")?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
master_seed = 7
instances_per_point = 3
output_dir = "out"

[grid]
n_t = [2]
n_r = [2, 4]
modulation = ["qpsk"]
snr_db = [10.0]
detectors = ["mmse", "xresq:4"]
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = config_from_str(BASE, &[]).unwrap();
        assert_eq!(cfg.packet_bits, 12_000);
        assert_eq!(cfg.pt.n_sweeps, 50);
        assert_eq!(cfg.pt.n_replicas, 8);
        assert_eq!(cfg.oracle_mode, OracleMode::Auto);
        assert_eq!(cfg.enumeration_budget, DEFAULT_ENUM_BUDGET);
        let dets = cfg.validate().unwrap();
        assert_eq!(dets[1].label(), "xresq:4");
    }

    #[test]
    fn overrides_win() {
        let cfg = config_from_str(
            BASE,
            &[
                "pt.n_sweeps=2".into(),
                "grid.snr_db=[8.0, 12.0]".into(),
                "oracle_mode=\"off\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.pt.n_sweeps, 2);
        assert_eq!(cfg.grid.snr_db, vec![8.0, 12.0]);
        assert_eq!(cfg.oracle_mode, OracleMode::Off);
    }

    #[test]
    fn detector_parsing() {
        assert!(matches!(
            parse_detector("iotresq:2").unwrap(),
            ParsedDetector::IotResq { n_fs: 2 }
        ));
        assert_eq!(parse_detector("ml").unwrap().label(), "ml");
        assert_eq!(
            parse_detector("xresq-split:6").unwrap().label(),
            "xresq-split:6"
        );
        assert!(parse_detector("xresq:0").is_err());
        assert!(parse_detector("xresq-split:1").is_err());
        assert!(parse_detector("iotresq").is_err());
        assert!(parse_detector("nope").is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(config_from_str(BASE, &["grid.n_t=[]".into()]).is_err());
        assert!(config_from_str(BASE, &["grid.n_t=[8]".into()]).is_err()); // no n_r >= n_t
        assert!(config_from_str(BASE, &["instances_per_point=0".into()]).is_err());
        assert!(config_from_str(BASE, &["grid.detectors=[\"bogus\"]".into()]).is_err());
    }
}
