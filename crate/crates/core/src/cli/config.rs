// Copyright 2026 The dplac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Flat `key=value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! seed=1
//! rounds=30
//! privacy.epsilon=8
//! privacy.q=0.2
//! strategy.kind=dp_lac
//! partition.clients=50
//! ```
//!
//! Command-line overrides use the same keys and are applied after the file.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::accountant::PrivacySpec;
use crate::clipstrat::{StrategyKind, DEFAULT_FRACTION_TRAIN};
use crate::flcore::{Architecture, LocalConfig};
use crate::harness::{DataSource, ExperimentConfig};
use crate::mechanisms::{MultiplierGrid, ThresholdGrid};

/// Keys that must be present.
pub const REQUIRED_KEYS: &[&str] = &[
    "rounds",
    "privacy.epsilon",
    "privacy.q",
    "strategy.kind",
    "partition.clients",
];

/// Every recognised key.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "rounds",
    "privacy.epsilon",
    "privacy.delta",
    "privacy.q",
    "privacy.noise_multiplier",
    "privacy.loss_noise_multiplier",
    "local.epochs",
    "local.batch_size",
    "local.lr",
    "strategy.kind",
    "strategy.fraction_train",
    "clip.grid",
    "clip.multipliers",
    "clip.initial_C",
    "model.arch",
    "model.hidden",
    "data.source",
    "data.samples",
    "data.features",
    "data.classes",
    "data.separation",
    "data.val_fraction",
    "data.test_fraction",
    "data.train",
    "data.val",
    "data.test",
    "partition.clients",
    "partition.alpha",
    "partition.seed",
];

/// Where a setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override(usize),
    /// End of input; used for missing keys.
    End(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override(n) => write!(f, "override #{n}"),
            Origin::End(n) => write!(f, "line {n} (end of file)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub origin: Origin,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(origin: Origin, key: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            origin,
            key: key.map(str::to_string),
            message: message.into(),
        }
    }
}

/// Raw settings with their origins, before typing.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, Origin)>,
    last_line: usize,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            raw.last_line = line_no;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            raw.insert(trimmed, Origin::Line(line_no))?;
        }
        Ok(raw)
    }

    fn insert(&mut self, entry: &str, origin: Origin) -> Result<(), ConfigError> {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            ConfigError::new(origin, None, format!("expected key=value, got {entry:?}"))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::new(
                origin,
                Some(key),
                format!("unknown key `{key}`"),
            ));
        }
        if let Origin::Line(_) = origin {
            if let Some((_, Origin::Line(prev))) = self.entries.get(key) {
                return Err(ConfigError::new(
                    origin,
                    Some(key),
                    format!("duplicate key `{key}` (first set on line {prev})"),
                ));
            }
        }
        self.entries
            .insert(key.to_string(), (value.trim().to_string(), origin));
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for (i, o) in overrides.iter().enumerate() {
            self.insert(o.as_ref().trim(), Origin::Override(i + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let n = self
            .entries
            .values()
            .filter(|(_, o)| matches!(o, Origin::Override(_)))
            .count();
        self.insert(&format!("{key}={value}"), Origin::Override(n + 1))
    }

    fn get(&self, key: &str) -> Option<&(String, Origin)> {
        self.entries.get(key)
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((v, origin)) => v.parse::<T>().map(Some).map_err(|_| {
                ConfigError::new(
                    *origin,
                    Some(key),
                    format!("invalid value {v:?} for `{key}`"),
                )
            }),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.typed(key)?.ok_or_else(|| {
            ConfigError::new(
                Origin::End(self.last_line),
                Some(key),
                format!("missing required key `{key}`"),
            )
        })
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    fn origin(&self, key: &str) -> Origin {
        self.get(key)
            .map(|(_, o)| *o)
            .unwrap_or(Origin::End(self.last_line))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    ConfigError::new(
                        *origin,
                        Some(key),
                        format!("`{key}` must be a comma-separated list of numbers"),
                    )
                }),
        }
    }

    /// Types and validates the settings.
    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let err = |key: &str, msg: String| ConfigError::new(self.origin(key), Some(key), msg);

        let rounds: u64 = self.required("rounds")?;
        let epsilon: f64 = self.required("privacy.epsilon")?;
        let q: f64 = self.required("privacy.q")?;
        let delta: f64 = self.or("privacy.delta", 1e-5)?;
        let privacy = PrivacySpec::new(epsilon, delta, q, rounds)
            .map_err(|e| err("privacy.epsilon", e.to_string()))?;

        let kind: String = self.required("strategy.kind")?;
        let mut strategy: StrategyKind = kind
            .parse()
            .map_err(|e: crate::clipstrat::ClipError| err("strategy.kind", e.to_string()))?;
        if let StrategyKind::DpClac { fraction_train } = &mut strategy {
            *fraction_train = self.or("strategy.fraction_train", DEFAULT_FRACTION_TRAIN)?;
        }

        let grid = match self.list("clip.grid")? {
            Some(v) => ThresholdGrid::new(v).map_err(|e| err("clip.grid", e.to_string()))?,
            None => ThresholdGrid::standard(),
        };
        let mults = match self.list("clip.multipliers")? {
            Some(v) => {
                MultiplierGrid::new(v).map_err(|e| err("clip.multipliers", e.to_string()))?
            }
            None => MultiplierGrid::standard(),
        };

        let arch_name: String = self.or("model.arch", "logistic".to_string())?;
        let arch = match arch_name.as_str() {
            "logistic" => Architecture::Logistic,
            "mlp" => Architecture::Mlp {
                hidden: self.or("model.hidden", 16)?,
            },
            other => {
                return Err(err(
                    "model.arch",
                    format!("unknown architecture {other:?} (logistic or mlp)"),
                ))
            }
        };

        let source: String = self.or("data.source", "synthetic".to_string())?;
        let data = match source.as_str() {
            "synthetic" => DataSource::Synthetic {
                samples: self.or("data.samples", 2000)?,
                features: self.or("data.features", 10)?,
                classes: self.or("data.classes", 2)?,
                separation: self.or("data.separation", 3.0)?,
            },
            "files" => DataSource::Files {
                train: self.required::<PathBuf>("data.train")?,
                val: self.required::<PathBuf>("data.val")?,
                test: self.typed::<PathBuf>("data.test")?,
                classes: self.typed("data.classes")?,
            },
            other => {
                return Err(err(
                    "data.source",
                    format!("unknown data source {other:?} (synthetic or files)"),
                ))
            }
        };

        let cfg = ExperimentConfig {
            privacy,
            local: LocalConfig {
                epochs: self.or("local.epochs", 1)?,
                batch_size: self.or("local.batch_size", 16)?,
                lr: self.or("local.lr", 0.1)?,
            },
            strategy,
            grid,
            mults,
            arch,
            data,
            val_fraction: self.or("data.val_fraction", 0.1)?,
            test_fraction: self.or("data.test_fraction", 0.2)?,
            num_clients: self.required("partition.clients")?,
            alpha: self.or("partition.alpha", 1.0)?,
            partition_seed: self.typed("partition.seed")?,
            initial_c: self.typed("clip.initial_C")?,
            noise_override: self.typed("privacy.noise_multiplier")?,
            loss_noise_override: self.typed("privacy.loss_noise_multiplier")?,
            master_seed: self.or("seed", 0)?,
        };
        cfg.validate()
            .map_err(|e| ConfigError::new(Origin::End(self.last_line), None, e.to_string()))?;
        Ok(cfg)
    }
}

/// Parses configuration text and applies overrides.
pub fn parse_config<S: AsRef<str>>(
    text: &str,
    overrides: &[S],
) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;
    raw.apply_overrides(overrides)?;
    raw.build()
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes every setting, including defaults, in a form [`parse_config`] reads back.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("seed", cfg.master_seed.to_string());
    kv("rounds", cfg.privacy.rounds.to_string());
    kv("privacy.epsilon", cfg.privacy.epsilon.to_string());
    kv("privacy.delta", cfg.privacy.delta.to_string());
    kv("privacy.q", cfg.privacy.q.to_string());
    if let Some(z) = cfg.noise_override {
        kv("privacy.noise_multiplier", z.to_string());
    }
    if let Some(z) = cfg.loss_noise_override {
        kv("privacy.loss_noise_multiplier", z.to_string());
    }
    kv("local.epochs", cfg.local.epochs.to_string());
    kv("local.batch_size", cfg.local.batch_size.to_string());
    kv("local.lr", cfg.local.lr.to_string());
    kv("strategy.kind", cfg.strategy.name().to_string());
    if let StrategyKind::DpClac { fraction_train } = cfg.strategy {
        kv("strategy.fraction_train", fraction_train.to_string());
    }
    kv("clip.grid", join(cfg.grid.values()));
    kv("clip.multipliers", join(cfg.mults.values()));
    if let Some(c) = cfg.initial_c {
        kv("clip.initial_C", c.to_string());
    }
    match cfg.arch {
        Architecture::Logistic => kv("model.arch", "logistic".into()),
        Architecture::Mlp { hidden } => {
            kv("model.arch", "mlp".into());
            kv("model.hidden", hidden.to_string());
        }
    }
    match &cfg.data {
        DataSource::Synthetic {
            samples,
            features,
            classes,
            separation,
        } => {
            kv("data.source", "synthetic".into());
            kv("data.samples", samples.to_string());
            kv("data.features", features.to_string());
            kv("data.classes", classes.to_string());
            kv("data.separation", separation.to_string());
        }
        DataSource::Files {
            train,
            val,
            test,
            classes,
        } => {
            kv("data.source", "files".into());
            kv("data.train", train.display().to_string());
            kv("data.val", val.display().to_string());
            if let Some(t) = test {
                kv("data.test", t.display().to_string());
            }
            if let Some(k) = classes {
                kv("data.classes", k.to_string());
            }
        }
    }
    kv("data.val_fraction", cfg.val_fraction.to_string());
    kv("data.test_fraction", cfg.test_fraction.to_string());
    kv("partition.clients", cfg.num_clients.to_string());
    kv("partition.alpha", cfg.alpha.to_string());
    if let Some(s) = cfg.partition_seed {
        kv("partition.seed", s.to_string());
    }
    out
}

/// Resolves relative dataset paths against `base`.
pub fn resolve_paths(cfg: &mut ExperimentConfig, base: &Path) {
    if let DataSource::Files {
        train, val, test, ..
    } = &mut cfg.data
    {
        for p in [Some(train), Some(val), test.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "\
# minimal run
rounds=30
privacy.epsilon=8
privacy.q=0.2
strategy.kind=dp_lac
partition.clients=50
";

    #[test]
    fn defaults_fill_in() {
        let cfg = parse_config::<&str>(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.privacy.delta, 1e-5);
        assert_eq!(cfg.grid, ThresholdGrid::standard());
        assert_eq!(cfg.mults, MultiplierGrid::standard());
        assert_eq!(cfg.local.lr, 0.1);
        assert_eq!(cfg.initial_c, None);
        assert_eq!(cfg.rounds(), 30);
    }

    #[test]
    fn overrides_apply_after_file() {
        let cfg = parse_config(MINIMAL, &["strategy.kind=fixed", "clip.initial_C=8.0"]).unwrap();
        assert_eq!(cfg.strategy, StrategyKind::Fixed);
        assert_eq!(cfg.initial_c, Some(8.0));
        let clac = parse_config(MINIMAL, &["strategy.kind=dp_clac"]).unwrap();
        assert_eq!(
            clac.strategy,
            StrategyKind::DpClac {
                fraction_train: 2.0 / 3.0
            }
        );
    }

    #[test]
    fn missing_key_names_field_and_line() {
        let text = MINIMAL.replace("privacy.q=0.2\n", "");
        let err = parse_config::<&str>(&text, &[]).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("privacy.q"));
        assert_eq!(err.origin, Origin::End(5));
        let msg = err.to_string();
        assert!(msg.contains("privacy.q") && msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn bad_values_are_line_anchored() {
        let text = MINIMAL.replace("privacy.q=0.2", "privacy.q=abc");
        let err = parse_config::<&str>(&text, &[]).unwrap_err();
        assert_eq!(err.origin, Origin::Line(4));
        let err = parse_config::<&str>(&format!("{MINIMAL}bogus.key=1\n"), &[]).unwrap_err();
        assert_eq!(err.origin, Origin::Line(7));
        let err = parse_config::<&str>(&format!("{MINIMAL}rounds=3\n"), &[]).unwrap_err();
        assert!(err.message.contains("duplicate"));
        let err = parse_config::<&str>(&format!("{MINIMAL}no equals sign\n"), &[]).unwrap_err();
        assert_eq!(err.origin, Origin::Line(7));
        let err = parse_config(MINIMAL, &["local.epochs=zero"]).unwrap_err();
        assert_eq!(err.origin, Origin::Override(1));
        let err = parse_config(MINIMAL, &["clip.grid=3,2,1"]).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("clip.grid"));
    }

    #[test]
    fn file_source_needs_paths() {
        let err = parse_config(MINIMAL, &["data.source=files", "data.val=v.csv"]).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("data.train"));
        let mut cfg = parse_config(
            MINIMAL,
            &["data.source=files", "data.val=v.csv", "data.train=t.csv"],
        )
        .unwrap();
        resolve_paths(&mut cfg, Path::new("/base"));
        match cfg.data {
            DataSource::Files {
                train, val, test, ..
            } => {
                assert_eq!(train, PathBuf::from("/base/t.csv"));
                assert_eq!(val, PathBuf::from("/base/v.csv"));
                assert_eq!(test, None);
            }
            _ => panic!("expected files"),
        }
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            (0.1f64..20.0, 1e-9f64..0.1, 0.05f64..1.0, 2u64..500),
            (1usize..5, 1usize..64, 1e-4f64..1.0),
            (
                0usize..3,
                0.05f64..0.95,
                proptest::option::of(0.01f64..100.0),
            ),
            (proptest::option::of(1usize..32), 20usize..60, 0.1f64..10.0),
            (
                any::<u64>(),
                proptest::option::of(any::<u64>()),
                proptest::option::of(0.0f64..5.0),
            ),
        )
            .prop_map(|(p, l, s, m, r)| {
                let data = DataSource::Synthetic {
                    samples: 500,
                    features: 3,
                    classes: 2,
                    separation: m.2,
                };
                let mut cfg =
                    ExperimentConfig::new(PrivacySpec::new(p.0, p.1, p.2, p.3).unwrap(), m.1, data);
                cfg.local = LocalConfig {
                    epochs: l.0,
                    batch_size: l.1,
                    lr: l.2,
                };
                cfg.strategy = match s.0 {
                    0 => StrategyKind::Fixed,
                    1 => StrategyKind::DpLac,
                    _ => StrategyKind::DpClac {
                        fraction_train: s.1,
                    },
                };
                cfg.initial_c = s.2;
                cfg.arch = match m.0 {
                    Some(h) => Architecture::Mlp { hidden: h },
                    None => Architecture::Logistic,
                };
                cfg.master_seed = r.0;
                cfg.partition_seed = r.1;
                cfg.noise_override = r.2;
                cfg
            })
            .prop_filter("valid", |c| c.validate().is_ok())
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(cfg in arb_config()) {
            let text = serialize_config(&cfg);
            let back = parse_config::<&str>(&text, &[]).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
