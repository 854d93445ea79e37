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

//! One function per subcommand. Each writes a short report to `out`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::accountant::{self, PrivacySpec};
use crate::flcore::{self, Dataset, PartitionSpec};
use crate::harness::{self, format_sig, ExperimentConfig, ExperimentResult};

use super::config::{resolve_paths, RawConfig};
use super::CliError;

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl GlobalOpts {
    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(rayon::current_num_threads)
            .max(1)
    }

    fn out_dir(&self, fallback: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_raw(path: &Path, overrides: &[String]) -> Result<RawConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let wrap = |source| CliError::Config {
        path: path.to_path_buf(),
        source,
    };
    let mut raw = RawConfig::parse(&text).map_err(wrap)?;
    raw.apply_overrides(overrides).map_err(wrap)?;
    Ok(raw)
}

fn build(path: &Path, raw: &RawConfig, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut raw = raw.clone();
    if let Some(seed) = seed {
        raw.set("seed", &seed.to_string())
            .expect("seed is a known key");
    }
    let mut cfg = raw.build().map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    resolve_paths(&mut cfg, path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Loads a configuration file, applying `overrides` and the global seed.
pub fn load_config(
    path: &Path,
    overrides: &[String],
    opts: &GlobalOpts,
) -> Result<ExperimentConfig, CliError> {
    build(path, &read_raw(path, overrides)?, opts.seed)
}

/// `dplac run`
pub fn run(
    config: &Path,
    overrides: &[String],
    opts: &GlobalOpts,
    out: &mut dyn Write,
) -> Result<ExperimentResult, CliError> {
    let cfg = load_config(config, overrides, opts)?;
    let dir = opts.out_dir("run");
    let result = harness::run_experiment_with_workers(&cfg, opts.workers())?;
    harness::write_outputs(&dir, &cfg, &result)?;
    let last = result.final_record();
    let _ = writeln!(
        out,
        "{} rounds={} final_acc={} final_C={} -> {}",
        cfg.strategy,
        cfg.rounds(),
        format_sig(last.eval_accuracy, 6),
        format_sig(last.c, 6),
        dir.display()
    );
    Ok(result)
}

/// Parameters of `dplac accountant`.
#[derive(Debug, Clone, Copy)]
pub enum AccountantQuery {
    SolveZ { epsilon: f64 },
    SolveEps { z: f64 },
}

/// `dplac accountant solve-z|solve-eps`
pub fn accountant(
    query: AccountantQuery,
    delta: f64,
    q: f64,
    rounds: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut text = String::new();
    match query {
        AccountantQuery::SolveZ { epsilon } => {
            let spec = PrivacySpec::new(epsilon, delta, q, rounds)?;
            let z = accountant::get_noise_multiplier(&spec)?;
            let achieved = accountant::epsilon_for(z, q, rounds, delta)?;
            let _ = writeln!(text, "epsilon={}", format_sig(epsilon, 6));
            let _ = writeln!(text, "delta={}", format_sig(delta, 6));
            let _ = writeln!(text, "q={}", format_sig(q, 6));
            let _ = writeln!(text, "rounds={rounds}");
            let _ = writeln!(text, "z={}", format_sig(z.value(), 6));
            let _ = writeln!(text, "epsilon_achieved={}", format_sig(achieved, 6));
        }
        AccountantQuery::SolveEps { z } => {
            // Validates delta, q and rounds; epsilon is a placeholder.
            PrivacySpec::new(1.0, delta, q, rounds)?;
            let z = accountant::NoiseMultiplier::new(z)?;
            let eps = accountant::epsilon_for(z, q, rounds, delta)?;
            let _ = writeln!(text, "z={}", format_sig(z.value(), 6));
            let _ = writeln!(text, "delta={}", format_sig(delta, 6));
            let _ = writeln!(text, "q={}", format_sig(q, 6));
            let _ = writeln!(text, "rounds={rounds}");
            let _ = writeln!(text, "epsilon={}", format_sig(eps, 6));
        }
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

/// Shape of a generated dataset, written `samples,features,classes,separation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
}

impl std::str::FromStr for SynthSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let usage = || format!("expected samples,features,classes,separation, got {s:?}");
        if parts.len() != 4 {
            return Err(usage());
        }
        let int = |p: &str| p.parse::<usize>().map_err(|_| usage());
        Ok(SynthSpec {
            samples: int(parts[0])?,
            features: int(parts[1])?,
            classes: int(parts[2])?,
            separation: parts[3].parse().map_err(|_| usage())?,
        })
    }
}

/// What `dplac partition` splits.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionInput {
    File {
        path: PathBuf,
        classes: Option<usize>,
    },
    /// Generated with the partition seed.
    Synthetic(SynthSpec),
}

/// `dplac partition`: writes `shard_NNNN.csv` files and `manifest.csv`.
pub fn partition(
    input: &PartitionInput,
    spec: &PartitionSpec,
    opts: &GlobalOpts,
    out: &mut dyn Write,
) -> Result<Vec<Dataset>, CliError> {
    let dataset = match input {
        PartitionInput::File { path, classes } => Dataset::load(path, *classes)?,
        PartitionInput::Synthetic(s) => {
            flcore::synth_dataset(s.samples, s.features, s.classes, s.separation, spec.seed)?
        }
    };
    let shards = flcore::dirichlet_partition(&dataset, spec)?;
    let dir = opts.out_dir("partition");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let k = dataset.num_classes();
    let mut manifest = String::from("shard,file,size");
    for c in 0..k {
        let _ = write!(manifest, ",class_{c}");
    }
    manifest.push('\n');
    for (i, shard) in shards.iter().enumerate() {
        let name = format!("shard_{i:04}.csv");
        let path = dir.join(&name);
        shard.save(&path)?;
        let counts: Vec<String> = shard.class_counts().iter().map(|c| c.to_string()).collect();
        let _ = writeln!(manifest, "{i},{name},{},{}", shard.len(), counts.join(","));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(io_err(&path))?;
    let _ = writeln!(
        out,
        "{} samples -> {} shards in {}",
        dataset.len(),
        shards.len(),
        dir.display()
    );
    Ok(shards)
}

/// One finished sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub seed: u64,
    pub final_acc: f64,
    pub final_c: f64,
}

fn dir_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `dplac sweep`: runs point `i` with seed `base + i` into its own subdirectory.
pub fn sweep(
    config: &Path,
    overrides: &[String],
    param: &str,
    values: &[String],
    opts: &GlobalOpts,
    out: &mut dyn Write,
) -> Result<Vec<SweepPoint>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let raw = read_raw(config, overrides)?;
    let base_seed = match opts.seed {
        Some(s) => s,
        None => build(config, &raw, None)?.master_seed,
    };
    let root = opts.out_dir("sweep");
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    let mut points = Vec::with_capacity(values.len());
    let mut comparison = String::from("value,final_acc,final_C\n");
    for (i, value) in values.iter().enumerate() {
        let mut point_raw = raw.clone();
        point_raw
            .set(param, value)
            .map_err(|source| CliError::Config {
                path: config.to_path_buf(),
                source,
            })?;
        let seed = base_seed.wrapping_add(i as u64);
        let cfg = build(config, &point_raw, Some(seed))?;
        let result = harness::run_experiment_with_workers(&cfg, opts.workers())?;
        let dir = root.join(format!("{}={}", dir_safe(param), dir_safe(value)));
        harness::write_outputs(&dir, &cfg, &result)?;
        let last = result.final_record();
        let _ = writeln!(
            comparison,
            "{value},{},{}",
            format_sig(last.eval_accuracy, 9),
            format_sig(last.c, 9)
        );
        let _ = writeln!(
            out,
            "{param}={value} seed={seed} final_acc={} final_C={}",
            format_sig(last.eval_accuracy, 6),
            format_sig(last.c, 6)
        );
        points.push(SweepPoint {
            value: value.clone(),
            seed,
            final_acc: last.eval_accuracy,
            final_c: last.c,
        });
    }
    let path = root.join("comparison.csv");
    fs::write(&path, comparison).map_err(io_err(&path))?;
    Ok(points)
}

/// Columns `plotdata` can extract from `rounds.csv`.
pub const SERIES: &[&str] = &["C", "v", "sigma", "acc", "loss"];

/// `dplac plotdata`: prints `round,<series>` from a run directory.
pub fn plotdata(run_dir: &Path, series: &str, out: &mut dyn Write) -> Result<(), CliError> {
    if !SERIES.contains(&series) {
        return Err(CliError::Usage(format!(
            "unknown series {series:?}; expected one of {}",
            SERIES.join(", ")
        )));
    }
    let path = run_dir.join("rounds.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let col = header
        .iter()
        .position(|h| *h == series)
        .ok_or_else(|| bad(format!("no column {series:?}")))?;
    let mut buf = format!("round,{series}\n");
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let value = fields
            .get(col)
            .ok_or_else(|| bad(format!("line {} is truncated", i + 2)))?;
        let _ = writeln!(buf, "{},{value}", fields[0]);
    }
    out.write_all(buf.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}
