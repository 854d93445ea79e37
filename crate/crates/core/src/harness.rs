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

//! The federated server loop.
//!
//! Round 1 either collects threshold votes and builds the private histogram
//! (no model update) or, when an initial threshold is configured, trains like
//! every later round. Rounds `2..=T` update the threshold from the two most
//! recent losses, sample a Poisson cohort, run local SGD on each member in a
//! worker pool, and aggregate the clipped updates with Gaussian noise.
//!
//! All randomness flows from [`derive_rng`], keyed by
//! `(master_seed, round, client, purpose)`, so results do not depend on how
//! client work is scheduled.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::accountant::{self, AccountantError, NoiseMultiplier, PrivacySpec};
use crate::clipstrat::{
    self, next_threshold, strategy_step, ClipError, ClipState, InitCReport, StrategyKind,
};
use crate::flcore::{self, Architecture, Dataset, FlError, LocalConfig, Model, PartitionSpec};
use crate::mechanisms::{self, MechanismError, MultiplierGrid, ParamVector, ThresholdGrid};

/// Round-1 threshold used when no client was sampled to vote.
pub const FALLBACK_INITIAL_C: f64 = 8.0;

/// Header of the per-round log.
pub const ROUNDS_CSV_HEADER: &str = "round,cohort_size,C,v,sigma,acc,loss,flags";

const SNAPSHOT_MAGIC: &[u8; 4] = b"DPLW";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed model snapshot: {0}")]
    Snapshot(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Independent randomness namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Sample = 1,
    Local = 2,
    Noise = 3,
    Vote = 4,
    LossNoise = 5,
    ModelInit = 6,
    DataSplit = 7,
    Synth = 8,
    Partition = 9,
}

/// Stream for `(master_seed, round, client, purpose)`. The four words form
/// the ChaCha20 key verbatim, so distinct tuples get distinct keys.
pub fn derive_rng(master_seed: u64, round: u64, client: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&round.to_le_bytes());
    key[16..24].copy_from_slice(&client.to_le_bytes());
    key[24..32].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Poisson sampling: one uniform draw per client, in id order.
pub fn sample_cohort<R: Rng + ?Sized>(num_clients: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..num_clients)
        .filter(|_| rng.random::<f64>() < q)
        .collect()
}

/// Clips every delta at `c`, adds `N(0, (z·c)² I)` to their sum and applies
/// the sum divided by the cohort size.
pub fn update_w<R: Rng + ?Sized>(
    model: &Model,
    deltas: &[ParamVector],
    c: f64,
    z: NoiseMultiplier,
    rng: &mut R,
) -> Result<Model, HarnessError> {
    if deltas.is_empty() {
        return Err(HarnessError::Config(
            "update_w needs at least one delta".into(),
        ));
    }
    let dim = model.params.dim();
    let mut sum = ParamVector::zeros(dim);
    for d in deltas {
        if d.dim() != dim {
            return Err(MechanismError::LengthMismatch {
                expected: dim,
                got: d.dim(),
            }
            .into());
        }
        sum.add_assign(&mechanisms::clip(d, c)?);
    }
    let sum = mechanisms::gaussian_perturb(&sum, z.value() * c, rng);
    let n = deltas.len() as f64;
    let params: Vec<f64> = model
        .params
        .as_slice()
        .iter()
        .zip(sum.as_slice())
        .map(|(w, s)| w + s / n)
        .collect();
    Ok(model.with_params(ParamVector::new(params)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
    },
    Files {
        train: PathBuf,
        val: PathBuf,
        test: Option<PathBuf>,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `privacy.rounds` is the number of communication rounds `T`.
    pub privacy: PrivacySpec,
    pub local: LocalConfig,
    pub strategy: StrategyKind,
    pub grid: ThresholdGrid,
    pub mults: MultiplierGrid,
    pub arch: Architecture,
    pub data: DataSource,
    /// Share of synthetic samples held out for server validation.
    pub val_fraction: f64,
    /// Share of synthetic samples held out for evaluation.
    pub test_fraction: f64,
    pub num_clients: usize,
    pub alpha: f64,
    /// Overrides the seed derived from `master_seed` for partitioning.
    pub partition_seed: Option<u64>,
    /// Skips histogram initialisation and trains from round 1.
    pub initial_c: Option<f64>,
    /// Bypasses the accountant for the training mechanism.
    pub noise_override: Option<f64>,
    /// Bypasses the accountant for the loss channel.
    pub loss_noise_override: Option<f64>,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// A configuration on the default grids with every optional knob unset.
    pub fn new(privacy: PrivacySpec, num_clients: usize, data: DataSource) -> Self {
        Self {
            privacy,
            local: LocalConfig {
                epochs: 1,
                batch_size: 16,
                lr: 0.1,
            },
            strategy: StrategyKind::DpLac,
            grid: ThresholdGrid::standard(),
            mults: MultiplierGrid::standard(),
            arch: Architecture::Logistic,
            data,
            val_fraction: 0.1,
            test_fraction: 0.2,
            num_clients,
            alpha: 1.0,
            partition_seed: None,
            initial_c: None,
            noise_override: None,
            loss_noise_override: None,
            master_seed: 0,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.privacy.rounds
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.privacy.validate()?;
        self.local.validate()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.privacy.rounds < 2 {
            return bad("rounds must be at least 2 so that one training round occurs".into());
        }
        if self.num_clients == 0 {
            return bad("partition.clients must be at least 1".into());
        }
        if self.privacy.q * (self.num_clients as f64) < 1.0 {
            return bad(format!(
                "expected cohort q*N = {} is below one client",
                self.privacy.q * self.num_clients as f64
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!(
                "partition.alpha must be positive, got {}",
                self.alpha
            ));
        }
        if let StrategyKind::DpClac { fraction_train } = self.strategy {
            if !(fraction_train > 0.0 && fraction_train < 1.0) {
                return bad(format!(
                    "strategy.fraction_train must lie in (0,1), got {fraction_train}"
                ));
            }
        }
        if let Some(c) = self.initial_c {
            if !(c > 0.0) || !c.is_finite() {
                return bad(format!("clip.initial_C must be positive, got {c}"));
            }
        }
        for (name, z) in [
            ("privacy.noise_multiplier", self.noise_override),
            ("privacy.loss_noise_multiplier", self.loss_noise_override),
        ] {
            if let Some(z) = z {
                if !(z >= 0.0) || !z.is_finite() {
                    return bad(format!("{name} must be finite and nonnegative, got {z}"));
                }
            }
        }
        if let Architecture::Mlp { hidden: 0 } = self.arch {
            return bad("model.hidden must be at least 1".into());
        }
        if let DataSource::Synthetic {
            samples,
            features,
            classes,
            separation,
        } = self.data
        {
            if samples == 0 || features == 0 || classes == 0 {
                return bad("synthetic data dimensions must be positive".into());
            }
            if !(separation >= 0.0) {
                return bad("data.separation must be nonnegative".into());
            }
            let held = self.val_fraction + self.test_fraction;
            if !(self.val_fraction > 0.0) || !(self.test_fraction >= 0.0) || !(held < 1.0) {
                return bad(format!(
                    "holdout fractions must satisfy 0 < val, 0 <= test, val + test < 1 (got {}, {})",
                    self.val_fraction, self.test_fraction
                ));
            }
        }
        Ok(())
    }
}

/// Client shards plus server-side validation and evaluation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub clients: Vec<Dataset>,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds (or loads) the datasets and partitions the training pool.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, HarnessError> {
    let seed = cfg.master_seed;
    let (train, val, test) = match &cfg.data {
        DataSource::Synthetic {
            samples,
            features,
            classes,
            separation,
        } => {
            let synth_seed = derive_rng(seed, 0, 0, Purpose::Synth).next_u64();
            let all =
                flcore::synth_dataset(*samples, *features, *classes, *separation, synth_seed)?;
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.shuffle(&mut derive_rng(seed, 0, 0, Purpose::DataSplit));
            let n_val = ((all.len() as f64) * cfg.val_fraction).round().max(1.0) as usize;
            let n_test = ((all.len() as f64) * cfg.test_fraction).round() as usize;
            if n_val + n_test >= all.len() {
                return Err(HarnessError::Config(
                    "holdout sets leave no training samples".into(),
                ));
            }
            let (val_idx, rest) = order.split_at(n_val);
            let (test_idx, train_idx) = rest.split_at(n_test);
            let val = all.subset(val_idx);
            let test = if test_idx.is_empty() {
                val.clone()
            } else {
                all.subset(test_idx)
            };
            (all.subset(train_idx), val, test)
        }
        DataSource::Files {
            train,
            val,
            test,
            classes,
        } => {
            let train = Dataset::load(train, *classes)?;
            let k = Some(train.num_classes());
            let val = Dataset::load(val, k)?;
            let test = match test {
                Some(p) => Dataset::load(p, k)?,
                None => val.clone(),
            };
            (train, val, test)
        }
    };
    let partition_seed = cfg
        .partition_seed
        .unwrap_or_else(|| derive_rng(seed, 0, 0, Purpose::Partition).next_u64());
    let clients = flcore::dirichlet_partition(
        &train,
        &PartitionSpec {
            num_clients: cfg.num_clients,
            alpha: cfg.alpha,
            seed: partition_seed,
        },
    )?;
    Ok(PreparedData { clients, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundFlag {
    /// No client was sampled; the model and loss carry over.
    EmptyCohort,
    /// A nonpositive loss made the ratio undefined and `C` was held.
    HeldC,
    /// Round-1 voting had no participants; `C` fell back to the default.
    FallbackC0,
    /// Round-1 loss histogram had no participants.
    FallbackV0,
}

impl RoundFlag {
    pub fn name(self) -> &'static str {
        match self {
            RoundFlag::EmptyCohort => "empty_cohort",
            RoundFlag::HeldC => "held_c",
            RoundFlag::FallbackC0 => "fallback_c0",
            RoundFlag::FallbackV0 => "fallback_v0",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub cohort_ids: Vec<usize>,
    pub c: f64,
    pub v: f64,
    pub sigma: f64,
    pub eval_accuracy: f64,
    pub eval_loss: f64,
    pub wall_ms: f64,
    pub flags: Vec<RoundFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_model: Model,
    pub init: InitCReport,
    pub z: NoiseMultiplier,
    /// Noise multiplier of the loss channel (client-loss variant only).
    pub z_loss: Option<NoiseMultiplier>,
    /// Loss the adaptive rule starts from.
    pub v0: f64,
}

impl ExperimentResult {
    pub fn final_record(&self) -> &RoundRecord {
        self.records
            .last()
            .expect("a run always has at least two rounds")
    }
}

/// Resolves `(z, z_loss)` from the accountant unless overridden.
pub fn resolve_noise(
    cfg: &ExperimentConfig,
) -> Result<(NoiseMultiplier, Option<NoiseMultiplier>), HarnessError> {
    match cfg.strategy {
        StrategyKind::DpClac { fraction_train } => {
            let split = if cfg.noise_override.is_none() || cfg.loss_noise_override.is_none() {
                Some(accountant::split_budget(&cfg.privacy, fraction_train)?)
            } else {
                None
            };
            let z = match cfg.noise_override {
                Some(z) => NoiseMultiplier::new(z)?,
                None => split.expect("split computed").train,
            };
            let z_loss = match cfg.loss_noise_override {
                Some(z) => NoiseMultiplier::new(z)?,
                None => split.expect("split computed").loss,
            };
            Ok((z, Some(z_loss)))
        }
        _ => {
            let z = match cfg.noise_override {
                Some(z) => NoiseMultiplier::new(z)?,
                None => accountant::get_noise_multiplier(&cfg.privacy)?,
            };
            Ok((z, None))
        }
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

struct ClientUpdate {
    delta: ParamVector,
    local_loss: f64,
}

fn local_round(
    pool: &rayon::ThreadPool,
    cfg: &ExperimentConfig,
    model: &Model,
    data: &PreparedData,
    cohort: &[usize],
    t: u64,
    need_loss: bool,
) -> Result<Vec<ClientUpdate>, HarnessError> {
    pool.install(|| {
        cohort
            .par_iter()
            .map(|&k| {
                let mut rng = derive_rng(cfg.master_seed, t, k as u64, Purpose::Local);
                let shard = &data.clients[k];
                let delta = flcore::user_update(model, shard, &cfg.local, &mut rng)?;
                let local_loss = if need_loss {
                    flcore::loss(&model.with_params(&model.params + &delta), shard)?
                } else {
                    f64::NAN
                };
                Ok(ClientUpdate { delta, local_loss })
            })
            .collect()
    })
}

/// Runs the experiment on the global rayon pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    run_experiment_with_workers(cfg, rayon::current_num_threads())
}

/// Runs the experiment with client work spread over `workers` threads. The
/// result does not depend on `workers`.
pub fn run_experiment_with_workers(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let pool = build_pool(workers)?;
    let (z, z_loss) = resolve_noise(cfg)?;
    let data = prepare_data(cfg)?;
    let seed = cfg.master_seed;
    let n_clients = cfg.num_clients;
    let q = cfg.privacy.q;
    let is_clac = matches!(cfg.strategy, StrategyKind::DpClac { .. });

    let (f, k) = (data.val.num_features(), data.val.num_classes());
    let mut model = Model::init(
        cfg.arch,
        f,
        k,
        &mut derive_rng(seed, 0, 0, Purpose::ModelInit),
    );
    let mut records = Vec::with_capacity(cfg.rounds() as usize);

    // Server validation loss of the initial model; the client-loss variant
    // estimates its starting loss from a private histogram instead.
    let server_v0 = if is_clac {
        None
    } else {
        Some(flcore::loss(&model, &data.val)?)
    };

    // Round 1.
    let started = Instant::now();
    let mut flags = Vec::new();
    let cohort = sample_cohort(n_clients, q, &mut derive_rng(seed, 1, 0, Purpose::Sample));

    // Post-training client losses from round 1 feed the loss histogram.
    let round1_losses: Vec<f64>;
    let (init, trained) = match cfg.initial_c {
        Some(c0) => {
            let updates = local_round(&pool, cfg, &model, &data, &cohort, 1, is_clac)?;
            round1_losses = updates.iter().map(|u| u.local_loss).collect();
            let trained = if updates.is_empty() {
                flags.push(RoundFlag::EmptyCohort);
                false
            } else {
                let deltas: Vec<ParamVector> = updates.into_iter().map(|u| u.delta).collect();
                model = update_w(
                    &model,
                    &deltas,
                    c0,
                    z,
                    &mut derive_rng(seed, 1, 0, Purpose::Noise),
                )?;
                true
            };
            (InitCReport::configured(c0), trained)
        }
        None => {
            let outcomes: Vec<clipstrat::VoteOutcome> = pool.install(|| {
                cohort
                    .par_iter()
                    .map(|&c| {
                        let mut rng = derive_rng(seed, 1, c as u64, Purpose::Vote);
                        clipstrat::client_vote(
                            &model,
                            &data.clients[c],
                            &cfg.local,
                            &cfg.grid,
                            &cfg.mults,
                            z,
                            n_clients,
                            &mut rng,
                        )
                    })
                    .collect::<Result<_, _>>()
            })?;
            round1_losses = outcomes.iter().map(|o| o.local_loss).collect();
            let votes: Vec<_> = outcomes.iter().map(|o| o.vote).collect();
            let report = if votes.is_empty() {
                flags.push(RoundFlag::EmptyCohort);
                flags.push(RoundFlag::FallbackC0);
                InitCReport::configured(FALLBACK_INITIAL_C)
            } else {
                clipstrat::init_c(
                    &votes,
                    &cfg.grid,
                    z,
                    &mut derive_rng(seed, 1, 0, Purpose::Noise),
                )?
            };
            (report, false)
        }
    };

    let v0 = match (server_v0, z_loss) {
        (Some(v), _) => v,
        (None, zl) => {
            let zl = zl.unwrap_or(NoiseMultiplier::ZERO);
            if round1_losses.is_empty() {
                flags.push(RoundFlag::FallbackV0);
                (k as f64).ln()
            } else {
                let grid = clipstrat::loss_grid();
                let votes: Vec<_> = round1_losses
                    .iter()
                    .map(|&l| clipstrat::loss_vote(l, &grid))
                    .collect();
                clipstrat::init_c(
                    &votes,
                    &grid,
                    zl,
                    &mut derive_rng(seed, 1, 0, Purpose::LossNoise),
                )?
                .c0
            }
        }
    };

    let c1 = init.c0;
    // Positive clamp level for the loss channel.
    let mut loss_clip = v0;
    let v1 = if trained && is_clac {
        let v = clipstrat::clac_loss_channel(
            &round1_losses,
            loss_clip,
            z_loss.unwrap_or(NoiseMultiplier::ZERO),
            &mut derive_rng(seed, 1, 0, Purpose::LossNoise),
        )?;
        if v > 0.0 {
            loss_clip = v;
        }
        v
    } else if trained {
        flcore::loss(&model, &data.val)?
    } else {
        v0
    };
    records.push(RoundRecord {
        t: 1,
        cohort_ids: cohort,
        c: c1,
        v: v1,
        sigma: z.value() * c1,
        eval_accuracy: flcore::accuracy(&model, &data.test),
        eval_loss: flcore::loss(&model, &data.test)?,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        flags,
    });
    let mut state = ClipState::new(c1, v1, v0)?;

    for t in 2..=cfg.rounds() {
        let started = Instant::now();
        let mut flags = Vec::new();
        let update = next_threshold(cfg.strategy, &state);
        if update.held {
            flags.push(RoundFlag::HeldC);
        }
        let c_t = update.c;
        let cohort = sample_cohort(n_clients, q, &mut derive_rng(seed, t, 0, Purpose::Sample));
        let v_t = if cohort.is_empty() {
            flags.push(RoundFlag::EmptyCohort);
            state.v_prev
        } else {
            let updates = local_round(&pool, cfg, &model, &data, &cohort, t, is_clac)?;
            let losses: Vec<f64> = updates.iter().map(|u| u.local_loss).collect();
            let deltas: Vec<ParamVector> = updates.into_iter().map(|u| u.delta).collect();
            model = update_w(
                &model,
                &deltas,
                c_t,
                z,
                &mut derive_rng(seed, t, 0, Purpose::Noise),
            )?;
            if is_clac {
                let v = clipstrat::clac_loss_channel(
                    &losses,
                    loss_clip,
                    z_loss.unwrap_or(NoiseMultiplier::ZERO),
                    &mut derive_rng(seed, t, 0, Purpose::LossNoise),
                )?;
                if v > 0.0 {
                    loss_clip = v;
                }
                v
            } else {
                flcore::loss(&model, &data.val)?
            }
        };
        state = strategy_step(cfg.strategy, &state, v_t);
        debug_assert_eq!(state.c, c_t);
        records.push(RoundRecord {
            t,
            cohort_ids: cohort,
            c: c_t,
            v: v_t,
            sigma: z.value() * c_t,
            eval_accuracy: flcore::accuracy(&model, &data.test),
            eval_loss: flcore::loss(&model, &data.test)?,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            flags,
        });
    }

    Ok(ExperimentResult {
        records,
        final_model: model,
        init,
        z,
        z_loss,
        v0,
    })
}

/// Formats `x` with `digits` significant digits, without trailing zeros.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..=15).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    // Round through the scientific form so the digit count is exact.
    let rounded: f64 = sci.parse().expect("round trip");
    trim_zeros(&format!("{rounded:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Per-round log with nine significant digits.
pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.name()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.cohort_ids.len(),
            format_sig(r.c, 9),
            format_sig(r.v, 9),
            format_sig(r.sigma, 9),
            format_sig(r.eval_accuracy, 9),
            format_sig(r.eval_loss, 9),
            flags.join(";")
        );
    }
    out
}

/// `key=value` summary. The first line carries the only timestamp.
pub fn summary_text(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    generated_unix: u64,
) -> String {
    let last = result.final_record();
    let mut out = format!("# dplac run summary generated_unix={generated_unix}\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("strategy", cfg.strategy.name().into());
    kv("seed", cfg.master_seed.to_string());
    kv("rounds", cfg.rounds().to_string());
    kv("epsilon", cfg.privacy.epsilon.to_string());
    kv("delta", cfg.privacy.delta.to_string());
    kv("q", cfg.privacy.q.to_string());
    kv("z", result.z.value().to_string());
    if let Some(zl) = result.z_loss {
        kv("z_loss", zl.value().to_string());
    }
    kv("C0", result.init.c0.to_string());
    kv("C0_source", result.init.source.name().into());
    kv("v0", result.v0.to_string());
    kv("final_C", last.c.to_string());
    kv("final_v", last.v.to_string());
    kv("final_acc", last.eval_accuracy.to_string());
    kv("final_loss", last.eval_loss.to_string());
    kv("params", result.final_model.params.dim().to_string());
    out
}

/// 16-byte header (`DPLW`, version u32, dimension u64), then the parameters
/// as little-endian f64.
pub fn encode_model(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.dim());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ParamVector, HarnessError> {
    if bytes.len() < 16 {
        return Err(HarnessError::Snapshot(
            "shorter than the 16-byte header".into(),
        ));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(HarnessError::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SNAPSHOT_VERSION {
        return Err(HarnessError::Snapshot(format!(
            "unsupported version {version}"
        )));
    }
    let dim = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != dim.saturating_mul(8) {
        return Err(HarnessError::Snapshot(format!(
            "header says {dim} values but body has {} bytes",
            body.len()
        )));
    }
    Ok(ParamVector::new(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    ))
}

/// Writes `rounds.csv`, `summary.txt` and `model.bin` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let files: [(&str, Vec<u8>); 3] = [
        ("rounds.csv", rounds_csv(&result.records).into_bytes()),
        ("summary.txt", summary_text(cfg, result, now).into_bytes()),
        ("model.bin", encode_model(&result.final_model.params)),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}
