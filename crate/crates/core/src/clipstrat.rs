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

//! Clipping threshold strategies.
//!
//! The adaptive rule shrinks the threshold by the ratio of the two most
//! recent losses, `C_t = C_{t-1} · min(1, v_{t-1} / v_{t-2})`, and never grows
//! it. The starting threshold is either configured or estimated in round one
//! from a private histogram of per-client votes ([`client_vote`], [`init_c`]).
//! The client-loss variant replaces the server validation loss with a
//! privately averaged client loss ([`clac_loss_channel`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::accountant::NoiseMultiplier;
use crate::flcore::{self, Dataset, FlError, LocalConfig, Model};
use crate::mechanisms::{
    self, clip, gaussian_perturb, nearest_bucket, HistogramVote, MechanismError, MultiplierGrid,
    NoisyHistogram, ThresholdGrid,
};

/// Default budget share for model updates in the client-loss variant.
pub const DEFAULT_FRACTION_TRAIN: f64 = 2.0 / 3.0;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error("invalid clip state: {0}")]
    InvalidState(String),
    #[error("unknown strategy {0:?} (expected fixed, dp_lac or dp_clac)")]
    UnknownStrategy(String),
}

/// Threshold plus the two most recent loss observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipState {
    pub c: f64,
    /// `v_{t-1}`
    pub v_prev: f64,
    /// `v_{t-2}`
    pub v_prev2: f64,
}

impl ClipState {
    pub fn new(c: f64, v_prev: f64, v_prev2: f64) -> Result<Self, ClipError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(ClipError::InvalidState(format!(
                "threshold must be positive and finite, got {c}"
            )));
        }
        if !v_prev.is_finite() || !v_prev2.is_finite() {
            return Err(ClipError::InvalidState("losses must be finite".into()));
        }
        Ok(Self { c, v_prev, v_prev2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipUpdate {
    pub c: f64,
    /// The ratio was undefined (a nonpositive loss) and `C` was held.
    pub held: bool,
}

/// One application of the loss-ratio rule.
pub fn update_c(state: &ClipState) -> ClipUpdate {
    if !(state.v_prev2 > 0.0) || !(state.v_prev > 0.0) {
        return ClipUpdate {
            c: state.c,
            held: true,
        };
    }
    ClipUpdate {
        c: state.c * (state.v_prev / state.v_prev2).min(1.0),
        held: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    Fixed,
    DpLac,
    DpClac { fraction_train: f64 },
}

impl StrategyKind {
    pub fn is_adaptive(self) -> bool {
        !matches!(self, StrategyKind::Fixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Fixed => "fixed",
            StrategyKind::DpLac => "dp_lac",
            StrategyKind::DpClac { .. } => "dp_clac",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = ClipError;

    /// Parses the kind name; `dp_clac` starts with the default budget split.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fixed" => Ok(StrategyKind::Fixed),
            "dp_lac" => Ok(StrategyKind::DpLac),
            "dp_clac" => Ok(StrategyKind::DpClac {
                fraction_train: DEFAULT_FRACTION_TRAIN,
            }),
            other => Err(ClipError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Threshold to use for the coming round under `kind`.
pub fn next_threshold(kind: StrategyKind, state: &ClipState) -> ClipUpdate {
    match kind {
        StrategyKind::Fixed => ClipUpdate {
            c: state.c,
            held: false,
        },
        StrategyKind::DpLac | StrategyKind::DpClac { .. } => update_c(state),
    }
}

/// Advances the state by one round: the threshold is updated per `kind` and
/// `v_new` becomes the most recent loss.
pub fn strategy_step(kind: StrategyKind, state: &ClipState, v_new: f64) -> ClipState {
    ClipState {
        c: next_threshold(kind, state).c,
        v_prev: v_new,
        v_prev2: state.v_prev,
    }
}

/// Everything a client computes while voting; only `vote` leaves the device.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub vote: HistogramVote,
    /// Index into the multiplier grid, `None` for a zero-norm update.
    pub multiplier_index: Option<usize>,
    pub update_norm: f64,
    /// Loss of `W + Δ` on the client's own data.
    pub local_loss: f64,
}

/// Round-one client procedure: train locally, simulate the aggregate noise
/// at each candidate fraction of the update norm, and vote for the grid
/// bucket nearest the fraction whose noisy loss best matches the clean one.
#[allow(clippy::too_many_arguments)]
pub fn client_vote<R: Rng + ?Sized>(
    model: &Model,
    data: &Dataset,
    cfg: &LocalConfig,
    grid: &ThresholdGrid,
    mults: &MultiplierGrid,
    z: NoiseMultiplier,
    total_clients: usize,
    rng: &mut R,
) -> Result<VoteOutcome, ClipError> {
    if total_clients == 0 {
        return Err(ClipError::InvalidState("total_clients must be >= 1".into()));
    }
    let delta = flcore::user_update(model, data, cfg, rng)?;
    let local_loss = flcore::loss(&model.with_params(&model.params + &delta), data)?;
    let norm = delta.norm();
    if norm == 0.0 {
        return Ok(VoteOutcome {
            vote: HistogramVote::new(0, grid.len())?,
            multiplier_index: None,
            update_norm: 0.0,
            local_loss,
        });
    }

    let scale = 1.0 / (total_clients as f64).sqrt();
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for (i, &m) in mults.values().iter().enumerate() {
        let threshold = m * norm;
        let clipped = clip(&delta, threshold)?;
        let noisy = gaussian_perturb(&clipped, z.value() * threshold * scale, rng);
        let l = flcore::loss(&model.with_params(&model.params + &noisy), data)?;
        let gap = (l - local_loss).abs();
        if gap < best_gap {
            best = i;
            best_gap = gap;
        }
    }
    let bucket = nearest_bucket(mults.values()[best] * norm, grid);
    Ok(VoteOutcome {
        vote: HistogramVote::new(bucket, grid.len())?,
        multiplier_index: Some(best),
        update_norm: norm,
        local_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C0Source {
    Histogram,
    Configured,
}

impl C0Source {
    pub fn name(self) -> &'static str {
        match self {
            C0Source::Histogram => "hist",
            C0Source::Configured => "configured",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitCReport {
    pub c0: f64,
    pub source: C0Source,
    pub histogram: Option<NoisyHistogram>,
}

impl InitCReport {
    pub fn configured(c0: f64) -> Self {
        Self {
            c0,
            source: C0Source::Configured,
            histogram: None,
        }
    }
}

/// Private histogram of votes and its mode.
pub fn init_c<R: Rng + ?Sized>(
    votes: &[HistogramVote],
    grid: &ThresholdGrid,
    z: NoiseMultiplier,
    rng: &mut R,
) -> Result<InitCReport, ClipError> {
    let histogram = mechanisms::aggregate_votes(votes, z, rng)?;
    let c0 = mechanisms::select_mode(&histogram, grid)?;
    Ok(InitCReport {
        c0,
        source: C0Source::Histogram,
        histogram: Some(histogram),
    })
}

/// Buckets for the round-one loss histogram of the client-loss variant.
pub fn loss_grid() -> ThresholdGrid {
    ThresholdGrid::log_spaced(0.01, 100.0, 25).expect("static loss grid is valid")
}

pub fn loss_vote(local_loss: f64, grid: &ThresholdGrid) -> HistogramVote {
    HistogramVote::new(nearest_bucket(local_loss, grid), grid.len())
        .expect("nearest bucket is always in range")
}

/// Private mean of client losses, each clamped at the previous round's
/// noisy mean.
pub fn clac_loss_channel<R: Rng + ?Sized>(
    losses: &[f64],
    prev_mean: f64,
    z_loss: NoiseMultiplier,
    rng: &mut R,
) -> Result<f64, ClipError> {
    Ok(mechanisms::private_scalar_mean(
        losses, prev_mean, z_loss, rng,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flcore::{synth_dataset, Architecture};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn state(c: f64, v1: f64, v2: f64) -> ClipState {
        ClipState::new(c, v1, v2).unwrap()
    }

    #[test]
    fn update_rule_examples() {
        assert_eq!(update_c(&state(8.0, 1.0, 2.0)).c, 4.0);
        assert_eq!(update_c(&state(8.0, 2.0, 1.0)).c, 8.0);
        assert_eq!(update_c(&state(3.7, 0.42, 0.42)).c, 3.7);
    }

    #[test]
    fn nonpositive_losses_hold_threshold() {
        let u = update_c(&state(5.0, 1.0, 0.0));
        assert_eq!(u, ClipUpdate { c: 5.0, held: true });
        let u = update_c(&state(5.0, 1.0, -0.3));
        assert!(u.held && u.c == 5.0);
        let u = update_c(&state(5.0, -0.1, 1.0));
        assert!(u.held && u.c == 5.0);
        assert!(ClipState::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fixed_strategy_never_moves() {
        let mut s = state(2.5, 1.0, 1.0);
        for t in 0..100 {
            s = strategy_step(StrategyKind::Fixed, &s, 10.0 / (t as f64 + 1.0));
            assert_eq!(s.c, 2.5);
        }
    }

    #[test]
    fn adaptive_strategy_tracks_losses() {
        let mut s = state(8.0, 1.0, 1.0);
        let mut last = s.c;
        // Decreasing losses shrink C strictly once the ratio drops below one.
        for t in 0..20 {
            s = strategy_step(StrategyKind::DpLac, &s, 1.0 / (t as f64 + 2.0));
            if t >= 1 {
                assert!(s.c < last, "round {t}");
            }
            last = s.c;
        }
        let mut s = state(8.0, 1.0, 1.0);
        let mut v = 1.0;
        for _ in 0..20 {
            v *= 2.0;
            s = strategy_step(StrategyKind::DpLac, &s, v);
            assert_eq!(s.c, 8.0);
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "fixed".parse::<StrategyKind>().unwrap(),
            StrategyKind::Fixed
        );
        assert_eq!(
            "dp_lac".parse::<StrategyKind>().unwrap(),
            StrategyKind::DpLac
        );
        assert_eq!(
            "dp_clac".parse::<StrategyKind>().unwrap(),
            StrategyKind::DpClac {
                fraction_train: 2.0 / 3.0
            }
        );
        assert!("quantile".parse::<StrategyKind>().is_err());
    }

    fn small_task(seed: u64) -> (Model, Dataset) {
        let data = synth_dataset(40, 3, 2, 3.0, seed).unwrap();
        let model = Model::init(Architecture::Logistic, 3, 2, &mut rng(0));
        (model, data)
    }

    #[test]
    fn zero_noise_vote_picks_full_norm() {
        let (model, data) = small_task(1);
        let cfg = LocalConfig {
            epochs: 1,
            batch_size: 8,
            lr: 0.5,
        };
        let grid = ThresholdGrid::standard();
        let out = client_vote(
            &model,
            &data,
            &cfg,
            &grid,
            &MultiplierGrid::standard(),
            NoiseMultiplier::ZERO,
            100,
            &mut rng(3),
        )
        .unwrap();
        assert_eq!(out.multiplier_index, Some(5));
        assert_eq!(out.vote.index(), nearest_bucket(out.update_norm, &grid));
    }

    #[test]
    fn zero_update_votes_smallest_bucket() {
        let (model, data) = small_task(2);
        let cfg = LocalConfig {
            epochs: 1,
            batch_size: 8,
            lr: 0.0,
        };
        let out = client_vote(
            &model,
            &data,
            &cfg,
            &ThresholdGrid::standard(),
            &MultiplierGrid::standard(),
            NoiseMultiplier::new(1.0).unwrap(),
            10,
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(out.vote.index(), 0);
        assert_eq!(out.multiplier_index, None);
    }

    #[test]
    fn init_c_noiseless() {
        let grid = ThresholdGrid::standard();
        let at = |c: f64| {
            HistogramVote::new(grid.values().iter().position(|&s| s == c).unwrap(), 27).unwrap()
        };
        let votes = vec![at(2.5); 4];
        let r = init_c(&votes, &grid, NoiseMultiplier::ZERO, &mut rng(0)).unwrap();
        assert_eq!(r.c0, 2.5);
        assert_eq!(r.source, C0Source::Histogram);
        let votes = vec![at(1.0), at(8.0), at(1.0), at(8.0), at(1.0)];
        assert_eq!(
            init_c(&votes, &grid, NoiseMultiplier::ZERO, &mut rng(0))
                .unwrap()
                .c0,
            1.0
        );
        assert!(init_c(&[], &grid, NoiseMultiplier::ZERO, &mut rng(0)).is_err());
    }

    #[test]
    fn loss_channel_examples() {
        let z0 = NoiseMultiplier::ZERO;
        assert_eq!(
            clac_loss_channel(&[0.2, 0.4], 1e6, z0, &mut rng(0)).unwrap(),
            0.30000000000000004
        );
        assert_eq!(
            clac_loss_channel(&[0.5, 3.0], 1.0, z0, &mut rng(0)).unwrap(),
            0.75
        );
        let mut mean = 5.0;
        for _ in 0..10 {
            mean = clac_loss_channel(&[0.7; 8], mean, z0, &mut rng(0)).unwrap();
        }
        assert!((mean - 0.7).abs() < 1e-15);
    }

    #[test]
    fn loss_grid_shape() {
        let g = loss_grid();
        assert_eq!(g.len(), 25);
        assert_eq!(loss_vote(1e-9, &g).index(), 0);
        assert_eq!(loss_vote(1e9, &g).index(), 24);
    }

    #[test]
    fn vote_is_seeded() {
        let (model, data) = small_task(3);
        let cfg = LocalConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.2,
        };
        let z = NoiseMultiplier::new(1.0).unwrap();
        let a = client_vote(
            &model,
            &data,
            &cfg,
            &ThresholdGrid::standard(),
            &MultiplierGrid::standard(),
            z,
            100,
            &mut rng(9),
        )
        .unwrap();
        let b = client_vote(
            &model,
            &data,
            &cfg,
            &ThresholdGrid::standard(),
            &MultiplierGrid::standard(),
            z,
            100,
            &mut rng(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn update_is_scale_equivariant_and_nonincreasing(
            c in 1e-3f64..1e3,
            v1 in 1e-3f64..1e3,
            v2 in 1e-3f64..1e3,
            lambda in 1e-3f64..1e3,
        ) {
            let a = update_c(&state(c, v1, v2));
            let b = update_c(&state(c, v1 * lambda, v2 * lambda));
            prop_assert!(a.c <= c);
            prop_assert!(a.c > 0.0);
            prop_assert!((a.c - b.c).abs() <= 1e-12 * c);
        }
    }
}
