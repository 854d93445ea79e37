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

//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! The accountant tracks a privacy curve `ε′(α)` over a fixed grid of integer
//! Rényi orders, composes it additively over rounds and converts the result
//! to an `(ε, δ)` guarantee. [`get_noise_multiplier`] inverts that pipeline by
//! bisection to find the smallest noise multiplier meeting a target budget.

use std::fmt;

use thiserror::Error;

/// Lower end of the noise multiplier search bracket.
pub const SEARCH_LOWER: f64 = 0.3;
/// Upper end of the noise multiplier search bracket.
pub const SEARCH_UPPER: f64 = 100.0;
/// Absolute tolerance on `z` at which bisection stops.
pub const SEARCH_TOLERANCE: f64 = 1e-3;
/// Hard cap on bisection iterations.
pub const SEARCH_MAX_ITERATIONS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountantError {
    #[error("invalid privacy parameter: {0}")]
    InvalidParameter(String),
    #[error("noise multiplier must be positive for a finite RDP bound, got {0}")]
    ZeroNoise(f64),
    #[error("Rényi order {0} is not an integer >= 2")]
    InvalidOrder(f64),
    #[error("RDP curve is empty")]
    EmptyCurve,
    #[error("malformed RDP curve: {0}")]
    MalformedCurve(String),
    #[error("target epsilon {target} is unreachable: even z = {upper} gives epsilon {achieved}")]
    UpperBoundExhausted {
        target: f64,
        upper: f64,
        achieved: f64,
    },
    #[error("target epsilon {target} is already met at the bracket floor z = {lower} (epsilon {achieved})")]
    LowerBoundSatisfied {
        target: f64,
        lower: f64,
        achieved: f64,
    },
}

/// Target `(ε, δ)` budget together with the participation schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    /// Per-round client sampling probability.
    pub q: f64,
    pub rounds: u64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, q: f64, rounds: u64) -> Result<Self, AccountantError> {
        let spec = Self {
            epsilon,
            delta,
            q,
            rounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AccountantError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(AccountantError::InvalidParameter(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        check_delta(self.delta)?;
        check_sampling_rate(self.q)?;
        if self.rounds == 0 {
            return Err(AccountantError::InvalidParameter(
                "rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ratio `σ / C` between the Gaussian noise scale and the clipping threshold.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseMultiplier(f64);

impl NoiseMultiplier {
    pub const ZERO: NoiseMultiplier = NoiseMultiplier(0.0);

    pub fn new(z: f64) -> Result<Self, AccountantError> {
        if z >= 0.0 && z.is_finite() {
            Ok(Self(z))
        } else {
            Err(AccountantError::InvalidParameter(format!(
                "noise multiplier must be finite and nonnegative, got {z}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for NoiseMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// RDP guarantee as a function of the Rényi order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self, AccountantError> {
        if orders.len() != values.len() {
            return Err(AccountantError::MalformedCurve(format!(
                "{} orders but {} values",
                orders.len(),
                values.len()
            )));
        }
        if orders.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(AccountantError::MalformedCurve(
                "orders must be finite and > 1".into(),
            ));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AccountantError::MalformedCurve(
                "orders must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(AccountantError::MalformedCurve(
                "values must be nonnegative".into(),
            ));
        }
        Ok(Self { orders, values })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// RDP value at `order`, if it is on the grid.
    pub fn value_at(&self, order: f64) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == order)
            .map(|i| self.values[i])
    }
}

/// Integer orders `2..=64` followed by `80, 96, 128, 192, 256`.
pub fn default_orders() -> Vec<f64> {
    (2..=64u32)
        .chain([80, 96, 128, 192, 256])
        .map(f64::from)
        .collect()
}

fn check_delta(delta: f64) -> Result<(), AccountantError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(AccountantError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )))
    }
}

fn check_sampling_rate(q: f64) -> Result<(), AccountantError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(AccountantError::InvalidParameter(format!(
            "sampling rate q must lie in (0, 1], got {q}"
        )))
    }
}

fn integer_order(alpha: f64) -> Result<u32, AccountantError> {
    if alpha >= 2.0 && alpha.fract() == 0.0 && alpha <= f64::from(u32::MAX) {
        Ok(alpha as u32)
    } else {
        Err(AccountantError::InvalidOrder(alpha))
    }
}

/// `ln(exp(a) + exp(b))` without overflow.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln A_α` for the Poisson-subsampled Gaussian at integer order `alpha`,
/// where `A_α = Σ_k C(α,k) (1-q)^(α-k) q^k exp((k²-k) / 2z²)`.
fn log_moment(z: f64, q: f64, alpha: u32) -> f64 {
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * z * z);
    let a = f64::from(alpha);

    let mut acc = f64::NEG_INFINITY;
    let mut log_binom = 0.0;
    for k in 0..=alpha {
        if k > 0 {
            // C(α,k) = C(α,k-1) * (α-k+1) / k
            log_binom += (a - f64::from(k) + 1.0).ln() - f64::from(k).ln();
        }
        let kf = f64::from(k);
        let term = log_binom + kf * log_q + (a - kf) * log_1mq + (kf * kf - kf) * inv_two_var;
        acc = log_add(acc, term);
    }
    acc
}

/// Per-round RDP of the Gaussian mechanism with noise multiplier `z` under
/// Poisson subsampling at rate `q`, evaluated on each of `orders`.
pub fn rdp_subsampled_gaussian(
    z: NoiseMultiplier,
    q: f64,
    orders: &[f64],
) -> Result<RdpCurve, AccountantError> {
    let z = z.value();
    if z <= 0.0 {
        return Err(AccountantError::ZeroNoise(z));
    }
    check_sampling_rate(q)?;
    let mut values = Vec::with_capacity(orders.len());
    for &alpha in orders {
        let order = integer_order(alpha)?;
        let value = if q == 1.0 {
            alpha / (2.0 * z * z)
        } else {
            (log_moment(z, q, order) / (alpha - 1.0)).max(0.0)
        };
        values.push(value);
    }
    RdpCurve::new(orders.to_vec(), values)
}

/// RDP composes additively: `rounds` identical mechanisms scale every value.
pub fn compose(curve: &RdpCurve, rounds: u64) -> RdpCurve {
    let scale = rounds as f64;
    RdpCurve {
        orders: curve.orders.clone(),
        values: curve.values.iter().map(|v| v * scale).collect(),
    }
}

/// Converts an RDP curve to `ε` at the given `δ` using
/// `ε = min_α [ε′(α) + ln(1/δ) / (α - 1)]`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<f64, AccountantError> {
    if curve.is_empty() {
        return Err(AccountantError::EmptyCurve);
    }
    check_delta(delta)?;
    let log_inv_delta = -delta.ln();
    Ok(curve
        .orders
        .iter()
        .zip(&curve.values)
        .map(|(&alpha, &rdp)| rdp + log_inv_delta / (alpha - 1.0))
        .fold(f64::INFINITY, f64::min))
}

/// Total `ε` spent after `rounds` rounds at noise multiplier `z`.
pub fn epsilon_for(
    z: NoiseMultiplier,
    q: f64,
    rounds: u64,
    delta: f64,
) -> Result<f64, AccountantError> {
    let per_round = rdp_subsampled_gaussian(z, q, &default_orders())?;
    rdp_to_dp(&compose(&per_round, rounds), delta)
}

/// Smallest noise multiplier in `[SEARCH_LOWER, SEARCH_UPPER]` (to within
/// `SEARCH_TOLERANCE`) whose composed guarantee stays within `spec.epsilon`.
pub fn get_noise_multiplier(spec: &PrivacySpec) -> Result<NoiseMultiplier, AccountantError> {
    spec.validate()?;
    let eps_at = |z: f64| epsilon_for(NoiseMultiplier(z), spec.q, spec.rounds, spec.delta);

    let mut hi = SEARCH_UPPER;
    let at_hi = eps_at(hi)?;
    if at_hi > spec.epsilon {
        return Err(AccountantError::UpperBoundExhausted {
            target: spec.epsilon,
            upper: hi,
            achieved: at_hi,
        });
    }
    let mut lo = SEARCH_LOWER;
    let at_lo = eps_at(lo)?;
    if at_lo <= spec.epsilon {
        return Err(AccountantError::LowerBoundSatisfied {
            target: spec.epsilon,
            lower: lo,
            achieved: at_lo,
        });
    }

    // Invariant: eps(lo) > target >= eps(hi).
    for _ in 0..SEARCH_MAX_ITERATIONS {
        if hi - lo <= SEARCH_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= spec.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(NoiseMultiplier(hi))
}

/// Noise multipliers for the two mechanisms of the client-loss variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitNoise {
    pub train: NoiseMultiplier,
    pub loss: NoiseMultiplier,
}

/// Splits `spec.epsilon` between model updates (`fraction_train`) and the
/// private loss channel (the remainder). Each side gets `δ/2`.
pub fn split_budget(
    spec: &PrivacySpec,
    fraction_train: f64,
) -> Result<SplitNoise, AccountantError> {
    if !(fraction_train > 0.0 && fraction_train < 1.0) {
        return Err(AccountantError::InvalidParameter(format!(
            "training budget fraction must lie in (0, 1), got {fraction_train}"
        )));
    }
    spec.validate()?;
    let half_delta = spec.delta / 2.0;
    let train = get_noise_multiplier(&PrivacySpec {
        epsilon: spec.epsilon * fraction_train,
        delta: half_delta,
        ..*spec
    })?;
    let loss = get_noise_multiplier(&PrivacySpec {
        epsilon: spec.epsilon * (1.0 - fraction_train),
        delta: half_delta,
        ..*spec
    })?;
    Ok(SplitNoise { train, loss })
}
