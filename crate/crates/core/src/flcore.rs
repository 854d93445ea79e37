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

//! Small-scale learning substrate: datasets, softmax models, local SGD and
//! Dirichlet label-skew partitioning.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Gamma, StandardNormal};
use thiserror::Error;

use crate::mechanisms::{argmax_first, ParamVector};

/// Logits are clamped to this magnitude before the softmax.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has {samples} samples, fewer than {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<FlError>,
    },
}

/// Row-major feature matrix with integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, FlError> {
        if num_features == 0 || num_classes == 0 {
            return Err(FlError::InvalidDataset(
                "feature and class counts must be positive".into(),
            ));
        }
        if features.len() != labels.len() * num_features {
            return Err(FlError::DimensionMismatch(format!(
                "{} feature values for {} rows of width {}",
                features.len(),
                labels.len(),
                num_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FlError::InvalidDataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(FlError::InvalidDataset("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Header `x0,...,x{f-1},label`, then one sample per line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for j in 0..self.num_features {
            let _ = write!(out, "x{j},");
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for x in self.row(i) {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    /// Parses the tabular format written by [`Dataset::to_csv_string`].
    /// When `num_classes` is `None` it is inferred as `max(label) + 1`.
    pub fn from_csv_str(text: &str, num_classes: Option<usize>) -> Result<Self, FlError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(FlError::EmptyDataset)?;
        let columns = header.split(',').count();
        if columns < 2 {
            return Err(FlError::Parse {
                line: 1,
                message: "header needs at least one feature column and a label".into(),
            });
        }
        let num_features = columns - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(FlError::Parse {
                    line: line_no,
                    message: format!("expected {columns} fields, found {}", fields.len()),
                });
            }
            for f in &fields[..num_features] {
                let x: f64 = f.trim().parse().map_err(|_| FlError::Parse {
                    line: line_no,
                    message: format!("not a number: {f:?}"),
                })?;
                features.push(x);
            }
            let label: usize = fields[num_features]
                .trim()
                .parse()
                .map_err(|_| FlError::Parse {
                    line: line_no,
                    message: format!(
                        "label is not a nonnegative integer: {:?}",
                        fields[num_features]
                    ),
                })?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(FlError::EmptyDataset);
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Dataset::new(features, labels, num_features, k)
    }

    pub fn load(path: &Path, num_classes: Option<usize>) -> Result<Self, FlError> {
        let text = fs::read_to_string(path).map_err(|source| FlError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_str(&text, num_classes).map_err(|e| FlError::InFile {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FlError> {
        fs::write(path, self.to_csv_string()).map_err(|source| FlError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Multinomial logistic regression: `k × f` weights plus `k` biases.
    Logistic,
    /// One tanh hidden layer of the given width.
    Mlp { hidden: usize },
}

impl Architecture {
    pub fn num_params(self, num_features: usize, num_classes: usize) -> usize {
        match self {
            Architecture::Logistic => num_classes * num_features + num_classes,
            Architecture::Mlp { hidden } => {
                hidden * num_features + hidden + num_classes * hidden + num_classes
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub num_features: usize,
    pub num_classes: usize,
    pub params: ParamVector,
}

impl Model {
    pub fn new(
        arch: Architecture,
        num_features: usize,
        num_classes: usize,
        params: ParamVector,
    ) -> Result<Self, FlError> {
        let expected = arch.num_params(num_features, num_classes);
        if params.dim() != expected {
            return Err(FlError::DimensionMismatch(format!(
                "{arch:?} with {num_features} features and {num_classes} classes needs {expected} parameters, got {}",
                params.dim()
            )));
        }
        Ok(Self {
            arch,
            num_features,
            num_classes,
            params,
        })
    }

    /// Logistic models start at zero. MLP input weights are drawn from
    /// `N(0, 1/f)` so the hidden units are not all identical.
    pub fn init<R: Rng + ?Sized>(
        arch: Architecture,
        num_features: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamVector::zeros(arch.num_params(num_features, num_classes));
        if let Architecture::Mlp { hidden } = arch {
            let scale = 1.0 / (num_features as f64).sqrt();
            for w in &mut params.as_mut_slice()[..hidden * num_features] {
                let n: f64 = rng.sample(StandardNormal);
                *w = n * scale;
            }
        }
        Self {
            arch,
            num_features,
            num_classes,
            params,
        }
    }

    pub fn with_params(&self, params: ParamVector) -> Self {
        debug_assert_eq!(params.dim(), self.params.dim());
        Self {
            params,
            ..self.clone()
        }
    }

    fn check(&self, data: &Dataset) -> Result<(), FlError> {
        if data.num_features() != self.num_features || data.num_classes() != self.num_classes {
            return Err(FlError::DimensionMismatch(format!(
                "model expects {} features / {} classes, data has {} / {}",
                self.num_features,
                self.num_classes,
                data.num_features(),
                data.num_classes()
            )));
        }
        Ok(())
    }

    /// Clamped logits for one sample, plus hidden activations for the MLP.
    fn forward(&self, params: &[f64], x: &[f64], hidden_out: &mut Vec<f64>, logits: &mut [f64]) {
        let (f, k) = (self.num_features, self.num_classes);
        match self.arch {
            Architecture::Logistic => {
                let (w, b) = params.split_at(k * f);
                for c in 0..k {
                    logits[c] = dot(&w[c * f..(c + 1) * f], x) + b[c];
                }
            }
            Architecture::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * f);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(k * hidden);
                hidden_out.clear();
                hidden_out
                    .extend((0..hidden).map(|j| (dot(&w1[j * f..(j + 1) * f], x) + b1[j]).tanh()));
                for c in 0..k {
                    logits[c] = dot(&w2[c * hidden..(c + 1) * hidden], hidden_out) + b2[c];
                }
            }
        }
        for z in logits.iter_mut() {
            *z = z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }

    /// Mean gradient of the cross-entropy over `rows`, accumulated in
    /// ascending row order.
    fn gradient(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> Vec<f64> {
        let (f, k) = (self.num_features, self.num_classes);
        let mut grad = vec![0.0; params.len()];
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; k];
        let mut probs = vec![0.0; k];
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();

        for &i in &sorted {
            let x = data.row(i);
            self.forward(params, x, &mut hidden, &mut logits);
            softmax(&logits, &mut probs);
            // d loss / d logit, zero where the clamp is active.
            let g: Vec<f64> = (0..k)
                .map(|c| {
                    if logits[c].abs() >= LOGIT_CLAMP {
                        0.0
                    } else {
                        probs[c] - if c == data.labels()[i] { 1.0 } else { 0.0 }
                    }
                })
                .collect();
            match self.arch {
                Architecture::Logistic => {
                    let (gw, gb) = grad.split_at_mut(k * f);
                    for c in 0..k {
                        for j in 0..f {
                            gw[c * f + j] += g[c] * x[j];
                        }
                        gb[c] += g[c];
                    }
                }
                Architecture::Mlp { hidden: h } => {
                    let w2 = &params[h * f + h..h * f + h + k * h];
                    let (gw1, rest) = grad.split_at_mut(h * f);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(k * h);
                    for c in 0..k {
                        for j in 0..h {
                            gw2[c * h + j] += g[c] * hidden[j];
                        }
                        gb2[c] += g[c];
                    }
                    for j in 0..h {
                        let back: f64 = (0..k).map(|c| w2[c * h + j] * g[c]).sum();
                        let pre = back * (1.0 - hidden[j] * hidden[j]);
                        for m in 0..f {
                            gw1[j * f + m] += pre * x[m];
                        }
                        gb1[j] += pre;
                    }
                }
            }
        }
        let n = rows.len() as f64;
        for v in &mut grad {
            *v /= n;
        }
        grad
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; self.num_classes];
        self.forward(self.params.as_slice(), x, &mut hidden, &mut logits);
        argmax_first(&logits)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy of `model` on `data`.
pub fn loss(model: &Model, data: &Dataset) -> Result<f64, FlError> {
    model.check(data)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let mut hidden = Vec::new();
    let mut logits = vec![0.0; model.num_classes];
    let mut total = 0.0;
    for i in 0..data.len() {
        model.forward(
            model.params.as_slice(),
            data.row(i),
            &mut hidden,
            &mut logits,
        );
        total += log_sum_exp(&logits) - logits[data.labels()[i]];
    }
    Ok((total / data.len() as f64).max(0.0))
}

/// Fraction of rows whose argmax logit (ties to the smaller class) matches the label.
pub fn accuracy(model: &Model, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = (0..data.len())
        .filter(|&i| model.predict(data.row(i)) == data.labels()[i])
        .count();
    correct as f64 / data.len() as f64
}

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(FlError::InvalidConfig(format!(
                "local config needs epochs >= 1, batch_size >= 1 and finite lr >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Runs `epochs` of minibatch SGD from `model` on `data` and returns the
/// pseudo-gradient `W_local - W`. Rows are reshuffled each epoch; the last
/// batch may be short.
pub fn user_update<R: Rng + ?Sized>(
    model: &Model,
    data: &Dataset,
    cfg: &LocalConfig,
    rng: &mut R,
) -> Result<ParamVector, FlError> {
    model.check(data)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let start = model.params.as_slice();
    let mut params = start.to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = model.gradient(&params, data, batch);
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= cfg.lr * gi;
            }
        }
    }
    Ok(ParamVector::new(
        params.iter().zip(start).map(|(a, b)| a - b).collect(),
    ))
}

/// Full-batch gradient of the mean loss; exposed for gradient checks.
pub fn full_gradient(model: &Model, data: &Dataset) -> Result<ParamVector, FlError> {
    model.check(data)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(ParamVector::new(model.gradient(
        model.params.as_slice(),
        data,
        &rows,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Dirichlet concentration; small values give strongly skewed labels.
    pub alpha: f64,
    pub seed: u64,
}

/// Splits `total` into integer counts proportional to `weights` by the
/// largest-remainder rule (ties to the smaller index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Label-skewed split: for each class, client shares are drawn from
/// `Dirichlet(alpha · 1_N)` and that class's rows are dealt out accordingly.
/// Empty shards are then repaired by moving one row from the largest shard.
pub fn dirichlet_partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>, FlError> {
    let n_clients = spec.num_clients;
    if n_clients == 0 {
        return Err(FlError::InvalidConfig("num_clients must be >= 1".into()));
    }
    if !(spec.alpha > 0.0) || !spec.alpha.is_finite() {
        return Err(FlError::InvalidConfig(format!(
            "Dirichlet concentration must be positive, got {}",
            spec.alpha
        )));
    }
    if data.len() < n_clients {
        return Err(FlError::TooFewSamples {
            samples: data.len(),
            clients: n_clients,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let gamma = Gamma::new(spec.alpha, 1.0)
        .map_err(|e| FlError::InvalidConfig(format!("Dirichlet concentration: {e}")))?;

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..data.num_classes() {
        let mut rows: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels()[i] == class)
            .collect();
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let mut weights: Vec<f64> = (0..n_clients).map(|_| rng.sample(gamma)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            for w in &mut weights {
                *w /= total;
            }
        } else {
            // Every gamma draw underflowed; give the class to one client.
            let pick = rng.random_range(0..n_clients);
            weights = vec![0.0; n_clients];
            weights[pick] = 1.0;
        }
        let counts = largest_remainder(&weights, rows.len());
        let mut cursor = 0;
        for (shard, &c) in shards.iter_mut().zip(&counts) {
            shard.extend_from_slice(&rows[cursor..cursor + c]);
            cursor += c;
        }
    }

    for shard in &mut shards {
        shard.sort_unstable();
    }
    for j in 0..n_clients {
        if shards[j].is_empty() {
            let donor = (0..n_clients)
                .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                .unwrap_or(0);
            if let Some(row) = shards[donor].pop() {
                shards[j].push(row);
            }
        }
    }
    Ok(shards.iter().map(|s| data.subset(s)).collect())
}

/// Gaussian class clusters with unit variance. Class means are pairwise
/// `separation` apart: `(separation/√2)·e_c` when `k <= f`, otherwise spaced
/// along the first axis. Labels cycle through the classes.
pub fn synth_dataset(
    num_samples: usize,
    num_features: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, FlError> {
    if num_samples == 0 || num_features == 0 || num_classes == 0 {
        return Err(FlError::InvalidConfig(
            "synthetic dataset dimensions must be positive".into(),
        ));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(FlError::InvalidConfig(format!(
            "separation must be finite and nonnegative, got {separation}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Class `c` is centred at `c * separation` on the first axis.
    let mean = |class: usize, j: usize| -> f64 {
        if j == 0 {
            class as f64 * separation
        } else {
            0.0
        }
    };
    let mut features = Vec::with_capacity(num_samples * num_features);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let class = i % num_classes;
        for j in 0..num_features {
            let n: f64 = rng.sample(StandardNormal);
            features.push(mean(class, j) + n);
        }
        labels.push(class);
    }
    Dataset::new(features, labels, num_features, num_classes)
}
