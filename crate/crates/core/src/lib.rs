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

//! Simulation of differentially private federated averaging with adaptive
//! clipping.
//!
//! The server keeps a clipping threshold `C`. After each round it scales `C`
//! by the ratio of the last two losses (capped at one), so the Gaussian noise
//! on the aggregate shrinks as training converges. The initial threshold comes
//! from a private histogram of client votes.
//!
//! - [`accountant`]: RDP accounting for the subsampled Gaussian mechanism.
//! - [`mechanisms`]: clipping, Gaussian noise and private histograms.
//! - [`flcore`]: datasets, models, local SGD and Dirichlet partitioning.
//! - [`clipstrat`]: threshold update rules and round-1 voting.
//! - [`harness`]: the round loop, deterministic RNG streams and output files.
//! - [`cli`]: configuration files and subcommands.
//!
//! ```
//! use dplac::accountant::{get_noise_multiplier, PrivacySpec};
//!
//! let spec = PrivacySpec::new(8.0, 1e-5, 0.2, 30).unwrap();
//! let z = get_noise_multiplier(&spec).unwrap();
//! assert!(z.value() > 0.3 && z.value() < 2.0);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod cli;
pub mod clipstrat;
pub mod flcore;
pub mod harness;
pub mod mechanisms;
