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

//! Command implementations behind the `dplac` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use thiserror::Error;

use crate::accountant::AccountantError;
use crate::flcore::FlError;
use crate::harness::HarnessError;

pub use config::{parse_config, serialize_config, ConfigError};

/// Process exit code for malformed configuration or arguments.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Harness(HarnessError::Config(_)) => EXIT_CONFIG,
            CliError::Accountant(
                AccountantError::InvalidParameter(_) | AccountantError::ZeroNoise(_),
            ) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}
