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

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dplac::cli::commands::{self, AccountantQuery, GlobalOpts, PartitionInput, SynthSpec};
use dplac::cli::CliError;
use dplac::flcore::PartitionSpec;

#[derive(Parser)]
#[command(
    name = "dplac",
    version,
    about = "Differentially private federated learning with adaptive clipping"
)]
struct Cli {
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for client updates.
    #[arg(long, global = true, env = "DPLAC_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, summary.txt and model.bin.
    Run {
        config: PathBuf,
        /// `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Privacy accounting queries.
    Accountant {
        #[command(subcommand)]
        query: AccountantCmd,
    },
    /// Split a labelled CSV into non-IID client shards.
    Partition {
        /// Labelled CSV to split.
        #[arg(required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        /// Generate the data instead: samples,features,classes,separation.
        #[arg(long, value_name = "N,F,K,SEP", conflicts_with = "data")]
        synthetic: Option<SynthSpec>,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Number of classes; inferred from the labels when omitted.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print one per-round series from a run directory as CSV.
    Plotdata {
        run_dir: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(commands::SERIES))]
        series: String,
    },
}

#[derive(Subcommand)]
enum AccountantCmd {
    /// Smallest noise multiplier meeting the budget.
    SolveZ {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        rounds: u64,
    },
    /// Epsilon spent by a given noise multiplier.
    SolveEps {
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        rounds: u64,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let opts = GlobalOpts {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run { config, overrides } => {
            commands::run(&config, &overrides, &opts, &mut out)?;
        }
        Command::Accountant { query } => {
            let (query, delta, q, rounds) = match query {
                AccountantCmd::SolveZ {
                    epsilon,
                    delta,
                    q,
                    rounds,
                } => (AccountantQuery::SolveZ { epsilon }, delta, q, rounds),
                AccountantCmd::SolveEps {
                    z,
                    delta,
                    q,
                    rounds,
                } => (AccountantQuery::SolveEps { z }, delta, q, rounds),
            };
            commands::accountant(query, delta, q, rounds, &mut out)?;
        }
        Command::Partition {
            data,
            synthetic,
            clients,
            alpha,
            classes,
        } => {
            let spec = PartitionSpec {
                num_clients: clients,
                alpha,
                seed: opts.seed.unwrap_or(0),
            };
            let input = match (data, synthetic) {
                (_, Some(s)) => PartitionInput::Synthetic(s),
                (Some(path), None) => PartitionInput::File { path, classes },
                (None, None) => unreachable!("clap requires one of the two"),
            };
            commands::partition(&input, &spec, &opts, &mut out)?;
        }
        Command::Sweep {
            config,
            param,
            values,
            overrides,
        } => {
            commands::sweep(&config, &overrides, &param, &values, &opts, &mut out)?;
        }
        Command::Plotdata { run_dir, series } => {
            commands::plotdata(&run_dir, &series, &mut out)?;
        }
    }
    out.flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dplac: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
