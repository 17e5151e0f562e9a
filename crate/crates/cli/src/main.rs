use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use bitvec::prelude::*;
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use scpir_core::planner::StageCount;
use scpir_core::privacy::DEFAULT_ENUMERATION_BOUND;
use scpir_core::{
    build_query_plan, composite_retrieval, curve_csv, curve_rows, exhaustive_audit,
    memory_share, monte_carlo_audit, run_retrieval, stage_counts, structural_audit,
    theoretical_cost, verify_storage, Bits, Error, Params, Placement, Rational,
    RetrievalReport, SecretPermutations,
};

/// Storage-constrained private information retrieval simulator.
#[derive(Parser)]
#[command(name = "scpir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct Grid {
    /// Number of databases.
    #[arg(short = 'N')]
    n: usize,
    /// Number of messages.
    #[arg(short = 'K')]
    k: usize,
    /// Databases holding each sub-message.
    #[arg(short = 't')]
    t: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve one message end to end and print the report.
    Simulate {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 1)]
        theta: usize,
        #[arg(long, env = "SCPIR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = MessageSource::Random)]
        messages: MessageSource,
        /// One file per message, bits packed LSB first; used with `--messages file`.
        #[arg(long = "message-file")]
        message_files: Vec<PathBuf>,
        /// Run every t in 1..=N and every theta; `-t` and `--theta` are ignored.
        #[arg(long)]
        sweep: bool,
    },
    /// Export the cost/storage tradeoff curve.
    Tradeoff {
        #[arg(short = 'N')]
        n: usize,
        #[arg(short = 'K')]
        k: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check that database views do not depend on the desired index.
    Audit {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, value_enum, default_value_t = AuditModeArg::Structural)]
        mode: AuditModeArg,
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, env = "SCPIR_SEED", default_value_t = 0)]
        seed: u64,
        /// Largest joint permutation count the exhaustive mode will enumerate.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BOUND)]
        bound: u128,
    },
    /// Per-stage element counts per database, checked against a built plan.
    Counts {
        #[command(flatten)]
        grid: Grid,
        /// Run every t in 1..=N; `-t` is ignored.
        #[arg(long)]
        sweep: bool,
    },
    /// Realize an off-grid storage level by mixing two grid levels.
    Memshare {
        #[arg(short = 'N')]
        n: usize,
        #[arg(short = 'K')]
        k: usize,
        /// Storage fraction as "p/q".
        #[arg(long)]
        mu: String,
        #[arg(long, default_value_t = 1)]
        theta: usize,
        #[arg(long, env = "SCPIR_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Print the storage placement document.
    Placement {
        #[command(flatten)]
        grid: Grid,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MessageSource {
    Random,
    Zero,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditModeArg {
    Structural,
    Exhaustive,
    #[value(name = "montecarlo", alias = "monte-carlo")]
    MonteCarlo,
}

/// A check ran to completion and did not hold.
#[derive(Debug)]
struct VerificationFailure(String);

impl std::fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailure {}

fn fail(msg: impl Into<String>) -> anyhow::Error {
    VerificationFailure(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<VerificationFailure>() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::InvalidParams(_)
            | Error::Parse { .. }
            | Error::MessageLength { .. }
            | Error::MessageCount { .. }
            | Error::EnumerationBound { .. },
        ) => 2,
        Some(_) => 1,
        // I/O and other input problems.
        None => 2,
    }
}

fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate {
            grid,
            theta,
            seed,
            messages,
            message_files,
            sweep,
        } => {
            if sweep {
                return simulate_sweep(grid.n, grid.k, seed);
            }
            let params = Params::new(grid.n, grid.k, grid.t)?;
            let msgs = load_messages(&params, messages, &message_files, seed)?;
            let report = simulate_one(&params, &msgs, theta, seed)?;
            print_json(&report)
        }
        Command::Tradeoff { n, k, format } => {
            match format {
                Format::Csv => emit(&curve_csv(n, k)?)?,
                Format::Json => print_json(&curve_rows(n, k)?)?,
            }
            Ok(())
        }
        Command::Audit {
            grid,
            mode,
            trials,
            seed,
            bound,
        } => {
            let params = Params::new(grid.n, grid.k, grid.t)?;
            let report = match mode {
                AuditModeArg::Structural => structural_audit(&params)?,
                AuditModeArg::Exhaustive => exhaustive_audit(&params, bound).map_err(|e| {
                    if matches!(e, Error::EnumerationBound { .. }) {
                        anyhow::Error::new(e).context("refusing exhaustive audit")
                    } else {
                        e.into()
                    }
                })?,
                AuditModeArg::MonteCarlo => monte_carlo_audit(&params, trials, seed)?,
            };
            print_json(&report)?;
            if !report.pass {
                return Err(fail("privacy audit failed"));
            }
            Ok(())
        }
        Command::Counts { grid, sweep } => {
            let ts: Vec<usize> = if sweep { (1..=grid.n).collect() } else { vec![grid.t] };
            let tables = ts
                .into_iter()
                .map(|t| counts_table(&Params::new(grid.n, grid.k, t)?))
                .collect::<anyhow::Result<Vec<_>>>()?;
            if sweep {
                print_json(&tables)?;
            } else {
                print_json(&tables[0])?;
            }
            if let Some(bad) = tables.iter().find(|t| !t.matches) {
                return Err(fail(format!(
                    "built plan disagrees with closed-form counts at t = {}",
                    bad.params.t
                )));
            }
            Ok(())
        }
        Command::Memshare {
            n,
            k,
            mu,
            theta,
            seed,
        } => {
            let mu: Rational = mu.parse()?;
            let spec = memory_share(n, k, mu)?;
            let len = (spec.l1 + spec.l2) as usize;
            let msgs = random_messages(k, len, seed);
            let report = composite_retrieval(n, k, mu, &msgs, theta, seed)?;
            print_json(&report)
        }
        Command::Placement { grid } => {
            let params = Params::new(grid.n, grid.k, grid.t)?;
            print_json(&Placement::build(&params)?.to_document())
        }
    }
}

fn simulate_one(
    params: &Params,
    msgs: &[Bits],
    theta: usize,
    seed: u64,
) -> anyhow::Result<RetrievalReport> {
    let report = run_retrieval(params, msgs, theta, seed)?;
    let expected = theoretical_cost(params.t, params.k)?;
    if report.cost != expected {
        return Err(fail(format!(
            "cost {} differs from closed form {expected}",
            report.cost
        )));
    }
    Ok(report)
}

#[derive(Serialize)]
struct SweepRow {
    t: usize,
    theta: usize,
    cost: Rational,
    cost_decimal: f64,
    downloaded_bits: u64,
    desired_bits: u64,
}

fn simulate_sweep(n: usize, k: usize, seed: u64) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for t in 1..=n {
        let params = Params::new(n, k, t)?;
        let msgs = random_messages(k, params.message_len, seed);
        for theta in 1..=k {
            let r = simulate_one(&params, &msgs, theta, seed)
                .with_context(|| format!("t = {t}, theta = {theta}"))?;
            rows.push(SweepRow {
                t,
                theta,
                cost: r.cost,
                cost_decimal: r.cost_decimal,
                downloaded_bits: r.downloaded_bits,
                desired_bits: r.desired_bits,
            });
        }
    }
    print_json(&rows)
}

fn random_messages(k: usize, len: usize, seed: u64) -> Vec<Bits> {
    // Separate stream from the permutation sampler.
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..k).map(|_| (0..len).map(|_| rng.random::<bool>()).collect()).collect()
}

fn load_messages(
    params: &Params,
    source: MessageSource,
    files: &[PathBuf],
    seed: u64,
) -> anyhow::Result<Vec<Bits>> {
    let l = params.message_len;
    match source {
        MessageSource::Random => Ok(random_messages(params.k, l, seed)),
        MessageSource::Zero => Ok(vec![bitvec![u8, Lsb0; 0; l]; params.k]),
        MessageSource::File => {
            if files.len() != params.k {
                return Err(Error::MessageCount {
                    expected: params.k,
                    actual: files.len(),
                }
                .into());
            }
            files
                .iter()
                .enumerate()
                .map(|(i, path)| {
                    let bytes = fs::read(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    unpack_message(i + 1, bytes, l)
                })
                .collect()
        }
    }
}

fn unpack_message(message: usize, bytes: Vec<u8>, len: usize) -> anyhow::Result<Bits> {
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::MessageLength {
            message,
            expected: len,
            actual: bytes.len() * 8,
        }
        .into());
    }
    let mut bits = Bits::from_vec(bytes);
    if bits[len..].any() {
        bail!(Error::Parse {
            what: "message file (padding bits must be zero)",
            input: format!("message {message}"),
        });
    }
    bits.truncate(len);
    Ok(bits)
}

#[derive(Serialize)]
struct StageCounts {
    stage: usize,
    /// Index `db - 1`.
    built: Vec<StageCount>,
    closed_form: StageCount,
}

#[derive(Serialize)]
struct CountsTable {
    params: Params,
    stages: Vec<StageCounts>,
    /// Closed-form totals per database.
    total_per_db: u64,
    desired_per_db: u64,
    storage_per_db: u64,
    matches: bool,
}

fn counts_table(params: &Params) -> anyhow::Result<CountsTable> {
    let placement = Placement::build(params)?;
    let storage = verify_storage(&placement)?;
    let ident = SecretPermutations::identity(params);
    let plans = (1..=params.k)
        .map(|theta| build_query_plan(&placement, theta, &ident))
        .collect::<Result<Vec<_>, _>>()?;
    let mut matches = true;
    let mut stages = Vec::with_capacity(params.k);
    for stage in 1..=params.k {
        let closed_form = stage_counts(params, stage)?;
        let built: Vec<StageCount> = (1..=params.n)
            .map(|db| plans[0].stage_table(db)[stage - 1])
            .collect();
        for plan in &plans {
            for (db, want) in built.iter().enumerate() {
                matches &= plan.stage_table(db + 1)[stage - 1] == *want;
            }
        }
        matches &= built.iter().all(|c| *c == closed_form);
        stages.push(StageCounts {
            stage,
            built,
            closed_form,
        });
    }
    Ok(CountsTable {
        params: params.clone(),
        total_per_db: stages.iter().map(|s| s.closed_form.total).sum(),
        desired_per_db: stages.iter().map(|s| s.closed_form.desired).sum(),
        storage_per_db: storage.closed_form,
        stages,
        matches,
    })
}
