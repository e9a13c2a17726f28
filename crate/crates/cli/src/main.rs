//! `midcs`: sample processes, estimate their dimensions, audit Gaussian
//! measurement matrices, run recovery phase diagrams, and reproduce any
//! earlier run from its manifest.
//!
//! Every run reads one JSON config, derives all randomness from a single
//! master seed, computes its artifacts in memory on a bounded worker
//! pool, then writes the files plus a `manifest.json` recording their
//! digests. `midcs replay <manifest>` re-executes the recorded subcommand
//! from the inlined config and verifies the digests match.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use midcs_core::{Error, Result};

use commands::{execute, OutputFormat, SubcommandKind};
use config::parameter;
use manifest::{sha256_hex, OutputRecord, RunManifest};

#[derive(Parser)]
#[command(
    name = "midcs",
    version,
    about = "Dimension estimators and compressed-sensing experiments on sampled processes"
)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the config's `seed` field.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out: PathBuf,

    /// Worker threads (0 picks automatically); falls back to MIDCS_THREADS.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    /// Restrict `generate` to a single batch format.
    #[arg(long, global = true, value_enum, value_name = "FMT")]
    format: Option<OutputFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a batch from the configured process and write it out.
    Generate,
    /// Estimate the configured dimension flavor over its scale grid.
    EstimateDim,
    /// Compute the normalized energy rate curve over the block ladder.
    Energy,
    /// Audit Gaussian matrix small-ball and operator-norm tails.
    AuditGauss,
    /// Run a recovery phase diagram and detect its threshold.
    Phase,
    /// Produce the combined energy/dimension/recovery report.
    Report,
    /// Re-execute a manifest and verify every output digest.
    Replay {
        /// Path to a manifest.json from an earlier run.
        manifest: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(i32::from(error.exit_code()));
    }
}

fn run(cli: Cli) -> Result<()> {
    init_thread_pool(cli.threads)?;
    match cli.command {
        Command::Generate => run_command(SubcommandKind::Generate, &cli),
        Command::EstimateDim => run_command(SubcommandKind::EstimateDim, &cli),
        Command::Energy => run_command(SubcommandKind::Energy, &cli),
        Command::AuditGauss => run_command(SubcommandKind::AuditGauss, &cli),
        Command::Phase => run_command(SubcommandKind::Phase, &cli),
        Command::Report => run_command(SubcommandKind::Report, &cli),
        Command::Replay { ref manifest } => replay(manifest),
    }
}

/// Build the global worker pool from `--threads` or `MIDCS_THREADS`.
/// Without either, rayon sizes the pool itself.
fn init_thread_pool(flag: Option<usize>) -> Result<()> {
    let count = match flag {
        Some(k) => Some(k),
        None => match std::env::var("MIDCS_THREADS") {
            Ok(value) => Some(value.trim().parse().map_err(|_| {
                parameter("MIDCS_THREADS", format!("cannot parse `{value}` as a thread count"))
            })?),
            Err(std::env::VarError::NotPresent) => None,
            Err(std::env::VarError::NotUnicode(_)) => {
                return Err(parameter("MIDCS_THREADS", "value is not valid unicode"))
            }
        },
    };
    if let Some(k) = count {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| parameter("threads", e.to_string()))?;
    }
    Ok(())
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn run_command(kind: SubcommandKind, cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| parameter("config", "--config <path> is required by this subcommand"))?;
    let raw = std::fs::read(config_path)?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| Error::Data(format!("{} is not valid UTF-8", config_path.display())))?;
    let config = config::parse_config(text)?;
    let seed = cli.seed.unwrap_or(config.seed);

    let started = now_rfc3339();
    let result = execute(kind, &config, seed, cli.format)?;
    let finished = now_rfc3339();

    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    for note in &result.notes {
        println!("{note}");
    }

    std::fs::create_dir_all(&cli.out)?;
    let mut outputs = Vec::with_capacity(result.files.len());
    for file in &result.files {
        std::fs::write(cli.out.join(&file.name), &file.bytes)?;
        outputs.push(OutputRecord { path: file.name.clone(), sha256: sha256_hex(&file.bytes) });
    }
    let run_manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        command: std::env::args().collect(),
        subcommand: kind.to_string(),
        config_sha256: sha256_hex(&raw),
        config,
        seed,
        format: cli.format,
        started,
        finished,
        outputs,
    };
    let mut manifest_bytes =
        serde_json::to_vec_pretty(&run_manifest).map_err(|e| Error::Data(e.to_string()))?;
    manifest_bytes.push(b'\n');
    let manifest_path = cli.out.join("manifest.json");
    std::fs::write(&manifest_path, &manifest_bytes)?;

    for record in &run_manifest.outputs {
        println!("wrote {} ({})", cli.out.join(&record.path).display(), &record.sha256[..12]);
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

/// Re-execute a manifest's subcommand from its inlined config and seed,
/// then compare the recomputed digests against the recorded inventory.
/// Nothing is written; a mismatch is a data error (exit 3).
fn replay(path: &Path) -> Result<()> {
    let manifest = manifest::load_manifest(path)?;
    let kind: SubcommandKind = manifest.subcommand.parse().map_err(|()| {
        Error::Data(format!("manifest names unknown subcommand `{}`", manifest.subcommand))
    })?;
    if manifest.config.version != config::CONFIG_VERSION {
        return Err(parameter(
            "version",
            format!("manifest config has schema version {}", manifest.config.version),
        ));
    }
    manifest.config.process.validate()?;

    let result = execute(kind, &manifest.config, manifest.seed, manifest.format)?;
    let mut produced: BTreeMap<String, String> =
        result.files.iter().map(|f| (f.name.clone(), sha256_hex(&f.bytes))).collect();

    let mut failures = Vec::new();
    for record in &manifest.outputs {
        match produced.remove(&record.path) {
            Some(digest) if digest == record.sha256 => println!("{}: ok", record.path),
            Some(digest) => failures.push(format!(
                "{}: digest mismatch (manifest {}, replay {})",
                record.path, record.sha256, digest
            )),
            None => failures.push(format!("{}: not produced by replay", record.path)),
        }
    }
    for name in produced.into_keys() {
        failures.push(format!("{name}: produced but absent from the manifest"));
    }
    if failures.is_empty() {
        println!("replay ok: {} outputs reproduced", manifest.outputs.len());
        Ok(())
    } else {
        Err(Error::Data(format!("replay mismatch:\n  {}", failures.join("\n  "))))
    }
}
