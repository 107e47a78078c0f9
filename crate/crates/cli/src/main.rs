use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use emtopk::bench::{self, AuditMode, Distribution, GenParams, Mix, RunConfig, Structure};
use emtopk::em::EmConfig;
use emtopk::facade::FacadeConfig;

#[derive(Parser)]
#[command(name = "emtopk", version, about = "Top-k range reporting in a simulated external-memory model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic workload file.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        distribution: DistArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "mixed")]
        mix: MixArg,
        /// Output file (stdout if omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Execute a workload with oracle checks and audits.
    Run {
        workload: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "final")]
        audit: AuditArg,
        #[arg(long, value_enum, default_value = "on")]
        oracle: OnOff,
        #[arg(long, value_enum, default_value = "facade")]
        structure: StructArg,
    },
    /// Mean update and query I/Os over a doubling series of n.
    Scale {
        #[command(flatten)]
        common: Common,
        /// Smallest n as a power of two.
        #[arg(long, default_value_t = 9)]
        from: u32,
        /// Largest n as a power of two.
        #[arg(long, default_value_t = 14)]
        to: u32,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct Common {
    /// key=value file: B, M, word_bits, seed, k_threshold, smallk_l, bigk_only.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-operation (run) or per-n (scale) rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Clustered,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixArg {
    InsertOnly,
    Mixed,
    QueryHeavy,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditArg {
    Off,
    Final,
    EveryOp,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    Off,
    On,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructArg {
    Facade,
    Bigk,
    Smallk,
}

fn load_config(path: &Option<PathBuf>) -> Result<(EmConfig, FacadeConfig)> {
    let Some(path) = path else {
        return Ok((EmConfig::default(), FacadeConfig::default()));
    };
    let (em, extras) = EmConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    let mut fc = FacadeConfig::default();
    for (k, v) in extras {
        let bad = || format!("{}: invalid {k} = {v:?}", path.display());
        match k.as_str() {
            "k_threshold" => fc.k_threshold = Some(v.parse().with_context(bad)?),
            "smallk_l" => fc.smallk_l = Some(v.parse().with_context(bad)?),
            "bigk_only" => fc.bigk_only = v.parse().with_context(bad)?,
            _ => bail!("{}: unknown setting {k:?}", path.display()),
        }
    }
    Ok((em, fc))
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Gen { n, distribution, seed, mix, out } => {
            let ops = bench::generate(GenParams {
                n,
                distribution: match distribution {
                    DistArg::Uniform => Distribution::Uniform,
                    DistArg::Clustered => Distribution::Clustered,
                },
                seed,
                mix: match mix {
                    MixArg::InsertOnly => Mix::InsertOnly,
                    MixArg::Mixed => Mix::Mixed,
                    MixArg::QueryHeavy => Mix::QueryHeavy,
                },
            });
            write_out(&out, &bench::format_workload(&ops))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { workload, common, audit, oracle, structure } => {
            let (em, facade) = load_config(&common.config)?;
            let text = std::fs::read_to_string(&workload).with_context(|| format!("reading {}", workload.display()))?;
            let ops = bench::parse_workload(&text).with_context(|| workload.display().to_string())?;
            let cfg = RunConfig {
                structure: match structure {
                    StructArg::Facade => Structure::Facade,
                    StructArg::Bigk => Structure::BigK,
                    StructArg::Smallk => Structure::SmallK,
                },
                audit: match audit {
                    AuditArg::Off => AuditMode::Off,
                    AuditArg::Final => AuditMode::Final,
                    AuditArg::EveryOp => AuditMode::EveryOp,
                },
                oracle: matches!(oracle, OnOff::On),
                facade,
            };
            let rep = bench::run(em, &ops, &cfg)?;
            if let Some(p) = &common.csv {
                std::fs::write(p, rep.csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            println!(
                "ops={} reads={} writes={} skipped={} mismatches={} audit_failures={}",
                ops.len(),
                rep.total.reads,
                rep.total.writes,
                rep.skipped,
                rep.mismatches.len(),
                rep.audit_failures.len()
            );
            for (i, m) in rep.mismatches.iter().take(20) {
                eprintln!("mismatch at op {i}: {m}");
            }
            for (i, m) in rep.audit_failures.iter().take(20) {
                eprintln!("audit failure after op {i}: {m}");
            }
            Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Scale { common, from, to, queries, seed } => {
            if from > to || to > 24 {
                bail!("need from <= to <= 24");
            }
            let (em, _) = load_config(&common.config)?;
            let ns: Vec<usize> = (from..=to).map(|e| 1usize << e).collect();
            let rows = bench::scale(em, &ns, queries, seed);
            let csv = bench::scale_csv(&rows);
            if let Some(p) = &common.csv {
                std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            }
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
