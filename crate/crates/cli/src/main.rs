use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tzfuzz_core::commands::{self, CommandError};
use tzfuzz_core::coverage::write_trace_dump;
use tzfuzz_core::fuzz::{CampaignConfig, FeedbackMode};
use tzfuzz_core::state::{load_regions, StateVarRegion};
use tzfuzz_core::syscall::{load_seed_corpus, parse_program, serialize_payload, TemplateSet};

#[derive(Parser)]
#[command(
    name = "tzfuzz",
    version,
    about = "State-aware greybox fuzzer for Trusted OS syscall interfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign described by a key=value config file
    Fuzz {
        config: PathBuf,
        /// Override the execution budget from the config
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Infer state-variable regions and write the regions file
    InferState { config: PathBuf },
    /// Execute one payload (binary, or a `.prog` seed program) and print
    /// per-call coverage, state and faults
    Replay {
        payload: PathBuf,
        /// Treat the input as a trace dump and print its per-call coverage
        #[arg(long, conflicts_with_all = ["regions", "json", "write_trace"])]
        trace: bool,
        /// Write the raw per-call traces of the run as a trace dump
        #[arg(long)]
        write_trace: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        campaign_seed: u64,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Replay a seed corpus and write its state transition tree as DOT
    SttExport {
        /// Directory of seed programs (bundled corpus when omitted)
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Convert stats.jsonl to CSV
    Plot {
        stats: PathBuf,
        /// Output file (stdout when omitted)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Measure simulator throughput with one campaign
    Bench {
        #[arg(long, default_value_t = 20_000)]
        budget: u64,
        #[arg(long, default_value = "composite")]
        mode: FeedbackMode,
        #[arg(long, default_value_t = 0)]
        campaign_seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYZT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<CommandError>()
                .map_or(1, CommandError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<CampaignConfig> {
    CampaignConfig::load(path).map_err(|e| CommandError::from(e).into())
}

fn templates(path: Option<&Path>) -> anyhow::Result<Arc<TemplateSet>> {
    Ok(Arc::new(match path {
        Some(p) => TemplateSet::load(p).map_err(CommandError::from)?,
        None => TemplateSet::bundled(),
    }))
}

fn regions(path: Option<&Path>) -> anyhow::Result<Vec<StateVarRegion>> {
    match path {
        Some(p) => Ok(load_regions(p).map_err(CommandError::from)?),
        None => Ok(Vec::new()),
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Fuzz { config, budget } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = budget {
                cfg.budget = b;
            }
            let out = commands::fuzz(&cfg)?;
            let r = &out.report;
            println!(
                "{} executions, {} branches, {} states, {} unique crashes, {} preserved",
                r.executions,
                r.unique_branches,
                r.unique_states,
                r.unique_crashes.len(),
                out.corpus.len()
            );
            for c in &r.crashes {
                let bug = c.bug.map_or_else(|| "-".to_string(), |b| b.to_string());
                println!("  {bug:<3} first at exec {:<7} {}", c.first_exec, c.id);
            }
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::InferState { config } => {
            let cfg = load_config(&config)?;
            let out = commands::infer(&cfg)?;
            println!("{} snapshot entries", out.log_entries);
            for (kind, offs) in &out.candidates {
                println!("candidates {kind}: {offs:?}");
            }
            for r in &out.regions {
                println!("region {} {} {}", r.kind, r.offset, r.len);
            }
            println!(
                "vs ground truth: precision {:.3}, recall {:.3}",
                out.score.precision, out.score.recall
            );
            println!("wrote {}", out.regions_file.display());
        }
        Command::Replay {
            payload,
            trace,
            write_trace,
            regions: rf,
            templates: tf,
            campaign_seed,
            json,
        } => {
            let mut bytes = std::fs::read(&payload)
                .with_context(|| format!("reading {}", payload.display()))?;
            if trace {
                for (i, c) in commands::trace_summary(&bytes)?.iter().enumerate() {
                    println!(
                        "{i:>3}  {} packets, {} secure, {} branches",
                        c.packets, c.secure_packets, c.branches
                    );
                }
                return Ok(());
            }
            let t = templates(tf.as_deref())?;
            if payload.extension().is_some_and(|e| e == "prog") {
                let text = String::from_utf8(bytes).context("seed program is not UTF-8")?;
                bytes = serialize_payload(&parse_program(&text, &t)?)?;
            }
            let report = commands::replay(&bytes, &regions(rf.as_deref())?, t, campaign_seed)?;
            if let Some(path) = write_trace {
                let mut out = Vec::new();
                write_trace_dump(&mut out, &report.traces)?;
                std::fs::write(&path, out)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Command::SttExport {
            corpus,
            regions: rf,
            templates: tf,
            out,
        } => {
            let t = templates(tf.as_deref())?;
            let seeds = match corpus {
                Some(dir) => load_seed_corpus(&dir, &t)
                    .map_err(CommandError::from)?
                    .seeds
                    .into_iter()
                    .map(|(_, tc)| tc)
                    .collect(),
                None => tzfuzz_core::bundled_corpus()
                    .iter()
                    .map(|(_, text)| parse_program(text, &t))
                    .collect::<Result<Vec<_>, _>>()?,
            };
            let stt = commands::stt_export(&seeds, &regions(rf.as_deref())?, t, 0)?;
            std::fs::write(&out, stt.to_dot())
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} nodes, {} edges -> {}",
                stt.nodes.len(),
                stt.edges.len(),
                out.display()
            );
        }
        Command::Plot { stats, out } => {
            let text = std::fs::read_to_string(&stats)
                .with_context(|| format!("reading {}", stats.display()))?;
            let csv = commands::plot(&text)?;
            match out {
                Some(p) => {
                    std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{csv}"),
            }
        }
        Command::Bench {
            budget,
            mode,
            campaign_seed,
        } => {
            let b = commands::bench(budget, mode, campaign_seed);
            println!(
                "{} executions in {} ms: {:.0} exec/s ({} mode), bugs {:?}",
                b.executions, b.wall_ms, b.execs_per_sec, b.mode, b.bugs_found
            );
        }
    }
    Ok(())
}
