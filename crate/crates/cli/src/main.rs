use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cldetect_core::corpus::{
    build_manifest, generate_synthetic, ingest_dataset, load_descriptors, write_records,
    ManifestBuild,
};
use cldetect_core::harness::{
    render_report, run_experiment, run_fewshot, selftest, RunArtifact, SelftestOptions,
};
use cldetect_core::util::{read_json, write_atomic, write_json};
use cldetect_core::{DatasetDescriptor, ExperimentConfig, Manifest, SyntheticConfig};

const DATA_DIR_ENV: &str = "CLDETECT_DATA_DIR";

/// Continual learning over streams of imbalanced binary text-classification tasks.
#[derive(Debug, Parser)]
#[command(name = "cldetect", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Harmonises one raw dataset into unified JSONL records.
    Ingest {
        descriptor: PathBuf,
        raw: PathBuf,
        /// Output file; defaults to `<dataset>.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builds, validates or synthesises task manifests.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Trains and evaluates one experiment (resumes an interrupted run).
    Run {
        config: PathBuf,
        /// Replaces the data, init and sampler seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Few-shot evaluation of a finished run.
    Fewshot {
        run_id: String,
        #[arg(long, value_parser = ["8", "16", "32"])]
        k: Option<String>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Renders few-shot, final and instant tables for finished runs.
    Report {
        #[arg(required = true)]
        run_ids: Vec<String>,
        /// Run the delta columns of every other run are measured against.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Print CSV instead of Markdown.
        #[arg(long)]
        csv: bool,
        /// Also write report.md, report.csv and reports.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient, AUC, layout and micro-stream checks.
    Selftest {
        /// Perturbs analytic gradients; the gradient check must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
        #[arg(long)]
        skip_micro_stream: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ManifestCommand {
    /// Ingests every descriptor's raw file and writes manifest.json plus records.
    Build {
        /// Directory of dataset descriptor files.
        #[arg(long)]
        descriptors: PathBuf,
        /// Directory holding the raw files.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with build options (thresholds, split seed, streams).
        #[arg(long)]
        build: Option<PathBuf>,
    },
    /// Checks a manifest's invariants and prints its task counts.
    Validate {
        manifest: PathBuf,
        /// Also read the record files and verify every task.
        #[arg(long)]
        records: bool,
    },
    /// Writes a synthetic corpus manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Six upstream tasks (two in conflict) and four downstream tasks.
        #[arg(long)]
        benchmark: bool,
        #[arg(long)]
        build: Option<PathBuf>,
    },
}

fn build_options(path: Option<&Path>) -> Result<ManifestBuild> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => ManifestBuild::default(),
    })
}

fn manifest(cmd: ManifestCommand) -> Result<()> {
    match cmd {
        ManifestCommand::Build {
            descriptors,
            data_dir,
            out,
            build,
        } => {
            let build = build_options(build.as_deref())?;
            let m = build_manifest(load_descriptors(&descriptors)?, &data_dir, &build, &out)?;
            m.save(&out.join("manifest.json"))?;
            println!("{}", serde_json::to_string_pretty(&m.validate(true)?)?);
        }
        ManifestCommand::Validate { manifest, records } => {
            let m = Manifest::load(&manifest)?;
            println!("{}", serde_json::to_string_pretty(&m.validate(records)?)?);
        }
        ManifestCommand::Synth {
            out,
            seed,
            benchmark,
            build,
        } => {
            let cfg = if benchmark {
                SyntheticConfig::benchmark(seed)
            } else {
                SyntheticConfig {
                    seed,
                    ..SyntheticConfig::default()
                }
            };
            let build = match build {
                Some(p) => read_json(&p)?,
                None => ManifestBuild {
                    min_positives: 20,
                    ..ManifestBuild::default()
                },
            };
            let m = generate_synthetic(&cfg)?.manifest(&build, &out)?;
            m.save(&out.join("manifest.json"))?;
            println!("{}", serde_json::to_string_pretty(&m.validate(true)?)?);
        }
    }
    Ok(())
}

fn report(
    run_ids: &[String],
    reference: Option<&str>,
    runs_dir: &Path,
    csv: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut ids = run_ids.to_vec();
    if let Some(r) = reference {
        if !ids.iter().any(|i| i == r) {
            ids.insert(0, r.to_string());
        }
    }
    let artifacts = ids
        .iter()
        .map(|id| RunArtifact::locate(runs_dir, id))
        .collect::<cldetect_core::Result<Vec<_>>>()?;
    let references: BTreeMap<String, String> = match reference {
        Some(r) => ids
            .iter()
            .filter(|i| *i != r)
            .map(|i| (i.clone(), r.to_string()))
            .collect(),
        None => BTreeMap::new(),
    };
    let rendered = render_report(&artifacts, &references)?;
    if csv {
        print!("{}", rendered.csv());
    } else {
        print!("{}", rendered.markdown());
    }
    if let Some(dir) = out {
        write_atomic(&dir.join("report.md"), rendered.markdown().as_bytes())?;
        write_atomic(&dir.join("report.csv"), rendered.csv().as_bytes())?;
        write_json(&dir.join("reports.json"), &rendered.reports)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            descriptor,
            raw,
            out,
        } => {
            let d: DatasetDescriptor = read_json(&descriptor)?;
            d.validate()?;
            let records = ingest_dataset(&d, &raw)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.jsonl", d.name)));
            write_records(&out, &records)?;
            println!("{} records -> {}", records.len(), out.display());
        }
        Command::Manifest(cmd) => manifest(cmd)?,
        Command::Run { config, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let art = run_experiment(&cfg)?;
            println!("{}", art.run_id);
            if !art.complete {
                bail!("run {} stopped before completion", art.run_id);
            }
        }
        Command::Fewshot {
            run_id,
            k,
            runs_dir,
        } => {
            let art = RunArtifact::locate(&runs_dir, &run_id)?;
            let k = k.map(|k| k.parse()).transpose().context("--k")?;
            for r in run_fewshot(&art, k)? {
                let auc = r.auc.map_or("-".into(), |v| format!("{v:.6}"));
                let f1 = r.f1.map_or("-".into(), |v| format!("{v:.6}"));
                match r.error {
                    Some(e) => println!("{}\tk={}\terror: {e}", r.task_id, r.k),
                    None => println!("{}\tk={}\tauc={auc}\tf1={f1}", r.task_id, r.k),
                }
            }
        }
        Command::Report {
            run_ids,
            reference,
            runs_dir,
            csv,
            out,
        } => report(
            &run_ids,
            reference.as_deref(),
            &runs_dir,
            csv,
            out.as_deref(),
        )?,
        Command::Selftest {
            corrupt_gradient,
            skip_micro_stream,
        } => {
            let r = selftest(SelftestOptions {
                corrupt_gradient,
                micro_stream: !skip_micro_stream,
            });
            print!("{}", r.summary());
            if !r.passed() {
                return Err(SelftestFailed.into());
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct SelftestFailed;

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("selftest failed")
    }
}

impl std::error::Error for SelftestFailed {}

/// 1 for problems with the user's input, 2 for internal failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<SelftestFailed>() {
        return 2;
    }
    match err.downcast_ref::<cldetect_core::Error>() {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
