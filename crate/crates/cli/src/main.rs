//! `domprompt`: pre-train, evaluate, ablate and generate synthetic domains.
//!
//! Exit codes: 0 on success, 1 on pipeline failures (I/O, malformed data,
//! numerical errors), 2 on bad configuration or arguments. Errors are one
//! line on stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use domprompt::adapt::{TargetDomain, TaskKind};
use domprompt::checkpoint::{load_bundle, save_bundle};
use domprompt::config::{parse_seed_list, ExperimentConfig, Variant};
use domprompt::graph::DomainDataset;
use domprompt::harness::{
    eval_config, evaluate, generate_all, run_data_ablation, run_model_ablation, sweep_aligned_dim, sweep_shots,
    sweep_to_csv, table_to_text, AblationRow, SynthSpec,
};
use domprompt::io::{load_dataset, write_dataset};
use domprompt::pretrain::pretrain;
use domprompt::Error;

#[derive(Parser)]
#[command(name = "domprompt", version, about = "Multi-domain graph pre-training and few-shot prompt adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train on source domains and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Source manifest; repeat once per domain.
        #[arg(long = "source", required = true)]
        sources: Vec<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Few-shot evaluation of a checkpoint on a target domain.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "node")]
        kind: String,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        tasks: Option<usize>,
        /// Comma-separated evaluation seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// TSV report to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Ablations: `data`, `model`, `shots` or `dim`.
    Ablate {
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "source", required = true)]
        sources: Vec<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "node")]
        kind: String,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        seeds: Option<String>,
        /// Sweep values for `shots` and `dim`, comma-separated.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic domains from a spec file.
    Gensynth {
        /// Synthetic spec.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::from(e),
            other => usage(other.to_string()),
        }),
    }
}

fn parse_kind(s: &str) -> Result<TaskKind, Failure> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, Failure> {
    let out = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&v| v > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| usage(format!("invalid {what} list `{s}`")))?;
    Ok(out)
}

/// Applies command-line overrides on top of the config file.
fn overrides(
    exp: &mut ExperimentConfig,
    shots: Option<usize>,
    tasks: Option<usize>,
    seeds: Option<&str>,
    variant: Option<&str>,
) -> Outcome {
    if let Some(m) = shots {
        exp.shots = m;
    }
    if let Some(n) = tasks {
        exp.eval_tasks = n;
    }
    if let Some(s) = seeds {
        exp.eval_seeds = parse_seed_list(s)?;
    }
    if let Some(v) = variant {
        exp.set_variant(v.parse::<Variant>()?);
    }
    exp.validate()?;
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<DomainDataset>, Failure> {
    Ok(paths.iter().map(load_dataset).collect::<Result<Vec<_>, _>>()?)
}

fn write_file(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_pretrain(config: Option<&Path>, sources: &[PathBuf], out: &Path, variant: Option<&str>) -> Outcome {
    let mut exp = load_config(config)?;
    overrides(&mut exp, None, None, None, variant)?;
    let datasets = load_all(sources)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let outcome = pretrain(&datasets, &exp.pretrain_config(), |epoch, loss| {
        let _ = writeln!(lock, "{epoch}\t{loss}");
    })?;
    save_bundle(&outcome.bundle, out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    config: Option<&Path>,
    checkpoint: &Path,
    target: &Path,
    kind: &str,
    shots: Option<usize>,
    tasks: Option<usize>,
    seeds: Option<&str>,
    out: &Path,
    variant: Option<&str>,
) -> Outcome {
    let kind = parse_kind(kind)?;
    let mut exp = load_config(config)?;
    overrides(&mut exp, shots, tasks, seeds, variant)?;
    let bundle = load_bundle(checkpoint)?;
    if exp.domain_token != bundle.config.domain_tokens {
        return Err(usage(format!(
            "variant {} expects a checkpoint pre-trained {} domain tokens",
            exp.variant()?,
            if exp.domain_token { "with" } else { "without" }
        )));
    }
    let target = TargetDomain::new(load_dataset(target)?, bundle.config.aligned_dim)?;
    let report = evaluate(&bundle, &target, &eval_config(&exp, kind))?;
    write_file(out, &report.to_tsv())?;
    println!("{}", report.summary());
    Ok(())
}

fn print_rows(rows: &[AblationRow]) {
    for r in rows {
        println!("{}\t{}", r.label, r.report.summary());
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    mode: &str,
    config: Option<&Path>,
    sources: &[PathBuf],
    target: &Path,
    kind: &str,
    shots: Option<usize>,
    tasks: Option<usize>,
    seeds: Option<&str>,
    values: Option<&str>,
    out: &Path,
) -> Outcome {
    if !matches!(mode, "data" | "model" | "shots" | "dim") {
        return Err(usage(format!("unknown ablation mode `{mode}` (expected data|model|shots|dim)")));
    }
    let kind = parse_kind(kind)?;
    let mut exp = load_config(config)?;
    overrides(&mut exp, shots, tasks, seeds, None)?;
    let datasets = load_all(sources)?;
    let target = load_dataset(target)?;
    let text = match mode {
        "data" => {
            let counts: Vec<usize> = (1..=datasets.len()).collect();
            let rows = run_data_ablation(&datasets, &target, &exp, kind, &counts)?;
            print_rows(&rows);
            table_to_text(&rows)
        }
        "model" => {
            let rows = run_model_ablation(&datasets, &target, &exp, kind, &Variant::ALL)?;
            print_rows(&rows);
            table_to_text(&rows)
        }
        "shots" => {
            let shots = parse_list(values.unwrap_or("1,3,5"), "shot")?;
            let bundle = pretrain(&datasets, &exp.pretrain_config(), |_, _| {})?.bundle;
            let points = sweep_shots(&bundle, &target, &eval_config(&exp, kind), &shots)?;
            sweep_to_csv("shots", &points)
        }
        _ => {
            let dims = parse_list(values.unwrap_or("16,32,50"), "dimension")?;
            let points = sweep_aligned_dim(&datasets, &target, &exp, kind, &dims)?;
            sweep_to_csv("aligned_dim", &points)
        }
    };
    write_file(out, &text)
}

fn cmd_gensynth(spec: &Path, out: &Path) -> Outcome {
    let spec = SynthSpec::load(spec)?;
    for ds in generate_all(&spec)? {
        println!("{}", write_dataset(&ds, out)?.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Pretrain {
            config,
            sources,
            out,
            variant,
        } => cmd_pretrain(config.as_deref(), sources, out, variant.as_deref()),
        Command::Eval {
            config,
            checkpoint,
            target,
            kind,
            shots,
            tasks,
            seeds,
            out,
            variant,
        } => cmd_eval(
            config.as_deref(),
            checkpoint,
            target,
            kind,
            *shots,
            *tasks,
            seeds.as_deref(),
            out,
            variant.as_deref(),
        ),
        Command::Ablate {
            mode,
            config,
            sources,
            target,
            kind,
            shots,
            tasks,
            seeds,
            values,
            out,
        } => cmd_ablate(
            mode,
            config.as_deref(),
            sources,
            target,
            kind,
            *shots,
            *tasks,
            seeds.as_deref(),
            values.as_deref(),
            out,
        ),
        Command::Gensynth { config, out } => cmd_gensynth(config, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("error: invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
