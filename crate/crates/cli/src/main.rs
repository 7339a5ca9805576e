use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dibod::harness::{self, RunConfig};
use dibod::objectives::Ablation;
use dibod::par::Exec;
use dibod::Error;

#[derive(Parser)]
#[command(name = "dibod", version, about = "Multi-view IB pretraining with online distillation for graph transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-fold pretraining on the source dataset.
    Pretrain(RunArgs),
    /// Frozen-teacher adaptation on the target dataset.
    Adapt {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the configured pretraining fold's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Every ablation variant with shared fold seeds.
    Ablate(RunArgs),
    /// Extracts the MI columns of metrics logs into one CSV.
    MiCurve {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Writes to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Runs the exact lemma and theorem checks and prints JSON.
    OracleCheck {
        /// Joint table (JSON) to check as well.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    max_folds: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    /// Runs folds one after another.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, Exec), Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(m) = self.max_folds {
            cfg.max_folds = Some(m);
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(a) = &self.ablation {
            cfg.ablation = Ablation::parse(a)?;
        }
        cfg.validate()?;
        let exec = if self.sequential { Exec::Sequential } else { Exec::Parallel };
        Ok((cfg, exec))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Io { .. }
        | Error::Format { .. }
        | Error::Fingerprint { .. }
        | Error::Table(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn print_report(r: &harness::RunReport, path: &Path) {
    println!("{} [{}]: {}", r.command, r.ablation.name(), r.cell());
    println!("folds: {:?}", r.accuracies);
    println!("fingerprint: {}", r.fingerprint);
    println!("report: {}", path.display());
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Pretrain(args) => {
            let (cfg, exec) = args.resolve()?;
            let r = harness::cmd_pretrain(&cfg, exec)?;
            print_report(&r, &cfg.output_dir.join("pretrain/report.json"));
        }
        Command::Adapt { run, checkpoint } => {
            let (cfg, exec) = run.resolve()?;
            let ck = checkpoint.unwrap_or_else(|| harness::default_checkpoint(&cfg));
            let r = harness::cmd_adapt(&cfg, &ck, exec)?;
            print_report(&r, &cfg.output_dir.join(format!("adapt/{}/report.json", cfg.ablation.name())));
        }
        Command::Ablate(args) => {
            let (cfg, exec) = args.resolve()?;
            let t = harness::cmd_ablate(&cfg, exec)?;
            print!("{}", t.render());
        }
        Command::MiCurve { logs, output } => {
            let csv = harness::cmd_mi_curve(&logs)?;
            match output {
                Some(p) => std::fs::write(&p, csv).map_err(|e| Error::Io { path: p, source: e })?,
                None => print!("{csv}"),
            }
        }
        Command::OracleCheck { table, seed } => {
            let r = harness::cmd_oracle_check(seed, table.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.all_pass {
                let failed: Vec<&str> = r.entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect();
                eprintln!("failed checks: {}", failed.join(", "));
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
