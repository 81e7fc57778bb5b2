use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meprop::harness::bench::{bench_backprop, bench_table, BenchConfig};
use meprop::harness::config::{ExperimentConfig, Mode, Task};
use meprop::harness::report::render;
use meprop::harness::{report, run, sweep};
use meprop::layers::mlp::Selection;
use meprop::Error;

#[derive(Parser)]
#[command(name = "meprop", version, about = "Train, benchmark and compare sparsified back propagation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv, summary.json and model.ckpt.
    Train(RunArgs),
    /// Train several consecutive seeds and keep the best by dev accuracy.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Time full and meProp backward passes of one linear layer.
    Bench(BenchArgs),
    /// Print summaries (files or run directories) as a table.
    Report { paths: Vec<PathBuf> },
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown selection `{s}` (per_example or unified)"))
}

/// A comma-separated list of sizes, e.g. `500,500`.
#[derive(Clone, Debug)]
struct Sizes(Vec<usize>);

impl std::str::FromStr for Sizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()
            .map(Sizes)
    }
}

/// Every field overrides the same-named field of `--config`.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated hidden sizes, e.g. 500,500.
    #[arg(long)]
    hidden: Option<Sizes>,
    #[arg(long)]
    prune_rate: Option<f64>,
    #[arg(long)]
    prune_interval: Option<usize>,
    #[arg(long)]
    cycle_epochs: Option<usize>,
    #[arg(long)]
    simplify_epochs: Option<usize>,
    #[arg(long)]
    meact_p: Option<f64>,
    #[arg(long)]
    meact_e: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_selection)]
    selection: Option<Selection>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<ExperimentConfig, Error> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if self.$f.is_some() { c.$f = self.$f; })* };
        }
        set!(task, mode, cycle_epochs, simplify_epochs, epochs, batch_size, seed, selection, mnist_dir, out);
        if let Some(h) = self.hidden {
            c.hidden = Some(h.0);
        }
        set_opt!(k, prune_rate, prune_interval, meact_p, meact_e, dropout, train_limit, name);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated layer sizes.
    #[arg(long, default_value = "500")]
    hidden: Sizes,
    /// Comma-separated k values.
    #[arg(long, default_value = "20,80,500")]
    k: Sizes,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write bench.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let s = run(&args.resolve()?)?;
            print!("{}", render(std::slice::from_ref(&s)));
            println!("wrote {}", s.config.out.display());
        }
        Command::Sweep { run, seeds } => {
            let s = sweep(&run.resolve()?, seeds)?;
            print!("{}", render(&s.runs));
            println!("best: {}", s.runs[s.best].name);
        }
        Command::Bench(b) => {
            let config = BenchConfig {
                hidden: b.hidden.0,
                ks: b.k.0,
                repetitions: b.repetitions,
                batch_size: b.batch_size,
                seed: b.seed,
            };
            let rows = bench_backprop(&config)?;
            print!("{}", bench_table(&rows));
            if let Some(dir) = b.out {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let p = dir.join("bench.json");
                fs::write(&p, serde_json::to_string_pretty(&rows)?)
                    .map_err(|e| Error::io(&p, e))?;
            }
        }
        Command::Report { paths } => print!("{}", report(&paths)?),
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
