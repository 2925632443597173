use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evtol_surrogate::experiment::{self, ExperimentConfig, RunOptions};
use evtol_surrogate::metrics::EvalReport;
use evtol_surrogate::Error;

/// Train and compare FNN and physics-informed residual battery voltage
/// surrogates.
///
/// Exit codes: 0 success, 1 config error, 2 data error, 3 a grid cell failed.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    config: Option<PathBuf>,
    /// Same as the positional argument.
    #[arg(long = "config", value_name = "PATH", conflicts_with = "config")]
    config_flag: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Grid cells trained concurrently.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Glob over model tags, e.g. `PINN-*`.
    #[arg(long, value_name = "GLOB")]
    filter: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions), Error> {
        let path = self
            .config
            .as_ref()
            .or(self.config_flag.as_ref())
            .ok_or_else(|| Error::Config("no config file given".into()))?;
        let cfg = ExperimentConfig::load(path)?;
        let opts = RunOptions {
            out: self.out.clone(),
            jobs: self.jobs,
            seed: self.seed,
            filter: self.filter.clone(),
        };
        Ok((cfg, opts))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every grid cell; writes results.csv and per-model files.
    Run(ConfigArgs),
    /// Identify the circuit parameters from the training traces.
    FitEcm(ConfigArgs),
    /// Write the synthetic train/test traces as canonical CSV.
    Synth(ConfigArgs),
    /// Evaluate saved weights on a canonical CSV.
    Eval {
        weights: PathBuf,
        data: PathBuf,
        /// Also write the per-step trace CSV here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Time single-row inference of saved weights.
    Bench {
        weights: PathBuf,
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, opts) = args.load()?;
            let summary = experiment::run(&cfg, &opts)?;
            eprintln!(
                "{} train rows, {} test rows -> {}",
                summary.train_rows,
                summary.test_rows,
                summary.output_dir.display()
            );
            println!("{}", EvalReport::csv_header());
            for r in &summary.results {
                println!("{}", r.report.csv_row());
            }
            for f in &summary.failures {
                eprintln!("{} failed: {}", f.cell, f.error);
            }
            Ok(summary.exit_code() as u8)
        }
        Command::FitEcm(args) => {
            let (cfg, opts) = args.load()?;
            let (report, path) = experiment::fit_ecm(&cfg, &opts)?;
            let p = &report.params;
            println!("r0 = {:.6} ohm", p.r0);
            for (j, b) in p.branches.iter().enumerate() {
                println!("branch {}: r = {:.6} ohm, tau = {:.3} s", j + 1, b.r, b.tau);
            }
            println!("relaxation residual rms = {:.3} mV", 1e3 * report.residual_rms);
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::Synth(args) => {
            let (cfg, opts) = args.load()?;
            let (train, test, splits) = experiment::synth(&cfg, &opts)?;
            let count = |t: &[evtol_surrogate::data::CycleTrace]| t.iter().map(|c| c.samples.len()).sum::<usize>();
            println!("{} train samples -> {}", count(&splits.train), train.display());
            println!("{} test samples -> {}", count(&splits.test), test.display());
            Ok(0)
        }
        Command::Eval { weights, data, out } => {
            let report = experiment::eval_weights(&weights, &data, out.as_deref())?;
            println!("{}", EvalReport::csv_header());
            println!("{}", report.csv_row());
            Ok(0)
        }
        Command::Bench {
            weights,
            rows,
            repetitions,
            seed,
        } => {
            let (tag, t) = experiment::bench_weights(&weights, rows, repetitions, seed)?;
            println!(
                "{tag}: {:.4} us/row (std {:.4}, {} rows x {} repetitions)",
                t.mean_us, t.std_us, t.rows, t.repetitions
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
