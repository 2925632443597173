//! Run an experiment config over its architecture grid and print the
//! results table.
//!
//! cargo run --release --example grid_experiment -- configs/synthetic.toml 'PINN-*'

use std::path::PathBuf;

use evtol_surrogate::experiment::{run, ExperimentConfig, RunOptions};
use evtol_surrogate::metrics::EvalReport;

fn main() -> evtol_surrogate::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("configs/synthetic.toml"));
    let opts = RunOptions { filter: args.next(), ..RunOptions::default() };
    let cfg = ExperimentConfig::load(&config)?;
    let summary = run(&cfg, &opts)?;
    println!("{}", EvalReport::csv_header());
    for r in &summary.results {
        println!("{}", r.report.csv_row());
    }
    for f in &summary.failures {
        eprintln!("{} failed: {}", f.cell, f.error);
    }
    println!("artifacts in {}", summary.output_dir.display());
    Ok(())
}
