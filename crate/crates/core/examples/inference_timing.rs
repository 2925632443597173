//! Parameter count and single-row latency across the architecture grid.
//!
//! cargo run --release --example inference_timing

use evtol_surrogate::experiment::full_grid;
use evtol_surrogate::metrics::time_inference;
use evtol_surrogate::nn::MlpModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> evtol_surrogate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:<14} {:>8} {:>10} {:>8}", "model", "params", "us/row", "std");
    for cell in full_grid() {
        let model = MlpModel::he_uniform(cell.spec()?, 1);
        let dim = model.spec.input_dim;
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let t = time_inference(&model, &rows, 1000)?;
        println!("{:<14} {:>8} {:>10.4} {:>8.4}", cell.tag(), model.param_count(), t.mean_us, t.std_us);
    }
    Ok(())
}
