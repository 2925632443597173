//! Compare analytic gradients with central differences, parameter by
//! parameter, on a 9→8→8→1 network.
//!
//! cargo run --example finite_difference

use evtol_surrogate::nn::{backward, dataset_loss, Dataset, MlpModel, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> evtol_surrogate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = MlpModel::he_uniform(MlpSpec::new(9, 2, 8)?, 0);
    let mut theta = model.flat_params();
    theta.iter_mut().for_each(|p| *p += rng.random_range(-0.1..0.1));
    model.set_flat_params(&theta)?;
    let inputs = (0..16 * 9).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data = Dataset::new(9, inputs, targets)?;

    let (loss, grads) = backward(&model, &data)?;
    let analytic = grads.flat();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &g) in analytic.iter().enumerate() {
        let h = 1e-6 * (1.0 + theta[k].abs());
        let mut p = theta.clone();
        p[k] += h;
        probe.set_flat_params(&p)?;
        let up = dataset_loss(&probe, &data)?;
        p[k] = theta[k] - h;
        probe.set_flat_params(&p)?;
        let numeric = (up - dataset_loss(&probe, &data)?) / (2.0 * h);
        let scale = g.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    println!("loss {loss:.6}, {} parameters, max relative error {worst:.2e}", analytic.len());
    Ok(())
}
