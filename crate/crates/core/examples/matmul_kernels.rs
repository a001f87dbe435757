//! Runs both packed homomorphic matmul kernels on one shape and compares
//! their operation counts and accuracy against plaintext.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secsv::he::{CostWeights, HEParams, DEFAULT_NOISE_STDDEV};
use secsv::matmul::{evaluate, MatMulPlan, Method};
use secsv::matrix::Matrix;

fn main() -> secsv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d_out, d_in, slots) = (10, 64, 2048);
    let params = HEParams::new(slots, DEFAULT_NOISE_STDDEV, 1)?;
    let a = Matrix::from_fn(d_out, d_in, |_, _| rng.random_range(-1.0..1.0));
    let weights = CostWeights::default();

    for method in [Method::Squaring, Method::Reducing] {
        let batch = MatMulPlan::max_batch(method, d_out, d_in, slots);
        let b = Matrix::from_fn(d_in, batch, |_, _| rng.random_range(-1.0..1.0));
        let run = evaluate(method, &params, &a, &b, false)?;
        let err = run.product.sub(&a.matmul(&b)?)?.max_abs();
        let k = run.kernel_cost;
        println!(
            "{method:?}: batch {batch}, HMult {}, HRot {}, weighted/sample {:.3}, max error {err:.2e}",
            k.hmult(),
            k.hrot,
            k.weighted(&weights) / batch as f64,
        );
    }
    Ok(())
}
