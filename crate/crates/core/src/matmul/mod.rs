//! Packed homomorphic matrix multiplication: the squaring and reducing kernels,
//! their shared plan type, and the plaintext delta reference.

pub mod delta;
pub mod plan;
pub mod reducing;
pub mod squaring;

pub use delta::delta_reference;
pub use plan::{MatMulPlan, Method, RowBlock};

use crate::error::Result;
use crate::he::{CostMeter, Evaluator, HEParams, KeyPair};
use crate::matrix::Matrix;

/// Splits `total` columns into consecutive chunks of at most `cap`.
pub fn column_chunks(total: usize, cap: usize) -> Vec<(usize, usize)> {
    assert!(cap > 0, "chunk capacity must be positive");
    (0..total.div_ceil(cap)).map(|i| (i * cap, cap.min(total - i * cap))).collect()
}

/// Outcome of one end-to-end kernel evaluation.
#[derive(Clone, Debug)]
pub struct KernelRun {
    pub product: Matrix,
    /// Operations issued by the kernel itself (encryption excluded).
    pub kernel_cost: CostMeter,
    /// Everything, including client-side encryption and final decryption.
    pub total_cost: CostMeter,
    pub plan: MatMulPlan,
}

/// Encrypts `A` (and `B` when `encrypt_b`), runs one kernel and decrypts.
/// `B` may have fewer columns than its batch limit; the batch is `B.cols()`.
pub fn evaluate(method: Method, params: &HEParams, a: &Matrix, b: &Matrix, encrypt_b: bool) -> Result<KernelRun> {
    let mut ev = Evaluator::new(params.clone());
    let keys = KeyPair::generate(params.seed);
    let plan = MatMulPlan::new(method, a.rows(), a.cols(), b.cols(), params.slot_count)?;
    let (product, kernel_cost) = match method {
        Method::Squaring => {
            let lhs = squaring::encrypt_lhs(&mut ev, &keys.public, a, &plan)?;
            let rhs_ct = if encrypt_b { Some(squaring::encrypt_rhs(&mut ev, &keys.public, b, &plan)?) } else { None };
            let before = *ev.meter();
            let op = match &rhs_ct {
                Some(r) => squaring::SquaringRhsOperand::Encrypted(r),
                None => squaring::SquaringRhsOperand::Plain(b),
            };
            let cts = squaring::squaring_matmul(&mut ev, &lhs, op, &plan)?;
            let kernel = ev.meter().since(&before);
            (squaring::decrypt(&mut ev, &keys.secret, &cts, &plan)?, kernel)
        }
        Method::Reducing => {
            let lhs = reducing::encrypt_lhs(&mut ev, &keys.public, a, &plan)?;
            let rhs_ct = if encrypt_b { Some(reducing::encrypt_rhs(&mut ev, &keys.public, b, &plan)?) } else { None };
            let before = *ev.meter();
            let op = match &rhs_ct {
                Some(r) => reducing::ReducingRhsOperand::Encrypted(r),
                None => reducing::ReducingRhsOperand::Plain(b),
            };
            let ct = reducing::reducing_matmul(&mut ev, &lhs, op, &plan)?;
            let kernel = ev.meter().since(&before);
            (reducing::decrypt(&mut ev, &keys.secret, &ct, &plan)?, kernel)
        }
    };
    Ok(KernelRun { product, kernel_cost, total_cost: *ev.meter(), plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::DEFAULT_NOISE_STDDEV;
    use crate::matrix::matmul_oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chunks_cover_range() {
        assert_eq!(column_chunks(10, 4), vec![(0, 4), (4, 4), (8, 2)]);
        assert_eq!(column_chunks(4, 4), vec![(0, 4)]);
        assert!(column_chunks(0, 3).is_empty());
    }

    #[test]
    fn noisy_kernels_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = HEParams { slot_count: 2048, noise_stddev: DEFAULT_NOISE_STDDEV, seed: 3 };
        let a = Matrix::from_fn(10, 64, |_, _| rng.random_range(-1.0..1.0));
        for method in [Method::Squaring, Method::Reducing] {
            let m = MatMulPlan::max_batch(method, 10, 64, 2048);
            let b = Matrix::from_fn(64, m, |_, _| rng.random_range(-1.0..1.0));
            let run = evaluate(method, &params, &a, &b, true).unwrap();
            let err = run.product.relative_frobenius_error(&matmul_oracle(&a, &b).unwrap()).unwrap();
            assert!(err < 1e-6, "{method:?}: {err}");
            assert!(err > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn kernels_agree_with_oracle(seed in any::<u64>(), d_in in 1usize..40, d_out_frac in 0.0f64..1.0, m_frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d_out = 1 + ((d_in - 1) as f64 * d_out_frac) as usize;
            let params = HEParams { slot_count: 256, noise_stddev: 0.0, seed };
            let a = Matrix::from_fn(d_out, d_in, |_, _| rng.random_range(-3i32..=3) as f64);
            for method in [Method::Squaring, Method::Reducing] {
                let cap = MatMulPlan::max_batch(method, d_out, d_in, 256);
                let m = 1 + ((cap - 1) as f64 * m_frac) as usize;
                let b = Matrix::from_fn(d_in, m, |_, _| rng.random_range(-3i32..=3) as f64);
                let run = evaluate(method, &params, &a, &b, true).unwrap();
                prop_assert_eq!(&run.product, &matmul_oracle(&a, &b).unwrap());
                prop_assert_eq!(run.kernel_cost.hmult(), run.plan.expected_hmult());
                prop_assert_eq!(run.kernel_cost.hrot, run.plan.expected_hrot());
            }
        }
    }
}
