//! Additive sharing over a Mersenne field and a Beaver-triple matrix product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secsv::matrix::Matrix;
use secsv::sharing::{reconstruct, share_matmul, split, FieldParams, SharedMatrix, TripleDealer};

fn main() -> secsv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let field = FieldParams::for_frac_bits(16)?;
    println!("p = 2^{} - 1, f = {}", field.bits(), field.frac_bits());

    let pair = split(&field, -3.25, &mut rng)?;
    println!("shares of -3.25: {} + {} -> {}", pair.s_prime, pair.s_dprime, reconstruct(&field, pair));

    let w = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
    let x = Matrix::from_fn(4, 5, |_, _| rng.random_range(-2.0..2.0));
    let ws = SharedMatrix::split(&field, &w, &mut rng)?;
    let xs = SharedMatrix::split(&field, &x, &mut rng)?;
    let mut dealer = TripleDealer::new(field, 9, None);
    let triple = dealer.matrix_triple(3, 4, 5)?;
    let z = share_matmul(&field, &ws, &xs, &triple)?.reconstruct(&field)?;
    let err = z.sub(&w.matmul(&x)?)?.max_abs();
    println!("Beaver product of 3x4 and 4x5: max error {err:.2e}");
    println!("dealer issued {} multiplications, {} bytes", dealer.issued_mults(), dealer.issued_bytes());
    Ok(())
}
