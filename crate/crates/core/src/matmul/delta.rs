use crate::error::{Error, Result};
use crate::matrix::{Matrix, TransformKind};

/// Plaintext transform-reduce-accumulate map.
///
/// `a_bar` is `d_out x d` with `d_in | d`, `b_bar` is `d_in x m` with `m <= d`.
/// For `o = 0..d_in` it takes the leading `d_out x m` window of `xi^o(sigma(a_bar))`
/// and of `psi^o(tau(b_bar))` (wrapping rows when `d_out > d_in`), and sums their
/// entrywise products. Built from the generic transforms on purpose; the kernels
/// use [`a_term`] and [`b_term`], which index directly.
pub fn delta_reference(a_bar: &Matrix, b_bar: &Matrix) -> Result<Matrix> {
    let (d_out, d) = a_bar.shape();
    let (d_in, m) = b_bar.shape();
    if d_out == 0 || d_in == 0 || m == 0 {
        return Err(Error::Plan("delta on an empty operand".into()));
    }
    if d % d_in != 0 {
        return Err(Error::Plan(format!("d_in = {d_in} does not divide width {d}")));
    }
    if m > d {
        return Err(Error::Plan(format!("batch {m} wider than packed width {d}")));
    }
    let sa = a_bar.transform(TransformKind::Sigma, 1);
    let tb = b_bar.transform(TransformKind::Tau, 1);
    let mut r = Matrix::zeros(d_out, m);
    for o in 0..d_in {
        let at = sa.transform(TransformKind::Xi, o).leading_block(d_out, m);
        let bt = tb.transform(TransformKind::Psi, o).leading_block(d_out, m);
        r = r.add(&at.hadamard(&bt)?)?;
    }
    Ok(r)
}

/// `A~(o)`: the `d_out x m` window of `xi^o(sigma(A || ... || A))`.
/// Horizontal copies of `A` make the packed matrix `d_in`-periodic in columns,
/// so entry `(j, k)` is `A[j, (j + k + o) mod d_in]`.
pub fn a_term(a: &Matrix, m: usize, o: usize) -> Matrix {
    let d_in = a.cols();
    Matrix::from_fn(a.rows(), m, |j, k| a.get(j, (j + k + o) % d_in))
}

/// `B~(o)`: the `d_out x m` window of `psi^o(tau(B))`, entry
/// `B[(j + k + o) mod d_in, k]`.
pub fn b_term(b: &Matrix, d_out: usize, o: usize) -> Matrix {
    let d_in = b.rows();
    Matrix::from_fn(d_out, b.cols(), |j, k| b.get((j + k + o) % d_in, k))
}
