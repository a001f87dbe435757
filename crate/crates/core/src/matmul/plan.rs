use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::isqrt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Squaring,
    Reducing,
}

/// One horizontal band of `A` handled by the squaring kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlock {
    /// First row of `A` in this band.
    pub start: usize,
    /// Live rows `a`.
    pub rows: usize,
    /// Padded rows `a'`: the smallest divisor of the block side that is `>= a`.
    pub padded_rows: usize,
}

impl RowBlock {
    /// Copies of the padded band stacked into one square block.
    pub fn copies(&self, side: usize) -> usize {
        side / self.padded_rows
    }
}

/// Shape bookkeeping for evaluating `A (d_out x d_in) * B (d_in x m)` in `N` slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatMulPlan {
    pub method: Method,
    pub d_out: usize,
    pub d_in: usize,
    pub m: usize,
    pub slots: usize,
    /// Squaring: side `s` of the square blocks.
    pub side: usize,
    /// Squaring: column blocks `K` of `A` (row blocks of `B`).
    pub k_blocks: usize,
    /// Squaring: bands of rows of `A`; `J` is their count.
    pub row_blocks: Vec<RowBlock>,
    /// Reducing: horizontal copies of `A`, `ceil(m / d_in)`.
    pub copies: usize,
}

fn smallest_divisor_at_least(n: usize, a: usize) -> usize {
    (a.max(1)..=n).find(|d| n.is_multiple_of(*d)).unwrap_or(n)
}

impl MatMulPlan {
    pub fn squaring(d_out: usize, d_in: usize, m: usize, slots: usize) -> Result<Self> {
        check_dims(d_out, d_in, m)?;
        let root = isqrt(slots);
        let side = d_in.min(root);
        let cap = Self::max_batch(Method::Squaring, d_out, d_in, slots);
        if m > cap {
            return Err(Error::Plan(format!("squaring batch {m} exceeds min(d_in, floor(sqrt(N))) = {cap}")));
        }
        let k_blocks = d_in.div_ceil(side);
        let row_blocks = (0..d_out.div_ceil(side))
            .map(|j| {
                let start = j * side;
                let rows = side.min(d_out - start);
                RowBlock { start, rows, padded_rows: smallest_divisor_at_least(side, rows) }
            })
            .collect();
        Ok(MatMulPlan { method: Method::Squaring, d_out, d_in, m, slots, side, k_blocks, row_blocks, copies: 1 })
    }

    pub fn reducing(d_out: usize, d_in: usize, m: usize, slots: usize) -> Result<Self> {
        check_dims(d_out, d_in, m)?;
        let cap = Self::max_batch(Method::Reducing, d_out, d_in, slots);
        if m > cap {
            return Err(Error::Plan(format!("reducing batch {m} exceeds floor(N / d_out) = {cap}")));
        }
        Ok(MatMulPlan {
            method: Method::Reducing,
            d_out,
            d_in,
            m,
            slots,
            side: 0,
            k_blocks: 0,
            row_blocks: Vec::new(),
            copies: m.div_ceil(d_in),
        })
    }

    pub fn new(method: Method, d_out: usize, d_in: usize, m: usize, slots: usize) -> Result<Self> {
        match method {
            Method::Squaring => Self::squaring(d_out, d_in, m, slots),
            Method::Reducing => Self::reducing(d_out, d_in, m, slots),
        }
    }

    /// Largest legal batch for a kernel.
    pub fn max_batch(method: Method, d_out: usize, d_in: usize, slots: usize) -> usize {
        match method {
            Method::Squaring => d_in.min(isqrt(slots)),
            Method::Reducing => slots / d_out.max(1),
        }
    }

    pub fn j_blocks(&self) -> usize {
        self.row_blocks.len()
    }

    /// Predicted multiplications. Squaring: `sum_j a'_j * K`; reducing: `d_in`.
    pub fn expected_hmult(&self) -> u64 {
        match self.method {
            Method::Squaring => {
                self.row_blocks.iter().map(|b| b.padded_rows as u64).sum::<u64>() * self.k_blocks as u64
            }
            Method::Reducing => self.d_in as u64,
        }
    }

    /// Predicted rotations of one `(j, k)` block with `q` stacked copies.
    pub fn rotations_per_block(q: usize) -> u64 {
        if q <= 1 {
            return 0;
        }
        let d = usize::BITS - 1 - q.leading_zeros();
        d as u64 + (q - (1usize << d)) as u64
    }

    pub fn expected_hrot(&self) -> u64 {
        match self.method {
            Method::Squaring => {
                self.row_blocks.iter().map(|b| Self::rotations_per_block(b.copies(self.side))).sum::<u64>()
                    * self.k_blocks as u64
            }
            Method::Reducing => 0,
        }
    }

    /// Output ciphertexts: `J` for squaring, one for reducing.
    pub fn output_ciphertexts(&self) -> usize {
        match self.method {
            Method::Squaring => self.j_blocks(),
            Method::Reducing => 1,
        }
    }
}

fn check_dims(d_out: usize, d_in: usize, m: usize) -> Result<()> {
    if d_out == 0 || d_in == 0 || m == 0 {
        return Err(Error::Plan(format!("degenerate shape {d_out}x{d_in} with batch {m}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // (d_out, d_in, HMult, HRot) frozen from a hand derivation of the block
    // layout at N = 2048 (side 45 unless d_in is smaller).
    const BENCH: [(usize, usize, u64, u64); 7] = [
        (4, 300, 35, 28),
        (2, 48, 6, 20),
        (64, 256, 540, 0),
        (10, 64, 30, 4),
        (32, 64, 90, 0),
        (32, 32, 32, 0),
        (2, 32, 2, 4),
    ];

    #[test]
    fn frozen_squaring_costs() {
        for (d_out, d_in, hm, hr) in BENCH {
            let m = MatMulPlan::max_batch(Method::Squaring, d_out, d_in, 2048);
            let p = MatMulPlan::squaring(d_out, d_in, m, 2048).unwrap();
            assert_eq!((p.expected_hmult(), p.expected_hrot()), (hm, hr), "{d_out}x{d_in}");
        }
        let p = MatMulPlan::squaring(64, 256, 45, 2048).unwrap();
        assert_eq!((p.j_blocks(), p.k_blocks), (2, 6));
    }

    #[test]
    fn small_example_plan() {
        let p = MatMulPlan::squaring(2, 4, 3, 16).unwrap();
        assert_eq!((p.side, p.k_blocks, p.j_blocks()), (4, 1, 1));
        assert_eq!((p.expected_hmult(), p.expected_hrot()), (2, 1));
    }

    #[test]
    fn rotation_formula() {
        let got: Vec<u64> = (1..=9).map(MatMulPlan::rotations_per_block).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 3, 4, 5, 3, 4]);
    }

    #[test]
    fn batch_limits() {
        assert_eq!(MatMulPlan::max_batch(Method::Reducing, 4, 300, 2048), 512);
        assert_eq!(MatMulPlan::max_batch(Method::Reducing, 10, 64, 2048), 204);
        assert!(MatMulPlan::reducing(4, 300, 513, 2048).is_err());
        assert!(MatMulPlan::squaring(2, 32, 33, 2048).is_err());
        let r = MatMulPlan::reducing(2, 4, 6, 16).unwrap();
        assert_eq!((r.copies, r.expected_hmult(), r.expected_hrot()), (2, 4, 0));
    }

    #[test]
    fn unit_shape_is_one_multiply() {
        for method in [Method::Squaring, Method::Reducing] {
            let p = MatMulPlan::new(method, 1, 1, 1, 2048).unwrap();
            assert_eq!((p.expected_hmult(), p.expected_hrot()), (1, 0));
        }
    }
}
