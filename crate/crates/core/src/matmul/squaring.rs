//! Block-extended squaring kernel.
//!
//! For each band `j` of `A` and each column block `k`, the band is padded to
//! `a'` rows, stacked `q = s / a'` times into an `s x s` block `A_bar`, and
//! multiplied against the matching `s x s` block `B_bar` of `B`:
//!
//! `H = sum_{o < a'} xi^o(sigma(A_bar)) . psi^o(tau(B_bar))`
//!
//! The band product then sits in the first `a'` rows of
//! `sum_{c < q} Rot(H, a' s c)`, which is accumulated with repeated doubling.
//! Column blocks are summed, giving one ciphertext per band.

use crate::error::{Error, Result};
use crate::he::{ciphertext_bytes, CipherVector, Evaluator, PublicKey, SecretKey};
use crate::matmul::plan::{MatMulPlan, Method, RowBlock};
use crate::matrix::{tile, Axis, Matrix, TransformKind};

/// Encrypted, pre-transformed model side: `terms[j][k][o]`.
#[derive(Clone, Debug)]
pub struct SquaringLhs {
    terms: Vec<Vec<Vec<CipherVector>>>,
}

/// Encrypted, pre-transformed data side: `terms[k][o]` for `o < max a'`.
#[derive(Clone, Debug)]
pub struct SquaringRhs {
    terms: Vec<Vec<CipherVector>>,
}

pub enum SquaringRhsOperand<'a> {
    Plain(&'a Matrix),
    Encrypted(&'a SquaringRhs),
}

impl SquaringLhs {
    pub fn ciphertext_count(&self) -> usize {
        self.terms.iter().flatten().map(Vec::len).sum()
    }

    pub fn wire_bytes(&self) -> u64 {
        self.terms.iter().flatten().flatten().map(|c| ciphertext_bytes(c.slot_count())).sum()
    }

    /// Homomorphic `sum_i w_i * lhs_i` over models prepared for the same plan.
    pub fn weighted_sum(ev: &mut Evaluator, parts: &[(&SquaringLhs, f64)]) -> Result<SquaringLhs> {
        let first = parts.first().ok_or_else(|| Error::Shape("empty aggregation".into()))?.0;
        if parts.iter().any(|(p, _)| p.ciphertext_count() != first.ciphertext_count()) {
            return Err(Error::Plan("aggregated models were prepared for different plans".into()));
        }
        let mut terms = first.terms.clone();
        for (j, per_k) in terms.iter_mut().enumerate() {
            for (k, per_o) in per_k.iter_mut().enumerate() {
                for (o, slot) in per_o.iter_mut().enumerate() {
                    let cts: Vec<(&CipherVector, f64)> = parts.iter().map(|(p, w)| (&p.terms[j][k][o], *w)).collect();
                    *slot = ev.weighted_sum(&cts)?;
                }
            }
        }
        Ok(SquaringLhs { terms })
    }
}

impl SquaringRhs {
    pub fn ciphertext_count(&self) -> usize {
        self.terms.iter().map(Vec::len).sum()
    }

    pub fn wire_bytes(&self) -> u64 {
        self.terms.iter().flatten().map(|c| ciphertext_bytes(c.slot_count())).sum()
    }
}

fn require_squaring(plan: &MatMulPlan) -> Result<()> {
    if plan.method != Method::Squaring {
        return Err(Error::Plan("plan was not built for the squaring kernel".into()));
    }
    Ok(())
}

fn stacked_block(a: &Matrix, band: &RowBlock, k: usize, side: usize) -> Result<Matrix> {
    let a_prime = a.block_zero_padded(band.start, k * side, band.rows, side).zero_padded(band.padded_rows, side);
    tile(&a_prime, band.copies(side), Axis::Vertical)
}

/// `xi^o(sigma(A_bar))` for `o < a'`.
pub fn lhs_block_terms(a: &Matrix, plan: &MatMulPlan, band: &RowBlock, k: usize) -> Result<Vec<Matrix>> {
    let sigma = stacked_block(a, band, k, plan.side)?.transform(TransformKind::Sigma, 1);
    Ok((0..band.padded_rows).map(|o| sigma.transform(TransformKind::Xi, o)).collect())
}

/// `psi^o(tau(B_bar))` for `o < count`.
pub fn rhs_block_terms(b: &Matrix, plan: &MatMulPlan, k: usize, count: usize) -> Vec<Matrix> {
    let s = plan.side;
    let tau = b.block_zero_padded(k * s, 0, s, s).transform(TransformKind::Tau, 1);
    (0..count).map(|o| tau.transform(TransformKind::Psi, o)).collect()
}

fn max_padded(plan: &MatMulPlan) -> usize {
    plan.row_blocks.iter().map(|b| b.padded_rows).max().unwrap_or(0)
}

fn check_operands(plan: &MatMulPlan, a: Option<&Matrix>, b: Option<&Matrix>) -> Result<()> {
    if let Some(a) = a {
        if a.shape() != (plan.d_out, plan.d_in) {
            return Err(Error::Shape(format!(
                "A is {}x{}, plan expects {}x{}",
                a.rows(),
                a.cols(),
                plan.d_out,
                plan.d_in
            )));
        }
    }
    if let Some(b) = b {
        if b.rows() != plan.d_in || b.cols() > plan.m {
            return Err(Error::Shape(format!(
                "B is {}x{}, plan expects {} rows and at most {} columns",
                b.rows(),
                b.cols(),
                plan.d_in,
                plan.m
            )));
        }
    }
    Ok(())
}

pub fn encrypt_lhs(ev: &mut Evaluator, pk: &PublicKey, a: &Matrix, plan: &MatMulPlan) -> Result<SquaringLhs> {
    require_squaring(plan)?;
    check_operands(plan, Some(a), None)?;
    let mut terms = Vec::with_capacity(plan.j_blocks());
    for band in &plan.row_blocks {
        let mut per_k = Vec::with_capacity(plan.k_blocks);
        for k in 0..plan.k_blocks {
            let cts = lhs_block_terms(a, plan, band, k)?
                .iter()
                .map(|t| ev.encrypt(pk, t.data()))
                .collect::<Result<Vec<_>>>()?;
            per_k.push(cts);
        }
        terms.push(per_k);
    }
    Ok(SquaringLhs { terms })
}

pub fn encrypt_rhs(ev: &mut Evaluator, pk: &PublicKey, b: &Matrix, plan: &MatMulPlan) -> Result<SquaringRhs> {
    require_squaring(plan)?;
    check_operands(plan, None, Some(b))?;
    let count = max_padded(plan);
    let terms = (0..plan.k_blocks)
        .map(|k| {
            rhs_block_terms(b, plan, k, count).iter().map(|t| ev.encrypt(pk, t.data())).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SquaringRhs { terms })
}

/// `sum_{c < q} Rot(h, stride * c)` with `floor(log2 q)` doublings and
/// `q - 2^floor(log2 q)` single rotations.
fn rotate_and_sum(ev: &mut Evaluator, h: &CipherVector, q: usize, stride: usize) -> Result<CipherVector> {
    if q <= 1 {
        return Ok(h.clone());
    }
    let mut acc = h.clone();
    let mut covered = 1usize;
    while covered * 2 <= q {
        let rotated = ev.rotate(&acc, (stride * covered) as i64);
        ev.add_assign(&mut acc, &rotated)?;
        covered *= 2;
    }
    for c in covered..q {
        let rotated = ev.rotate(h, (stride * c) as i64);
        ev.add_assign(&mut acc, &rotated)?;
    }
    Ok(acc)
}

/// Runs the kernel; returns one ciphertext per band of `A`.
pub fn squaring_matmul(
    ev: &mut Evaluator,
    lhs: &SquaringLhs,
    rhs: SquaringRhsOperand<'_>,
    plan: &MatMulPlan,
) -> Result<Vec<CipherVector>> {
    require_squaring(plan)?;
    if lhs.terms.len() != plan.j_blocks() {
        return Err(Error::Plan("model ciphertexts were prepared for a different plan".into()));
    }
    let s = plan.side;
    let plain_terms: Option<Vec<Vec<Matrix>>> = match rhs {
        SquaringRhsOperand::Plain(b) => {
            check_operands(plan, None, Some(b))?;
            let count = max_padded(plan);
            Some((0..plan.k_blocks).map(|k| rhs_block_terms(b, plan, k, count)).collect())
        }
        SquaringRhsOperand::Encrypted(r) => {
            if r.terms.len() != plan.k_blocks {
                return Err(Error::Plan("data ciphertexts were prepared for a different plan".into()));
            }
            None
        }
    };

    let mut out = Vec::with_capacity(plan.j_blocks());
    for (j, band) in plan.row_blocks.iter().enumerate() {
        let mut band_acc: Option<CipherVector> = None;
        for k in 0..plan.k_blocks {
            let mut h: Option<CipherVector> = None;
            for o in 0..band.padded_rows {
                let a_ct = &lhs.terms[j][k][o];
                let prod = match (&plain_terms, &rhs) {
                    (Some(pt), _) => ev.mult_plain(a_ct, pt[k][o].data())?,
                    (None, SquaringRhsOperand::Encrypted(r)) => ev.mult(a_ct, &r.terms[k][o])?,
                    (None, SquaringRhsOperand::Plain(_)) => unreachable!("plain terms prepared above"),
                };
                match h.as_mut() {
                    None => h = Some(prod),
                    Some(acc) => ev.add_assign(acc, &prod)?,
                }
            }
            let h = h.expect("a' >= 1");
            let extracted = rotate_and_sum(ev, &h, band.copies(s), band.padded_rows * s)?;
            match band_acc.as_mut() {
                None => band_acc = Some(extracted),
                Some(acc) => ev.add_assign(acc, &extracted)?,
            }
        }
        out.push(band_acc.expect("K >= 1"));
    }
    Ok(out)
}

/// Reassembles the `d_out x m` product from per-band decrypted slots.
pub fn decode(plan: &MatMulPlan, band_slots: &[Vec<f64>]) -> Result<Matrix> {
    if band_slots.len() != plan.j_blocks() {
        return Err(Error::Length(band_slots.len(), plan.j_blocks()));
    }
    let s = plan.side;
    let mut out = Matrix::zeros(plan.d_out, plan.m);
    for (band, slots) in plan.row_blocks.iter().zip(band_slots) {
        for r in 0..band.rows {
            for c in 0..plan.m {
                out.set(band.start + r, c, slots[r * s + c]);
            }
        }
    }
    Ok(out)
}

pub fn decrypt(ev: &mut Evaluator, sk: &SecretKey, cts: &[CipherVector], plan: &MatMulPlan) -> Result<Matrix> {
    let slots = cts.iter().map(|ct| ev.decrypt(sk, ct)).collect::<Result<Vec<_>>>()?;
    decode(plan, &slots)
}
