//! Rotation-free reducing kernel.
//!
//! The model owner packs `ceil(m / d_in)` copies of `A` side by side, applies
//! `xi^o(sigma(.))` and keeps the leading `d_out x m` window for each
//! `o < d_in`, then encrypts those `d_in` windows once. The evaluator builds the
//! matching `B~(o)` windows from its plaintext `B` and accumulates `d_in`
//! entrywise products into a single ciphertext.

use crate::error::{Error, Result};
use crate::he::{ciphertext_bytes, CipherVector, Evaluator, PublicKey, SecretKey};
use crate::matmul::delta::{a_term, b_term};
use crate::matmul::plan::{MatMulPlan, Method};
use crate::matrix::Matrix;

/// The `d_in` encrypted `A~(o)` windows for one model layer and batch width.
#[derive(Clone, Debug)]
pub struct ReducingLhs {
    d_out: usize,
    d_in: usize,
    m: usize,
    terms: Vec<CipherVector>,
}

impl ReducingLhs {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.m
    }

    pub fn wire_bytes(&self) -> u64 {
        self.terms.iter().map(|c| ciphertext_bytes(c.slot_count())).sum()
    }

    /// Homomorphic `sum_i w_i * lhs_i` over models prepared for the same plan.
    pub fn weighted_sum(ev: &mut Evaluator, parts: &[(&ReducingLhs, f64)]) -> Result<ReducingLhs> {
        let first = parts.first().ok_or_else(|| Error::Shape("empty aggregation".into()))?.0;
        if parts.iter().any(|(p, _)| (p.d_out, p.d_in, p.m) != (first.d_out, first.d_in, first.m)) {
            return Err(Error::Plan("aggregated models were prepared for different plans".into()));
        }
        let terms = (0..first.terms.len())
            .map(|o| {
                let cts: Vec<(&CipherVector, f64)> = parts.iter().map(|(p, w)| (&p.terms[o], *w)).collect();
                ev.weighted_sum(&cts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReducingLhs { terms, ..*first })
    }
}

/// The `d_in` encrypted `B~(o)` windows, prepared by the data owner.
#[derive(Clone, Debug)]
pub struct ReducingRhs {
    terms: Vec<CipherVector>,
}

pub enum ReducingRhsOperand<'a> {
    Plain(&'a Matrix),
    Encrypted(&'a ReducingRhs),
}

fn require_reducing(plan: &MatMulPlan) -> Result<()> {
    if plan.method != Method::Reducing {
        return Err(Error::Plan("plan was not built for the reducing kernel".into()));
    }
    Ok(())
}

fn padded_b(b: &Matrix, plan: &MatMulPlan) -> Result<Matrix> {
    if b.rows() != plan.d_in || b.cols() > plan.m {
        return Err(Error::Shape(format!(
            "B is {}x{}, plan expects {} rows and at most {} columns",
            b.rows(),
            b.cols(),
            plan.d_in,
            plan.m
        )));
    }
    Ok(if b.cols() == plan.m { b.clone() } else { b.zero_padded(plan.d_in, plan.m) })
}

/// Plaintext `B~(o)` windows the evaluator multiplies against.
pub fn rhs_terms(b: &Matrix, plan: &MatMulPlan) -> Result<Vec<Matrix>> {
    require_reducing(plan)?;
    let b = padded_b(b, plan)?;
    Ok((0..plan.d_in).map(|o| b_term(&b, plan.d_out, o)).collect())
}

pub fn encrypt_lhs(ev: &mut Evaluator, pk: &PublicKey, a: &Matrix, plan: &MatMulPlan) -> Result<ReducingLhs> {
    require_reducing(plan)?;
    if a.shape() != (plan.d_out, plan.d_in) {
        return Err(Error::Shape(format!("A is {}x{}, plan expects {}x{}", a.rows(), a.cols(), plan.d_out, plan.d_in)));
    }
    let terms = (0..plan.d_in).map(|o| ev.encrypt(pk, a_term(a, plan.m, o).data())).collect::<Result<Vec<_>>>()?;
    Ok(ReducingLhs { d_out: plan.d_out, d_in: plan.d_in, m: plan.m, terms })
}

pub fn encrypt_rhs(ev: &mut Evaluator, pk: &PublicKey, b: &Matrix, plan: &MatMulPlan) -> Result<ReducingRhs> {
    let terms = rhs_terms(b, plan)?.iter().map(|t| ev.encrypt(pk, t.data())).collect::<Result<Vec<_>>>()?;
    Ok(ReducingRhs { terms })
}

/// Exactly `d_in` multiplications and no rotations; one output ciphertext.
pub fn reducing_matmul(
    ev: &mut Evaluator,
    lhs: &ReducingLhs,
    rhs: ReducingRhsOperand<'_>,
    plan: &MatMulPlan,
) -> Result<CipherVector> {
    require_reducing(plan)?;
    if (lhs.d_out, lhs.d_in, lhs.m) != (plan.d_out, plan.d_in, plan.m) {
        return Err(Error::Plan(format!(
            "model ciphertexts prepared for {}x{} at batch {}, plan is {}x{} at batch {}",
            lhs.d_out, lhs.d_in, lhs.m, plan.d_out, plan.d_in, plan.m
        )));
    }
    let mut acc: Option<CipherVector> = None;
    let plain = match rhs {
        ReducingRhsOperand::Plain(b) => Some(rhs_terms(b, plan)?),
        ReducingRhsOperand::Encrypted(r) => {
            if r.terms.len() != plan.d_in {
                return Err(Error::Length(r.terms.len(), plan.d_in));
            }
            None
        }
    };
    for o in 0..plan.d_in {
        let prod = match (&plain, &rhs) {
            (Some(p), _) => ev.mult_plain(&lhs.terms[o], p[o].data())?,
            (None, ReducingRhsOperand::Encrypted(r)) => ev.mult(&lhs.terms[o], &r.terms[o])?,
            (None, ReducingRhsOperand::Plain(_)) => unreachable!("plain terms prepared above"),
        };
        match acc.as_mut() {
            None => acc = Some(prod),
            Some(a) => ev.add_assign(a, &prod)?,
        }
    }
    Ok(acc.expect("d_in >= 1"))
}

pub fn decode(plan: &MatMulPlan, slots: &[f64]) -> Result<Matrix> {
    let n = plan.d_out * plan.m;
    if slots.len() < n {
        return Err(Error::Length(slots.len(), n));
    }
    Matrix::from_vec(plan.d_out, plan.m, slots[..n].to_vec())
}

pub fn decrypt(ev: &mut Evaluator, sk: &SecretKey, ct: &CipherVector, plan: &MatMulPlan) -> Result<Matrix> {
    let slots = ev.decrypt(sk, ct)?;
    decode(plan, &slots)
}
