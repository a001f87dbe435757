//! Two-party additive secret sharing over a prime field with a fixed-point codec,
//! plus Beaver-triple multiplication of shared matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MERSENNE_61: u128 = (1u128 << 61) - 1;
pub const MERSENNE_127: u128 = (1u128 << 127) - 1;

/// Bits above `2f + 8` that [`FieldParams::for_frac_bits`] tries to keep free.
pub const TRUNCATION_MARGIN: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Modulus {
    M61,
    M127,
    Small(u64),
}

/// Prime field `Z_p` plus the number of fractional bits of the real codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFieldParams", into = "RawFieldParams")]
pub struct FieldParams {
    prime: u128,
    frac_bits: u32,
    #[serde(skip)]
    modulus: Modulus,
}

#[derive(Serialize, Deserialize)]
struct RawFieldParams {
    prime: String,
    frac_bits: u32,
}

impl TryFrom<RawFieldParams> for FieldParams {
    type Error = Error;
    fn try_from(r: RawFieldParams) -> Result<Self> {
        let p = r.prime.parse::<u128>().map_err(|e| Error::Field(format!("prime: {e}")))?;
        FieldParams::new(p, r.frac_bits)
    }
}

impl From<FieldParams> for RawFieldParams {
    fn from(f: FieldParams) -> Self {
        RawFieldParams { prime: f.prime.to_string(), frac_bits: f.frac_bits }
    }
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams { prime: MERSENNE_61, frac_bits: 16, modulus: Modulus::M61 }
    }
}

impl FieldParams {
    /// Accepts `2^61-1`, `2^127-1`, or any prime below `2^63`.
    pub fn new(prime: u128, frac_bits: u32) -> Result<Self> {
        let modulus = match prime {
            MERSENNE_61 => Modulus::M61,
            MERSENNE_127 => Modulus::M127,
            p if p < (1u128 << 63) && is_prime_u64(p as u64) => Modulus::Small(p as u64),
            p => return Err(Error::Field(format!("{p} is not a supported prime"))),
        };
        if frac_bits >= 126 {
            return Err(Error::Field(format!("{frac_bits} fractional bits is too many")));
        }
        Ok(FieldParams { prime, frac_bits, modulus })
    }

    /// Smallest supported Mersenne field with room for one product plus
    /// truncation, preferring one with [`TRUNCATION_MARGIN`] spare bits. Local
    /// truncation wraps with probability about `|x| / p` per element.
    pub fn for_frac_bits(frac_bits: u32) -> Result<Self> {
        let fields = [MERSENNE_61, MERSENNE_127].map(|p| FieldParams::new(p, frac_bits));
        let roomy = |f: &FieldParams| {
            let need = 2 * f.frac_bits + 8 + TRUNCATION_MARGIN;
            need >= 127 || f.prime > (1u128 << need)
        };
        for f in fields.iter().flatten() {
            if f.has_mult_headroom() && roomy(f) {
                return Ok(*f);
            }
        }
        for f in fields.into_iter() {
            let f = f?;
            if f.has_mult_headroom() {
                return Ok(f);
            }
        }
        Err(Error::Field(format!("no supported prime fits {frac_bits} fractional bits")))
    }

    pub fn prime(&self) -> u128 {
        self.prime
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn bits(&self) -> u32 {
        128 - self.prime.leading_zeros()
    }

    /// `p > 2^(2f+8)`, required before multiplying encoded values.
    pub fn has_mult_headroom(&self) -> bool {
        let need = 2 * self.frac_bits + 8;
        need < 127 && self.prime > (1u128 << need)
    }

    pub fn require_mult_headroom(&self) -> Result<()> {
        if self.has_mult_headroom() {
            Ok(())
        } else {
            Err(Error::Field(format!("p = {} leaves no headroom for products at f = {}", self.prime, self.frac_bits)))
        }
    }

    /// Wire size of one field element.
    pub fn element_bytes(&self) -> u64 {
        if self.prime < (1u128 << 64) {
            8
        } else {
            16
        }
    }

    /// Largest real magnitude the codec accepts: `2^(bits - f - 2)`.
    pub fn codec_bound(&self) -> f64 {
        2f64.powi(self.bits() as i32 - self.frac_bits as i32 - 2)
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.frac_bits as i32)
    }

    #[inline]
    pub fn reduce(&self, x: u128) -> u128 {
        match self.modulus {
            Modulus::M61 => {
                let r = (x & MERSENNE_61) + (x >> 61);
                let r = (r & MERSENNE_61) + (r >> 61);
                if r >= MERSENNE_61 {
                    r - MERSENNE_61
                } else {
                    r
                }
            }
            Modulus::M127 => {
                let r = (x & MERSENNE_127) + (x >> 127);
                if r >= MERSENNE_127 {
                    r - MERSENNE_127
                } else {
                    r
                }
            }
            Modulus::Small(p) => x % p as u128,
        }
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        // a, b < p <= 2^127 so the sum cannot overflow.
        let s = a + b;
        if s >= self.prime {
            s - self.prime
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            a + (self.prime - b)
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        if a == 0 {
            0
        } else {
            self.prime - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        match self.modulus {
            Modulus::M61 | Modulus::Small(_) => self.reduce(a * b),
            Modulus::M127 => mul_m127(a, b),
        }
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> u128 {
        rng.random_range(0..self.prime)
    }

    /// `round(x * 2^f) mod p`.
    pub fn encode(&self, x: f64) -> Result<u128> {
        let bound = self.codec_bound();
        if !x.is_finite() || x.abs() >= bound {
            return Err(Error::CodecOverflow { value: x, bound });
        }
        Ok(self.from_signed((x * self.scale()).round() as i128))
    }

    pub fn from_signed(&self, v: i128) -> u128 {
        let p = self.prime as i128;
        v.rem_euclid(p) as u128
    }

    /// Centered lift: the upper half of `Z_p` maps to negative integers.
    pub fn to_signed(&self, v: u128) -> i128 {
        if v > self.prime / 2 {
            -((self.prime - v) as i128)
        } else {
            v as i128
        }
    }

    pub fn decode(&self, v: u128) -> f64 {
        self.to_signed(v) as f64 / self.scale()
    }
}

/// `a * b mod (2^127 - 1)` through a 256-bit product folded with `2^127 = 1`.
fn mul_m127(a: u128, b: u128) -> u128 {
    const LO: u128 = u64::MAX as u128;
    let (a0, a1) = (a & LO, a >> 64);
    let (b0, b1) = (b & LO, b >> 64);
    let f = |x: u128| {
        let r = (x & MERSENNE_127) + (x >> 127);
        if r >= MERSENNE_127 {
            r - MERSENNE_127
        } else {
            r
        }
    };
    let add = |x: u128, y: u128| {
        let s = x + y;
        if s >= MERSENNE_127 {
            s - MERSENNE_127
        } else {
            s
        }
    };
    let low = f(a0 * b0);
    let mid = a0 * b1 + a1 * b0;
    let (mid_hi, mid_lo) = (mid >> 64, mid & LO);
    let mid_part = add(f(mid_lo << 64), f(2 * mid_hi));
    let high = f(2 * (a1 * b1));
    add(add(low, mid_part), high)
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod_u64(r, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let (mut d, mut s) = (n - 1, 0);
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Scalar share pair: `s_prime` is held by server P, `s_dprime` by server A.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharePair {
    pub s_prime: u128,
    pub s_dprime: u128,
}

/// Shares a raw field element with a caller-chosen mask.
pub fn split_element_with_mask(field: &FieldParams, secret: u128, mask: u128) -> SharePair {
    let s = field.reduce(secret);
    let r = field.reduce(mask);
    SharePair { s_prime: r, s_dprime: field.sub(s, r) }
}

pub fn split_element<R: Rng + ?Sized>(field: &FieldParams, secret: u128, rng: &mut R) -> SharePair {
    let mask = field.random(rng);
    split_element_with_mask(field, secret, mask)
}

pub fn reconstruct_element(field: &FieldParams, pair: SharePair) -> u128 {
    field.add(pair.s_prime, pair.s_dprime)
}

pub fn split<R: Rng + ?Sized>(field: &FieldParams, secret: f64, rng: &mut R) -> Result<SharePair> {
    Ok(split_element(field, field.encode(secret)?, rng))
}

pub fn reconstruct(field: &FieldParams, pair: SharePair) -> f64 {
    field.decode(reconstruct_element(field, pair))
}

/// Which server holds a share; truncation is asymmetric between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShareHolder {
    P,
    A,
}

/// One party's share of a matrix, row-major field elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u128>,
}

impl ShareMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ShareMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u128] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u128 {
        self.data[r * self.cols + c]
    }

    /// Public encoding of a plaintext matrix (no masking).
    pub fn encode(field: &FieldParams, m: &Matrix) -> Result<Self> {
        let data = m.data().iter().map(|&x| field.encode(x)).collect::<Result<Vec<_>>>()?;
        Ok(ShareMatrix { rows: m.rows(), cols: m.cols(), data })
    }

    pub fn decode(&self, field: &FieldParams) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| field.decode(v)).collect())
            .expect("consistent shape")
    }

    fn check_shape(&self, other: &ShareMatrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    pub fn add(&self, field: &FieldParams, other: &ShareMatrix) -> Result<ShareMatrix> {
        self.check_shape(other, "share add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| field.add(a, b)).collect();
        Ok(ShareMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, field: &FieldParams, other: &ShareMatrix) -> Result<ShareMatrix> {
        self.check_shape(other, "share sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| field.sub(a, b)).collect();
        Ok(ShareMatrix { rows: self.rows, cols: self.cols, data })
    }

    /// Multiplies every element by a public field element.
    pub fn scale(&self, field: &FieldParams, k: u128) -> ShareMatrix {
        ShareMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| field.mul(a, k)).collect() }
    }

    /// Raw product mod p, no truncation.
    pub fn matmul(&self, field: &FieldParams, other: &ShareMatrix) -> Result<ShareMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!("share matmul: {:?} times {:?}", self.shape(), other.shape())));
        }
        let (n, k) = (other.cols, self.cols);
        let mut out = vec![0u128; self.rows * n];
        for i in 0..self.rows {
            let row = &mut out[i * n..(i + 1) * n];
            for t in 0..k {
                let a = self.data[i * k + t];
                if a == 0 {
                    continue;
                }
                let b_row = &other.data[t * n..(t + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o = field.add(*o, field.mul(a, b));
                }
            }
        }
        Ok(ShareMatrix { rows: self.rows, cols: n, data: out })
    }

    /// Local fixed-point truncation by `2^f`.
    ///
    /// P maps `s` to `floor(s / 2^f)`; A maps `s` to `p - floor((p - s) / 2^f)`.
    /// The pair then reconstructs `z / 2^f` up to one unit in the last place,
    /// except with probability about `|z| / p`.
    pub fn truncate(&self, field: &FieldParams, holder: ShareHolder) -> ShareMatrix {
        let f = field.frac_bits();
        let p = field.prime();
        let data = self
            .data
            .iter()
            .map(|&s| match holder {
                ShareHolder::P => s >> f,
                ShareHolder::A => field.reduce(p - ((p - s) >> f)),
            })
            .collect();
        ShareMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn with_constant_row(&self, value: u128) -> ShareMatrix {
        let mut data = self.data.clone();
        data.extend(std::iter::repeat_n(value, self.cols));
        ShareMatrix { rows: self.rows + 1, cols: self.cols, data }
    }

    /// Side-by-side concatenation of equally tall shares.
    pub fn hstack(parts: &[ShareMatrix]) -> Result<ShareMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Shape("hstack of shares with different heights".into()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(&p.data[r * p.cols..(r + 1) * p.cols]);
            }
        }
        Ok(ShareMatrix { rows, cols, data })
    }

    pub fn select_columns(&self, cols: &[usize]) -> ShareMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            for &c in cols {
                data.push(self.get(r, c));
            }
        }
        ShareMatrix { rows: self.rows, cols: cols.len(), data }
    }
}

/// Shares of a matrix: `prime` goes to server P and `dprime` to server A.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedMatrix {
    pub prime: ShareMatrix,
    pub dprime: ShareMatrix,
}

impl SharedMatrix {
    pub fn split<R: Rng + ?Sized>(field: &FieldParams, m: &Matrix, rng: &mut R) -> Result<Self> {
        let enc = ShareMatrix::encode(field, m)?;
        Ok(Self::split_encoded(field, &enc, rng))
    }

    pub fn split_encoded<R: Rng + ?Sized>(field: &FieldParams, enc: &ShareMatrix, rng: &mut R) -> Self {
        let masks: Vec<u128> = (0..enc.len()).map(|_| field.random(rng)).collect();
        let dprime = enc.data.iter().zip(&masks).map(|(&s, &r)| field.sub(s, r)).collect();
        SharedMatrix {
            prime: ShareMatrix { rows: enc.rows, cols: enc.cols, data: masks },
            dprime: ShareMatrix { rows: enc.rows, cols: enc.cols, data: dprime },
        }
    }

    pub fn reconstruct_encoded(&self, field: &FieldParams) -> Result<ShareMatrix> {
        self.prime.add(field, &self.dprime)
    }

    pub fn reconstruct(&self, field: &FieldParams) -> Result<Matrix> {
        Ok(self.reconstruct_encoded(field)?.decode(field))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.prime.shape()
    }

    /// Multiplies by a public real and truncates, as both servers would locally.
    pub fn scale_public(&self, field: &FieldParams, w: f64) -> Result<SharedMatrix> {
        let k = field.encode(w)?;
        Ok(SharedMatrix {
            prime: self.prime.scale(field, k).truncate(field, ShareHolder::P),
            dprime: self.dprime.scale(field, k).truncate(field, ShareHolder::A),
        })
    }

    pub fn add(&self, field: &FieldParams, other: &SharedMatrix) -> Result<SharedMatrix> {
        Ok(SharedMatrix { prime: self.prime.add(field, &other.prime)?, dprime: self.dprime.add(field, &other.dprime)? })
    }
}

/// Shares of random `U` (r x k), `V` (k x c) and `W = U V mod p`.
#[derive(Clone, Debug)]
pub struct MatrixTriple {
    pub u: SharedMatrix,
    pub v: SharedMatrix,
    pub w: SharedMatrix,
}

/// Trusted dealer that hands out matrix Beaver triples from a finite budget
/// counted in scalar multiplications.
#[derive(Debug)]
pub struct TripleDealer {
    field: FieldParams,
    rng: ChaCha8Rng,
    remaining: Option<u64>,
    issued_mults: u64,
    issued_bytes: u64,
}

impl TripleDealer {
    pub fn new(field: FieldParams, seed: u64, budget: Option<u64>) -> Self {
        TripleDealer {
            field,
            rng: ChaCha8Rng::seed_from_u64(seed),
            remaining: budget,
            issued_mults: 0,
            issued_bytes: 0,
        }
    }

    pub fn remaining(&self) -> Option<u64> {
        self.remaining
    }

    pub fn issued_mults(&self) -> u64 {
        self.issued_mults
    }

    /// Bytes the dealer has shipped to the two servers so far.
    pub fn issued_bytes(&self) -> u64 {
        self.issued_bytes
    }

    pub fn matrix_triple(&mut self, r: usize, k: usize, c: usize) -> Result<MatrixTriple> {
        let needed = (r * k * c) as u64;
        if let Some(rem) = self.remaining {
            if needed > rem {
                return Err(Error::TripleExhausted { needed, remaining: rem });
            }
            self.remaining = Some(rem - needed);
        }
        let f = self.field;
        let rand_mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| ShareMatrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| f.random(rng)).collect(),
        };
        let u = rand_mat(r, k, &mut self.rng);
        let v = rand_mat(k, c, &mut self.rng);
        let w = u.matmul(&f, &v)?;
        let triple = MatrixTriple {
            u: SharedMatrix::split_encoded(&f, &u, &mut self.rng),
            v: SharedMatrix::split_encoded(&f, &v, &mut self.rng),
            w: SharedMatrix::split_encoded(&f, &w, &mut self.rng),
        };
        self.issued_mults += needed;
        self.issued_bytes += 2 * (r * k + k * c + r * c) as u64 * f.element_bytes();
        Ok(triple)
    }
}

/// Bytes the two servers exchange to open the masked operands of one product.
pub fn beaver_open_bytes(field: &FieldParams, r: usize, k: usize, c: usize) -> u64 {
    2 * (r * k + k * c) as u64 * field.element_bytes()
}

/// Beaver product of shared `X` (r x k) and `Y` (k x c), truncated once by `2^f`.
///
/// Both servers open `E = X - U` and `F = Y - V`; then
/// `Z = W + E V + U F + E F`, where only P adds the public `E F` term.
pub fn share_matmul(
    field: &FieldParams,
    x: &SharedMatrix,
    y: &SharedMatrix,
    triple: &MatrixTriple,
) -> Result<SharedMatrix> {
    let (r, k) = x.shape();
    let (k2, c) = y.shape();
    if k != k2 {
        return Err(Error::Shape(format!("share matmul: {r}x{k} times {k2}x{c}")));
    }
    if triple.u.shape() != (r, k) || triple.v.shape() != (k, c) {
        return Err(Error::Shape("triple does not match operand shapes".into()));
    }
    let e_p = x.prime.sub(field, &triple.u.prime)?;
    let e_a = x.dprime.sub(field, &triple.u.dprime)?;
    let f_p = y.prime.sub(field, &triple.v.prime)?;
    let f_a = y.dprime.sub(field, &triple.v.dprime)?;
    let e = e_p.add(field, &e_a)?;
    let f = f_p.add(field, &f_a)?;

    let local = |w: &ShareMatrix, u: &ShareMatrix, v: &ShareMatrix| -> Result<ShareMatrix> {
        w.add(field, &e.matmul(field, v)?)?.add(field, &u.matmul(field, &f)?)
    };
    let z_p = local(&triple.w.prime, &triple.u.prime, &triple.v.prime)?.add(field, &e.matmul(field, &f)?)?;
    let z_a = local(&triple.w.dprime, &triple.u.dprime, &triple.v.dprime)?;
    Ok(SharedMatrix { prime: z_p.truncate(field, ShareHolder::P), dprime: z_a.truncate(field, ShareHolder::A) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matmul_oracle;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn toy_field_split() {
        let f = FieldParams::new(7, 0).unwrap();
        let pair = split_element_with_mask(&f, 5, 3);
        assert_eq!(pair, SharePair { s_prime: 3, s_dprime: 2 });
        assert_eq!(reconstruct_element(&f, pair), 5);
    }

    #[test]
    fn field_validation() {
        assert!(FieldParams::new(8, 0).is_err());
        assert!(FieldParams::new((1u128 << 64) + 13, 0).is_err());
        assert!(FieldParams::new(1_000_000_007, 4).is_ok());
        assert_eq!(FieldParams::for_frac_bits(16).unwrap().prime(), MERSENNE_61);
        assert_eq!(FieldParams::for_frac_bits(30).unwrap().prime(), MERSENNE_127);
        assert_eq!(FieldParams::for_frac_bits(20).unwrap().prime(), MERSENNE_127);
        assert_eq!(FieldParams::for_frac_bits(58).unwrap().prime(), MERSENNE_127);
        assert!(FieldParams::for_frac_bits(60).is_err());
        assert!(FieldParams::new(MERSENNE_61, 24).unwrap().has_mult_headroom());
        assert!(FieldParams::default().has_mult_headroom());
    }

    #[test]
    fn zero_and_fraction_round_trip() {
        let f = FieldParams::default();
        let mut r = rng();
        assert_eq!(reconstruct(&f, split(&f, 0.0, &mut r).unwrap()), 0.0);
        let got = reconstruct(&f, split(&f, 1.5, &mut r).unwrap());
        assert!((got - 1.5).abs() <= 2f64.powi(-16));
        let neg = reconstruct(&f, split(&f, -3.25, &mut r).unwrap());
        assert_eq!(neg, -3.25);
    }

    #[test]
    fn codec_overflow_detected() {
        let f = FieldParams::default();
        assert!(matches!(f.encode(2f64.powi(44)), Err(Error::CodecOverflow { .. })));
        assert!(f.encode(f64::NAN).is_err());
    }

    #[test]
    fn m127_multiplication_matches_bigint_free_check() {
        let f = FieldParams::new(MERSENNE_127, 16).unwrap();
        // (2^126) * 2 = 2^127 = 1 mod p
        assert_eq!(f.mul(1u128 << 126, 2), 1);
        // (p-1)^2 = 1 mod p
        assert_eq!(f.mul(MERSENNE_127 - 1, MERSENNE_127 - 1), 1);
        // Small values agree with plain arithmetic.
        assert_eq!(f.mul(123_456_789, 987_654_321), 123_456_789u128 * 987_654_321);
        // Compare against repeated addition-based double-and-add.
        let a = 0x1234_5678_9abc_def0_1122_3344_5566_7788u128 % MERSENNE_127;
        let b = 0x0fed_cba9_8765_4321_0011_2233_4455_6677u128 % MERSENNE_127;
        let mut acc = 0u128;
        let mut base = a;
        let mut e = b;
        while e > 0 {
            if e & 1 == 1 {
                acc = f.add(acc, base);
            }
            base = f.add(base, base);
            e >>= 1;
        }
        assert_eq!(f.mul(a, b), acc);
    }

    #[test]
    fn miller_rabin() {
        let primes = [2u64, 3, 7, 1_000_000_007, (1 << 61) - 1, 9_223_372_036_854_775_783];
        for p in primes {
            assert!(is_prime_u64(p), "{p}");
        }
        for c in [1u64, 4, 561, 1_000_000_007 * 3, 3_215_031_751] {
            assert!(!is_prime_u64(c), "{c}");
        }
    }

    #[test]
    fn identity_times_b() {
        let f = FieldParams::default();
        let mut r = rng();
        let mut dealer = TripleDealer::new(f, 3, None);
        let b = Matrix::from_rows(&[[1.5, -2.0, 0.25], [3.0, 0.5, -1.0]]);
        let x = SharedMatrix::split(&f, &Matrix::identity(2), &mut r).unwrap();
        let y = SharedMatrix::split(&f, &b, &mut r).unwrap();
        let t = dealer.matrix_triple(2, 2, 3).unwrap();
        let z = share_matmul(&f, &x, &y, &t).unwrap().reconstruct(&f).unwrap();
        for (g, e) in z.data().iter().zip(b.data()) {
            assert!((g - e).abs() <= 2f64.powi(-16), "{g} vs {e}");
        }
    }

    #[test]
    fn scalar_product() {
        let f = FieldParams::default();
        let mut r = rng();
        let mut dealer = TripleDealer::new(f, 3, Some(1));
        let x = SharedMatrix::split(&f, &Matrix::from_rows(&[[2.0]]), &mut r).unwrap();
        let y = SharedMatrix::split(&f, &Matrix::from_rows(&[[3.0]]), &mut r).unwrap();
        let t = dealer.matrix_triple(1, 1, 1).unwrap();
        let z = share_matmul(&f, &x, &y, &t).unwrap().reconstruct(&f).unwrap();
        assert!((z.get(0, 0) - 6.0).abs() <= 2f64.powi(-16));
        assert!(matches!(dealer.matrix_triple(1, 1, 1), Err(Error::TripleExhausted { needed: 1, remaining: 0 })));
    }

    #[test]
    fn random_product_vs_oracle() {
        let f = FieldParams::default();
        let mut r = rng();
        let mut dealer = TripleDealer::new(f, 5, None);
        let a = Matrix::from_fn(4, 4, |_, _| r.random_range(-4.0..4.0));
        let b = Matrix::from_fn(4, 2, |_, _| r.random_range(-4.0..4.0));
        let exact = matmul_oracle(&a, &b).unwrap();
        let x = SharedMatrix::split(&f, &a, &mut r).unwrap();
        let y = SharedMatrix::split(&f, &b, &mut r).unwrap();
        let t = dealer.matrix_triple(4, 4, 2).unwrap();
        let z = share_matmul(&f, &x, &y, &t).unwrap().reconstruct(&f).unwrap();
        let bound = 4.0 * 2f64.powi(-16) * a.max_abs().max(b.max_abs());
        for (g, e) in z.data().iter().zip(exact.data()) {
            assert!((g - e).abs() <= bound, "{g} vs {e}");
        }
        assert_eq!(dealer.issued_mults(), 32);
        assert_eq!(dealer.issued_bytes(), 2 * (16 + 8 + 8) * 8);
    }

    #[test]
    fn single_share_is_uniform() {
        // Chi-square over 16 buckets of the top bits of s' for one fixed secret.
        let f = FieldParams::default();
        let mut r = rng();
        let trials = 16_000;
        let mut buckets = [0u32; 16];
        for _ in 0..trials {
            let s = split(&f, 0.75, &mut r).unwrap();
            buckets[(s.s_prime * 16 / f.prime()) as usize] += 1;
        }
        let expected = trials as f64 / 16.0;
        let chi2: f64 = buckets.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        // 15 degrees of freedom; 0.999 quantile is about 37.7.
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn truncation_error_grows_at_most_linearly() {
        let f = FieldParams::default();
        let mut r = rng();
        let mut dealer = TripleDealer::new(f, 9, None);
        let eye = Matrix::identity(3);
        let v = Matrix::from_rows(&[[0.3], [-0.7], [1.1]]);
        let mut acc = SharedMatrix::split(&f, &v, &mut r).unwrap();
        let ulp = 2f64.powi(-16);
        for depth in 1..=8 {
            let w = SharedMatrix::split(&f, &eye, &mut r).unwrap();
            let t = dealer.matrix_triple(3, 3, 1).unwrap();
            acc = share_matmul(&f, &w, &acc, &t).unwrap();
            let got = acc.reconstruct(&f).unwrap();
            let err = got.sub(&v).unwrap().max_abs();
            assert!(err <= depth as f64 * 2.0 * ulp, "depth {depth}: {err}");
        }
    }

    #[test]
    fn public_scaling() {
        let f = FieldParams::default();
        let mut r = rng();
        let m = Matrix::from_rows(&[[1.0, -2.0]]);
        let s = SharedMatrix::split(&f, &m, &mut r).unwrap();
        let half = s.scale_public(&f, 0.5).unwrap().reconstruct(&f).unwrap();
        assert!((half.get(0, 0) - 0.5).abs() <= 2f64.powi(-15));
        assert!((half.get(0, 1) + 1.0).abs() <= 2f64.powi(-15));
    }

    #[test]
    fn field_params_serde_round_trip() {
        let f = FieldParams::new(MERSENNE_127, 30).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<FieldParams>(&s).unwrap(), f);
    }

    proptest! {
        #[test]
        fn integer_round_trip_exact(x in any::<u64>(), seed in any::<u64>()) {
            let f = FieldParams::default();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let s = f.reduce(x as u128);
            prop_assert_eq!(reconstruct_element(&f, split_element(&f, s, &mut r)), s);
        }

        #[test]
        fn real_round_trip_within_ulp(x in -1.0e6f64..1.0e6, seed in any::<u64>()) {
            let f = FieldParams::default();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let got = reconstruct(&f, split(&f, x, &mut r).unwrap());
            prop_assert!((got - x).abs() <= 2f64.powi(-16));
        }

        #[test]
        fn m127_mul_commutes_and_distributes(a in any::<u128>(), b in any::<u128>(), c in any::<u128>()) {
            let f = FieldParams::new(MERSENNE_127, 16).unwrap();
            let (a, b, c) = (f.reduce(a >> 1), f.reduce(b >> 1), f.reduce(c >> 1));
            prop_assert_eq!(f.mul(a, b), f.mul(b, a));
            prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
        }
    }
}
