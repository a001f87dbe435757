//! Slotted homomorphic-encryption simulator.
//!
//! Ciphertexts carry their plaintext slots in the clear together with the id of
//! the key that "encrypted" them. Every homomorphic operation is metered, and an
//! optional Gaussian perturbation emulates approximate (CKKS-style) arithmetic.
//! This is not cryptography: it exists to check algorithms and count their cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_SLOTS: usize = 2048;

/// Noise level used by runs that opt into "default noise".
pub const DEFAULT_NOISE_STDDEV: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HEParams {
    pub slot_count: usize,
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for HEParams {
    fn default() -> Self {
        HEParams { slot_count: DEFAULT_SLOTS, noise_stddev: 0.0, seed: 0 }
    }
}

impl HEParams {
    pub fn new(slot_count: usize, noise_stddev: f64, seed: u64) -> Result<Self> {
        let p = HEParams { slot_count, noise_stddev, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_count == 0 || !self.slot_count.is_power_of_two() {
            return Err(Error::Config {
                field: "slot_count".into(),
                reason: format!("{} is not a power of two", self.slot_count),
            });
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(Error::Config {
                field: "noise_stddev".into(),
                reason: format!("{} must be finite and non-negative", self.noise_stddev),
            });
        }
        Ok(())
    }

    /// `floor(sqrt(N))`, the side of the largest square a ciphertext can hold.
    pub fn sqrt_slots(&self) -> usize {
        isqrt(self.slot_count)
    }

    /// Simulated serialized size of one ciphertext (two RNS polynomials of 2N
    /// 64-bit coefficients over two moduli).
    pub fn ciphertext_bytes(&self) -> u64 {
        ciphertext_bytes(self.slot_count)
    }
}

pub fn ciphertext_bytes(slot_count: usize) -> u64 {
    (2 * 2 * slot_count * 8 * 2) as u64
}

pub fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublicKey {
    id: KeyId,
}

/// Decryption authority. Only client parties are ever handed one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SecretKey {
    id: KeyId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    pub fn generate(id: u64) -> Self {
        KeyPair { public: PublicKey { id: KeyId(id) }, secret: SecretKey { id: KeyId(id) } }
    }
}

impl PublicKey {
    pub fn id(&self) -> KeyId {
        self.id
    }
}

impl SecretKey {
    pub fn id(&self) -> KeyId {
        self.id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CipherVector {
    slots: Vec<f64>,
    key_id: KeyId,
}

impl CipherVector {
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Peeks at the underlying slots. Test-only backdoor; protocols decrypt.
    #[cfg(test)]
    pub(crate) fn raw_slots(&self) -> &[f64] {
        &self.slots
    }
}

/// Operation counters. Plain integers; per-worker meters are merged at barriers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub hmult_c2c: u64,
    pub hmult_c2p: u64,
    pub hadd: u64,
    pub hrot: u64,
    pub enc: u64,
    pub dec: u64,
}

/// Relative operation costs used to turn counts into one comparable number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub c2c: f64,
    pub c2p: f64,
    pub add: f64,
    pub rot: f64,
    pub enc: f64,
    pub dec: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { c2c: 4.0, c2p: 1.0, add: 0.1, rot: 4.0, enc: 2.0, dec: 1.0 }
    }
}

impl CostMeter {
    pub fn merge(&mut self, other: &CostMeter) {
        self.hmult_c2c += other.hmult_c2c;
        self.hmult_c2p += other.hmult_c2p;
        self.hadd += other.hadd;
        self.hrot += other.hrot;
        self.enc += other.enc;
        self.dec += other.dec;
    }

    pub fn merged<'a>(meters: impl IntoIterator<Item = &'a CostMeter>) -> CostMeter {
        let mut out = CostMeter::default();
        for m in meters {
            out.merge(m);
        }
        out
    }

    pub fn hmult(&self) -> u64 {
        self.hmult_c2c + self.hmult_c2p
    }

    /// Multiplications plus rotations: the op count compared across kernels.
    pub fn mult_rot_ops(&self) -> u64 {
        self.hmult() + self.hrot
    }

    pub fn weighted(&self, w: &CostWeights) -> f64 {
        w.c2c * self.hmult_c2c as f64
            + w.c2p * self.hmult_c2p as f64
            + w.add * self.hadd as f64
            + w.rot * self.hrot as f64
            + w.enc * self.enc as f64
            + w.dec * self.dec as f64
    }

    /// Counter-wise `self - earlier`, for measuring one phase of a run.
    pub fn since(&self, earlier: &CostMeter) -> CostMeter {
        CostMeter {
            hmult_c2c: self.hmult_c2c - earlier.hmult_c2c,
            hmult_c2p: self.hmult_c2p - earlier.hmult_c2p,
            hadd: self.hadd - earlier.hadd,
            hrot: self.hrot - earlier.hrot,
            enc: self.enc - earlier.enc,
            dec: self.dec - earlier.dec,
        }
    }
}

/// Per-worker evaluation context: parameters, meter and noise source.
#[derive(Debug)]
pub struct Evaluator {
    params: HEParams,
    meter: CostMeter,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Evaluator {
    pub fn new(params: HEParams) -> Self {
        Self::with_stream(params, 0)
    }

    /// Independent noise stream `stream` under the same seed (one per worker/round).
    pub fn with_stream(params: HEParams, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(stream);
        let noise =
            (params.noise_stddev > 0.0).then(|| Normal::new(0.0, params.noise_stddev).expect("validated stddev"));
        Evaluator { params, meter: CostMeter::default(), rng, noise }
    }

    pub fn params(&self) -> &HEParams {
        &self.params
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    pub fn take_meter(&mut self) -> CostMeter {
        std::mem::take(&mut self.meter)
    }

    fn perturb(&mut self, slots: &mut [f64]) {
        if let Some(n) = self.noise {
            for s in slots {
                *s += n.sample(&mut self.rng);
            }
        }
    }

    /// Encrypts up to N values into one ciphertext, zero-padding the tail.
    pub fn encrypt(&mut self, pk: &PublicKey, values: &[f64]) -> Result<CipherVector> {
        let n = self.slot_count();
        if values.len() > n {
            return Err(Error::Shape(format!("{} values exceed {n} slots", values.len())));
        }
        let mut slots = vec![0.0; n];
        slots[..values.len()].copy_from_slice(values);
        self.perturb(&mut slots);
        self.meter.enc += 1;
        Ok(CipherVector { slots, key_id: pk.id })
    }

    /// Row-major scan into `ceil(rows*cols / N)` ciphertexts.
    pub fn encrypt_matrix(&mut self, pk: &PublicKey, m: &Matrix) -> Result<Vec<CipherVector>> {
        let n = self.slot_count();
        if m.is_empty() {
            return Ok(Vec::new());
        }
        m.data().chunks(n).map(|chunk| self.encrypt(pk, chunk)).collect()
    }

    pub fn decrypt(&mut self, sk: &SecretKey, ct: &CipherVector) -> Result<Vec<f64>> {
        if sk.id != ct.key_id {
            return Err(Error::Context(format!("secret key {:?} cannot open ciphertext under {:?}", sk.id, ct.key_id)));
        }
        self.meter.dec += 1;
        Ok(ct.slots.clone())
    }

    pub fn decrypt_matrix(&mut self, sk: &SecretKey, cts: &[CipherVector], rows: usize, cols: usize) -> Result<Matrix> {
        let need = rows * cols;
        let have = cts.len() * self.slot_count();
        if have < need {
            return Err(Error::Shape(format!("{have} slots cannot hold a {rows}x{cols} matrix")));
        }
        let mut data = Vec::with_capacity(need);
        for ct in cts {
            if data.len() >= need {
                break;
            }
            let slots = self.decrypt(sk, ct)?;
            let take = (need - data.len()).min(slots.len());
            data.extend_from_slice(&slots[..take]);
        }
        Matrix::from_vec(rows, cols, data)
    }

    fn check_pair(&self, a: &CipherVector, b: &CipherVector) -> Result<()> {
        if a.key_id != b.key_id {
            return Err(Error::Context(format!("key {:?} vs {:?}", a.key_id, b.key_id)));
        }
        if a.slots.len() != b.slots.len() {
            return Err(Error::Context(format!("{} vs {} slots", a.slots.len(), b.slots.len())));
        }
        Ok(())
    }

    fn check_plain(&self, a: &CipherVector, p: &[f64]) -> Result<()> {
        if p.len() > a.slots.len() {
            return Err(Error::Shape(format!("plaintext of {} exceeds {} slots", p.len(), a.slots.len())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &CipherVector, b: &CipherVector) -> Result<CipherVector> {
        self.check_pair(a, b)?;
        self.meter.hadd += 1;
        let slots = a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect();
        Ok(CipherVector { slots, key_id: a.key_id })
    }

    pub fn add_assign(&mut self, acc: &mut CipherVector, b: &CipherVector) -> Result<()> {
        self.check_pair(acc, b)?;
        self.meter.hadd += 1;
        for (x, y) in acc.slots.iter_mut().zip(&b.slots) {
            *x += y;
        }
        Ok(())
    }

    /// Ciphertext plus plaintext; a short plaintext is zero-extended.
    pub fn add_plain(&mut self, a: &CipherVector, p: &[f64]) -> Result<CipherVector> {
        self.check_plain(a, p)?;
        self.meter.hadd += 1;
        let mut slots = a.slots.clone();
        for (x, y) in slots.iter_mut().zip(p) {
            *x += y;
        }
        Ok(CipherVector { slots, key_id: a.key_id })
    }

    /// Ciphertext-ciphertext product (c2c).
    pub fn mult(&mut self, a: &CipherVector, b: &CipherVector) -> Result<CipherVector> {
        self.check_pair(a, b)?;
        self.meter.hmult_c2c += 1;
        let mut slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect();
        self.perturb(&mut slots);
        Ok(CipherVector { slots, key_id: a.key_id })
    }

    /// Ciphertext-plaintext product (c2p); a short plaintext is zero-extended.
    pub fn mult_plain(&mut self, a: &CipherVector, p: &[f64]) -> Result<CipherVector> {
        self.check_plain(a, p)?;
        self.meter.hmult_c2p += 1;
        let mut slots: Vec<f64> =
            a.slots.iter().enumerate().map(|(i, x)| x * p.get(i).copied().unwrap_or(0.0)).collect();
        self.perturb(&mut slots);
        Ok(CipherVector { slots, key_id: a.key_id })
    }

    /// Ciphertext times a public scalar, metered as c2p.
    pub fn mult_scalar(&mut self, a: &CipherVector, w: f64) -> CipherVector {
        self.meter.hmult_c2p += 1;
        let mut slots: Vec<f64> = a.slots.iter().map(|x| x * w).collect();
        self.perturb(&mut slots);
        CipherVector { slots, key_id: a.key_id }
    }

    /// `sum_i w_i * ct_i`, accumulated in the given order.
    pub fn weighted_sum(&mut self, parts: &[(&CipherVector, f64)]) -> Result<CipherVector> {
        let (first, rest) = parts.split_first().ok_or_else(|| Error::Shape("empty weighted sum".into()))?;
        let mut acc = self.mult_scalar(first.0, first.1);
        for (ct, w) in rest {
            let term = self.mult_scalar(ct, *w);
            self.add_assign(&mut acc, &term)?;
        }
        Ok(acc)
    }

    /// Cyclic left rotation: slot `i` of the result holds slot `i + steps` of `a`.
    pub fn rotate(&mut self, a: &CipherVector, steps: i64) -> CipherVector {
        self.meter.hrot += 1;
        let n = a.slots.len();
        let s = steps.rem_euclid(n as i64) as usize;
        let mut slots = Vec::with_capacity(n);
        slots.extend_from_slice(&a.slots[s..]);
        slots.extend_from_slice(&a.slots[..s]);
        CipherVector { slots, key_id: a.key_id }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(noise: f64) -> (Evaluator, KeyPair) {
        (Evaluator::new(HEParams { slot_count: 2048, noise_stddev: noise, seed: 7 }), KeyPair::generate(1))
    }

    #[test]
    fn isqrt_values() {
        assert_eq!(isqrt(2048), 45);
        assert_eq!(isqrt(16), 4);
        assert_eq!(isqrt(15), 3);
        assert_eq!(HEParams::default().ciphertext_bytes(), 131_072);
    }

    #[test]
    fn params_validation() {
        assert!(HEParams::new(1000, 0.0, 0).is_err());
        assert!(HEParams::new(1024, -1.0, 0).is_err());
        assert!(HEParams::new(16, 1e-8, 0).is_ok());
    }

    #[test]
    fn small_matrix_fits_one_ciphertext() {
        let (mut ev, kp) = eval(0.0);
        let m = Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let cts = ev.encrypt_matrix(&kp.public, &m).unwrap();
        assert_eq!(cts.len(), 1);
        assert_eq!(&cts[0].raw_slots()[..6], m.data());
        assert!(cts[0].raw_slots()[6..].iter().all(|&x| x == 0.0));
        assert_eq!(ev.meter().enc, 1);
        assert_eq!(ev.decrypt_matrix(&kp.secret, &cts, 2, 3).unwrap(), m);
    }

    #[test]
    fn large_matrix_spans_two_ciphertexts() {
        let (mut ev, kp) = eval(0.0);
        let m = Matrix::from_fn(64, 64, |i, j| (i as f64) - (j as f64) * 0.5);
        let cts = ev.encrypt_matrix(&kp.public, &m).unwrap();
        assert_eq!(cts.len(), 2);
        assert_eq!(ev.decrypt_matrix(&kp.secret, &cts, 64, 64).unwrap(), m);
        assert_eq!(ev.meter().dec, 2);
    }

    #[test]
    fn mult_by_ones_and_cancellation() {
        let (mut ev, kp) = eval(0.0);
        let v: Vec<f64> = (0..10).map(|i| i as f64 * 1.25).collect();
        let ct = ev.encrypt(&kp.public, &v).unwrap();
        let ones = vec![1.0; 2048];
        let same = ev.mult_plain(&ct, &ones).unwrap();
        assert_eq!(ev.meter().hmult_c2p, 1);
        assert_eq!(ev.decrypt(&kp.secret, &same).unwrap()[..10], v[..]);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let ct_neg = ev.encrypt(&kp.public, &neg).unwrap();
        let zero = ev.add(&ct, &ct_neg).unwrap();
        assert!(ev.decrypt(&kp.secret, &zero).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_key_is_rejected() {
        let (mut ev, kp) = eval(0.0);
        let other = KeyPair::generate(2);
        let a = ev.encrypt(&kp.public, &[1.0]).unwrap();
        let b = ev.encrypt(&other.public, &[1.0]).unwrap();
        assert!(matches!(ev.mult(&a, &b), Err(Error::Context(_))));
        assert!(matches!(ev.decrypt(&other.secret, &a), Err(Error::Context(_))));
    }

    #[test]
    fn rotation_group_laws() {
        let (mut ev, kp) = eval(0.0);
        let v: Vec<f64> = (0..2048).map(|i| i as f64).collect();
        let ct = ev.encrypt(&kp.public, &v).unwrap();
        let r0 = ev.rotate(&ct, 0);
        assert_eq!(r0, ct);
        assert_eq!(ev.meter().hrot, 1);
        assert_eq!(ev.rotate(&ct, 2048), ct);
        let r5 = ev.rotate(&ct, 5);
        let ab = ev.rotate(&r5, 9);
        assert_eq!(ab, ev.rotate(&ct, 14));
        assert_eq!(ev.rotate(&ct, 3).raw_slots()[0], 3.0);
        assert_eq!(ev.rotate(&ct, -1).raw_slots()[0], 2047.0);
    }

    #[test]
    fn scripted_meter_counts() {
        let (mut ev, kp) = eval(0.0);
        let ct = ev.encrypt(&kp.public, &[2.0; 8]).unwrap();
        let mut acc = ct.clone();
        for _ in 0..5 {
            acc = ev.mult(&acc, &ct).unwrap();
        }
        for _ in 0..3 {
            acc = ev.rotate(&acc, 1);
        }
        let m = *ev.meter();
        assert_eq!((m.hmult_c2c, m.hrot, m.hmult_c2p, m.enc), (5, 3, 0, 1));
    }

    #[test]
    fn cost_independent_of_live_slots() {
        let (mut ev, kp) = eval(0.0);
        let a = ev.encrypt(&kp.public, &[1.0]).unwrap();
        let b = ev.encrypt(&kp.public, &vec![1.0; 2048]).unwrap();
        let before = *ev.meter();
        ev.mult(&a, &a).unwrap();
        let one = ev.meter().since(&before);
        let mid = *ev.meter();
        ev.mult(&b, &b).unwrap();
        assert_eq!(one, ev.meter().since(&mid));
    }

    #[test]
    fn noise_stays_in_six_sigma_over_depth_four() {
        let sigma = 1e-6;
        let (mut ev, kp) = eval(sigma);
        let mut worst: f64 = 0.0;
        for trial in 0..1000 {
            let x = 0.5 + (trial % 7) as f64 * 0.05;
            let ct = ev.encrypt(&kp.public, &[x]).unwrap();
            let mut acc = ct.clone();
            for _ in 0..3 {
                acc = ev.mult_plain(&acc, &[1.0]).unwrap();
            }
            let got = ev.decrypt(&kp.secret, &acc).unwrap()[0];
            worst = worst.max((got - x).abs());
        }
        // Four noise injections of stddev sigma: total stddev 2 sigma.
        assert!(worst <= 6.0 * 2.0 * sigma, "worst deviation {worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn noiseless_homomorphism_exact() {
        let (mut ev, kp) = eval(0.0);
        let u: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let v: Vec<f64> = (0..100).map(|i| (i as f64).cos()).collect();
        let cu = ev.encrypt(&kp.public, &u).unwrap();
        let cv = ev.encrypt(&kp.public, &v).unwrap();
        let p = ev.mult(&cu, &cv).unwrap();
        let got = ev.decrypt(&kp.secret, &p).unwrap();
        for i in 0..100 {
            assert_eq!(got[i], u[i] * v[i]);
        }
    }

    #[test]
    fn meters_merge_and_weight() {
        let a = CostMeter { hmult_c2c: 1, hmult_c2p: 2, hadd: 10, hrot: 3, enc: 1, dec: 1 };
        let m = CostMeter::merged([&a, &a]);
        assert_eq!(m.hmult(), 6);
        assert_eq!(m.mult_rot_ops(), 12);
        let w = m.weighted(&CostWeights::default());
        assert!((w - (8.0 + 4.0 + 2.0 + 24.0 + 4.0 + 2.0)).abs() < 1e-12);
    }
}
