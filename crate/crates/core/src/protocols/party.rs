//! Simulated parties and the decryption access boundary.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::he::{CipherVector, Evaluator, PublicKey, SecretKey};
use crate::protocols::router::PartyId;

static SERVER_DECRYPT_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of decryptions attempted by a server party.
pub fn server_decrypt_attempts() -> u64 {
    SERVER_DECRYPT_ATTEMPTS.load(Ordering::SeqCst)
}

/// Keys a party holds. Servers only ever receive the public key.
#[derive(Clone, Debug)]
pub struct Party {
    pub id: PartyId,
    public: Option<PublicKey>,
    secret: Option<SecretKey>,
    decryptions: u64,
}

impl Party {
    pub fn new(id: PartyId) -> Self {
        Party { id, public: None, secret: None, decryptions: 0 }
    }

    pub fn client(i: usize) -> Self {
        Self::new(PartyId::Client(i))
    }

    /// Installs keys; a server keeps the public half only.
    pub fn receive_keys(&mut self, public: PublicKey, secret: Option<SecretKey>) {
        self.public = Some(public);
        if !self.id.is_server() {
            self.secret = secret;
        }
    }

    pub fn public_key(&self) -> Result<PublicKey> {
        self.public.ok_or_else(|| Error::Context(format!("{} holds no public key", self.id)))
    }

    pub fn holds_secret_key(&self) -> bool {
        self.secret.is_some()
    }

    pub fn decryptions(&self) -> u64 {
        self.decryptions
    }

    /// Decrypts with the party's own key. Servers are refused and counted.
    pub fn decrypt(&mut self, ev: &mut Evaluator, ct: &CipherVector) -> Result<Vec<f64>> {
        if self.id.is_server() {
            SERVER_DECRYPT_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
            return Err(Error::AccessViolation(format!("{} attempted a private-key decryption", self.id)));
        }
        let sk = self.secret.ok_or_else(|| Error::Context(format!("{} holds no secret key", self.id)))?;
        self.decryptions += 1;
        ev.decrypt(&sk, ct)
    }

    pub fn decrypt_all(&mut self, ev: &mut Evaluator, cts: &[CipherVector]) -> Result<Vec<Vec<f64>>> {
        cts.iter().map(|c| self.decrypt(ev, c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{HEParams, KeyPair};

    #[test]
    fn servers_never_keep_the_secret_key() {
        let kp = KeyPair::generate(3);
        let mut p = Party::new(PartyId::ServerP);
        p.receive_keys(kp.public, Some(kp.secret));
        assert!(!p.holds_secret_key());
        assert_eq!(p.public_key().unwrap(), kp.public);
    }

    #[test]
    fn client_decrypts_own_key_only() {
        let mut ev = Evaluator::new(HEParams::new(16, 0.0, 1).unwrap());
        let kp = KeyPair::generate(3);
        let other = KeyPair::generate(4);
        let mut c = Party::client(0);
        c.receive_keys(kp.public, Some(kp.secret));
        let ct = ev.encrypt(&kp.public, &[1.5]).unwrap();
        assert_eq!(c.decrypt(&mut ev, &ct).unwrap()[0], 1.5);
        let foreign = ev.encrypt(&other.public, &[1.0]).unwrap();
        assert!(matches!(c.decrypt(&mut ev, &foreign), Err(Error::Context(_))));
        let mut keyless = Party::client(1);
        assert!(matches!(keyless.decrypt(&mut ev, &ct), Err(Error::Context(_))));
    }
}
