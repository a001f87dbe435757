//! Servers never hold the secret key; a decryption attempt is refused and counted.

use secsv::he::{Evaluator, HEParams, KeyPair};
use secsv::protocols::{server_decrypt_attempts, Party, PartyId};
use secsv::Error;

#[test]
fn server_decryption_is_an_access_violation() {
    let keys = KeyPair::generate(9);
    let mut ev = Evaluator::new(HEParams::new(64, 0.0, 1).unwrap());
    let ct = ev.encrypt(&keys.public, &[1.0, 2.0]).unwrap();

    let before = server_decrypt_attempts();
    for id in [PartyId::ServerP, PartyId::ServerA] {
        let mut server = Party::new(id);
        server.receive_keys(keys.public, Some(keys.secret));
        assert!(!server.holds_secret_key());
        assert!(matches!(server.decrypt(&mut ev, &ct), Err(Error::AccessViolation(_))));
    }
    assert_eq!(server_decrypt_attempts(), before + 2);

    let mut client = Party::client(0);
    client.receive_keys(keys.public, Some(keys.secret));
    assert_eq!(&client.decrypt(&mut ev, &ct).unwrap()[..2], &[1.0, 2.0]);
    assert_eq!(server_decrypt_attempts(), before + 2);
}
