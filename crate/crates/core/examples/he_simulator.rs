//! The simulated CKKS-style backend: encrypt, compute on slots, decrypt, and
//! watch the cost meter.

use secsv::he::{CostWeights, Evaluator, HEParams, KeyPair};

fn main() -> secsv::Result<()> {
    let mut ev = Evaluator::new(HEParams::new(8, 1e-6, 3)?);
    let keys = KeyPair::generate(1);
    let x = ev.encrypt(&keys.public, &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0])?;
    let y = ev.encrypt(&keys.public, &[0.5; 8])?;

    let prod = ev.mult(&x, &y)?;
    let scaled = ev.mult_plain(&prod, &[2.0; 8])?;
    let rotated = ev.rotate(&scaled, 1);
    let sum = ev.add(&scaled, &rotated)?;
    let out = ev.decrypt(&keys.secret, &sum)?;
    println!("slots: {:?}", out.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());

    let wrong = KeyPair::generate(2);
    println!("decrypt with another key: {}", ev.decrypt(&wrong.secret, &sum).unwrap_err());

    let meter = *ev.meter();
    println!("{meter:?}");
    println!("weighted cost {:.1}", meter.weighted(&CostWeights::default()));
    Ok(())
}
