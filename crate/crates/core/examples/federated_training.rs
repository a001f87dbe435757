//! Label-skewed Dirichlet split and FedAvg training that keeps each round's
//! local models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secsv::federation::{dirichlet_partition_many, fedavg_train, SyntheticSpec, TrainConfig};
use secsv::model::{correct_count, Activation, Architecture};

fn main() -> secsv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = SyntheticSpec::Blobs { dim: 8, classes: 4, separation: 2.0 };
    let train = spec.generate(600, 11, &mut rng)?;
    let test = spec.generate(200, 11, &mut rng)?.with_id_offset(1_000_000);
    let mut parts = dirichlet_partition_many(&[&train, &test], 5, 0.5, &mut rng)?;
    let tests = parts.pop().expect("two datasets");
    let trains = parts.pop().expect("two datasets");
    for (c, d) in trains.iter().enumerate() {
        let mut hist = vec![0; 4];
        for &y in d.labels.as_slice() {
            hist[y] += 1;
        }
        println!("client {c}: {} train samples, label counts {hist:?}", d.len());
    }

    let arch = Architecture::Mlp { hidden_layers: 1, width: 12, activation: Activation::Sigmoid };
    let cfg = TrainConfig { rounds: 4, ..TrainConfig::default() };
    let rounds = fedavg_train(&trains, &arch, &cfg, &mut rng)?;
    for r in &rounds {
        let (hits, total): (usize, usize) = tests.iter().try_fold((0, 0), |acc, d| {
            let pred: Vec<f64> = r.global.predict(&d.features)?.as_slice().iter().map(|&y| y as f64).collect();
            let h = correct_count(&pred, d.labels.as_slice())?;
            Ok::<_, secsv::Error>((acc.0 + h, acc.1 + d.len()))
        })?;
        println!(
            "round {}: {} local models, starting global model test accuracy {:.3}",
            r.round,
            r.n_selected(),
            hits as f64 / total as f64
        );
    }
    Ok(())
}
