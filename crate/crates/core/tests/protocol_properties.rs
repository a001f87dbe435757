//! Properties of the contribution protocols on small random federations.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secsv::federation::{dirichlet_partition_many, fedavg_train, Dataset, RoundModels, SyntheticSpec, TrainConfig};
use secsv::he::HEParams;
use secsv::model::{Activation, Architecture};
use secsv::protocols::{run_hesv, run_nssv, run_secsv, ProtocolParams};

fn federation(n: usize, seed: u64, arch: &Architecture) -> (Vec<RoundModels>, Vec<Dataset>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SyntheticSpec::Blobs { dim: 4, classes: 3, separation: 1.5 };
    let train = spec.generate(20 * n, seed, &mut rng).unwrap();
    let test = spec.generate(8 * n, seed, &mut rng).unwrap().with_id_offset(10_000);
    let mut parts = dirichlet_partition_many(&[&train, &test], n, 0.8, &mut rng).unwrap();
    let tests = parts.pop().unwrap();
    let trains = parts.pop().unwrap();
    let cfg = TrainConfig { rounds: 2, ..TrainConfig::default() };
    (fedavg_train(&trains, arch, &cfg, &mut rng).unwrap(), tests)
}

fn noiseless(seed: u64) -> ProtocolParams {
    ProtocolParams { he: HEParams { slot_count: 256, noise_stddev: 0.0, seed }, seed, ..ProtocolParams::default() }
}

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::Logistic),
        Just(Architecture::Mlp { hidden_layers: 1, width: 5, activation: Activation::Sigmoid }),
        Just(Architecture::Mlp { hidden_layers: 1, width: 4, activation: Activation::Relu }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn noiseless_secure_protocols_match_plaintext(n in 4usize..7, seed in 0u64..1000, arch in arch_strategy()) {
        let (rounds, tests) = federation(n, seed, &arch);
        let base = run_nssv(&rounds, &tests).unwrap();
        let params = noiseless(seed);
        let secsv = run_secsv(&rounds, &tests, &params, false).unwrap().report;
        let hesv = run_hesv(&rounds, &tests, &params).unwrap().report;
        prop_assert_eq!(&secsv.fsv, &base.fsv);
        prop_assert_eq!(&hesv.fsv, &base.fsv);
        for (a, b) in secsv.rounds.iter().zip(&base.rounds) {
            prop_assert_eq!(&a.utilities, &b.utilities);
        }
    }

    #[test]
    fn skip_is_exact_on_linear_models(n in 4usize..7, seed in 0u64..1000) {
        let (rounds, tests) = federation(n, seed, &Architecture::Logistic);
        let base = run_nssv(&rounds, &tests).unwrap();
        let skip = run_secsv(&rounds, &tests, &noiseless(seed), true).unwrap().report;
        prop_assert_eq!(&skip.fsv, &base.fsv);
        prop_assert!(skip.skip_fraction.is_some());
    }

    #[test]
    fn every_round_is_efficient(n in 2usize..8, seed in 0u64..1000, arch in arch_strategy()) {
        let (rounds, tests) = federation(n, seed, &arch);
        let report = run_nssv(&rounds, &tests).unwrap();
        for r in &report.rounds {
            let full = r.utilities[r.utilities.len() - 1];
            let total: f64 = r.ssv.iter().sum();
            prop_assert!((total - (full - r.utilities[0])).abs() < 1e-9);
            for (c, &v) in r.ssv.iter().enumerate() {
                if !r.selected.contains(&c) {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
        let fsv: f64 = report.fsv.iter().sum();
        let rounds_total: f64 = report.rounds.iter().map(|r| r.ssv.iter().sum::<f64>()).sum();
        prop_assert!((fsv - rounds_total).abs() < 1e-9);
    }
}
