//! On a small convolutional model SecSV is at least twice as cheap as HESV.

use secsv::config::ExperimentConfig;
use secsv::experiment::{prepare, run_protocol};
use secsv::federation::SyntheticSpec;
use secsv::model::Architecture;
use secsv::protocols::ProtocolKind;

#[test]
fn secsv_at_least_twice_cheaper_on_cnn() {
    let cfg = ExperimentConfig {
        seed: 17,
        rounds: 2,
        train_samples: 300,
        test_samples: 150,
        learning_rate: 0.01,
        data: SyntheticSpec::Images { side: 6, classes: 3, noise: 0.3 },
        architecture: Architecture::Cnn { side: 6, channels: 2, width: 8 },
        ..ExperimentConfig::default()
    };
    let fed = prepare(&cfg).unwrap();
    let params = cfg.protocol_params().unwrap();
    let hesv = run_protocol(ProtocolKind::Hesv, &fed, &params).unwrap().report;
    let secsv = run_protocol(ProtocolKind::Secsv, &fed, &params).unwrap().report;
    let ratio = hesv.cost.weighted_cost / secsv.cost.weighted_cost;
    assert!(ratio >= 2.0, "hesv/secsv weighted cost ratio {ratio}");
    assert_eq!(secsv.cost.meter.hmult_c2c, 0);
    assert_eq!(secsv.fsv, hesv.fsv);
}
