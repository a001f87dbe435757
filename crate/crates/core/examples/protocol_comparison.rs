//! Runs every contribution protocol on one small federation and compares
//! their costs and their distance to the plaintext Shapley values.

use secsv::config::ExperimentConfig;
use secsv::experiment::{prepare, run_protocol, summarize};
use secsv::protocols::ProtocolKind;

fn main() -> secsv::Result<()> {
    let cfg = ExperimentConfig {
        clients: 4,
        rounds: 2,
        train_samples: 400,
        test_samples: 160,
        ..ExperimentConfig::default()
    };
    let fed = prepare(&cfg)?;
    let params = cfg.protocol_params()?;
    let mut reports = Vec::new();
    for kind in ProtocolKind::ALL {
        let report = run_protocol(kind, &fed, &params)?.report;
        let m = report.cost.meter;
        println!(
            "{:<10} weighted {:>12.0}  c2c {:>7}  c2p {:>7}  rot {:>7}  field mults {:>9}",
            kind.name(),
            report.cost.weighted_cost,
            m.hmult_c2c,
            m.hmult_c2p,
            m.hrot,
            report.cost.phases.field_mults,
        );
        reports.push(report);
    }
    let summary = summarize(&reports, cfg.ps_budget(), cfg.seed)?;
    println!("FSV (nssv): {:.4?}", reports[0].fsv);
    for (k, e) in &summary.fsv_error_vs_nssv {
        println!("FSV error of {k}: {e:.2e}");
    }
    for (pair, r) in &summary.speedups {
        println!("speedup {pair}: {r:.2}");
    }
    Ok(())
}
