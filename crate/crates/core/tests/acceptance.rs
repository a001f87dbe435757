//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secsv::config::ExperimentConfig;
use secsv::experiment::{bench_matmul, cmd_run, prepare, run_protocol, Federation, BENCH_SHAPES};
use secsv::federation::SyntheticSpec;
use secsv::he::{HEParams, DEFAULT_NOISE_STDDEV};
use secsv::matmul::{evaluate, MatMulPlan, Method};
use secsv::matrix::{matmul_oracle, Matrix};
use secsv::model::{Activation, Architecture};
use secsv::protocols::{
    nssv_round, server_decrypt_attempts, validate_assignment, AssignmentPolicy, ProtocolKind, ProtocolParams,
    SecurityLevel, TestSuite, Violation,
};
use secsv::shapley::{
    audit_skip, fsv_aggregate, fsv_error, random_permutation_ssv, ssv_exact, ContributionVector, UtilityTable,
};
use secsv::Result;

type Verdict = Result<(bool, String)>;

fn desk(arch: Architecture, seed: u64) -> ExperimentConfig {
    ExperimentConfig { seed, architecture: arch, ..ExperimentConfig::default() }
}

fn mlp(hidden_layers: usize, width: usize) -> Architecture {
    Architecture::Mlp { hidden_layers, width, activation: Activation::Sigmoid }
}

fn noiseless(cfg: &ExperimentConfig) -> Result<ProtocolParams> {
    Ok(cfg.protocol_params()?.noiseless())
}

fn int_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-4i32..=4) as f64)
}

fn real_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn matmul_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut shapes: Vec<(usize, usize)> = BENCH_SHAPES.to_vec();
    for _ in 0..200 {
        let d_in = rng.random_range(1..=512);
        shapes.push((rng.random_range(1..=d_in), d_in));
    }
    let exact = HEParams::new(2048, 0.0, 3)?;
    let noisy = HEParams::new(2048, DEFAULT_NOISE_STDDEV, 4)?;
    let mut worst = 0.0f64;
    for &(d_out, d_in) in &shapes {
        for method in [Method::Squaring, Method::Reducing] {
            let m = MatMulPlan::max_batch(method, d_out, d_in, 2048);
            let a = int_matrix(d_out, d_in, &mut rng);
            let b = int_matrix(d_in, m, &mut rng);
            if evaluate(method, &exact, &a, &b, true)?.product != matmul_oracle(&a, &b)? {
                return Ok((false, format!("{method:?} {d_out}x{d_in} not exact without noise")));
            }
            let a = real_matrix(d_out, d_in, &mut rng);
            let b = real_matrix(d_in, m, &mut rng);
            let err =
                evaluate(method, &noisy, &a, &b, true)?.product.relative_frobenius_error(&matmul_oracle(&a, &b)?)?;
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 1e-6 && secs < 120.0, format!("{} shapes, worst noisy error {worst:.2e}, {secs:.1}s", shapes.len())))
}

/// Squaring rotations per block, straight from the cost law.
fn law_rotations(q: usize) -> u64 {
    let lg = (q as f64).log2().floor() as u32;
    lg as u64 + (q as u64 - 2u64.pow(lg))
}

fn cost_laws() -> Verdict {
    // Squaring (HMult, HRot) per shape at N = 2048, derived by hand from the
    // band padding a' and copy count q = s / a'.
    let frozen: [(usize, usize, u64, u64); 7] = [
        (4, 300, 35, 28),
        (2, 48, 6, 20),
        (64, 256, 540, 0),
        (10, 64, 30, 4),
        (32, 64, 90, 0),
        (32, 32, 32, 0),
        (2, 32, 2, 4),
    ];
    let (rows, _) = bench_matmul(&BENCH_SHAPES, 2048, 5)?;
    for (row, &(d_out, d_in, hmult, hrot)) in rows.iter().zip(&frozen) {
        let plan = MatMulPlan::squaring(d_out, d_in, row.squaring.batch, 2048)?;
        let mut law_mult = 0;
        let mut law_rot = 0;
        for band in &plan.row_blocks {
            law_mult += band.padded_rows as u64 * plan.k_blocks as u64;
            law_rot += law_rotations(plan.side / band.padded_rows) * plan.k_blocks as u64;
        }
        let ok = row.reducing.hrot == 0
            && row.reducing.hmult == d_in as u64
            && (row.squaring.hmult, row.squaring.hrot) == (hmult, hrot)
            && (law_mult, law_rot) == (hmult, hrot);
        if !ok {
            return Ok((
                false,
                format!(
                    "{d_out}x{d_in}: squaring {}/{}, reducing {}/{}",
                    row.squaring.hmult, row.squaring.hrot, row.reducing.hmult, row.reducing.hrot
                ),
            ));
        }
    }
    Ok((true, "7 shapes: reducing HRot 0 and HMult d_in; squaring matches the per-block law".into()))
}

fn per_sample_advantage() -> Verdict {
    let (rows, _) = bench_matmul(&BENCH_SHAPES, 2048, 6)?;
    let mut detail = Vec::new();
    for r in &rows {
        if r.reducing.ops_per_sample > r.squaring.ops_per_sample {
            return Ok((false, format!("{}x{} reducing costs more per sample", r.d_out, r.d_in)));
        }
        if r.squaring.hrot > 0 && r.half_ratio <= r.full_ratio {
            return Ok((false, format!("{}x{} half ratio {} <= full {}", r.d_out, r.d_in, r.half_ratio, r.full_ratio)));
        }
        detail.push(format!("{}x{}:{:.2}", r.d_out, r.d_in, r.ops_ratio));
    }
    Ok((true, format!("ops ratio {}", detail.join(" "))))
}

fn protocol_exactness() -> Verdict {
    let mut notes = Vec::new();
    for (name, arch) in [("logistic", Architecture::Logistic), ("mlp", mlp(1, 12))] {
        let cfg = desk(arch, 11);
        let fed = prepare(&cfg)?;
        let base = run_protocol(ProtocolKind::Nssv, &fed, &cfg.protocol_params()?)?.report;
        for kind in [ProtocolKind::Hesv, ProtocolKind::Secsv] {
            let exact = run_protocol(kind, &fed, &noiseless(&cfg)?)?.report;
            let tables_equal = exact.rounds.iter().zip(&base.rounds).all(|(a, b)| a.utilities == b.utilities);
            let e0 = fsv_error(&exact.fsv, &base.fsv)?;
            let noisy = run_protocol(kind, &fed, &cfg.protocol_params()?)?.report;
            let e1 = fsv_error(&noisy.fsv, &base.fsv)?;
            if !tables_equal || e0 > 1e-12 || e1 > 1e-3 {
                return Ok((
                    false,
                    format!("{name} {}: tables equal {tables_equal}, noiseless {e0:.2e}, noisy {e1:.2e}", kind.name()),
                ));
            }
            notes.push(format!("{name}/{} {e1:.1e}", kind.name()));
        }
    }
    Ok((true, format!("noiseless exact; noisy errors {}", notes.join(", "))))
}

fn zero_c2c() -> Verdict {
    let cfg = desk(mlp(1, 12), 12);
    let fed = prepare(&cfg)?;
    let params = cfg.protocol_params()?;
    let secsv = run_protocol(ProtocolKind::Secsv, &fed, &params)?.report;
    let hesv = run_protocol(ProtocolKind::Hesv, &fed, &params)?.report;
    let depth = cfg.architecture.depth() as u64;
    let models: u64 = fed.rounds.iter().map(|r| 1u64 << r.n_selected()).sum();
    let ok = secsv.cost.meter.hmult_c2c == 0 && hesv.cost.meter.hmult_c2c >= depth * models;
    Ok((
        ok,
        format!(
            "secsv c2c {}, hesv c2c {} over {models} models of depth {depth}",
            secsv.cost.meter.hmult_c2c, hesv.cost.meter.hmult_c2c
        ),
    ))
}

/// Skip and full evaluation of every round in the clear.
fn skip_audits(fed: &Federation) -> Result<(usize, usize, f64, Vec<f64>, Vec<f64>)> {
    let suite = TestSuite::new(&fed.tests)?;
    let (mut wrong, mut evaluations, mut dv) = (0usize, 0usize, 0.0f64);
    let (mut hat, mut exact) = (Vec::new(), Vec::new());
    for r in &fed.rounds {
        let skipped = nssv_round(r, &suite, true)?;
        let full = nssv_round(r, &suite, false)?;
        let audit = audit_skip(&skipped, &full)?;
        wrong += audit.wrongly_skipped;
        let n = r.n_selected();
        evaluations += ((1usize << n) - 1 - n) * suite.total();
        dv = dv.max(audit.delta_v_max);
        hat.push(ContributionVector::from_round(&r.selected, &ssv_exact(&skipped.table)?, fed.tests.len())?);
        exact.push(ContributionVector::from_round(&r.selected, &ssv_exact(&full.table)?, fed.tests.len())?);
    }
    Ok((wrong, evaluations, dv, fsv_aggregate(&hat).values, fsv_aggregate(&exact).values))
}

fn skip_exactness() -> Verdict {
    let mut rounds = 0;
    let mut wrong = 0;
    let mut mismatched = 0;
    for seed in 0..5 {
        let cfg = ExperimentConfig {
            seed: 100 + seed,
            rounds: 10,
            test_samples: 200,
            alpha: 0.3 + 0.2 * seed as f64,
            architecture: Architecture::Logistic,
            ..ExperimentConfig::default()
        };
        let fed = prepare(&cfg)?;
        rounds += fed.rounds.len();
        wrong += skip_audits(&fed)?.0;
        let params = cfg.protocol_params()?;
        let full = run_protocol(ProtocolKind::Secsv, &fed, &params)?.report;
        let skip = run_protocol(ProtocolKind::SecsvSkip, &fed, &params)?.report;
        if full.fsv != skip.fsv {
            mismatched += 1;
        }
    }
    let mut worst = 0.0f64;
    let mut bound_ok = true;
    for l in [2usize, 4, 8] {
        for seed in 0..3 {
            let cfg = ExperimentConfig {
                seed: 200 + seed,
                test_samples: 200,
                protocols: vec![ProtocolKind::Nssv],
                architecture: mlp(l - 1, 10),
                ..ExperimentConfig::default()
            };
            let fed = prepare(&cfg)?;
            let (w, evals, dv, hat, exact) = skip_audits(&fed)?;
            worst = worst.max(w as f64 / evals as f64);
            let bound = fed.rounds.len() as f64 * dv;
            bound_ok &= hat.iter().zip(&exact).all(|(a, b)| (a - b).abs() <= bound + 1e-12);
        }
    }
    let ok = rounds >= 50 && wrong == 0 && mismatched == 0 && worst < 0.02 && bound_ok;
    Ok((
        ok,
        format!(
            "{rounds} linear rounds, {wrong} wrong skips, {mismatched} FSV mismatches; mlp worst wrong {:.3}%, bound holds {bound_ok}",
            100.0 * worst
        ),
    ))
}

fn skip_effectiveness() -> Verdict {
    let cfg = ExperimentConfig {
        seed: 13,
        max_batch: Some(8),
        data: SyntheticSpec::Blobs { dim: 10, classes: 4, separation: 3.0 },
        ..ExperimentConfig::default()
    };
    let fed = prepare(&cfg)?;
    let params = cfg.protocol_params()?;
    let full = run_protocol(ProtocolKind::Secsv, &fed, &params)?.report;
    let skip = run_protocol(ProtocolKind::SecsvSkip, &fed, &params)?.report;
    let fraction = skip.skip_fraction.unwrap_or(0.0);
    let saving = 1.0 - skip.cost.weighted_cost / full.cost.weighted_cost;
    Ok((
        cfg.test_samples >= 500 && fraction >= 0.5 && saving >= 0.25,
        format!("M={}, skipped {:.1}%, cost saving {:.1}%", cfg.test_samples, 100.0 * fraction, 100.0 * saving),
    ))
}

fn shapley_axioms() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let values: Vec<f64> = (0..1u64 << n).map(|_| rng.random_range(0.0..1.0)).collect();
        let table = UtilityTable::from_fn(n, |m| values[m as usize]);
        let phi = ssv_exact(&table)?;
        let full = values[(1usize << n) - 1];
        if (phi.iter().sum::<f64>() - (full - values[0])).abs() > 1e-9 {
            return Ok((false, "efficiency".into()));
        }
        let (i, j) = (0usize, 1usize);
        let canonical = |m: u64| {
            let (bi, bj) = (m >> i & 1, m >> j & 1);
            if bi != bj {
                (m | 1 << i) & !(1 << j)
            } else {
                m
            }
        };
        let sym = ssv_exact(&UtilityTable::from_fn(n, |m| values[canonical(m) as usize]))?;
        if (sym[i] - sym[j]).abs() > 1e-9 {
            return Ok((false, "symmetry".into()));
        }
        let k = n - 1;
        let null = ssv_exact(&UtilityTable::from_fn(n, |m| values[(m & !(1 << k)) as usize]))?;
        if null[k].abs() > 1e-12 {
            return Ok((false, "null player".into()));
        }
    }
    let values: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
    let table = UtilityTable::from_fn(3, |m| values[m as usize]);
    let exact = ssv_exact(&table)?;
    let est = random_permutation_ssv(3, |m| Ok(values[m as usize]), 10_000, &mut rng)?;
    let linf = est.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((linf <= 0.05, format!("1000 tables; permutation sampling l-inf {linf:.2e}")))
}

fn secretsv_depth() -> Verdict {
    let mut errors = Vec::new();
    for l in [1usize, 2, 4, 8] {
        let arch = if l == 1 {
            Architecture::Logistic
        } else {
            Architecture::Mlp { hidden_layers: l - 1, width: 10, activation: Activation::Relu }
        };
        let cfg = ExperimentConfig {
            seed: 21,
            rounds: 2,
            learning_rate: 0.1,
            architecture: arch,
            ..ExperimentConfig::default()
        };
        let fed = prepare(&cfg)?;
        let base = run_protocol(ProtocolKind::Nssv, &fed, &cfg.protocol_params()?)?.report;
        let mut mean = 0.0;
        for trial in 0..4 {
            let params = ProtocolParams { seed: 300 + trial, ..cfg.protocol_params()? };
            mean += fsv_error(&run_protocol(ProtocolKind::Secretsv, &fed, &params)?.report.fsv, &base.fsv)? / 4.0;
        }
        errors.push(mean);
    }
    let monotone = errors.windows(2).all(|w| w[1] >= w[0]);
    let ok = monotone && errors[3] > 0.0 && errors[3] >= 10.0 * errors[0];
    Ok((
        ok,
        format!(
            "mean FSV error for L=1,2,4,8: {}",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn reports_identical(a: &Path, b: &Path) -> Result<bool> {
    for entry in std::fs::read_dir(a)? {
        let name = entry?.file_name();
        if name == "timings.json" {
            continue;
        }
        if std::fs::read(a.join(&name))? != std::fs::read(b.join(&name))? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn determinism_and_security() -> Verdict {
    let dir = tempfile::tempdir()?;
    let cfg = ExperimentConfig { test_samples: 120, trace: true, ..desk(mlp(1, 8), 5) };
    let runs = [(1usize, "a"), (1, "b"), (3, "c")];
    for (workers, name) in runs {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");
        pool.install(|| cmd_run(&cfg, &dir.path().join(name)))?;
    }
    let same = reports_identical(&dir.path().join("a"), &dir.path().join("b"))?
        && reports_identical(&dir.path().join("a"), &dir.path().join("c"))?;

    let basic = AssignmentPolicy { level: SecurityLevel::Basic, decryptors: vec![1], counter: Some(2) };
    let rejects_n3 =
        validate_assignment(&basic, 3, 1, None, &[0]).contains(&Violation::TooFewClients { n: 3, needed: 4 });
    let depth = 3;
    let full = AssignmentPolicy { level: SecurityLevel::Full, decryptors: vec![1, 2, 3], counter: None };
    let rejects_full = validate_assignment(&full, depth + 1, depth, None, &[0])
        .iter()
        .any(|v| matches!(v, Violation::TooFewClients { .. }));
    let attempts = server_decrypt_attempts();
    Ok((
        same && rejects_n3 && rejects_full && attempts == 0,
        format!("byte-identical {same}; rejects n=3 {rejects_n3}; rejects n=L+1 {rejects_full}; server decrypt attempts {attempts}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("matmul correctness", matmul_correctness),
        ("cost laws", cost_laws),
        ("per-sample advantage", per_sample_advantage),
        ("protocol exactness", protocol_exactness),
        ("zero c2c in SecSV", zero_c2c),
        ("SampleSkip exactness and error bound", skip_exactness),
        ("SampleSkip effectiveness", skip_effectiveness),
        ("Shapley axioms", shapley_axioms),
        ("SecretSV depth degradation", secretsv_depth),
        ("determinism and security constraints", determinism_and_security),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("criterion {:>2} {name}: {} ({detail})", i + 1, if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
