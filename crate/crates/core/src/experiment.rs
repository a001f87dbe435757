//! Experiment driver behind the CLI: data generation, FedAvg training, protocol
//! runs with report files, and the kernel microbenchmark.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::{dirichlet_partition_many, fedavg_train, Dataset, RoundModels};
use crate::he::{CostWeights, HEParams};
use crate::matmul::{self, MatMulPlan, Method};
use crate::matrix::Matrix;
use crate::protocols::{
    router::write_trace, run_hesv, run_nssv, run_secretsv, run_secsv, ContributionReport, ProtocolKind,
    ProtocolOutcome, ProtocolParams,
};
use crate::shapley::{fsv_aggregate, fsv_error, permutation_sampling_ssv, ContributionVector};

/// Offset separating test-sample ids from training ids.
const TEST_ID_OFFSET: u64 = 1_000_000;

/// Client data and the trained rounds of one federation.
#[derive(Clone, Debug)]
pub struct Federation {
    pub trains: Vec<Dataset>,
    pub tests: Vec<Dataset>,
    pub rounds: Vec<RoundModels>,
}

/// Synthetic train/test data split among the clients.
pub fn generate_data(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<Dataset>, Vec<Dataset>)> {
    let train = cfg.data.generate(cfg.train_samples, cfg.seed, rng)?;
    let test = cfg.data.generate(cfg.test_samples, cfg.seed, rng)?.with_id_offset(TEST_ID_OFFSET);
    let mut parts = dirichlet_partition_many(&[&train, &test], cfg.clients, cfg.alpha, rng)?;
    let tests = parts.pop().expect("two datasets");
    let trains = parts.pop().expect("two datasets");
    Ok((trains, tests))
}

fn client_file(dir: &Path, split: &str, c: usize) -> PathBuf {
    dir.join(format!("{split}_client{c}.csv"))
}

/// Reads the per-client CSVs written by [`cmd_gen_data`]; ids are renumbered
/// consecutively across clients.
pub fn load_data(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<Dataset>, Vec<Dataset>)> {
    let classes = Some(cfg.data.classes());
    let load = |split: &str, mut next: u64| -> Result<Vec<Dataset>> {
        (0..cfg.clients)
            .map(|c| {
                let d = Dataset::load_csv(&client_file(dir, split, c), classes)?.with_id_offset(next);
                next += d.len() as u64;
                Ok(d)
            })
            .collect()
    };
    Ok((load("train", 0)?, load("test", TEST_ID_OFFSET)?))
}

/// Data plus FedAvg training, deterministic in `cfg.seed`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Federation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (trains, tests) = match &cfg.data_dir {
        Some(dir) => load_data(cfg, dir)?,
        None => generate_data(cfg, &mut rng)?,
    };
    let rounds = fedavg_train(&trains, &cfg.architecture, &cfg.train_config(), &mut rng)?;
    Ok(Federation { trains, tests, rounds })
}

pub fn run_protocol(kind: ProtocolKind, fed: &Federation, params: &ProtocolParams) -> Result<ProtocolOutcome> {
    match kind {
        ProtocolKind::Nssv => Ok(ProtocolOutcome { report: run_nssv(&fed.rounds, &fed.tests)?, trace: None }),
        ProtocolKind::Hesv => run_hesv(&fed.rounds, &fed.tests, params),
        ProtocolKind::Secsv => run_secsv(&fed.rounds, &fed.tests, params, false),
        ProtocolKind::SecsvSkip => run_secsv(&fed.rounds, &fed.tests, params, true),
        ProtocolKind::Secretsv => run_secretsv(&fed.rounds, &fed.tests, params),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub budget: usize,
    pub fsv: Vec<f64>,
    pub error_vs_nssv: f64,
}

/// Cross-protocol comparison; every number is derived from the reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocols: Vec<ProtocolKind>,
    pub clients: usize,
    pub rounds: usize,
    pub test_samples: usize,
    pub weighted_cost: BTreeMap<String, f64>,
    /// `"a/b"` is the weighted cost of `a` over that of `b`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub speedups: BTreeMap<String, f64>,
    /// Euclidean FSV distance to the plaintext reference.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fsv_error_vs_nssv: BTreeMap<String, f64>,
    /// Percentage of sample evaluations skipped, per round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_percent_by_round: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation_sampling: Option<PermutationSummary>,
}

/// Builds the summary from finished reports.
pub fn summarize(reports: &[ContributionReport], ps_budget: usize, seed: u64) -> Result<Summary> {
    let first = reports.first().ok_or_else(|| Error::Message("no reports to summarize".into()))?;
    let by_kind: BTreeMap<ProtocolKind, &ContributionReport> = reports.iter().map(|r| (r.protocol, r)).collect();
    let weighted_cost = reports.iter().map(|r| (r.protocol.name().to_string(), r.cost.weighted_cost)).collect();

    let he: Vec<&ContributionReport> =
        reports.iter().filter(|r| r.protocol != ProtocolKind::Nssv && r.cost.weighted_cost > 0.0).collect();
    let mut speedups = BTreeMap::new();
    for (i, a) in he.iter().enumerate() {
        for b in &he[i + 1..] {
            let key = format!("{}/{}", a.protocol.name(), b.protocol.name());
            speedups.insert(key, a.cost.weighted_cost / b.cost.weighted_cost);
        }
    }

    let mut errors = BTreeMap::new();
    let mut permutation_sampling = None;
    if let Some(base) = by_kind.get(&ProtocolKind::Nssv) {
        for r in reports.iter().filter(|r| r.protocol != ProtocolKind::Nssv) {
            errors.insert(r.protocol.name().to_string(), fsv_error(&r.fsv, &base.fsv)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7073);
        let per_round = base
            .rounds
            .iter()
            .map(|r| {
                let table = r.utility_table();
                let est = permutation_sampling_ssv(
                    r.selected.len(),
                    |m| table.get(m).ok_or_else(|| Error::IncompleteTable(crate::federation::members(m))),
                    ps_budget,
                    &mut rng,
                )?;
                ContributionVector::from_round(&r.selected, &est.values, base.clients)
            })
            .collect::<Result<Vec<_>>>()?;
        let fsv = fsv_aggregate(&per_round).values;
        let error_vs_nssv = fsv_error(&fsv, &base.fsv)?;
        permutation_sampling = Some(PermutationSummary { budget: ps_budget, fsv, error_vs_nssv });
    }

    let skip_percent_by_round = by_kind
        .get(&ProtocolKind::SecsvSkip)
        .map(|r| r.rounds.iter().map(|rr| rr.skip.as_ref().map_or(0.0, |s| 100.0 * s.fraction)).collect())
        .unwrap_or_default();

    Ok(Summary {
        protocols: reports.iter().map(|r| r.protocol).collect(),
        clients: first.clients,
        rounds: first.rounds.len(),
        test_samples: first.test_samples,
        weighted_cost,
        speedups,
        fsv_error_vs_nssv: errors,
        skip_percent_by_round,
        permutation_sampling,
    })
}

/// Files written by [`cmd_run`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub reports: Vec<ContributionReport>,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))
}

/// Trains, runs every configured protocol and writes one report per
/// protocol, `summary.json`, the resolved config and `timings.json`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunArtifacts> {
    let fed = prepare(cfg)?;
    let params = cfg.protocol_params()?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    write(out.join("config.toml"), &cfg.to_toml()?, &mut files)?;
    let mut reports = Vec::new();
    let mut timings = BTreeMap::new();
    for kind in cfg.protocol_list() {
        let start = Instant::now();
        let outcome = run_protocol(kind, &fed, &params)?;
        timings.insert(kind.name().to_string(), start.elapsed().as_secs_f64());
        write(out.join(format!("{}.json", kind.name())), &outcome.report.to_json()?, &mut files)?;
        if let Some(trace) = &outcome.trace {
            let path = out.join(format!("{}.trace.jsonl", kind.name()));
            write_trace(trace, std::fs::File::create(&path)?)?;
            files.push(path);
        }
        reports.push(outcome.report);
    }
    let summary = summarize(&reports, cfg.ps_budget(), cfg.seed)?;
    write(out.join("summary.json"), &to_json(&summary)?, &mut files)?;
    write(out.join("timings.json"), &to_json(&timings)?, &mut files)?;
    Ok(RunArtifacts { reports, summary, files })
}

/// Writes per-client train and test CSVs.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (trains, tests) = generate_data(cfg, &mut rng)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (split, sets) in [("train", &trains), ("test", &tests)] {
        for (c, d) in sets.iter().enumerate() {
            let path = client_file(out, split, c);
            d.write_csv(&path)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Matrix shapes `(d_out, d_in)` of the kernel benchmark.
pub const BENCH_SHAPES: [(usize, usize); 7] = [(4, 300), (2, 48), (64, 256), (10, 64), (32, 64), (32, 32), (2, 32)];

/// Costs of one kernel on one shape, normalised by the batch size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCost {
    pub batch: usize,
    pub hmult: u64,
    pub hrot: u64,
    pub ops_per_sample: f64,
    pub full_weighted_per_sample: f64,
    pub half_weighted_per_sample: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub d_out: usize,
    pub d_in: usize,
    pub squaring: KernelCost,
    pub reducing: KernelCost,
    /// Squaring over reducing, metered multiplications plus rotations per sample.
    pub ops_ratio: f64,
    /// Weighted ratio with `B` encrypted.
    pub full_ratio: f64,
    /// Weighted ratio with `B` in plaintext.
    pub half_ratio: f64,
}

fn kernel_cost(
    method: Method,
    d_out: usize,
    d_in: usize,
    he: &HEParams,
    w: &CostWeights,
    rng: &mut ChaCha8Rng,
) -> Result<KernelCost> {
    let m = MatMulPlan::max_batch(method, d_out, d_in, he.slot_count);
    let a = Matrix::from_fn(d_out, d_in, |_, _| rng.random_range(-1.0..1.0));
    let b = Matrix::from_fn(d_in, m, |_, _| rng.random_range(-1.0..1.0));
    let full = matmul::evaluate(method, he, &a, &b, true)?;
    let half = matmul::evaluate(method, he, &a, &b, false)?;
    let per = |x: f64| x / m as f64;
    Ok(KernelCost {
        batch: m,
        hmult: full.kernel_cost.hmult(),
        hrot: full.kernel_cost.hrot,
        ops_per_sample: per(full.kernel_cost.mult_rot_ops() as f64),
        full_weighted_per_sample: per(full.kernel_cost.weighted(w)),
        half_weighted_per_sample: per(half.kernel_cost.weighted(w)),
    })
}

/// Runs both kernels on each shape at maximal batch. Shapes neither kernel
/// accepts are skipped and reported as warnings.
pub fn bench_matmul(shapes: &[(usize, usize)], slot_count: usize, seed: u64) -> Result<(Vec<BenchRow>, Vec<String>)> {
    let he = HEParams::new(slot_count, 0.0, seed)?;
    let w = CostWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &(d_out, d_in) in shapes {
        let run = |rng: &mut ChaCha8Rng| -> Result<BenchRow> {
            if d_out == 0 || d_in == 0 || d_out > d_in {
                return Err(Error::Plan(format!("{d_out}x{d_in} needs 1 <= d_out <= d_in")));
            }
            let squaring = kernel_cost(Method::Squaring, d_out, d_in, &he, &w, rng)?;
            let reducing = kernel_cost(Method::Reducing, d_out, d_in, &he, &w, rng)?;
            Ok(BenchRow {
                d_out,
                d_in,
                squaring,
                reducing,
                ops_ratio: squaring.ops_per_sample / reducing.ops_per_sample,
                full_ratio: squaring.full_weighted_per_sample / reducing.full_weighted_per_sample,
                half_ratio: squaring.half_weighted_per_sample / reducing.half_weighted_per_sample,
            })
        };
        match run(&mut rng) {
            Ok(row) => rows.push(row),
            Err(e) => warnings.push(format!("skipping shape {d_out}x{d_in}: {e}")),
        }
    }
    Ok((rows, warnings))
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "d_out,d_in,squaring_batch,squaring_hmult,squaring_hrot,squaring_ops_per_sample,\
         squaring_full_per_sample,squaring_half_per_sample,reducing_batch,reducing_hmult,reducing_hrot,\
         reducing_ops_per_sample,reducing_full_per_sample,reducing_half_per_sample,ops_ratio,full_ratio,half_ratio\n",
    );
    for r in rows {
        let k = |c: &KernelCost| {
            format!(
                "{},{},{},{},{},{}",
                c.batch, c.hmult, c.hrot, c.ops_per_sample, c.full_weighted_per_sample, c.half_weighted_per_sample
            )
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.d_out,
            r.d_in,
            k(&r.squaring),
            k(&r.reducing),
            r.ops_ratio,
            r.full_ratio,
            r.half_ratio
        ));
    }
    out
}

/// Parses `"4x300,2x48"` into shapes.
pub fn parse_shapes(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) =
                s.split_once(['x', 'X']).ok_or_else(|| Error::Parse(format!("shape `{s}` is not ROWSxCOLS")))?;
            let p = |t: &str| t.trim().parse::<usize>().map_err(|e| Error::Parse(format!("shape `{s}`: {e}")));
            Ok((p(a)?, p(b)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            clients: 4,
            rounds: 1,
            train_samples: 120,
            test_samples: 60,
            architecture: Architecture::Logistic,
            protocols: vec![ProtocolKind::Nssv, ProtocolKind::Secsv],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn nssv_only_summary_has_no_ratios() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { protocols: vec![ProtocolKind::Nssv], ..quick() };
        let run = cmd_run(&cfg, dir.path()).unwrap();
        assert!(run.summary.speedups.is_empty());
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        assert!(!text.contains("speedups"));
        assert!(dir.path().join("nssv.json").exists());
    }

    #[test]
    fn summary_is_recomputable_from_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick();
        let run = cmd_run(&cfg, dir.path()).unwrap();
        let reports: Vec<ContributionReport> = cfg
            .protocol_list()
            .iter()
            .map(|k| {
                let text = std::fs::read_to_string(dir.path().join(format!("{}.json", k.name()))).unwrap();
                serde_json::from_str(&text).unwrap()
            })
            .collect();
        assert_eq!(summarize(&reports, cfg.ps_budget(), cfg.seed).unwrap(), run.summary);
        assert!(run.summary.speedups.contains_key("secsv/secsv_skip"));
        assert_eq!(run.summary.skip_percent_by_round.len(), 1);
    }

    #[test]
    fn gen_data_round_trips_through_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { protocols: vec![ProtocolKind::Nssv], ..quick() };
        let files = cmd_gen_data(&cfg, dir.path()).unwrap();
        assert_eq!(files.len(), 8);
        let loaded = ExperimentConfig { data_dir: Some(dir.path().to_path_buf()), ..cfg.clone() };
        let a = prepare(&cfg).unwrap();
        let b = prepare(&loaded).unwrap();
        let sizes = |f: &Federation| f.tests.iter().map(Dataset::len).collect::<Vec<_>>();
        assert_eq!(sizes(&a), sizes(&b));
        for (x, y) in a.tests.iter().zip(&b.tests) {
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.features, y.features);
        }
    }

    #[test]
    fn bench_skips_invalid_shapes() {
        let (rows, warnings) = bench_matmul(&[(2, 32), (40, 8), (1, 1)], 2048, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(warnings.len(), 1);
        let one = rows[1];
        assert_eq!((one.squaring.hmult, one.squaring.hrot, one.reducing.hmult, one.reducing.hrot), (1, 0, 1, 0));
        assert!(bench_csv(&rows).lines().count() == 3);
    }

    #[test]
    fn shape_parsing() {
        assert_eq!(parse_shapes("4x300, 2X48").unwrap(), vec![(4, 300), (2, 48)]);
        assert!(parse_shapes("4by3").is_err());
    }
}
