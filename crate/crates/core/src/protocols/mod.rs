//! End-to-end secure Shapley protocols over simulated parties.
//!
//! Every protocol evaluates, for each round, the utility of every aggregate
//! `θ_S` (and of the round's global model for `S = ∅`) on the pooled test set,
//! then turns the tables into SSVs and FSVs. Rounds run in parallel, each with
//! its own router, evaluator stream and randomness, and are merged in order.

pub mod assignment;
pub mod hesv;
pub mod nssv;
pub mod party;
pub mod report;
pub mod router;
pub mod secretsv;
pub mod secsv;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{members, Dataset, RoundModels};
use crate::he::{CostMeter, CostWeights, HEParams, KeyPair, DEFAULT_NOISE_STDDEV};
use crate::matmul::{column_chunks, MatMulPlan, Method};
use crate::matrix::{hstack, Matrix};
use crate::model::LayerSpec;
use crate::sharing::FieldParams;

pub use assignment::{validate_assignment, AssignmentPolicy, RoundRobin, SecurityLevel, Violation};
pub use hesv::run_hesv;
pub use nssv::{nssv_round, run_nssv};
pub use party::{server_decrypt_attempts, Party};
pub use report::{ContributionReport, ProtocolKind, ProtocolRunReport, RoundReport, RoundSkip};
pub use router::{PartyId, Payload, Router, TraceEntry, TrafficSummary};
pub use secretsv::run_secretsv;
pub use secsv::run_secsv;

/// Knobs shared by the secure protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub he: HEParams,
    pub field: FieldParams,
    pub level: SecurityLevel,
    pub weights: CostWeights,
    /// Real-valued masks are `r / 2^f` with integer `|r| < 2^mask_bits`.
    pub mask_bits: u32,
    /// Scalar multiplications the dealer may cover per round; `None` is unlimited.
    pub triple_budget: Option<u64>,
    /// Upper bound on samples per encrypted batch; `None` uses the largest legal batch.
    pub max_batch: Option<usize>,
    pub seed: u64,
    /// Keep a message trace in the outcome.
    pub trace: bool,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            he: HEParams { noise_stddev: DEFAULT_NOISE_STDDEV, ..HEParams::default() },
            field: FieldParams::default(),
            level: SecurityLevel::Basic,
            weights: CostWeights::default(),
            mask_bits: 20,
            triple_budget: None,
            max_batch: None,
            seed: 0,
            trace: false,
        }
    }
}

impl ProtocolParams {
    pub fn noiseless(mut self) -> Self {
        self.he.noise_stddev = 0.0;
        self
    }
}

/// A finished run: the report plus the optional message trace.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub report: ContributionReport,
    pub trace: Option<Vec<TraceEntry>>,
}

/// The clients' test sets viewed as one pooled set, in client-major order.
#[derive(Clone, Debug)]
pub struct TestSuite<'a> {
    pub sets: &'a [Dataset],
    /// All sample ids, client-major.
    pub ids: Vec<u64>,
    locate: HashMap<u64, (usize, usize)>,
}

impl<'a> TestSuite<'a> {
    pub fn new(sets: &'a [Dataset]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::Dataset("no test sets".into()))?;
        let mut ids = Vec::new();
        let mut locate = HashMap::new();
        for (c, d) in sets.iter().enumerate() {
            if d.dim() != first.dim() || d.classes != first.classes {
                return Err(Error::Dataset(format!("client {c} test set has a different layout")));
            }
            for (col, &id) in d.ids.iter().enumerate() {
                if locate.insert(id, (c, col)).is_some() {
                    return Err(Error::Dataset(format!("sample id {id} appears twice")));
                }
                ids.push(id);
            }
        }
        Ok(TestSuite { sets, ids, locate })
    }

    pub fn clients(&self) -> usize {
        self.sets.len()
    }

    pub fn total(&self) -> usize {
        self.ids.len()
    }

    pub fn locate(&self, id: u64) -> Result<(usize, usize)> {
        self.locate.get(&id).copied().ok_or_else(|| Error::Dataset(format!("unknown sample id {id}")))
    }

    /// Runs of `(client, columns)` covering `ids` in order.
    pub fn runs(&self, ids: &[u64]) -> Result<Vec<(usize, Vec<usize>)>> {
        let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
        for &id in ids {
            let (c, col) = self.locate(id)?;
            match out.last_mut() {
                Some((last, cols)) if *last == c => cols.push(col),
                _ => out.push((c, vec![col])),
            }
        }
        Ok(out)
    }

    pub fn label(&self, id: u64) -> Result<usize> {
        let (c, col) = self.locate(id)?;
        Ok(self.sets[c].labels.as_slice()[col])
    }
}

/// Operand columns for samples `cols` when each sample spans `per_sample` columns.
pub fn sample_columns(cols: &[usize], per_sample: usize) -> Vec<usize> {
    cols.iter().flat_map(|&c| (c * per_sample)..(c + 1) * per_sample).collect()
}

/// Gathers the operand columns of `runs` from per-client matrices.
pub fn gather(per_client: &[Matrix], runs: &[(usize, Vec<usize>)], per_sample: usize) -> Result<Matrix> {
    let parts: Vec<Matrix> =
        runs.iter().map(|(c, cols)| per_client[*c].select_columns(&sample_columns(cols, per_sample))).collect();
    hstack(&parts)
}

/// Per-layer plan and chunking for a kernel at a given sample batch.
#[derive(Clone, Debug)]
pub struct LayerPlans {
    pub method: Method,
    /// Samples per batch.
    pub batch: usize,
    pub plans: Vec<MatMulPlan>,
}

impl LayerPlans {
    /// Largest batch such that each layer's operand splits into whole-sample
    /// chunks wherever the kernel's capacity allows it.
    pub fn new(method: Method, specs: &[LayerSpec], slots: usize) -> Result<Self> {
        let mut batch = usize::MAX;
        for s in specs {
            let cap = MatMulPlan::max_batch(method, s.weight_rows(), s.weight_cols(), slots);
            if cap >= s.columns_per_sample() {
                batch = batch.min(cap / s.columns_per_sample());
            }
        }
        let batch = if batch == usize::MAX { 1 } else { batch.max(1) };
        Self::with_batch(method, specs, slots, batch)
    }

    pub fn with_batch(method: Method, specs: &[LayerSpec], slots: usize, batch: usize) -> Result<Self> {
        let plans = specs
            .iter()
            .map(|s| {
                let cap = MatMulPlan::max_batch(method, s.weight_rows(), s.weight_cols(), slots);
                let width = cap.min(batch * s.columns_per_sample()).max(1);
                MatMulPlan::new(method, s.weight_rows(), s.weight_cols(), width, slots)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerPlans { method, batch, plans })
    }

    /// Largest legal batch, capped by `params.max_batch`.
    pub fn for_params(method: Method, specs: &[LayerSpec], params: &ProtocolParams) -> Result<Self> {
        let full = Self::new(method, specs, params.he.slot_count)?;
        match params.max_batch {
            Some(0) => Err(Error::Config { field: "max_batch".into(), reason: "must be at least 1".into() }),
            Some(cap) if cap < full.batch => Self::with_batch(method, specs, params.he.slot_count, cap),
            _ => Ok(full),
        }
    }

    /// Column chunks of layer `l`'s operand for `samples` samples.
    pub fn chunks(&self, l: usize, specs: &[LayerSpec], samples: usize) -> Vec<(usize, usize)> {
        column_chunks(samples * specs[l].columns_per_sample(), self.plans[l].m)
    }
}

/// Reassembles a layer product from decoded chunk products.
pub fn join_chunks(products: Vec<Matrix>, widths: &[usize]) -> Result<Matrix> {
    let parts: Vec<Matrix> =
        products.into_iter().zip(widths).map(|(p, &w)| if p.cols() == w { p } else { p.column_range(0, w) }).collect();
    hstack(&parts)
}

/// Client owning the model under test, defined only for singletons.
pub fn model_owner(round: &RoundModels, mask: u64) -> Option<usize> {
    let m = members(mask);
    (m.len() == 1).then(|| round.selected[m[0]])
}

/// Masks in evaluation order: the global model, then by cardinality.
pub fn evaluation_order(n: usize) -> Vec<u64> {
    std::iter::once(0).chain(crate::shapley::subsets_by_cardinality(n)).collect()
}

pub(crate) fn round_rng(seed: u64, round: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17));
    rng.set_stream(round as u64 + 1);
    rng
}

/// Leader election and key generation; the leader broadcasts the key pair to
/// the other clients and the public key to the servers.
pub(crate) fn setup_keys(
    router: &mut Router,
    n: usize,
    seed: u64,
    servers: &[PartyId],
) -> Result<(Vec<Party>, Vec<Party>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c65_6164_6572);
    let leader = rng.random_range(0..n);
    let keys = KeyPair::generate(rng.random());
    let mut clients: Vec<Party> = (0..n).map(Party::client).collect();
    clients[leader].receive_keys(keys.public, Some(keys.secret));
    for (j, c) in clients.iter_mut().enumerate() {
        if j != leader {
            let (pk, sk) = router
                .transfer(
                    PartyId::Client(leader),
                    c.id,
                    Payload::KeyBroadcast { public: keys.public, secret: keys.secret },
                )?
                .into_keys()?;
            c.receive_keys(pk, Some(sk));
        }
    }
    let mut server_parties = Vec::new();
    for &s in servers {
        let pk = router.transfer(PartyId::Client(leader), s, Payload::PublicKey(keys.public))?.into_public_key()?;
        let mut p = Party::new(s);
        p.receive_keys(pk, None);
        server_parties.push(p);
    }
    Ok((clients, server_parties, leader))
}

pub(crate) fn check_rounds(rounds: &[RoundModels], tests: &[Dataset]) -> Result<()> {
    let first = rounds.first().ok_or_else(|| Error::Training("no rounds to evaluate".into()))?;
    for r in rounds {
        if r.selected.len() > 63 {
            return Err(Error::Shape(format!("{} selected clients exceed subset masks", r.selected.len())));
        }
        if let Some(&c) = r.selected.iter().find(|&&c| c >= tests.len()) {
            return Err(Error::Dataset(format!("round {} selects client {c} without a test set", r.round)));
        }
        if !r.global.same_architecture(&first.global) {
            return Err(Error::Shape("rounds use different architectures".into()));
        }
    }
    Ok(())
}

/// Everything a round contributes to the run.
#[derive(Clone, Debug, Default)]
pub(crate) struct RoundOutcome {
    pub utilities: Option<crate::shapley::UtilityTable>,
    pub skip: Option<RoundSkip>,
    pub meter: CostMeter,
    pub traffic: TrafficSummary,
    pub trace: Option<Vec<TraceEntry>>,
    pub field_mults: u64,
    pub layer_error: Vec<f64>,
}

/// Runs `f` on every round in parallel and collects in round order.
pub(crate) fn run_rounds<F>(rounds: &[RoundModels], f: F) -> Result<Vec<RoundOutcome>>
where
    F: Fn(&RoundModels) -> Result<RoundOutcome> + Sync + Send,
{
    rounds.par_iter().map(f).collect()
}

/// Merges per-round outcomes with the setup phase into a report.
pub(crate) fn finish(
    protocol: ProtocolKind,
    rounds: &[RoundModels],
    suite: &TestSuite<'_>,
    params: &ProtocolParams,
    setup_meter: CostMeter,
    setup_router: Router,
    outcomes: Vec<RoundOutcome>,
) -> Result<ProtocolOutcome> {
    let (mut traffic, setup_trace) = setup_router.into_parts();
    let mut trace = setup_trace;
    let mut tables = Vec::with_capacity(rounds.len());
    let mut per_round = Vec::with_capacity(rounds.len());
    let mut field_mults = 0;
    let mut layer_error: Vec<f64> = Vec::new();
    for (r, o) in rounds.iter().zip(outcomes) {
        traffic.merge(&o.traffic);
        if let (Some(t), Some(mut more)) = (trace.as_mut(), o.trace) {
            let base = t.len() as u64;
            for e in &mut more {
                e.seq += base;
            }
            t.extend(more);
        }
        per_round.push(o.meter);
        field_mults += o.field_mults;
        if layer_error.len() < o.layer_error.len() {
            layer_error.resize(o.layer_error.len(), 0.0);
        }
        for (acc, e) in layer_error.iter_mut().zip(&o.layer_error) {
            *acc = acc.max(*e);
        }
        let table = o.utilities.ok_or_else(|| Error::Message(format!("round {} produced no utilities", r.round)))?;
        tables.push((r.round, r.selected.clone(), table, o.skip));
    }
    let cost = ProtocolRunReport::assemble(params.weights, setup_meter, per_round, traffic, field_mults);
    let mut report = ContributionReport::from_tables(protocol, suite.clients(), suite.total(), tables, cost)?;
    if protocol == ProtocolKind::Secretsv {
        report.layer_error = Some(layer_error);
    }
    Ok(ProtocolOutcome { report, trace })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    #[test]
    fn batch_respects_every_layer() {
        let specs = vec![LayerSpec::dense(15, 15, Activation::Sigmoid), LayerSpec::dense(15, 4, Activation::Sigmoid)];
        let sq = LayerPlans::new(Method::Squaring, &specs, 2048).unwrap();
        assert_eq!(sq.batch, 16);
        let rd = LayerPlans::new(Method::Reducing, &specs, 2048).unwrap();
        assert_eq!(rd.batch, 2048 / 15);
        assert_eq!(rd.plans[1].m, 2048 / 15);
    }

    #[test]
    fn conv_layer_is_chunked_when_a_sample_does_not_fit() {
        let conv = LayerSpec::conv(6, 6, 3, 2, Activation::Square).unwrap();
        let specs = vec![conv, LayerSpec::dense(conv.out_size, 4, Activation::Identity)];
        let sq = LayerPlans::new(Method::Squaring, &specs, 2048).unwrap();
        // Conv operand has 16 columns per sample but squaring holds 10.
        assert_eq!(sq.plans[0].m, 10);
        assert_eq!(sq.batch, 33);
        assert_eq!(sq.chunks(0, &specs, 2).len(), 4);
    }

    #[test]
    fn suite_locates_samples() {
        let a = Dataset::with_ids(Matrix::zeros(2, 2), vec![0, 1], 2, vec![10, 11]).unwrap();
        let b = Dataset::with_ids(Matrix::zeros(2, 1), vec![1], 2, vec![20]).unwrap();
        let sets = [a, b];
        let s = TestSuite::new(&sets).unwrap();
        assert_eq!(s.ids, vec![10, 11, 20]);
        assert_eq!(s.locate(20).unwrap(), (1, 0));
        assert_eq!(s.runs(&[11, 20, 10]).unwrap(), vec![(0, vec![1]), (1, vec![0]), (0, vec![0])]);
        assert_eq!(s.label(11).unwrap(), 1);
        let dup = [sets[0].clone(), sets[0].clone()];
        assert!(TestSuite::new(&dup).is_err());
    }

    #[test]
    fn order_starts_with_global_model() {
        assert_eq!(evaluation_order(2), vec![0, 1, 2, 3]);
    }
}
