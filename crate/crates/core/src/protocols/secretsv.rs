//! Two-server protocol on additive secret sharing alone: models and data are
//! shared over `Z_p` and every linear layer is a Beaver-triple product.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::federation::{members, Dataset, RoundModels};
use crate::matrix::{argmax_columns, Matrix};
use crate::model::LayerSpec;
use crate::protocols::assignment::{AssignmentPolicy, RoundRobin};
use crate::protocols::report::ProtocolKind;
use crate::protocols::router::{PartyId, Payload, Router};
use crate::protocols::{
    check_rounds, finish, model_owner, round_rng, run_rounds, setup_keys, ProtocolOutcome, ProtocolParams,
    RoundOutcome, TestSuite,
};
use crate::shapley::{full_round, IdSet};
use crate::sharing::{beaver_open_bytes, share_matmul, FieldParams, SharedMatrix, TripleDealer};

const P: PartyId = PartyId::ServerP;
const A: PartyId = PartyId::ServerA;
const DEALER: PartyId = PartyId::Dealer;

/// Sends both halves of a shared matrix from `from` to P and A.
fn deal(router: &mut Router, field: FieldParams, from: PartyId, s: SharedMatrix) -> Result<SharedMatrix> {
    let prime = router.transfer(from, P, Payload::FieldShares { field, shares: s.prime })?.into_field_shares()?;
    let dprime = router.transfer(from, A, Payload::FieldShares { field, shares: s.dprime })?.into_field_shares()?;
    Ok(SharedMatrix { prime, dprime })
}

struct Batch<'a> {
    operand: &'a SharedMatrix,
    labels: &'a SharedMatrix,
    features: &'a Matrix,
    ids: &'a [u64],
}

struct RoundState<'a> {
    router: Router,
    dealer: TripleDealer,
    rng: ChaCha8Rng,
    field: FieldParams,
    specs: &'a [LayerSpec],
    field_mults: u64,
    layer_error: Vec<f64>,
}

impl RoundState<'_> {
    fn product(&mut self, w: &SharedMatrix, x: &SharedMatrix) -> Result<SharedMatrix> {
        let ((r, k), (_, c)) = (w.shape(), x.shape());
        let field = self.field;
        let before = self.dealer.issued_bytes();
        let triple = self.dealer.matrix_triple(r, k, c)?;
        let half = (self.dealer.issued_bytes() - before) / 2;
        self.router.transfer(DEALER, P, Payload::TripleBytes(half))?;
        self.router.transfer(DEALER, A, Payload::TripleBytes(half))?;
        let open = beaver_open_bytes(&field, r, k, c) / 2;
        self.router.transfer(P, A, Payload::BeaverOpen(open))?;
        self.router.transfer(A, P, Payload::BeaverOpen(open))?;
        self.field_mults += 5 * (r * k * c) as u64;
        share_matmul(&field, w, x, &triple)
    }

    /// Secure inference of the shared model on one client's samples; returns
    /// the ids P finds correctly classified.
    fn test_batch(
        &mut self,
        model: &[SharedMatrix],
        plain: &crate::model::Model,
        batch: &Batch<'_>,
        policy: &AssignmentPolicy,
    ) -> Result<IdSet> {
        let field = self.field;
        let specs = self.specs;
        let samples = batch.ids.len();
        let mut operand = batch.operand.clone();
        let mut reference = batch.features.clone();
        let mut yhat = None;
        for (l, spec) in specs.iter().enumerate() {
            let z = self.product(&model[l], &operand)?;
            let dec = PartyId::Client(policy.decryptors[l]);
            let zp =
                self.router.transfer(P, dec, Payload::FieldShares { field, shares: z.prime })?.into_field_shares()?;
            let za =
                self.router.transfer(A, dec, Payload::FieldShares { field, shares: z.dprime })?.into_field_shares()?;
            let product = SharedMatrix { prime: zp, dprime: za }.reconstruct(&field)?;
            let z = spec.features_from_product(&product, samples)?;

            let expect = plain.linear(l, &reference)?;
            let err = z.sub(&expect)?.max_abs();
            self.layer_error[l] = self.layer_error[l].max(err);
            reference = expect.map(|v| spec.activation.apply(v));

            if l + 1 < specs.len() {
                let x = z.map(|v| spec.activation.apply(v));
                let op = specs[l + 1].linear_operand(&x, 1.0)?;
                let shared = SharedMatrix::split(&field, &op, &mut self.rng)?;
                operand = deal(&mut self.router, field, dec, shared)?;
            } else {
                let labels = argmax_columns(&z).to_row();
                let shared = SharedMatrix::split(&field, &labels, &mut self.rng)?;
                yhat = Some(deal(&mut self.router, field, dec, shared)?);
            }
        }
        let yhat = yhat.expect("depth >= 1");
        let diff_a = yhat.dprime.sub(&field, &batch.labels.dprime)?;
        let diff_a = self.router.transfer(A, P, Payload::FieldShares { field, shares: diff_a })?.into_field_shares()?;
        let diff = yhat.prime.sub(&field, &batch.labels.prime)?.add(&field, &diff_a)?;
        Ok(batch.ids.iter().zip(diff.data()).filter(|(_, &v)| field.decode(v).abs() < 0.5).map(|(&id, _)| id).collect())
    }
}

/// Runs the secret-sharing-only protocol over every round.
pub fn run_secretsv(rounds: &[RoundModels], tests: &[Dataset], params: &ProtocolParams) -> Result<ProtocolOutcome> {
    check_rounds(rounds, tests)?;
    params.field.require_mult_headroom()?;
    let field = params.field;
    let suite = TestSuite::new(tests)?;
    let n = suite.clients();
    let specs = rounds[0].global.specs().to_vec();
    let depth = specs.len();
    RoundRobin::new(n, depth, params.level, false)?;

    // Setup: every client shares its layer-1 operand and labels once.
    let mut setup_router = if params.trace { Router::with_trace() } else { Router::new() };
    let mut rng = round_rng(params.seed, 0, 0x7365_6372);
    let (_clients, _servers, leader) = setup_keys(&mut setup_router, n, params.seed, &[P, A])?;
    let mut operands = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (c, data) in suite.sets.iter().enumerate() {
        let me = PartyId::Client(c);
        let op = specs[0].linear_operand(&data.features, 1.0)?;
        operands.push(deal(&mut setup_router, field, me, SharedMatrix::split(&field, &op, &mut rng)?)?);
        let y = SharedMatrix::split(&field, &data.labels.to_row(), &mut rng)?;
        labels.push(deal(&mut setup_router, field, me, y)?);
    }
    let client_ids: Vec<Vec<u64>> = suite.sets.iter().map(|d| d.ids.clone()).collect();

    let outcomes = run_rounds(rounds, |round| {
        let mut st = RoundState {
            router: if params.trace { Router::with_trace() } else { Router::new() },
            dealer: TripleDealer::new(
                field,
                params.seed ^ (round.round as u64).wrapping_mul(0x9e37_79b9),
                params.triple_budget,
            ),
            rng: round_rng(params.seed, round.round + 1, 0x7365_6372),
            field,
            specs: &specs,
            field_mults: 0,
            layer_error: vec![0.0; depth],
        };
        let mut rr = RoundRobin::new(n, depth, params.level, false)?;

        let mut shared_models: Vec<Vec<SharedMatrix>> = Vec::with_capacity(round.n_selected() + 1);
        let owners = round.selected.iter().copied().zip(&round.locals).chain(std::iter::once((leader, &round.global)));
        for (c, model) in owners {
            let layers = model
                .weights()
                .iter()
                .map(|w| {
                    let s = SharedMatrix::split(&field, w, &mut st.rng)?;
                    deal(&mut st.router, field, PartyId::Client(c), s)
                })
                .collect::<Result<Vec<_>>>()?;
            shared_models.push(layers);
        }
        let global_idx = round.n_selected();

        let mut tester = |mask: u64, ids: &[u64]| -> Result<IdSet> {
            let model: Vec<SharedMatrix> = if mask == 0 {
                shared_models[global_idx].clone()
            } else {
                let pos = members(mask);
                let w = round.weights(&pos)?;
                (0..depth)
                    .map(|l| {
                        let mut acc = shared_models[pos[0]][l].scale_public(&field, w[0])?;
                        for (&p, &wi) in pos.iter().zip(&w).skip(1) {
                            acc = acc.add(&field, &shared_models[p][l].scale_public(&field, wi)?)?;
                        }
                        Ok(acc)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let plain = round.aggregate_mask(mask)?;
            let owner = model_owner(round, mask);
            let mut correct = IdSet::new();
            for c in 0..n {
                if !ids.iter().any(|&id| suite.locate(id).map(|(o, _)| o == c).unwrap_or(false)) {
                    continue;
                }
                let policy = rr.assign(owner, &[c])?;
                let batch = Batch {
                    operand: &operands[c],
                    labels: &labels[c],
                    features: &suite.sets[c].features,
                    ids: &client_ids[c],
                };
                correct.extend(st.test_batch(&model, &plain, &batch, &policy)?);
            }
            Ok(correct)
        };
        let eval = full_round(round.n_selected(), &suite.ids, &mut tester)?;
        let (traffic, trace) = st.router.into_parts();
        Ok(RoundOutcome {
            utilities: Some(eval.table),
            meter: Default::default(),
            traffic,
            trace,
            field_mults: st.field_mults,
            layer_error: st.layer_error,
            ..Default::default()
        })
    })?;
    finish(ProtocolKind::Secretsv, rounds, &suite, params, Default::default(), setup_router, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::{Activation, Architecture};
    use crate::protocols::fixtures::toy_run;
    use crate::protocols::run_nssv;
    use crate::shapley::fsv_error;

    #[test]
    fn logistic_close_to_plaintext() {
        let (rounds, tests) = toy_run(4, 2, 41, &Architecture::Logistic);
        let out = run_secretsv(&rounds, &tests, &ProtocolParams::default()).unwrap();
        let base = run_nssv(&rounds, &tests).unwrap();
        assert!(fsv_error(&out.report.fsv, &base.fsv).unwrap() <= 1e-2);
        assert!(out.report.cost.phases.field_mults > 0);
        assert!(out.report.cost.phases.share_generation_bytes > 0);
        assert_eq!(out.report.cost.meter.hmult_c2c + out.report.cost.meter.hmult_c2p, 0);
    }

    #[test]
    fn layer_error_reported_per_layer() {
        let arch = Architecture::Mlp { hidden_layers: 2, width: 5, activation: Activation::Sigmoid };
        let (rounds, tests) = toy_run(5, 1, 42, &arch);
        let out = run_secretsv(&rounds, &tests, &ProtocolParams::default()).unwrap();
        let err = out.report.layer_error.unwrap();
        assert_eq!(err.len(), 3);
        assert!(err.iter().all(|&e| e > 0.0 && e < 0.05));
    }

    #[test]
    fn layer_error_shrinks_with_precision() {
        let arch = Architecture::Mlp { hidden_layers: 1, width: 5, activation: Activation::Sigmoid };
        let (rounds, tests) = toy_run(4, 1, 44, &arch);
        let worst: Vec<f64> = [12, 16, 20, 24, 30]
            .into_iter()
            .map(|f| {
                let params =
                    ProtocolParams { field: FieldParams::for_frac_bits(f).unwrap(), ..ProtocolParams::default() };
                let err = run_secretsv(&rounds, &tests, &params).unwrap().report.layer_error.unwrap();
                err.into_iter().fold(0.0, f64::max)
            })
            .collect();
        for pair in worst.windows(2) {
            assert!(pair[1] < pair[0], "{worst:?}");
        }
        assert!(worst[4] < 1e-6, "{worst:?}");
    }

    #[test]
    fn triple_budget_exhaustion() {
        let (rounds, tests) = toy_run(4, 1, 43, &Architecture::Logistic);
        let params = ProtocolParams { triple_budget: Some(100), ..ProtocolParams::default() };
        assert!(matches!(run_secretsv(&rounds, &tests, &params), Err(Error::TripleExhausted { .. })));
    }
}
