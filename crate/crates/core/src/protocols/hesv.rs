//! One-server protocol: models and test data are both encrypted and every
//! linear layer runs the squaring kernel with ciphertext-ciphertext products.

use crate::error::{Error, Result};
use crate::federation::{members, Dataset, RoundModels};
use crate::he::{CipherVector, Evaluator, PublicKey};
use crate::matmul::squaring::{self, SquaringLhs, SquaringRhs, SquaringRhsOperand};
use crate::matmul::Method;
use crate::matrix::{argmax_columns, Matrix};
use crate::model::{LayerSpec, Model};
use crate::protocols::assignment::{AssignmentPolicy, RoundRobin};
use crate::protocols::party::Party;
use crate::protocols::report::ProtocolKind;
use crate::protocols::router::{PartyId, Payload, Router};
use crate::protocols::{
    check_rounds, evaluation_order, finish, join_chunks, model_owner, run_rounds, setup_keys, LayerPlans,
    ProtocolOutcome, ProtocolParams, RoundOutcome, TestSuite,
};
use crate::shapley::UtilityTable;

const SERVER: PartyId = PartyId::ServerP;

/// One client batch as the server stores it after upload.
struct StoredBatch {
    owner: usize,
    samples: usize,
    operand: Vec<SquaringRhs>,
    labels: CipherVector,
}

fn encrypt_operand(
    ev: &mut Evaluator,
    pk: &PublicKey,
    spec: &LayerSpec,
    plans: &LayerPlans,
    l: usize,
    x: &Matrix,
) -> Result<Vec<SquaringRhs>> {
    let op = spec.linear_operand(x, 1.0)?;
    let plan = &plans.plans[l];
    crate::matmul::column_chunks(op.cols(), plan.m)
        .into_iter()
        .map(|(start, w)| squaring::encrypt_rhs(ev, pk, &op.column_range(start, w), plan))
        .collect()
}

fn encrypt_model(ev: &mut Evaluator, pk: &PublicKey, model: &Model, plans: &LayerPlans) -> Result<Vec<SquaringLhs>> {
    model.weights().iter().zip(&plans.plans).map(|(w, p)| squaring::encrypt_lhs(ev, pk, w, p)).collect()
}

/// Secure testing of one encrypted model on one stored batch; returns the
/// correct count reported by the counting client.
fn test_batch(
    ev: &mut Evaluator,
    router: &mut Router,
    clients: &mut [Party],
    model: &[SquaringLhs],
    specs: &[LayerSpec],
    plans: &LayerPlans,
    batch: &StoredBatch,
    policy: &AssignmentPolicy,
) -> Result<u64> {
    let depth = specs.len();
    let mut operand: Option<Vec<SquaringRhs>> = None;
    let mut yhat: Option<CipherVector> = None;
    for l in 0..depth {
        let plan = &plans.plans[l];
        let chunks = operand.as_ref().unwrap_or(&batch.operand);
        let mut out = Vec::new();
        for chunk in chunks {
            out.extend(squaring::squaring_matmul(ev, &model[l], SquaringRhsOperand::Encrypted(chunk), plan)?);
        }
        let dec = policy.decryptors[l];
        let cts = router.transfer(SERVER, PartyId::Client(dec), Payload::Ciphertexts(out))?.into_ciphertexts()?;
        let client = &mut clients[dec];
        let slots = client.decrypt_all(ev, &cts)?;
        let widths: Vec<usize> = plans.chunks(l, specs, batch.samples).into_iter().map(|(_, w)| w).collect();
        let products =
            slots.chunks(plan.j_blocks()).map(|bands| squaring::decode(plan, bands)).collect::<Result<Vec<_>>>()?;
        let r = join_chunks(products, &widths)?;
        let z = specs[l].features_from_product(&r, batch.samples)?;
        let pk = client.public_key()?;
        if l + 1 < depth {
            let x = z.map(|v| specs[l].activation.apply(v));
            let next = encrypt_operand(ev, &pk, &specs[l + 1], plans, l + 1, &x)?;
            operand = Some(
                router
                    .transfer(PartyId::Client(dec), SERVER, Payload::SquaringOperand(next))?
                    .into_squaring_operand()?,
            );
        } else {
            let labels: Vec<f64> = argmax_columns(&z).as_slice().iter().map(|&y| y as f64).collect();
            let ct = ev.encrypt(&pk, &labels)?;
            let mut got =
                router.transfer(PartyId::Client(dec), SERVER, Payload::Ciphertexts(vec![ct]))?.into_ciphertexts()?;
            yhat = got.pop();
        }
    }
    let yhat = yhat.ok_or_else(|| Error::Message("no predicted labels".into()))?;
    let neg = ev.mult_scalar(&yhat, -1.0);
    let diff = ev.add(&batch.labels, &neg)?;
    let counter = policy.counter.ok_or_else(|| Error::Policy("no counting client assigned".into()))?;
    let cts =
        router.transfer(SERVER, PartyId::Client(counter), Payload::Ciphertexts(vec![diff]))?.into_ciphertexts()?;
    let slots = clients[counter].decrypt(ev, &cts[0])?;
    let cnt = slots[..batch.samples].iter().filter(|v| v.abs() < 0.5).count() as u64;
    router.transfer(PartyId::Client(counter), SERVER, Payload::Count(cnt))?.into_count()
}

/// Runs the one-server protocol over every round.
pub fn run_hesv(rounds: &[RoundModels], tests: &[Dataset], params: &ProtocolParams) -> Result<ProtocolOutcome> {
    check_rounds(rounds, tests)?;
    params.he.validate()?;
    let suite = TestSuite::new(tests)?;
    let n = suite.clients();
    let specs = rounds[0].global.specs().to_vec();
    let depth = specs.len();
    RoundRobin::new(n, depth, params.level, true)?;
    let plans = LayerPlans::for_params(Method::Squaring, &specs, params)?;

    // Setup: keys, then every client uploads its encrypted test batches once.
    let mut setup_router = if params.trace { Router::with_trace() } else { Router::new() };
    let mut ev = Evaluator::with_stream(params.he.clone(), 0);
    let (clients, _servers, leader) = setup_keys(&mut setup_router, n, params.seed, &[SERVER])?;
    let mut stored = Vec::new();
    for (c, data) in suite.sets.iter().enumerate() {
        let pk = clients[c].public_key()?;
        let cols: Vec<usize> = (0..data.len()).collect();
        for batch in cols.chunks(plans.batch) {
            let x = data.features.select_columns(batch);
            let operand = encrypt_operand(&mut ev, &pk, &specs[0], &plans, 0, &x)?;
            let labels: Vec<f64> = batch.iter().map(|&i| data.labels.as_slice()[i] as f64).collect();
            let y = ev.encrypt(&pk, &labels)?;
            let operand = setup_router
                .transfer(PartyId::Client(c), SERVER, Payload::SquaringOperand(operand))?
                .into_squaring_operand()?;
            let labels = setup_router
                .transfer(PartyId::Client(c), SERVER, Payload::Ciphertexts(vec![y]))?
                .into_ciphertexts()?
                .remove(0);
            stored.push(StoredBatch { owner: c, samples: batch.len(), operand, labels });
        }
    }
    let setup_meter = ev.take_meter();
    let total = suite.total() as f64;

    let outcomes = run_rounds(rounds, |round| {
        let mut router = if params.trace { Router::with_trace() } else { Router::new() };
        let mut ev = Evaluator::with_stream(params.he.clone(), round.round as u64 + 1);
        let mut clients = clients.clone();
        let mut rr = RoundRobin::new(n, depth, params.level, true)?;

        let mut locals = Vec::with_capacity(round.n_selected());
        for (pos, &c) in round.selected.iter().enumerate() {
            let pk = clients[c].public_key()?;
            let enc = encrypt_model(&mut ev, &pk, &round.locals[pos], &plans)?;
            locals
                .push(router.transfer(PartyId::Client(c), SERVER, Payload::SquaringModel(enc))?.into_squaring_model()?);
        }
        let pk = clients[leader].public_key()?;
        let enc = encrypt_model(&mut ev, &pk, &round.global, &plans)?;
        let global =
            router.transfer(PartyId::Client(leader), SERVER, Payload::SquaringModel(enc))?.into_squaring_model()?;

        let mut table = UtilityTable::new(round.n_selected());
        for mask in evaluation_order(round.n_selected()) {
            let model: Vec<SquaringLhs> = if mask == 0 {
                global.clone()
            } else {
                let pos = members(mask);
                let w = round.weights(&pos)?;
                (0..depth)
                    .map(|l| {
                        let parts: Vec<(&SquaringLhs, f64)> =
                            pos.iter().zip(&w).map(|(&p, &wi)| (&locals[p][l], wi)).collect();
                        SquaringLhs::weighted_sum(&mut ev, &parts)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let owner = model_owner(round, mask);
            let mut cnt = 0u64;
            for batch in &stored {
                let policy = rr.assign(owner, &[batch.owner])?;
                cnt += test_batch(&mut ev, &mut router, &mut clients, &model, &specs, &plans, batch, &policy)?;
            }
            table.set(mask, cnt as f64 / total);
        }
        let (traffic, trace) = router.into_parts();
        Ok(RoundOutcome { utilities: Some(table), meter: ev.take_meter(), traffic, trace, ..Default::default() })
    })?;
    finish(ProtocolKind::Hesv, rounds, &suite, params, setup_meter, setup_router, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Architecture};
    use crate::protocols::fixtures::toy_run;
    use crate::protocols::run_nssv;
    use crate::shapley::fsv_error;

    #[test]
    fn noiseless_matches_plaintext_exactly() {
        let (rounds, tests) = toy_run(4, 1, 21, &Architecture::Logistic);
        let params = ProtocolParams::default().noiseless();
        let out = run_hesv(&rounds, &tests, &params).unwrap();
        let base = run_nssv(&rounds, &tests).unwrap();
        assert_eq!(out.report.rounds[0].utilities, base.rounds[0].utilities);
        assert!(fsv_error(&out.report.fsv, &base.fsv).unwrap() <= 1e-12);
        assert!(out.report.cost.meter.hmult_c2c > 0);
    }

    #[test]
    fn two_layer_model_with_noise() {
        let arch = Architecture::Mlp { hidden_layers: 1, width: 5, activation: Activation::Sigmoid };
        let (rounds, tests) = toy_run(4, 1, 22, &arch);
        let params = ProtocolParams { seed: 3, ..ProtocolParams::default() };
        let out = run_hesv(&rounds, &tests, &params).unwrap();
        let base = run_nssv(&rounds, &tests).unwrap();
        assert!(fsv_error(&out.report.fsv, &base.fsv).unwrap() <= 1e-3);
        // At least one c2c product per layer for each of the 16 models.
        assert!(out.report.cost.meter.hmult_c2c >= 2 * 16);
    }

    #[test]
    fn too_few_clients_is_a_policy_error() {
        let (rounds, tests) = toy_run(3, 1, 23, &Architecture::Logistic);
        assert!(matches!(run_hesv(&rounds, &tests, &ProtocolParams::default()), Err(Error::Policy(_))));
    }

    #[test]
    fn byte_totals_match_pairs() {
        let (rounds, tests) = toy_run(4, 1, 24, &Architecture::Logistic);
        let params = ProtocolParams { trace: true, ..ProtocolParams::default() };
        let out = run_hesv(&rounds, &tests, &params).unwrap();
        let t = &out.report.cost.traffic;
        assert_eq!(t.bytes_by_pair.values().sum::<u64>(), t.total_bytes);
        let trace = out.trace.unwrap();
        assert_eq!(trace.len() as u64, t.messages);
        assert_eq!(trace.iter().map(|e| e.bytes).sum::<u64>(), t.total_bytes);
        assert!(!t.bytes_by_pair.keys().any(|k| k.starts_with("server_p->server")));
    }
}
