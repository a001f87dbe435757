//! Two-server protocol: models are encrypted once per round, test data is
//! secret-shared between servers P and A, and each server multiplies the
//! encrypted model with its plaintext share using the reducing kernel, so no
//! ciphertext-ciphertext product is ever needed.
//!
//! Features and activations travel as real-valued masked shares
//! `x' = r / 2^f`, `x'' = x - x'`; labels travel as shares over `Z_p`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::federation::{members, Dataset, RoundModels};
use crate::he::{CipherVector, Evaluator, PublicKey};
use crate::matmul::reducing::{self, ReducingLhs, ReducingRhsOperand};
use crate::matmul::Method;
use crate::matrix::{argmax_columns, Matrix};
use crate::model::{LayerSpec, Model};
use crate::protocols::assignment::{AssignmentPolicy, RoundRobin};
use crate::protocols::party::Party;
use crate::protocols::report::{ProtocolKind, RoundSkip};
use crate::protocols::router::{PartyId, Payload, Router};
use crate::protocols::{
    check_rounds, finish, gather, join_chunks, model_owner, round_rng, run_rounds, setup_keys, LayerPlans,
    ProtocolOutcome, ProtocolParams, RoundOutcome, TestSuite,
};
use crate::shapley::{full_round, sample_skip_round, IdSet};
use crate::sharing::{FieldParams, ShareMatrix, SharedMatrix};

const P: PartyId = PartyId::ServerP;
const A: PartyId = PartyId::ServerA;

/// Splits `x` into `(x', x'')` with `x' = r / 2^f`, `|r| < 2^mask_bits`.
pub fn mask_split<R: Rng + ?Sized>(x: &Matrix, frac_bits: u32, mask_bits: u32, rng: &mut R) -> (Matrix, Matrix) {
    let bound = 1i64 << mask_bits;
    let scale = (-(frac_bits as f64)).exp2();
    let prime = Matrix::from_fn(x.rows(), x.cols(), |_, _| rng.random_range(-bound + 1..bound) as f64 * scale);
    let dprime = x.sub(&prime).expect("same shape");
    (prime, dprime)
}

/// What each server holds for one client's test set.
#[derive(Clone)]
struct ServerShares {
    operand: Vec<Matrix>,
    labels: Vec<ShareMatrix>,
}

struct Ctx<'a> {
    specs: &'a [LayerSpec],
    plans: &'a LayerPlans,
    field: FieldParams,
    mask_bits: u32,
    suite: &'a TestSuite<'a>,
}

fn encrypt_model(ev: &mut Evaluator, pk: &PublicKey, model: &Model, plans: &LayerPlans) -> Result<Vec<ReducingLhs>> {
    model.weights().iter().zip(&plans.plans).map(|(w, p)| reducing::encrypt_lhs(ev, pk, w, p)).collect()
}

fn server_products(
    ev: &mut Evaluator,
    lhs: &ReducingLhs,
    operand: &Matrix,
    ctx: &Ctx<'_>,
    l: usize,
) -> Result<Vec<CipherVector>> {
    let plan = &ctx.plans.plans[l];
    crate::matmul::column_chunks(operand.cols(), plan.m)
        .into_iter()
        .map(|(start, w)| {
            reducing::reducing_matmul(ev, lhs, ReducingRhsOperand::Plain(&operand.column_range(start, w)), plan)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn test_batch(
    ev: &mut Evaluator,
    router: &mut Router,
    clients: &mut [Party],
    rng: &mut ChaCha8Rng,
    model_p: &[ReducingLhs],
    model_a: &[ReducingLhs],
    shares_p: &ServerShares,
    shares_a: &ServerShares,
    ctx: &Ctx<'_>,
    ids: &[u64],
    policy: &AssignmentPolicy,
) -> Result<IdSet> {
    let specs = ctx.specs;
    let depth = specs.len();
    let runs = ctx.suite.runs(ids)?;
    let samples = ids.len();
    let per_sample = specs[0].columns_per_sample();
    let mut op_p = gather(&shares_p.operand, &runs, per_sample)?;
    let mut op_a = gather(&shares_a.operand, &runs, per_sample)?;
    let label_cols = |s: &ServerShares| -> Result<ShareMatrix> {
        let parts: Vec<ShareMatrix> = runs.iter().map(|(c, cols)| s.labels[*c].select_columns(cols)).collect();
        ShareMatrix::hstack(&parts)
    };
    let (mut yhat_p, mut yhat_a) = (None, None);
    for l in 0..depth {
        let cts_p = server_products(ev, &model_p[l], &op_p, ctx, l)?;
        let cts_a = server_products(ev, &model_a[l], &op_a, ctx, l)?;
        let from_a = router.transfer(A, P, Payload::Ciphertexts(cts_a))?.into_ciphertexts()?;
        let combined = cts_p.iter().zip(&from_a).map(|(x, y)| ev.add(x, y)).collect::<Result<Vec<_>>>()?;
        let dec = policy.decryptors[l];
        let cts = router.transfer(P, PartyId::Client(dec), Payload::Ciphertexts(combined))?.into_ciphertexts()?;
        let slots = clients[dec].decrypt_all(ev, &cts)?;
        let plan = &ctx.plans.plans[l];
        let products = slots.iter().map(|s| reducing::decode(plan, s)).collect::<Result<Vec<_>>>()?;
        let widths: Vec<usize> = ctx.plans.chunks(l, specs, samples).into_iter().map(|(_, w)| w).collect();
        let z = specs[l].features_from_product(&join_chunks(products, &widths)?, samples)?;
        if l + 1 < depth {
            let x = z.map(|v| specs[l].activation.apply(v));
            let op = specs[l + 1].linear_operand(&x, 1.0)?;
            let (xp, xa) = mask_split(&op, ctx.field.frac_bits(), ctx.mask_bits, rng);
            op_p = router.transfer(PartyId::Client(dec), P, Payload::Reals(xp))?.into_reals()?;
            op_a = router.transfer(PartyId::Client(dec), A, Payload::Reals(xa))?.into_reals()?;
        } else {
            let labels = argmax_columns(&z).to_row();
            let shared = SharedMatrix::split(&ctx.field, &labels, rng)?;
            let field = ctx.field;
            yhat_p = Some(
                router
                    .transfer(PartyId::Client(dec), P, Payload::FieldShares { field, shares: shared.prime })?
                    .into_field_shares()?,
            );
            yhat_a = Some(
                router
                    .transfer(PartyId::Client(dec), A, Payload::FieldShares { field, shares: shared.dprime })?
                    .into_field_shares()?,
            );
        }
    }
    let field = ctx.field;
    let (yhat_p, yhat_a) = (yhat_p.expect("depth >= 1"), yhat_a.expect("depth >= 1"));
    let diff_a = yhat_a.sub(&field, &label_cols(shares_a)?)?;
    let diff_a = router.transfer(A, P, Payload::FieldShares { field, shares: diff_a })?.into_field_shares()?;
    let diff = yhat_p.sub(&field, &label_cols(shares_p)?)?.add(&field, &diff_a)?;
    Ok(ids.iter().zip(diff.data()).filter(|(_, &v)| field.decode(v).abs() < 0.5).map(|(&id, _)| id).collect())
}

/// Runs the two-server protocol; `skip` turns SampleSkip on.
pub fn run_secsv(
    rounds: &[RoundModels],
    tests: &[Dataset],
    params: &ProtocolParams,
    skip: bool,
) -> Result<ProtocolOutcome> {
    check_rounds(rounds, tests)?;
    params.he.validate()?;
    let suite = TestSuite::new(tests)?;
    let n = suite.clients();
    let specs = rounds[0].global.specs().to_vec();
    let depth = specs.len();
    let pool = RoundRobin::new(n, depth, params.level, false)?.max_pool();
    let plans = LayerPlans::for_params(Method::Reducing, &specs, params)?;
    let ctx = Ctx { specs: &specs, plans: &plans, field: params.field, mask_bits: params.mask_bits, suite: &suite };

    // Setup: keys, then every client shares its test set with both servers.
    let mut setup_router = if params.trace { Router::with_trace() } else { Router::new() };
    let mut rng = round_rng(params.seed, 0, 0x7365_7473);
    let (clients, _servers, leader) = setup_keys(&mut setup_router, n, params.seed, &[P, A])?;
    let mut shares_p = ServerShares { operand: Vec::new(), labels: Vec::new() };
    let mut shares_a = shares_p.clone();
    for (c, data) in suite.sets.iter().enumerate() {
        let op = specs[0].linear_operand(&data.features, 1.0)?;
        let (xp, xa) = mask_split(&op, params.field.frac_bits(), params.mask_bits, &mut rng);
        let y = SharedMatrix::split(&params.field, &data.labels.to_row(), &mut rng)?;
        let field = params.field;
        let me = PartyId::Client(c);
        shares_p.operand.push(setup_router.transfer(me, P, Payload::Reals(xp))?.into_reals()?);
        shares_a.operand.push(setup_router.transfer(me, A, Payload::Reals(xa))?.into_reals()?);
        shares_p
            .labels
            .push(setup_router.transfer(me, P, Payload::FieldShares { field, shares: y.prime })?.into_field_shares()?);
        shares_a
            .labels
            .push(setup_router.transfer(me, A, Payload::FieldShares { field, shares: y.dprime })?.into_field_shares()?);
    }
    let groups: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(pool).map(<[usize]>::to_vec).collect();
    let group_of: Vec<usize> = (0..n).map(|c| c / pool).collect();

    let outcomes = run_rounds(rounds, |round| {
        let mut router = if params.trace { Router::with_trace() } else { Router::new() };
        let mut ev = Evaluator::with_stream(params.he.clone(), round.round as u64 + 1);
        let mut rng = round_rng(params.seed, round.round + 1, 0x7365_7473);
        let mut clients = clients.clone();
        let mut rr = RoundRobin::new(n, depth, params.level, false)?;

        // Each client encrypts its model once and sends it to both servers.
        let mut locals_p = Vec::new();
        let mut locals_a = Vec::new();
        let owners: Vec<(usize, &Model)> =
            round.selected.iter().copied().zip(&round.locals).chain(std::iter::once((leader, &round.global))).collect();
        for (c, model) in owners {
            let pk = clients[c].public_key()?;
            let enc = encrypt_model(&mut ev, &pk, model, &plans)?;
            let me = PartyId::Client(c);
            locals_p.push(router.transfer(me, P, Payload::ReducingModel(enc.clone()))?.into_reducing_model()?);
            locals_a.push(router.transfer(me, A, Payload::ReducingModel(enc))?.into_reducing_model()?);
        }
        let global_idx = round.n_selected();

        let mut tester = |mask: u64, ids: &[u64]| -> Result<IdSet> {
            let aggregate = |ev: &mut Evaluator, locals: &[Vec<ReducingLhs>]| -> Result<Vec<ReducingLhs>> {
                if mask == 0 {
                    return Ok(locals[global_idx].clone());
                }
                let pos = members(mask);
                let w = round.weights(&pos)?;
                (0..depth)
                    .map(|l| {
                        let parts: Vec<(&ReducingLhs, f64)> =
                            pos.iter().zip(&w).map(|(&p, &wi)| (&locals[p][l], wi)).collect();
                        ReducingLhs::weighted_sum(ev, &parts)
                    })
                    .collect()
            };
            let model_p = aggregate(&mut ev, &locals_p)?;
            let model_a = aggregate(&mut ev, &locals_a)?;
            let owner = model_owner(round, mask);
            let mut correct = IdSet::new();
            for group in &groups {
                let in_group: Vec<u64> = ids
                    .iter()
                    .copied()
                    .filter(|&id| suite.locate(id).map(|(c, _)| group_of[c] == group_of[group[0]]).unwrap_or(false))
                    .collect();
                for batch in in_group.chunks(plans.batch) {
                    let mut batch_owners: Vec<usize> =
                        batch.iter().map(|&id| suite.locate(id).map(|(c, _)| c)).collect::<Result<Vec<_>>>()?;
                    batch_owners.dedup();
                    let policy = rr.assign(owner, &batch_owners)?;
                    correct.extend(test_batch(
                        &mut ev,
                        &mut router,
                        &mut clients,
                        &mut rng,
                        &model_p,
                        &model_a,
                        &shares_p,
                        &shares_a,
                        &ctx,
                        batch,
                        &policy,
                    )?);
                }
            }
            Ok(correct)
        };
        let eval = if skip {
            sample_skip_round(round.n_selected(), &suite.ids, &mut tester)?
        } else {
            full_round(round.n_selected(), &suite.ids, &mut tester)?
        };
        let (traffic, trace) = router.into_parts();
        Ok(RoundOutcome {
            utilities: Some(eval.table.clone()),
            skip: skip.then(|| RoundSkip::from(&eval)),
            meter: ev.take_meter(),
            traffic,
            trace,
            ..Default::default()
        })
    })?;
    let kind = if skip { ProtocolKind::SecsvSkip } else { ProtocolKind::Secsv };
    finish(kind, rounds, &suite, params, Default::default(), setup_router, outcomes)
}
