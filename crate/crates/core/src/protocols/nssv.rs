//! Plaintext reference protocol: aggregates are evaluated in the clear.

use crate::error::Result;
use crate::federation::{Dataset, RoundModels};
use crate::he::CostWeights;
use crate::matrix::{hstack, Matrix};
use crate::protocols::report::{ContributionReport, ProtocolKind, ProtocolRunReport, RoundSkip};
use crate::protocols::{check_rounds, TestSuite};
use crate::shapley::{full_round, sample_skip_round, IdSet, RoundEvaluation};

/// Plaintext evaluation of `θ_S` on arbitrary sample ids.
pub struct PlainTester<'r, 's> {
    round: &'r RoundModels,
    suite: &'s TestSuite<'s>,
}

impl<'r, 's> PlainTester<'r, 's> {
    pub fn new(round: &'r RoundModels, suite: &'s TestSuite<'s>) -> Self {
        PlainTester { round, suite }
    }

    pub fn correct(&self, mask: u64, ids: &[u64]) -> Result<IdSet> {
        let model = self.round.aggregate_mask(mask)?;
        let runs = self.suite.runs(ids)?;
        let parts: Vec<Matrix> =
            runs.iter().map(|(c, cols)| self.suite.sets[*c].features.select_columns(cols)).collect();
        let x = hstack(&parts)?;
        let pred = model.predict(&x)?;
        let mut out = IdSet::new();
        for (k, &id) in ids.iter().enumerate() {
            if pred.as_slice()[k] == self.suite.label(id)? {
                out.insert(id);
            }
        }
        Ok(out)
    }
}

/// One round evaluated in the clear, with or without SampleSkip.
pub fn nssv_round(round: &RoundModels, suite: &TestSuite<'_>, skip: bool) -> Result<RoundEvaluation> {
    let tester = PlainTester::new(round, suite);
    let mut f = |mask: u64, ids: &[u64]| tester.correct(mask, ids);
    if skip {
        sample_skip_round(round.n_selected(), &suite.ids, &mut f)
    } else {
        full_round(round.n_selected(), &suite.ids, &mut f)
    }
}

/// Ground-truth utilities, SSVs and FSVs.
pub fn run_nssv(rounds: &[RoundModels], tests: &[Dataset]) -> Result<ContributionReport> {
    use rayon::prelude::*;
    check_rounds(rounds, tests)?;
    let suite = TestSuite::new(tests)?;
    let evals = rounds.par_iter().map(|r| nssv_round(r, &suite, false)).collect::<Result<Vec<_>>>()?;
    let tables =
        rounds.iter().zip(evals).map(|(r, e)| (r.round, r.selected.clone(), e.table, None::<RoundSkip>)).collect();
    let cost = ProtocolRunReport::assemble(
        CostWeights::default(),
        Default::default(),
        vec![Default::default(); rounds.len()],
        Default::default(),
        0,
    );
    ContributionReport::from_tables(ProtocolKind::Nssv, suite.clients(), suite.total(), tables, cost)
}

/// SampleSkip evaluation of one round in the clear, for auditing skips.
pub fn nssv_skip_round(round: &RoundModels, suite: &TestSuite<'_>) -> Result<RoundEvaluation> {
    nssv_round(round, suite, true)
}
