//! Exact per-round Shapley values from a subset utility table, the SampleSkip
//! accelerator, the permutation-sampling estimator and error metrics.
//!
//! Subsets of the `n` clients participating in a round are `u64` bitmasks over
//! their positions `0..n`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::members;

pub type IdSet = BTreeSet<u64>;

/// Utilities `v(S)` for every subset `S` of one round's `n` participants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    n: usize,
    values: Vec<Option<f64>>,
}

impl UtilityTable {
    pub fn new(n: usize) -> Self {
        assert!(n < 26, "2^{n} subsets is beyond desk scale");
        UtilityTable { n, values: vec![None; 1 << n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(u64) -> f64) -> Self {
        let mut t = UtilityTable::new(n);
        for mask in 0..(1u64 << n) {
            t.set(mask, f(mask));
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, mask: u64, v: f64) {
        self.values[mask as usize] = Some(v);
    }

    pub fn get(&self, mask: u64) -> Option<f64> {
        self.values.get(mask as usize).copied().flatten()
    }

    fn require(&self, mask: u64) -> Result<f64> {
        self.get(mask).ok_or_else(|| Error::IncompleteTable(members(mask)))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn full_mask(&self) -> u64 {
        (1u64 << self.n) - 1
    }

    /// Largest absolute entrywise difference (both tables must be complete).
    pub fn max_abs_diff(&self, other: &UtilityTable) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::Length(self.n, other.n));
        }
        let mut worst: f64 = 0.0;
        for mask in 0..(1u64 << self.n) {
            worst = worst.max((self.require(mask)? - other.require(mask)?).abs());
        }
        Ok(worst)
    }
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Exact Shapley values of the `n` participants, by position.
pub fn ssv_exact(table: &UtilityTable) -> Result<Vec<f64>> {
    let n = table.n();
    let fact = factorials(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for s in 0..(1u64 << n) {
            if s & bit != 0 {
                continue;
            }
            let k = s.count_ones() as usize;
            let w = fact[k] * fact[n - k - 1] / fact[n];
            *p += w * (table.require(s | bit)? - table.require(s)?);
        }
    }
    Ok(phi)
}

/// Per-client values over the whole federation (clients indexed globally).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub values: Vec<f64>,
}

impl ContributionVector {
    pub fn zeros(n: usize) -> Self {
        ContributionVector { values: vec![0.0; n] }
    }

    /// Scatters per-position SSVs onto global client ids; absent clients get 0.
    pub fn from_round(selected: &[usize], ssv: &[f64], total_clients: usize) -> Result<Self> {
        if selected.len() != ssv.len() {
            return Err(Error::Length(selected.len(), ssv.len()));
        }
        let mut v = vec![0.0; total_clients];
        for (&c, &x) in selected.iter().zip(ssv) {
            if c >= total_clients {
                return Err(Error::Shape(format!("client {c} outside federation of {total_clients}")));
            }
            v[c] = x;
        }
        Ok(ContributionVector { values: v })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Federated values: per-client sum over rounds (shorter vectors count as 0).
pub fn fsv_aggregate(rounds: &[ContributionVector]) -> ContributionVector {
    let n = rounds.iter().map(ContributionVector::len).max().unwrap_or(0);
    let mut out = vec![0.0; n];
    for r in rounds {
        for (o, v) in out.iter_mut().zip(&r.values) {
            *o += v;
        }
    }
    ContributionVector { values: out }
}

/// Euclidean distance.
pub fn fsv_error(estimate: &[f64], exact: &[f64]) -> Result<f64> {
    if estimate.len() != exact.len() {
        return Err(Error::Length(estimate.len(), exact.len()));
    }
    Ok(estimate.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

/// Non-empty subsets of `0..n` by ascending size, then lexicographically by members.
pub fn subsets_by_cardinality(n: usize) -> Vec<u64> {
    let mut all: Vec<u64> = (1..(1u64 << n)).collect();
    all.sort_by(|&a, &b| a.count_ones().cmp(&b.count_ones()).then_with(|| members(a).cmp(&members(b))));
    all
}

/// Correct-ID sets `Phi_S` recorded so far in one round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkipState {
    phi: HashMap<u64, IdSet>,
}

impl SkipState {
    pub fn record(&mut self, mask: u64, correct: IdSet) {
        self.phi.insert(mask, correct);
    }

    pub fn get(&self, mask: u64) -> Option<&IdSet> {
        self.phi.get(&mask)
    }
}

/// Union over bipartitions `(S', S \ S')` with both halves recorded of
/// `Phi_{S'} ∩ Phi_{S \ S'}`.
pub fn find_skippable(mask: u64, state: &SkipState) -> IdSet {
    let mut out = IdSet::new();
    if mask.count_ones() < 2 {
        return out;
    }
    // Enumerate proper non-empty S' containing the lowest member, so each
    // unordered bipartition is visited once.
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut sub = rest;
    loop {
        let left = sub | low;
        if left != mask {
            let right = mask & !left;
            if let (Some(a), Some(b)) = (state.get(left), state.get(right)) {
                out.extend(a.intersection(b).copied());
            }
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Evaluates one model (identified by its subset mask; `0` is the round's
/// global model) on a batch of test-sample ids and reports which were correct.
pub trait SecureTester {
    fn test(&mut self, mask: u64, ids: &[u64]) -> Result<IdSet>;
}

impl<F: FnMut(u64, &[u64]) -> Result<IdSet>> SecureTester for F {
    fn test(&mut self, mask: u64, ids: &[u64]) -> Result<IdSet> {
        self(mask, ids)
    }
}

/// Outcome of evaluating every subset of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundEvaluation {
    pub table: UtilityTable,
    pub correct: SkipState,
    /// `|Psi_S|` per subset (zero everywhere without skipping).
    pub skipped: BTreeMap<u64, usize>,
    /// Sample evaluations actually sent to the tester, including `v(∅)`.
    pub evaluated_samples: usize,
    pub total_samples: usize,
}

impl RoundEvaluation {
    /// Fraction of aggregate-model sample evaluations skipped, per subset size.
    pub fn skip_fraction_by_size(&self) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (&mask, &s) in &self.skipped {
            let k = mask.count_ones() as usize;
            if k >= 2 {
                let e = acc.entry(k).or_default();
                e.0 += s;
                e.1 += self.total_samples;
            }
        }
        acc.into_iter().map(|(k, (s, t))| (k, if t == 0 { 0.0 } else { s as f64 / t as f64 })).collect()
    }

    /// Skipped over all `|S| >= 2` sample evaluations.
    pub fn skip_fraction(&self) -> f64 {
        let (mut s, mut t) = (0usize, 0usize);
        for (&mask, &k) in &self.skipped {
            if mask.count_ones() >= 2 {
                s += k;
                t += self.total_samples;
            }
        }
        if t == 0 {
            0.0
        } else {
            s as f64 / t as f64
        }
    }
}

fn evaluate_round<T: SecureTester + ?Sized>(
    n: usize,
    ids: &[u64],
    tester: &mut T,
    skip: bool,
) -> Result<RoundEvaluation> {
    let total = ids.len();
    let utility = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    let mut table = UtilityTable::new(n);
    let mut state = SkipState::default();
    let mut skipped = BTreeMap::new();
    let mut evaluated = 0;

    let base = tester.test(0, ids)?;
    evaluated += total;
    table.set(0, utility(base.len()));
    for mask in subsets_by_cardinality(n) {
        let psi = if skip { find_skippable(mask, &state) } else { IdSet::new() };
        let batch: Vec<u64> = ids.iter().copied().filter(|id| !psi.contains(id)).collect();
        let mut correct = if batch.is_empty() { IdSet::new() } else { tester.test(mask, &batch)? };
        evaluated += batch.len();
        skipped.insert(mask, psi.len());
        correct.extend(psi);
        table.set(mask, utility(correct.len()));
        state.record(mask, correct);
    }
    Ok(RoundEvaluation { table, correct: state, skipped, evaluated_samples: evaluated, total_samples: total })
}

/// Tests every aggregate on the full test set.
pub fn full_round<T: SecureTester + ?Sized>(n: usize, ids: &[u64], tester: &mut T) -> Result<RoundEvaluation> {
    evaluate_round(n, ids, tester, false)
}

/// SampleSkip: locals on the full set, larger aggregates only on samples not
/// already settled by some bipartition of their members.
pub fn sample_skip_round<T: SecureTester + ?Sized>(n: usize, ids: &[u64], tester: &mut T) -> Result<RoundEvaluation> {
    evaluate_round(n, ids, tester, true)
}

/// Per-subset over-count of SampleSkip against full evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipAudit {
    /// `max_S (v_hat(S) - v(S))`.
    pub delta_v_max: f64,
    /// Wrongly skipped sample evaluations over all `|S| >= 2` evaluations.
    pub wrong_fraction: f64,
    pub wrongly_skipped: usize,
}

pub fn audit_skip(skipped: &RoundEvaluation, full: &RoundEvaluation) -> Result<SkipAudit> {
    let n = full.table.n();
    let mut audit = SkipAudit::default();
    let mut evaluations = 0usize;
    for mask in subsets_by_cardinality(n) {
        let hat = skipped.table.require(mask)?;
        let exact = full.table.require(mask)?;
        audit.delta_v_max = audit.delta_v_max.max(hat - exact);
        if let (Some(a), Some(b)) = (skipped.correct.get(mask), full.correct.get(mask)) {
            audit.wrongly_skipped += a.difference(b).count();
        }
        if mask.count_ones() >= 2 {
            evaluations += full.total_samples;
        }
    }
    audit.wrong_fraction = if evaluations == 0 { 0.0 } else { audit.wrongly_skipped as f64 / evaluations as f64 };
    Ok(audit)
}

/// Default permutation budget `n * ceil(ln n)` (at least 1).
pub fn default_ps_budget(n: usize) -> usize {
    (n * (n as f64).ln().ceil() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationEstimate {
    pub values: Vec<f64>,
    pub permutations: usize,
    /// Distinct subsets whose utility had to be evaluated.
    pub evaluated_subsets: usize,
}

fn factorial_capped(n: usize, cap: usize) -> usize {
    let mut f: usize = 1;
    for i in 2..=n {
        f = f.saturating_mul(i);
        if f > cap {
            return f;
        }
    }
    f
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Monte-Carlo marginal contributions over random orderings. With a budget of
/// at least `n!` every ordering is enumerated once, which is exact.
pub fn permutation_sampling_ssv<R: Rng + ?Sized>(
    n: usize,
    utility: impl FnMut(u64) -> Result<f64>,
    budget: usize,
    rng: &mut R,
) -> Result<PermutationEstimate> {
    check_budget(budget)?;
    if factorial_capped(n, budget) <= budget {
        marginal_average(n, utility, &all_permutations(n))
    } else {
        random_permutation_ssv(n, utility, budget, rng)
    }
}

/// Marginal contributions averaged over `budget` uniformly random orderings,
/// without switching to enumeration for small `n`.
pub fn random_permutation_ssv<R: Rng + ?Sized>(
    n: usize,
    utility: impl FnMut(u64) -> Result<f64>,
    budget: usize,
    rng: &mut R,
) -> Result<PermutationEstimate> {
    check_budget(budget)?;
    let base: Vec<usize> = (0..n).collect();
    let perms: Vec<Vec<usize>> = (0..budget)
        .map(|_| {
            let mut p = base.clone();
            p.shuffle(rng);
            p
        })
        .collect();
    marginal_average(n, utility, &perms)
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::Config { field: "ps_budget".into(), reason: "must be at least 1".into() });
    }
    Ok(())
}

fn marginal_average(
    n: usize,
    mut utility: impl FnMut(u64) -> Result<f64>,
    perms: &[Vec<usize>],
) -> Result<PermutationEstimate> {
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut v = |mask: u64| -> Result<f64> {
        if let Some(&x) = cache.get(&mask) {
            return Ok(x);
        }
        let x = utility(mask)?;
        cache.insert(mask, x);
        Ok(x)
    };
    let mut phi = vec![0.0; n];
    for p in perms {
        let mut mask = 0u64;
        let mut prev = v(0)?;
        for &i in p {
            mask |= 1 << i;
            let cur = v(mask)?;
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    for x in &mut phi {
        *x /= perms.len() as f64;
    }
    Ok(PermutationEstimate { values: phi, permutations: perms.len(), evaluated_subsets: cache.len() })
}
