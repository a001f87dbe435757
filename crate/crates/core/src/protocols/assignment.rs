//! Which client decrypts each layer's output.
//!
//! `i_1` is the owner (or owners, for pooled batches) of the samples under
//! test. Client `i_{l+1}` receives the output of layer `l`; `i_{L+1}` also
//! computes the predicted labels, and `i_{L+2}` (one-server protocol only)
//! counts the correct ones.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityLevel {
    /// Consecutive decryptors differ; needs `n >= 4`.
    #[default]
    Basic,
    /// All of `i_1..i_{L+1}` differ; needs `n >= L + 2`.
    Full,
}

impl SecurityLevel {
    pub fn min_clients(self, depth: usize) -> usize {
        match self {
            SecurityLevel::Basic => 4,
            SecurityLevel::Full => (depth + 2).max(4),
        }
    }
}

/// Decryptors for one model on one batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPolicy {
    pub level: SecurityLevel,
    /// `i_2..i_{L+1}`.
    pub decryptors: Vec<usize>,
    /// `i_{L+2}`, present when a client counts correct predictions.
    pub counter: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    TooFewClients { n: usize, needed: usize },
    WrongLength { got: usize, want: usize },
    UnknownClient { client: usize },
    RepeatsPrevious { layer: usize, client: usize },
    OwnsModel { layer: usize, client: usize },
    LabelsAtBatchOwner { client: usize },
    CounterIsLabeler { client: usize },
    NotDistinct { client: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewClients { n, needed } => write!(f, "{n} clients, level needs at least {needed}"),
            Violation::WrongLength { got, want } => write!(f, "{got} decryptors for {want} layers"),
            Violation::UnknownClient { client } => write!(f, "client {client} does not exist"),
            Violation::RepeatsPrevious { layer, client } => {
                write!(f, "client {client} decrypts layer {layer} right after handling its input")
            }
            Violation::OwnsModel { layer, client } => {
                write!(f, "client {client} decrypts layer {layer} of its own model")
            }
            Violation::LabelsAtBatchOwner { client } => {
                write!(f, "client {client} predicts labels for its own samples")
            }
            Violation::CounterIsLabeler { client } => write!(f, "client {client} both predicts and counts"),
            Violation::NotDistinct { client } => write!(f, "client {client} appears twice in the decryptor chain"),
        }
    }
}

/// Checks every constraint; never fails, returns what is wrong.
pub fn validate_assignment(
    policy: &AssignmentPolicy,
    n: usize,
    depth: usize,
    model_owner: Option<usize>,
    batch_owners: &[usize],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let needed = policy.level.min_clients(depth);
    if n < needed {
        out.push(Violation::TooFewClients { n, needed });
    }
    if policy.decryptors.len() != depth {
        out.push(Violation::WrongLength { got: policy.decryptors.len(), want: depth });
        return out;
    }
    for &c in policy.decryptors.iter().chain(policy.counter.iter()).chain(batch_owners) {
        if c >= n {
            out.push(Violation::UnknownClient { client: c });
        }
    }
    let owners: BTreeSet<usize> = batch_owners.iter().copied().collect();
    for (i, &c) in policy.decryptors.iter().enumerate() {
        let layer = i + 1;
        let repeats = if i == 0 { owners.contains(&c) } else { policy.decryptors[i - 1] == c };
        if repeats {
            out.push(Violation::RepeatsPrevious { layer, client: c });
        }
        if model_owner == Some(c) {
            out.push(Violation::OwnsModel { layer, client: c });
        }
    }
    if let Some(&last) = policy.decryptors.last() {
        if owners.contains(&last) {
            out.push(Violation::LabelsAtBatchOwner { client: last });
        }
        if policy.counter == Some(last) {
            out.push(Violation::CounterIsLabeler { client: last });
        }
    }
    if policy.level == SecurityLevel::Full {
        let mut seen = owners.clone();
        for &c in &policy.decryptors {
            if !seen.insert(c) {
                out.push(Violation::NotDistinct { client: c });
            }
        }
    }
    out
}

/// Deterministic round-robin decryptor choice. `cursor` rotates the starting
/// client so successive evaluations spread the load.
#[derive(Clone, Debug)]
pub struct RoundRobin {
    n: usize,
    depth: usize,
    level: SecurityLevel,
    with_counter: bool,
    cursor: usize,
}

impl RoundRobin {
    pub fn new(n: usize, depth: usize, level: SecurityLevel, with_counter: bool) -> Result<Self> {
        let needed = level.min_clients(depth);
        if n < needed {
            return Err(Error::Policy(format!("{n} clients, {level:?} level with {depth} layers needs {needed}")));
        }
        Ok(RoundRobin { n, depth, level, with_counter, cursor: 0 })
    }

    /// Largest number of batch owners a pooled batch may have so that an
    /// assignment always exists whatever the model owner is.
    pub fn max_pool(&self) -> usize {
        let outside = match self.level {
            SecurityLevel::Basic => self.depth.min(2),
            SecurityLevel::Full => self.depth,
        };
        // `outside` eligible clients beyond the owners and one model owner.
        self.n.saturating_sub(outside + 1).max(1)
    }

    pub fn assign(&mut self, model_owner: Option<usize>, batch_owners: &[usize]) -> Result<AssignmentPolicy> {
        let owners: BTreeSet<usize> = batch_owners.iter().copied().collect();
        let start = self.cursor;
        self.cursor = (self.cursor + 1) % self.n;
        let mut chain: Vec<usize> = Vec::with_capacity(self.depth);
        for layer in 1..=self.depth {
            let prev = chain.last().copied();
            let ok = |c: usize| {
                if model_owner == Some(c) || owners.contains(&c) || prev == Some(c) {
                    return false;
                }
                !(self.level == SecurityLevel::Full && chain.contains(&c))
            };
            let offset = start + layer - 1;
            let pick = (0..self.n).map(|k| (offset + k) % self.n).find(|&c| ok(c)).ok_or_else(|| {
                Error::Policy(format!(
                    "no eligible decryptor for layer {layer} (owners {batch_owners:?}, model owner {model_owner:?})"
                ))
            })?;
            chain.push(pick);
        }
        let counter = if self.with_counter {
            let last = *chain.last().expect("depth >= 1");
            Some((1..self.n).map(|k| (last + k) % self.n).next().expect("n >= 2"))
        } else {
            None
        };
        let policy = AssignmentPolicy { level: self.level, decryptors: chain, counter };
        let v = validate_assignment(&policy, self.n, self.depth, model_owner, batch_owners);
        if let Some(first) = v.first() {
            return Err(Error::Policy(first.to_string()));
        }
        Ok(policy)
    }
}
