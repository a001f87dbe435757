//! Serializable run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::he::{CostMeter, CostWeights};
use crate::protocols::router::TrafficSummary;
use crate::shapley::{fsv_aggregate, ssv_exact, ContributionVector, RoundEvaluation, UtilityTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Nssv,
    Hesv,
    Secsv,
    SecsvSkip,
    Secretsv,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] =
        [ProtocolKind::Nssv, ProtocolKind::Hesv, ProtocolKind::Secsv, ProtocolKind::SecsvSkip, ProtocolKind::Secretsv];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Nssv => "nssv",
            ProtocolKind::Hesv => "hesv",
            ProtocolKind::Secsv => "secsv",
            ProtocolKind::SecsvSkip => "secsv_skip",
            ProtocolKind::Secretsv => "secretsv",
        }
    }

    pub fn parse(s: &str) -> Option<ProtocolKind> {
        ProtocolKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Costs grouped the way the evaluation tables break them down. The three
/// weighted columns add up to `CostMeter::weighted` of the run meter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCosts {
    /// Weighted homomorphic multiplications, additions and rotations.
    pub arithmetic: f64,
    /// Weighted encryptions.
    pub encryption: f64,
    /// Weighted decryptions.
    pub decryption: f64,
    /// Bytes exchanged between parties, dealer traffic excluded.
    pub communication_bytes: u64,
    /// Bytes of Beaver triple material shipped by the dealer.
    pub share_generation_bytes: u64,
    /// Scalar multiplications in `Z_p` done by the servers.
    pub field_mults: u64,
}

impl PhaseCosts {
    pub fn from_parts(meter: &CostMeter, w: &CostWeights, traffic: &TrafficSummary, field_mults: u64) -> Self {
        let share_generation_bytes = traffic.bytes_by_kind.get("triple").copied().unwrap_or(0);
        PhaseCosts {
            arithmetic: w.c2c * meter.hmult_c2c as f64
                + w.c2p * meter.hmult_c2p as f64
                + w.add * meter.hadd as f64
                + w.rot * meter.hrot as f64,
            encryption: w.enc * meter.enc as f64,
            decryption: w.dec * meter.dec as f64,
            communication_bytes: traffic.total_bytes - share_generation_bytes,
            share_generation_bytes,
            field_mults,
        }
    }

    pub fn weighted_total(&self) -> f64 {
        self.arithmetic + self.encryption + self.decryption
    }
}

/// Metered cost of one protocol run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRunReport {
    pub weights: CostWeights,
    /// Sum of `setup` and every entry of `per_round`.
    pub meter: CostMeter,
    pub setup: CostMeter,
    pub per_round: Vec<CostMeter>,
    pub weighted_cost: f64,
    pub phases: PhaseCosts,
    pub traffic: TrafficSummary,
}

impl ProtocolRunReport {
    pub fn assemble(
        weights: CostWeights,
        setup: CostMeter,
        per_round: Vec<CostMeter>,
        traffic: TrafficSummary,
        field_mults: u64,
    ) -> Self {
        let mut meter = setup;
        for m in &per_round {
            meter.merge(m);
        }
        let phases = PhaseCosts::from_parts(&meter, &weights, &traffic, field_mults);
        ProtocolRunReport { weights, meter, setup, per_round, weighted_cost: meter.weighted(&weights), phases, traffic }
    }
}

/// SampleSkip statistics of one round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundSkip {
    /// Skipped share of `|S| >= 2` sample evaluations, per `|S|`.
    pub by_size: BTreeMap<usize, f64>,
    pub fraction: f64,
    /// Sample evaluations sent to secure testing, `v(∅)` included.
    pub evaluated_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub selected: Vec<usize>,
    /// `v(θ_S)` indexed by subset mask over positions in `selected`.
    pub utilities: Vec<f64>,
    /// Per-client SSVs over all clients (zero for clients not selected).
    pub ssv: Vec<f64>,
    pub skip: Option<RoundSkip>,
}

impl RoundReport {
    pub fn utility_table(&self) -> UtilityTable {
        UtilityTable::from_fn(self.selected.len(), |mask| self.utilities[mask as usize])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub protocol: ProtocolKind,
    pub clients: usize,
    pub test_samples: usize,
    pub rounds: Vec<RoundReport>,
    pub fsv: Vec<f64>,
    /// Skipped share of `|S| >= 2` sample evaluations over all rounds.
    pub skip_fraction: Option<f64>,
    pub cost: ProtocolRunReport,
    /// Largest absolute deviation of each layer's reconstructed output from
    /// plaintext evaluation (share-based protocol only).
    pub layer_error: Option<Vec<f64>>,
}

impl ContributionReport {
    /// Builds the Shapley part from per-round utility tables.
    pub fn from_tables(
        protocol: ProtocolKind,
        clients: usize,
        test_samples: usize,
        rounds: Vec<(usize, Vec<usize>, UtilityTable, Option<RoundSkip>)>,
        cost: ProtocolRunReport,
    ) -> Result<Self> {
        let mut reports = Vec::with_capacity(rounds.len());
        let mut vectors = Vec::with_capacity(rounds.len());
        for (round, selected, table, skip) in rounds {
            let ssv = ssv_exact(&table)?;
            let cv = ContributionVector::from_round(&selected, &ssv, clients)?;
            let utilities = (0..1u64 << selected.len()).map(|m| table.get(m).unwrap_or(f64::NAN)).collect();
            reports.push(RoundReport { round, selected, utilities, ssv: cv.values.clone(), skip });
            vectors.push(cv);
        }
        let fsv = if vectors.is_empty() { vec![0.0; clients] } else { fsv_aggregate(&vectors).values };
        let skip_fraction = skip_total(&reports);
        Ok(ContributionReport {
            protocol,
            clients,
            test_samples,
            rounds: reports,
            fsv,
            skip_fraction,
            cost,
            layer_error: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| crate::error::Error::Parse(e.to_string()))
    }
}

fn skip_total(rounds: &[RoundReport]) -> Option<f64> {
    let fractions: Vec<f64> = rounds.iter().filter_map(|r| r.skip.as_ref().map(|s| s.fraction)).collect();
    (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64)
}

impl From<&RoundEvaluation> for RoundSkip {
    fn from(e: &RoundEvaluation) -> Self {
        RoundSkip {
            by_size: e.skip_fraction_by_size(),
            fraction: e.skip_fraction(),
            evaluated_samples: e.evaluated_samples,
        }
    }
}
