//! In-memory message router with per-pair byte accounting.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::{ciphertext_bytes, CipherVector, PublicKey, SecretKey, DEFAULT_SLOTS};
use crate::matmul::reducing::ReducingLhs;
use crate::matmul::squaring::{SquaringLhs, SquaringRhs};
use crate::matrix::Matrix;
use crate::sharing::{FieldParams, ShareMatrix};

/// Every party in a simulated run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    Client(usize),
    ServerP,
    ServerA,
    Dealer,
}

impl PartyId {
    pub fn is_server(self) -> bool {
        matches!(self, PartyId::ServerP | PartyId::ServerA)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Client(i) => write!(f, "client{i}"),
            PartyId::ServerP => f.write_str("server_p"),
            PartyId::ServerA => f.write_str("server_a"),
            PartyId::Dealer => f.write_str("dealer"),
        }
    }
}

/// Message contents. Sizes follow the wire encoding a real deployment would use.
#[derive(Clone, Debug)]
pub enum Payload {
    Ciphertexts(Vec<CipherVector>),
    /// Additive shares over `Z_p`.
    FieldShares {
        field: FieldParams,
        shares: ShareMatrix,
    },
    /// Real-valued masked shares or plain real matrices.
    Reals(Matrix),
    Count(u64),
    Ids(Vec<u64>),
    KeyBroadcast {
        public: PublicKey,
        secret: SecretKey,
    },
    PublicKey(PublicKey),
    SquaringModel(Vec<SquaringLhs>),
    SquaringOperand(Vec<SquaringRhs>),
    ReducingModel(Vec<ReducingLhs>),
    /// Masked operands the two servers open to each other in a Beaver product.
    BeaverOpen(u64),
    /// Beaver triple material from the dealer; only its size travels.
    TripleBytes(u64),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Ciphertexts(_) => "ciphertexts",
            Payload::FieldShares { .. } => "field_shares",
            Payload::Reals(_) => "reals",
            Payload::Count(_) => "count",
            Payload::Ids(_) => "ids",
            Payload::KeyBroadcast { .. } => "key_broadcast",
            Payload::PublicKey(_) => "public_key",
            Payload::SquaringModel(_) => "squaring_model",
            Payload::SquaringOperand(_) => "squaring_operand",
            Payload::ReducingModel(_) => "reducing_model",
            Payload::BeaverOpen(_) => "beaver_open",
            Payload::TripleBytes(_) => "triple",
        }
    }

    /// Bytes on the wire.
    pub fn size(&self) -> u64 {
        match self {
            Payload::Ciphertexts(cts) => cts.iter().map(|c| ciphertext_bytes(c.slot_count())).sum(),
            Payload::FieldShares { field, shares } => shares.len() as u64 * field.element_bytes(),
            Payload::Reals(m) => (m.rows() * m.cols()) as u64 * 8,
            Payload::Count(_) => 8,
            Payload::Ids(ids) => ids.len() as u64 * 8,
            // A key pair is priced like two ciphertexts.
            Payload::KeyBroadcast { .. } => 2 * ciphertext_bytes(DEFAULT_SLOTS),
            Payload::PublicKey(_) => ciphertext_bytes(DEFAULT_SLOTS),
            Payload::SquaringModel(layers) => layers.iter().map(SquaringLhs::wire_bytes).sum(),
            Payload::SquaringOperand(chunks) => chunks.iter().map(SquaringRhs::wire_bytes).sum(),
            Payload::ReducingModel(layers) => layers.iter().map(ReducingLhs::wire_bytes).sum(),
            Payload::BeaverOpen(b) => *b,
            Payload::TripleBytes(b) => *b,
        }
    }

    pub fn into_ciphertexts(self) -> Result<Vec<CipherVector>> {
        match self {
            Payload::Ciphertexts(c) => Ok(c),
            other => Err(unexpected("ciphertexts", &other)),
        }
    }

    pub fn into_field_shares(self) -> Result<ShareMatrix> {
        match self {
            Payload::FieldShares { shares, .. } => Ok(shares),
            other => Err(unexpected("field shares", &other)),
        }
    }

    pub fn into_reals(self) -> Result<Matrix> {
        match self {
            Payload::Reals(m) => Ok(m),
            other => Err(unexpected("reals", &other)),
        }
    }

    pub fn into_count(self) -> Result<u64> {
        match self {
            Payload::Count(c) => Ok(c),
            other => Err(unexpected("count", &other)),
        }
    }

    pub fn into_ids(self) -> Result<Vec<u64>> {
        match self {
            Payload::Ids(ids) => Ok(ids),
            other => Err(unexpected("ids", &other)),
        }
    }

    pub fn into_public_key(self) -> Result<PublicKey> {
        match self {
            Payload::PublicKey(k) => Ok(k),
            other => Err(unexpected("public key", &other)),
        }
    }

    pub fn into_squaring_model(self) -> Result<Vec<SquaringLhs>> {
        match self {
            Payload::SquaringModel(m) => Ok(m),
            other => Err(unexpected("squaring model", &other)),
        }
    }

    pub fn into_squaring_operand(self) -> Result<Vec<SquaringRhs>> {
        match self {
            Payload::SquaringOperand(m) => Ok(m),
            other => Err(unexpected("squaring operand", &other)),
        }
    }

    pub fn into_reducing_model(self) -> Result<Vec<ReducingLhs>> {
        match self {
            Payload::ReducingModel(m) => Ok(m),
            other => Err(unexpected("reducing model", &other)),
        }
    }

    pub fn into_keys(self) -> Result<(PublicKey, SecretKey)> {
        match self {
            Payload::KeyBroadcast { public, secret } => Ok((public, secret)),
            other => Err(unexpected("key broadcast", &other)),
        }
    }
}

fn unexpected(want: &str, got: &Payload) -> Error {
    Error::Message(format!("expected {want}, received {}", got.kind()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub kind: String,
    pub bytes: u64,
}

/// Byte totals of a run, keyed `"from->to"`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub messages: u64,
    pub total_bytes: u64,
    pub bytes_by_pair: BTreeMap<String, u64>,
    pub bytes_by_kind: BTreeMap<String, u64>,
}

impl TrafficSummary {
    pub fn merge(&mut self, other: &TrafficSummary) {
        self.messages += other.messages;
        self.total_bytes += other.total_bytes;
        for (k, v) in &other.bytes_by_pair {
            *self.bytes_by_pair.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.bytes_by_kind {
            *self.bytes_by_kind.entry(k.clone()).or_default() += v;
        }
    }
}

/// FIFO inbox per party. Delivery is serialized: one `send` lands before the next.
#[derive(Debug, Default)]
pub struct Router {
    inboxes: BTreeMap<PartyId, VecDeque<(PartyId, Payload)>>,
    traffic: TrafficSummary,
    trace: Option<Vec<TraceEntry>>,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        Router { trace: Some(Vec::new()), ..Self::default() }
    }

    pub fn send(&mut self, from: PartyId, to: PartyId, payload: Payload) {
        let bytes = payload.size();
        self.traffic.messages += 1;
        self.traffic.total_bytes += bytes;
        *self.traffic.bytes_by_pair.entry(format!("{from}->{to}")).or_default() += bytes;
        *self.traffic.bytes_by_kind.entry(payload.kind().to_string()).or_default() += bytes;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEntry { seq: t.len() as u64, from, to, kind: payload.kind().to_string(), bytes });
        }
        self.inboxes.entry(to).or_default().push_back((from, payload));
    }

    /// Sends and immediately takes delivery at `to`; the common step of a
    /// sequential simulation.
    pub fn transfer(&mut self, from: PartyId, to: PartyId, payload: Payload) -> Result<Payload> {
        self.send(from, to, payload);
        self.recv_from(to, from)
    }

    /// Oldest message waiting for `to`.
    pub fn recv(&mut self, to: PartyId) -> Result<(PartyId, Payload)> {
        self.inboxes
            .get_mut(&to)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::Message(format!("inbox of {to} is empty")))
    }

    /// Oldest message for `to` that came from `from`.
    pub fn recv_from(&mut self, to: PartyId, from: PartyId) -> Result<Payload> {
        let inbox = self.inboxes.get_mut(&to).ok_or_else(|| Error::Message(format!("inbox of {to} is empty")))?;
        let pos = inbox
            .iter()
            .position(|(f, _)| *f == from)
            .ok_or_else(|| Error::Message(format!("no message from {from} for {to}")))?;
        Ok(inbox.remove(pos).expect("position is in range").1)
    }

    pub fn pending(&self) -> usize {
        self.inboxes.values().map(VecDeque::len).sum()
    }

    pub fn traffic(&self) -> &TrafficSummary {
        &self.traffic
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn into_parts(self) -> (TrafficSummary, Option<Vec<TraceEntry>>) {
        (self.traffic, self.trace)
    }
}

/// Writes a trace as JSON lines.
pub fn write_trace<W: Write>(entries: &[TraceEntry], mut w: W) -> Result<()> {
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
