//! Coordinator-free negotiation over a ring of buildings.
//!
//! The only global quantity of an iteration is the aggregate
//! `Omega = 1/M sum_b (rho y_b - lambda_b)`. Buildings pass a running
//! partial sum along the ring (accumulate, `M - 1` messages); the last one
//! then holds `Omega` and sends it around once more (circulate, `M - 1`
//! messages). With `Omega` in hand every building performs the aggregation
//! and multiplier steps for itself and then its own subproblem, so one round
//! is the coordinator iteration with its steps rotated. Starting from the
//! same zero state, both variants produce identical iterates.
//!
//! # Wire format
//!
//! All integers little-endian:
//!
//! ```text
//!   offset  size  field
//!   0       4     magic 0x41444D4D
//!   4       1     kind (1 = accumulate, 2 = circulate)
//!   5       4     iteration (u32)
//!   9       4     hop: 1-based index of the sending building (u32)
//!   13      4     N, payload length (u32, >= 1)
//!   17      8 N   payload (f64)
//! ```

use std::collections::VecDeque;

use crate::admm::{
    building_step, consensus_target, even_share, finish_iterate, lagrangian_update, should_stop,
    AdmmConfig, AdmmIterate, Aggregation, BuildingLocalState,
};
use crate::model::BuildingModel;
use crate::outcomes::{self, BidOutcome};
use crate::qp::QpSettings;
use crate::robust_policy::AffinePolicy;
use crate::{Error, Result};

pub const MAGIC: u32 = 0x4144_4D4D;
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    /// Carries a partial aggregate along the ring.
    Accumulate = 1,
    /// Carries the final aggregate back to everybody.
    Circulate = 2,
}

impl MessageKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(MessageKind::Accumulate),
            2 => Ok(MessageKind::Circulate),
            other => Err(Error::Decode(format!("unknown message kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingMessage {
    pub kind: MessageKind,
    pub iter: u32,
    /// 1-based index of the sender.
    pub hop: u32,
    pub payload: Vec<f64>,
}

pub fn encode(msg: &RingMessage) -> Result<Vec<u8>> {
    if msg.payload.is_empty() {
        return Err(Error::Input(
            "ring messages carry at least one value".into(),
        ));
    }
    let n = u32::try_from(msg.payload.len())
        .map_err(|_| Error::Input("payload too long for the frame format".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * msg.payload.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.iter.to_le_bytes());
    out.extend_from_slice(&msg.hop.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<RingMessage> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Decode(format!(
            "truncated frame: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let magic = read_u32(bytes, 0);
    if magic != MAGIC {
        return Err(Error::Decode(format!("bad magic {magic:#010x}")));
    }
    let kind = MessageKind::from_byte(bytes[4])?;
    let iter = read_u32(bytes, 5);
    let hop = read_u32(bytes, 9);
    let n = read_u32(bytes, 13) as usize;
    if n == 0 {
        return Err(Error::Decode("empty payload (N = 0)".into()));
    }
    let expected = n
        .checked_mul(8)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Decode(format!("payload length {n} overflows")))?;
    if bytes.len() < expected {
        return Err(Error::Decode(format!(
            "truncated frame: {} bytes, N = {n} needs {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Decode(format!(
            "oversized frame: {} bytes, N = {n} needs {expected}",
            bytes.len()
        )));
    }
    let payload = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok(RingMessage {
        kind,
        iter,
        hop,
        payload,
    })
}

pub fn to_hex(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

/// Parses hex digits, ignoring whitespace.
pub fn from_hex(text: &str) -> Result<Vec<u8>> {
    let clean: String = text.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    hex::decode(clean).map_err(|e| Error::Decode(format!("bad hex: {e}")))
}

/// Moves frames between ring neighbors.
pub trait Transport {
    fn members(&self) -> usize;
    fn send(&mut self, from: usize, to: usize, frame: Vec<u8>) -> Result<()>;
    /// Next undelivered frame for `at`, if any.
    fn recv(&mut self, at: usize) -> Option<Vec<u8>>;
    /// Frames delivered so far.
    fn delivered(&self) -> usize;
}

/// One recorded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub from: usize,
    pub to: usize,
    pub frame: Vec<u8>,
}

/// Deterministic in-process ring. Members are linked to their predecessor
/// and successor in index order, and the last one to the first.
#[derive(Debug, Clone)]
pub struct InMemoryRing {
    queues: Vec<VecDeque<Vec<u8>>>,
    broken: Vec<(usize, usize)>,
    pub delivered: usize,
    pub transcript: Vec<TranscriptEntry>,
}

impl InMemoryRing {
    pub fn new(members: usize) -> Self {
        InMemoryRing {
            queues: vec![VecDeque::new(); members],
            broken: Vec::new(),
            delivered: 0,
            transcript: Vec::new(),
        }
    }

    /// Cuts the directed link `from -> to`.
    pub fn break_link(&mut self, from: usize, to: usize) {
        self.broken.push((from, to));
    }

    /// One line per frame: `from -> to: hex`.
    pub fn transcript_hex(&self) -> String {
        self.transcript
            .iter()
            .map(|e| format!("{} -> {}: {}\n", e.from + 1, e.to + 1, to_hex(&e.frame)))
            .collect()
    }
}

impl Transport for InMemoryRing {
    fn members(&self) -> usize {
        self.queues.len()
    }

    fn send(&mut self, from: usize, to: usize, frame: Vec<u8>) -> Result<()> {
        let m = self.queues.len();
        let neighbors = from < m && to < m && (to == (from + 1) % m || from == (to + 1) % m);
        if !neighbors || self.broken.contains(&(from, to)) {
            return Err(Error::Protocol(format!(
                "no link from member {} to member {}",
                from + 1,
                to + 1
            )));
        }
        self.transcript.push(TranscriptEntry {
            from,
            to,
            frame: frame.clone(),
        });
        self.queues[to].push_back(frame);
        Ok(())
    }

    fn recv(&mut self, at: usize) -> Option<Vec<u8>> {
        let f = self.queues.get_mut(at)?.pop_front();
        if f.is_some() {
            self.delivered += 1;
        }
        f
    }

    fn delivered(&self) -> usize {
        self.delivered
    }
}

fn receive(
    transport: &mut dyn Transport,
    at: usize,
    kind: MessageKind,
    iter: u32,
    from: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let frame = transport.recv(at).ok_or_else(|| {
        Error::Protocol(format!(
            "member {} expected a {kind:?} frame from member {} but nothing arrived",
            at + 1,
            from + 1
        ))
    })?;
    let msg = decode(&frame)?;
    if msg.kind != kind
        || msg.iter != iter
        || msg.hop as usize != from + 1
        || msg.payload.len() != n
    {
        return Err(Error::Protocol(format!(
            "member {} got an unexpected frame: {:?} iter {} from hop {} with {} values",
            at + 1,
            msg.kind,
            msg.iter,
            msg.hop,
            msg.payload.len()
        )));
    }
    Ok(msg.payload)
}

fn hop(member: usize) -> u32 {
    u32::try_from(member + 1).expect("ring size fits in u32")
}

/// Delivers `Omega = sum_b contributions[b]` to every member: a running sum
/// travels from member 1 to member M, then member M forwards the total
/// around the ring until member M-1 has it. `2 (M - 1)` frames in total.
pub fn ring_round(
    transport: &mut dyn Transport,
    iter: u32,
    contributions: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let m = contributions.len();
    if m == 0 || transport.members() != m {
        return Err(Error::Protocol(format!(
            "{} contributions for a ring of {} members",
            m,
            transport.members()
        )));
    }
    let n = contributions[0].len();
    if n == 0 || contributions.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension(
            "contributions must share a length >= 1".into(),
        ));
    }
    let mut held: Vec<Option<Vec<f64>>> = vec![None; m];
    if m == 1 {
        return Ok(vec![contributions[0].clone()]);
    }

    // accumulate
    let mut partial = contributions[0].clone();
    for b in 1..m {
        let msg = RingMessage {
            kind: MessageKind::Accumulate,
            iter,
            hop: hop(b - 1),
            payload: partial,
        };
        transport.send(b - 1, b, encode(&msg)?)?;
        let mut got = receive(transport, b, MessageKind::Accumulate, iter, b - 1, n)?;
        for (g, c) in got.iter_mut().zip(&contributions[b]) {
            *g += c;
        }
        partial = got;
    }
    held[m - 1] = Some(partial);

    // circulate
    for step in 0..m - 1 {
        let from = (m - 1 + step) % m;
        let to = (from + 1) % m;
        let msg = RingMessage {
            kind: MessageKind::Circulate,
            iter,
            hop: hop(from),
            payload: held[from].clone().expect("sender holds the aggregate"),
        };
        transport.send(from, to, encode(&msg)?)?;
        held[to] = Some(receive(
            transport,
            to,
            MessageKind::Circulate,
            iter,
            from,
            n,
        )?);
    }
    Ok(held
        .into_iter()
        .map(|h| h.expect("every member reached"))
        .collect())
}

/// Result of [`local_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub ybar: Vec<f64>,
    pub lambda: Vec<f64>,
    pub policy: AffinePolicy,
    pub y: Vec<f64>,
}

/// Aggregation and multiplier steps a member performs on its own once it
/// knows `Omega`:
///
/// ```text
///   ybar_b   = (rho y_b - lambda_b - Omega)/rho + 1/(rho N) 1 1' (Omega + p)
///   lambda_b = lambda_b + rho (ybar_b - y_b)
/// ```
pub fn consensus_update(
    omega: &[f64],
    lambda_b: &[f64],
    y_b: &[f64],
    rho: f64,
    p: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let share = even_share(omega, p, rho);
    let ybar = consensus_target(y_b, lambda_b, omega, &share, rho);
    let lambda = lagrangian_update(lambda_b, &ybar, y_b, rho);
    (ybar, lambda)
}

/// One member's full round: [`consensus_update`] with the aggregate of the
/// previous round, then its own subproblem.
pub fn local_update(
    state: &mut BuildingLocalState,
    omega: &[f64],
    lambda_b: &[f64],
    y_b: &[f64],
    rho: f64,
    p: &[f64],
) -> Result<LocalUpdate> {
    let (ybar, lambda) = consensus_update(omega, lambda_b, y_b, rho, p);
    let (policy, y) = building_step(state, &ybar, &lambda, rho)?;
    Ok(LocalUpdate {
        ybar,
        lambda,
        policy,
        y,
    })
}

/// Record of a ring run.
#[derive(Debug, Clone)]
pub struct DecentralRun {
    pub history: Vec<AdmmIterate>,
    pub outcome: BidOutcome,
    /// Frames delivered in each round.
    pub messages: Vec<usize>,
}

/// Runs the ring variant until the stopping rule fires. The rule is
/// evaluated on the recorded history, as an outside observer would; the
/// members themselves only exchange partial aggregates. Feasible extraction
/// for the record likewise happens outside the protocol.
pub fn run_decentralized(
    fleet: &[BuildingModel],
    config: AdmmConfig,
    p: &[f64],
    transport: &mut dyn Transport,
) -> Result<DecentralRun> {
    config.validate()?;
    if fleet.is_empty() {
        return Err(Error::Input("the fleet is empty".into()));
    }
    let (m, nh) = (fleet.len(), p.len());
    let settings = QpSettings {
        tol: config.qp_tol,
        ..QpSettings::default()
    };
    let mut states = Vec::with_capacity(m);
    for (i, b) in fleet.iter().enumerate() {
        if b.horizon != nh {
            return Err(Error::Dimension(format!(
                "building {i} has horizon {}, prices have {nh}",
                b.horizon
            )));
        }
        states.push(BuildingLocalState::new(i, b, config.structure, settings)?);
    }
    let rho = config.rho;
    let mut y = vec![vec![0.0; nh]; m];
    let mut ybar = vec![vec![0.0; nh]; m];
    let mut lambda = vec![vec![0.0; nh]; m];
    let mut omegas: Vec<Vec<f64>> = Vec::new();
    let mut history: Vec<AdmmIterate> = Vec::new();
    let mut messages = Vec::new();
    let mut last_outcome = None;
    let mut round = 0usize;
    loop {
        if round > 0 {
            // Each member finishes the previous round with the circulated
            // aggregate.
            let ybar_prev = ybar.clone();
            for b in 0..m {
                let (yb, lb) = consensus_update(&omegas[b], &lambda[b], &y[b], rho, p);
                ybar[b] = yb;
                lambda[b] = lb;
            }
            let share = even_share(&omegas[0], p, rho);
            let agg = Aggregation {
                big_y: share.iter().map(|s| s * m as f64).collect(),
                ybar: ybar.clone(),
                omega: omegas[0].clone(),
            };
            let (it, outcome) = finish_iterate(
                round,
                &mut states,
                y.clone(),
                agg,
                &ybar_prev,
                lambda.clone(),
                p,
                &config,
            )?;
            history.push(it);
            last_outcome = outcome;
        }
        if should_stop(&config, &history) {
            break;
        }
        round += 1;

        for b in 0..m {
            let (_, yb) = building_step(&mut states[b], &ybar[b], &lambda[b], rho)?;
            y[b] = yb;
        }
        let contributions: Vec<Vec<f64>> = (0..m)
            .map(|b| {
                (0..nh)
                    .map(|k| (rho * y[b][k] - lambda[b][k]) / m as f64)
                    .collect()
            })
            .collect();
        let before = transport.delivered();
        let iter = u32::try_from(round)
            .map_err(|_| Error::Input("iteration count exceeds the frame format".into()))?;
        omegas = ring_round(transport, iter, &contributions)?;
        messages.push(transport.delivered() - before);
    }

    let outcome = match last_outcome {
        Some(o) => o,
        None => {
            let last = history.last().expect("at least one round ran");
            let mut o = outcomes::feasible_extract(&mut states, &last.y, p)?;
            o.lambda = Some(last.price().to_vec());
            o
        }
    };
    Ok(DecentralRun {
        history,
        outcome,
        messages,
    })
}
