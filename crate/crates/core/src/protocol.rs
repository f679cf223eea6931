//! The synchronization algorithms as pure node state machines.
//!
//! All five share the counter rule: a node that receives any null message
//! resets its counter to 0, otherwise it takes one plus the smallest counter
//! it received. They differ in what else they carry and when they raise the
//! `synch` flag:
//!
//! | params                         | carries        | detects when                       |
//! |--------------------------------|----------------|------------------------------------|
//! | [`ProtocolParams::Sync`]       | `r`            | never                              |
//! | [`ProtocolParams::Complete`]   | `r`            | `r ≥ T`                            |
//! | [`ProtocolParams::HeardOf`]    | `r`, HO        | `|HO| ≤ ⌈c(r+1)/T⌉ − c`            |
//! | [`ProtocolParams::Randomized`] | `r`, Ȳ         | `n̂ < 2r/3`                         |
//! | [`ProtocolParams::ExactSize`]  | `r`, HO, OK    | `|OK| = n`                         |

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeSet};
use crate::randvar::{self, EstimatorVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sync,
    Complete,
    HeardOf,
    Randomized,
    ExactSize,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sync => "sync",
            Algorithm::Complete => "complete",
            Algorithm::HeardOf => "heard_of",
            Algorithm::Randomized => "randomized",
            Algorithm::ExactSize => "exact_size",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Algorithm::Sync => 1,
            Algorithm::Complete => 2,
            Algorithm::HeardOf => 3,
            Algorithm::Randomized => 4,
            Algorithm::ExactSize => 5,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolParams {
    /// Counter synchronization only; never detects.
    Sync,
    /// Detection for `window`-complete dynamic graphs.
    Complete { window: u32 },
    /// Detection for `(c, window)` in-connected dynamic graphs.
    HeardOf { c: u32, window: u32 },
    /// Randomized detection with a size bound and failure probability.
    /// `ell` overrides the vector length; runs that set it do not carry the
    /// probability guarantee.
    Randomized {
        size_bound: u64,
        eta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ell: Option<usize>,
    },
    /// Detection with the exact network size.
    ExactSize { n: u64 },
}

impl ProtocolParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ProtocolParams::Sync => Algorithm::Sync,
            ProtocolParams::Complete { .. } => Algorithm::Complete,
            ProtocolParams::HeardOf { .. } => Algorithm::HeardOf,
            ProtocolParams::Randomized { .. } => Algorithm::Randomized,
            ProtocolParams::ExactSize { .. } => Algorithm::ExactSize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match *self {
            ProtocolParams::Sync => Ok(()),
            ProtocolParams::Complete { window } => {
                if window == 0 {
                    return bad("window must be positive");
                }
                Ok(())
            }
            ProtocolParams::HeardOf { c, window } => {
                if window == 0 || c == 0 {
                    return bad("c and window must be positive");
                }
                Ok(())
            }
            ProtocolParams::Randomized { size_bound, eta, ell } => {
                randvar::ell_of(size_bound, eta)?;
                if ell == Some(0) {
                    return bad("ell override must be positive");
                }
                randvar::GridRange::new(self.ell().unwrap_or(1), size_bound, eta)?;
                Ok(())
            }
            ProtocolParams::ExactSize { n } => {
                if n == 0 {
                    return bad("network size must be positive");
                }
                Ok(())
            }
        }
    }

    /// Estimator vector length for the randomized algorithm.
    pub fn ell(&self) -> Option<usize> {
        match *self {
            ProtocolParams::Randomized { size_bound, eta, ell } => {
                ell.or_else(|| randvar::ell_of(size_bound, eta).ok())
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Null,
    Sync { r: u64 },
    Complete { r: u64 },
    HeardOf { r: u64, ho: NodeSet },
    Randomized { r: u64, y: EstimatorVector },
    ExactSize { r: u64, ho: NodeSet, ok: NodeSet },
}

impl Message {
    pub fn is_null(&self) -> bool {
        matches!(self, Message::Null)
    }

    pub fn algorithm(&self) -> Option<Algorithm> {
        Some(match self {
            Message::Null => return None,
            Message::Sync { .. } => Algorithm::Sync,
            Message::Complete { .. } => Algorithm::Complete,
            Message::HeardOf { .. } => Algorithm::HeardOf,
            Message::Randomized { .. } => Algorithm::Randomized,
            Message::ExactSize { .. } => Algorithm::ExactSize,
        })
    }

    pub fn counter(&self) -> Option<u64> {
        match *self {
            Message::Null => None,
            Message::Sync { r }
            | Message::Complete { r }
            | Message::HeardOf { r, .. }
            | Message::Randomized { r, .. }
            | Message::ExactSize { r, .. } => Some(r),
        }
    }

    /// Canonical encoding: tag byte, counter as unsigned LEB128, node sets
    /// as a count followed by sorted ids (all LEB128), estimator vectors in
    /// their fixed-width form.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.push(self.algorithm().map_or(0, Algorithm::tag));
        match self {
            Message::Null => {}
            Message::Sync { r } | Message::Complete { r } => put_varint(&mut buf, *r),
            Message::HeardOf { r, ho } => {
                put_varint(&mut buf, *r);
                put_set(&mut buf, ho);
            }
            Message::Randomized { r, y } => {
                put_varint(&mut buf, *r);
                y.encode_into(&mut buf);
            }
            Message::ExactSize { r, ho, ok } => {
                put_varint(&mut buf, *r);
                put_set(&mut buf, ho);
                put_set(&mut buf, ok);
            }
        }
        buf
    }

    pub fn encoded_len(&self) -> usize {
        let set_len =
            |s: &NodeSet| varint_len(s.len() as u64) + s.iter().map(|id| varint_len(id.0 as u64)).sum::<usize>();
        1 + match self {
            Message::Null => 0,
            Message::Sync { r } | Message::Complete { r } => varint_len(*r),
            Message::HeardOf { r, ho } => varint_len(*r) + set_len(ho),
            Message::Randomized { r, y } => varint_len(*r) + y.encoded_len(),
            Message::ExactSize { r, ho, ok } => varint_len(*r) + set_len(ho) + set_len(ok),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Message> {
        let (&tag, mut rest) = bytes
            .split_first()
            .ok_or_else(|| Error::Decode("empty message".into()))?;
        let msg = match tag {
            0 => Message::Null,
            1 | 2 => {
                let r = take_varint(&mut rest)?;
                if tag == 1 {
                    Message::Sync { r }
                } else {
                    Message::Complete { r }
                }
            }
            3 => {
                let r = take_varint(&mut rest)?;
                let ho = take_set(&mut rest)?;
                Message::HeardOf { r, ho }
            }
            4 => {
                let r = take_varint(&mut rest)?;
                let (y, tail) = EstimatorVector::decode(rest)?;
                rest = tail;
                Message::Randomized { r, y }
            }
            5 => {
                let r = take_varint(&mut rest)?;
                let ho = take_set(&mut rest)?;
                let ok = take_set(&mut rest)?;
                Message::ExactSize { r, ho, ok }
            }
            other => return Err(Error::Decode(format!("unknown tag {other}"))),
        };
        if !rest.is_empty() {
            return Err(Error::Decode(format!("{} trailing bytes", rest.len())));
        }
        Ok(msg)
    }
}

fn varint_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        buf.push((v as u8) | 0x80);
        v >>= 7;
    }
    buf.push(v as u8);
}

fn take_varint(bytes: &mut &[u8]) -> Result<u64> {
    let mut value = 0u64;
    for shift in (0..64).step_by(7) {
        let (&b, rest) = bytes
            .split_first()
            .ok_or_else(|| Error::Decode("truncated varint".into()))?;
        *bytes = rest;
        value |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(value);
        }
    }
    Err(Error::Decode("varint overflow".into()))
}

fn put_set(buf: &mut Vec<u8>, set: &NodeSet) {
    put_varint(buf, set.len() as u64);
    for id in set {
        put_varint(buf, id.0 as u64);
    }
}

fn take_set(bytes: &mut &[u8]) -> Result<NodeSet> {
    let count = take_varint(bytes)?;
    (0..count)
        .map(|_| {
            let id = take_varint(bytes)?;
            u32::try_from(id)
                .map(NodeId)
                .map_err(|_| Error::Decode(format!("node id {id} out of range")))
        })
        .collect()
}

/// Local state of an active node. Fields an algorithm does not use are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub active_since: u64,
    pub r: u64,
    pub synch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ho: Option<NodeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<NodeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<EstimatorVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_hat: Option<f64>,
}

/// Sets up a node at the beginning of its start round. Only the randomized
/// algorithm draws from `rng`.
pub fn init<R: Rng + ?Sized>(id: NodeId, start_round: u64, params: &ProtocolParams, rng: &mut R) -> Result<NodeState> {
    params.validate()?;
    let mut state = NodeState {
        id,
        active_since: start_round,
        r: 0,
        synch: false,
        ho: None,
        ok: None,
        y: None,
        n_hat: None,
    };
    match *params {
        ProtocolParams::Sync | ProtocolParams::Complete { .. } => {}
        ProtocolParams::HeardOf { .. } => state.ho = Some(NodeSet::from([id])),
        ProtocolParams::Randomized { size_bound, eta, .. } => {
            let ell = params.ell().expect("validated");
            state.y = Some(randvar::sample_vector(ell, size_bound, eta, rng)?);
            state.n_hat = Some(0.0);
        }
        ProtocolParams::ExactSize { .. } => {
            state.ho = Some(NodeSet::from([id]));
            state.ok = Some(NodeSet::new());
        }
    }
    Ok(state)
}

/// The message an active node broadcasts this round.
pub fn emit(state: &NodeState, params: &ProtocolParams) -> Message {
    let r = state.r;
    let field = |f: &Option<NodeSet>| f.clone().expect("state initialised for this algorithm");
    match params {
        ProtocolParams::Sync => Message::Sync { r },
        ProtocolParams::Complete { .. } => Message::Complete { r },
        ProtocolParams::HeardOf { .. } => Message::HeardOf {
            r,
            ho: field(&state.ho),
        },
        ProtocolParams::Randomized { .. } => Message::Randomized {
            r,
            y: state.y.clone().expect("state initialised for this algorithm"),
        },
        ProtocolParams::ExactSize { .. } => Message::ExactSize {
            r,
            ho: field(&state.ho),
            ok: field(&state.ok),
        },
    }
}

/// `⌈a / b⌉` for `b > 0`.
fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// The heard-of detection test `|HO| ≤ ⌈c(r+1)/T⌉ − c` in integers.
pub fn heard_of_threshold_met(ho_len: usize, r: u64, c: u32, window: u32) -> bool {
    let rhs = ceil_div(c as u64 * (r + 1), window as u64) as i128 - c as i128;
    (ho_len as i128) <= rhs
}

/// One round of the node's code on the multiset of messages it received
/// (one per in-neighbour, its own included).
pub fn step(state: &NodeState, received: &[&Message], params: &ProtocolParams) -> Result<NodeState> {
    if received.is_empty() {
        return Err(Error::EmptyInbox(state.id));
    }
    let expected = params.algorithm();
    for m in received {
        if let Some(alg) = m.algorithm() {
            if alg != expected {
                return Err(Error::MixedMessages(expected.name(), alg.name()));
            }
        }
    }
    let live: Vec<&Message> = received.iter().copied().filter(|m| !m.is_null()).collect();
    let mut next = state.clone();
    next.r = if live.len() < received.len() {
        0
    } else {
        1 + live
            .iter()
            .filter_map(|m| m.counter())
            .min()
            .expect("no null message, so at least one counter")
    };

    match *params {
        ProtocolParams::Sync => {}
        ProtocolParams::Complete { window } => {
            next.synch |= next.r >= window as u64;
        }
        ProtocolParams::HeardOf { c, window } => {
            let ho = union(live.iter().filter_map(|m| match m {
                Message::HeardOf { ho, .. } => Some(ho),
                _ => None,
            }));
            next.synch |= heard_of_threshold_met(ho.len(), next.r, c, window);
            next.ho = Some(ho);
        }
        ProtocolParams::Randomized { .. } => {
            let mut vectors = live.iter().filter_map(|m| match m {
                Message::Randomized { y, .. } => Some(y),
                _ => None,
            });
            if let Some(first) = vectors.next() {
                let mut y = first.clone();
                for v in vectors {
                    y.min_assign(v)?;
                }
                next.y = Some(y);
            }
            let n_hat = next.y.as_ref().map_or(0.0, EstimatorVector::estimate);
            next.n_hat = Some(n_hat);
            next.synch |= 3.0 * n_hat < 2.0 * next.r as f64;
        }
        ProtocolParams::ExactSize { n } => {
            let ho = union(live.iter().filter_map(|m| match m {
                Message::ExactSize { ho, .. } => Some(ho),
                _ => None,
            }));
            let mut ok = union(live.iter().filter_map(|m| match m {
                Message::ExactSize { ok, .. } => Some(ok),
                _ => None,
            }));
            if ho.len() as u64 == n {
                ok.insert(state.id);
            }
            next.synch |= ok.len() as u64 == n;
            next.ho = Some(ho);
            next.ok = Some(ok);
        }
    }
    Ok(next)
}

fn union<'a>(sets: impl Iterator<Item = &'a NodeSet>) -> NodeSet {
    let mut out = NodeSet::new();
    for s in sets {
        out.extend(s.iter().copied());
    }
    out
}
