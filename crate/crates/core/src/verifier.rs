//! Post-hoc checks over a completed [`Trace`].
//!
//! Conventions:
//! - `r_u(t)` and `synch_u(t)` are values at the beginning of round `t`,
//!   observable for `s_u <= t <= horizon + 1`.
//! - A node's detection round is the round during which its flag turns
//!   true, so the flag is first observable one round later.
//! - Properties quantified over unbounded time are checked up to the horizon
//!   and report [`Status::Inconclusive`] when the trace is too short to
//!   decide them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversary::WindowClass;
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::graph::{mask_indices, Digraph, NodeId, NodeSet};
use crate::protocol::ProtocolParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Holds,
    Inconclusive,
    Violated,
}

impl Status {
    /// CI mapping: holds 0, violated 1, inconclusive 2.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Holds => 0,
            Status::Violated => 1,
            Status::Inconclusive => 2,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Holds => "holds",
            Status::Inconclusive => "inconclusive",
            Status::Violated => "violated",
        })
    }
}

/// Worst status wins: any violation gives 1, else any inconclusive gives 2.
pub fn exit_code<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> i32 {
    verdicts
        .into_iter()
        .map(|v| v.status)
        .max()
        .unwrap_or(Status::Holds)
        .exit_code()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Counters eventually equal and incrementing.
    Synchronization,
    /// No flag before synchronization; every flag eventually raised.
    Detection,
    /// All flags agree at every round where both nodes are active.
    Simultaneity,
    /// A broken path into `u` over `[t, t'-1]` caps `r_u(t')` at `t' - t - 1`.
    BrokenPathCeiling,
    /// Without broken paths, `r_u(t') <= r_v(t) + t' - t` for in-neighbours `v`.
    RelayCeiling,
    /// `r_u(t) >= t - s_max`, with equality once a last starter is heard.
    CounterFloor,
    /// Heard-of sets grow at least as fast as the counter allows.
    HeardOfGrowth,
    /// Heard-of sets equal the node set at detection.
    Counting,
    /// Complete-window detection happens exactly in round `s_max + T - 1`.
    CompleteExact,
    /// In-connected detection happens before `s_max + ⌈T(n-1)/c⌉ + T`.
    InConnectedBound,
    /// Randomized detection: simultaneous, not premature, by `s_max + 2n`.
    RandomizedBound,
    /// Complete-window detection with `T = N` finishes within `N` rounds.
    SizeBoundWindow,
}

impl Check {
    pub const ALL: [Check; 12] = [
        Check::Synchronization,
        Check::Detection,
        Check::Simultaneity,
        Check::BrokenPathCeiling,
        Check::RelayCeiling,
        Check::CounterFloor,
        Check::HeardOfGrowth,
        Check::Counting,
        Check::CompleteExact,
        Check::InConnectedBound,
        Check::RandomizedBound,
        Check::SizeBoundWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Synchronization => "synchronization",
            Check::Detection => "detection",
            Check::Simultaneity => "simultaneity",
            Check::BrokenPathCeiling => "broken_path_ceiling",
            Check::RelayCeiling => "relay_ceiling",
            Check::CounterFloor => "counter_floor",
            Check::HeardOfGrowth => "heard_of_growth",
            Check::Counting => "counting",
            Check::CompleteExact => "complete_exact",
            Check::InConnectedBound => "in_connected_bound",
            Check::RandomizedBound => "randomized_bound",
            Check::SizeBoundWindow => "size_bound_window",
        }
    }

    pub fn from_name(name: &str) -> Option<Check> {
        Check::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub round: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_round: Option<u64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: Check,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub measured: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn new(property: Check, status: Status) -> Self {
        Self {
            property,
            status,
            witness: None,
            measured: BTreeMap::new(),
            note: None,
        }
    }

    fn violated(property: Check, witness: Witness) -> Self {
        Self {
            witness: Some(witness),
            ..Self::new(property, Status::Violated)
        }
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.measured.insert(key.to_string(), value.into());
        self
    }

    fn noted(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn holds(&self) -> bool {
        self.status == Status::Holds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Longest `t' - t` examined by the path-based counter checks; `None`
    /// examines every interval.
    pub interval_cap: Option<u64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { interval_cap: Some(12) }
    }
}

impl CheckOptions {
    pub fn full_sweep() -> Self {
        Self { interval_cap: None }
    }
}

pub fn run_check(trace: &Trace, check: Check, opts: &CheckOptions) -> Verdict {
    match check {
        Check::Synchronization => check_synchronization(trace),
        Check::Detection => check_detection(trace, find_t_synch(trace)),
        Check::Simultaneity => check_simultaneity(trace),
        Check::BrokenPathCeiling | Check::RelayCeiling | Check::CounterFloor | Check::HeardOfGrowth => {
            check_lemma_bounds(trace, check, opts)
        }
        Check::Counting => check_counting(trace),
        Check::CompleteExact | Check::InConnectedBound | Check::RandomizedBound | Check::SizeBoundWindow => {
            check_bound_theorem(trace, check)
        }
    }
}

pub fn run_checks(trace: &Trace, checks: &[Check], opts: &CheckOptions) -> Vec<Verdict> {
    checks.iter().map(|&c| run_check(trace, c, opts)).collect()
}

fn all_counters_equal(trace: &Trace, t: u64) -> Option<u64> {
    let first = trace.counter(0, t)?;
    (1..trace.n())
        .all(|i| trace.counter(i, t) == Some(first))
        .then_some(first)
}

/// Last observation round before any counter is frozen. In the terminating
/// variant a node stops updating after detecting, so counter properties are
/// only meaningful up to the first detection.
pub fn last_live_round(trace: &Trace) -> u64 {
    let end = trace.horizon() + 1;
    if !trace.scenario.terminate_on_detect {
        return end;
    }
    trace
        .detection_rounds()
        .into_iter()
        .flatten()
        .map(|d| d + 1)
        .fold(end, u64::min)
}

/// Smallest `t_synch >= s_max` from which all counters are equal and
/// increment by one through [`last_live_round`]. The stable stretch must
/// cover at least two observations.
pub fn find_t_synch(trace: &Trace) -> Option<u64> {
    let last = last_live_round(trace);
    let s_max = trace.s_max();
    let mut start = None;
    let mut t = last;
    let mut next_value = None;
    while t >= s_max.max(1) {
        match all_counters_equal(trace, t) {
            Some(r) if next_value.is_none_or(|nv| nv == r + 1) => {
                start = Some(t);
                next_value = Some(r);
            }
            _ => break,
        }
        t -= 1;
    }
    start.filter(|&s| s < last)
}

pub fn check_synchronization(trace: &Trace) -> Verdict {
    match find_t_synch(trace) {
        Some(ts) => Verdict::new(Check::Synchronization, Status::Holds)
            .with("t_synch", ts)
            .with("s_max", trace.s_max()),
        None => Verdict::new(Check::Synchronization, Status::Inconclusive)
            .with("s_max", trace.s_max())
            .noted(format!("counters not synchronized by horizon {}", trace.horizon())),
    }
}

fn first_visible_flag(trace: &Trace, i: usize) -> Option<u64> {
    (trace.start(i)..=trace.horizon() + 1).find(|&t| trace.synch(i, t))
}

/// The exact-size algorithm comes with an informal argument only, so its
/// detection verdicts carry this flag.
pub const EXACT_SIZE_NOTE: &str = "expected behaviour argued informally; no proven guarantee";

/// Flags must not be observable before `t_synch`, and every node must end
/// with its flag raised.
pub fn check_detection(trace: &Trace, t_synch: Option<u64>) -> Verdict {
    let ids = trace.nodes();
    let last = trace.horizon() + 1;
    let visible: Vec<Option<u64>> = (0..trace.n()).map(|i| first_visible_flag(trace, i)).collect();
    let detection: Vec<Value> = trace
        .detection_rounds()
        .into_iter()
        .map(|d| d.map_or(Value::Null, Value::from))
        .collect();
    let base = |status| {
        let v = Verdict::new(Check::Detection, status)
            .with("t_synch", t_synch.map_or(Value::Null, Value::from))
            .with("detection_rounds", detection.clone());
        if matches!(trace.scenario.params, ProtocolParams::ExactSize { .. }) {
            v.noted(EXACT_SIZE_NOTE)
        } else {
            v
        }
    };

    // Without a stable suffix, t_synch can only be past the horizon.
    let earliest_allowed = t_synch.unwrap_or(last);
    let premature = visible
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|t| (t, i)))
        .filter(|&(t, _)| t < earliest_allowed)
        .min();
    if let Some((t, i)) = premature {
        let mut v = base(Status::Violated);
        v.witness = Some(Witness {
            round: t,
            node: Some(ids[i]),
            peer: None,
            from_round: None,
            detail: match t_synch {
                Some(ts) => format!("synch observable at round {t}, before t_synch = {ts}"),
                None => format!("synch observable at round {t}; counters never synchronize up to {last}"),
            },
        });
        return v;
    }
    if visible.iter().any(|v| v.is_none()) || (0..trace.n()).any(|i| !trace.synch(i, last)) {
        return with_extra_note(base(Status::Inconclusive), "some node has not detected by the horizon");
    }
    if t_synch.is_none() {
        return with_extra_note(base(Status::Inconclusive), "counters not synchronized by the horizon");
    }
    base(Status::Holds)
}

fn with_extra_note(v: Verdict, note: &str) -> Verdict {
    let note = match &v.note {
        Some(existing) => format!("{note}; {existing}"),
        None => note.to_string(),
    };
    v.noted(note)
}

pub fn check_simultaneity(trace: &Trace) -> Verdict {
    let ids = trace.nodes();
    let starts = trace.starts();
    for t in 1..=trace.horizon() + 1 {
        let active: Vec<usize> = (0..trace.n()).filter(|&i| starts[i] <= t).collect();
        if let Some(&first) = active.first() {
            let flag = trace.synch(first, t);
            if let Some(&other) = active.iter().find(|&&j| trace.synch(j, t) != flag) {
                return Verdict::violated(
                    Check::Simultaneity,
                    Witness {
                        round: t,
                        node: Some(ids[first]),
                        peer: Some(ids[other]),
                        from_round: None,
                        detail: format!("synch = {flag} at {} but {} at {}", ids[first], !flag, ids[other]),
                    },
                )
                .with("detection_rounds", detection_values(trace));
            }
        }
    }
    let rounds = trace.detection_rounds();
    let common = rounds
        .first()
        .copied()
        .flatten()
        .filter(|_| rounds.iter().all(|r| *r == rounds[0]));
    Verdict::new(Check::Simultaneity, Status::Holds)
        .with("common_detection_round", common.map_or(Value::Null, Value::from))
}

fn detection_values(trace: &Trace) -> Vec<Value> {
    trace
        .detection_rounds()
        .into_iter()
        .map(|d| d.map_or(Value::Null, Value::from))
        .collect()
}

fn propagate(mask: u64, g: &Digraph) -> u64 {
    mask_indices(mask).fold(0, |acc, w| acc | g.out_mask(w))
}

fn passive_mask(starts: &[u64], round: u64) -> u64 {
    starts
        .iter()
        .enumerate()
        .filter(|(_, &s)| round < s)
        .fold(0, |acc, (i, _)| acc | 1 << i)
}

/// Whether some dynamic path from `v` (leaving in round `t`) to `u`
/// (arriving after round `t_end`) crosses an edge whose source is still
/// passive, i.e. carries a null message.
pub fn broken_path_exists(trace: &Trace, v: NodeId, u: NodeId, t: u64, t_end: u64) -> Result<bool> {
    if t == 0 || t > t_end || t_end > trace.horizon() {
        return Err(Error::InvalidInterval { start: t, end: t_end });
    }
    let g = trace.graph(t);
    let vi = g.index_of(v).ok_or(Error::UnknownNode(v))?;
    let ui = g.index_of(u).ok_or(Error::UnknownNode(u))?;
    let starts = trace.starts();
    let (mut clean, mut broken) = (1u64 << vi, 0u64);
    for k in t..=t_end {
        let g = trace.graph(k);
        let passive = passive_mask(&starts, k);
        broken = propagate(broken | (clean & passive), g);
        clean = propagate(clean & !passive, g);
    }
    Ok(broken & (1 << ui) != 0)
}

fn witness(round: u64, node: NodeId, peer: Option<NodeId>, from_round: Option<u64>, detail: String) -> Witness {
    Witness {
        round,
        node: Some(node),
        peer,
        from_round,
        detail,
    }
}

pub fn check_lemma_bounds(trace: &Trace, which: Check, opts: &CheckOptions) -> Verdict {
    match which {
        Check::BrokenPathCeiling | Check::RelayCeiling => check_path_ceilings(trace, which, opts),
        Check::CounterFloor => check_counter_floor(trace),
        Check::HeardOfGrowth => check_heard_of_growth(trace),
        other => panic!("{other} is not a counter lemma check"),
    }
}

fn check_path_ceilings(trace: &Trace, which: Check, opts: &CheckOptions) -> Verdict {
    let ids = trace.nodes();
    let n = trace.n();
    let starts = trace.starts();
    let h = trace.horizon();
    let mut checked = 0u64;
    for t in 1..=h {
        let end = last_live_round(trace);
        let last = opts.interval_cap.map_or(end, |cap| (t + cap).min(end));
        let mut reach: Vec<u64> = (0..n).map(|v| 1u64 << v).collect();
        let mut broken = 0u64;
        for k in t..last {
            let g = trace.graph(k);
            broken = propagate(broken | passive_mask(&starts, k), g);
            for r in reach.iter_mut() {
                *r = propagate(*r, g);
            }
            let t2 = k + 1;
            for u in (0..n).filter(|&u| starts[u] <= t2) {
                let r_u = trace.counter(u, t2).expect("active node has a counter");
                let has_broken = broken & (1 << u) != 0;
                match which {
                    Check::BrokenPathCeiling if has_broken => {
                        checked += 1;
                        if r_u + t + 1 > t2 {
                            let v = (0..n)
                                .find(|&v| broken_path_exists(trace, ids[v], ids[u], t, k).unwrap_or(false))
                                .map(|v| ids[v]);
                            return Verdict::violated(
                                which,
                                witness(t2, ids[u], v, Some(t), format!("r = {r_u} exceeds {}", t2 - t - 1)),
                            );
                        }
                    }
                    Check::RelayCeiling if !has_broken => {
                        for v in (0..n).filter(|&v| reach[v] & (1 << u) != 0) {
                            checked += 1;
                            let bad = match trace.counter(v, t) {
                                None => Some("in-neighbour has no counter".to_string()),
                                Some(r_v) if r_u > r_v + (t2 - t) => {
                                    Some(format!("r = {r_u} exceeds r_v + {} = {}", t2 - t, r_v + t2 - t))
                                }
                                Some(_) => None,
                            };
                            if let Some(detail) = bad {
                                return Verdict::violated(which, witness(t2, ids[u], Some(ids[v]), Some(t), detail));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Verdict::new(which, Status::Holds)
        .with("instances", checked)
        .with("interval_cap", opts.interval_cap.map_or(Value::Null, Value::from))
}

fn check_counter_floor(trace: &Trace) -> Verdict {
    let ids = trace.nodes();
    let n = trace.n();
    let s_max = trace.s_max();
    let starts = trace.starts();
    let latest: u64 = (0..n).filter(|&i| starts[i] == s_max).fold(0, |m, i| m | 1 << i);
    let mut heard_latest = latest;
    let mut equalities = 0u64;
    for t in s_max..=last_live_round(trace) {
        if t > s_max {
            heard_latest = propagate(heard_latest, trace.graph(t - 1));
        }
        for u in 0..n {
            let r = trace.counter(u, t).expect("every node is active from s_max on");
            if r + s_max < t {
                return Verdict::violated(
                    Check::CounterFloor,
                    witness(
                        t,
                        ids[u],
                        None,
                        Some(s_max),
                        format!("r = {r} below t - s_max = {}", t - s_max),
                    ),
                );
            }
            if t > s_max && heard_latest & (1 << u) != 0 {
                equalities += 1;
                if r + s_max != t {
                    let v = mask_indices(latest)
                        .find(|&v| propagate_from(trace, v, s_max, t - 1) & (1 << u) != 0)
                        .map(|v| ids[v]);
                    return Verdict::violated(
                        Check::CounterFloor,
                        witness(
                            t,
                            ids[u],
                            v,
                            Some(s_max),
                            format!("heard a last starter but r = {r} != t - s_max = {}", t - s_max),
                        ),
                    );
                }
            }
        }
    }
    Verdict::new(Check::CounterFloor, Status::Holds)
        .with("s_max", s_max)
        .with("equality_instances", equalities)
}

fn propagate_from(trace: &Trace, v: usize, t: u64, t_end: u64) -> u64 {
    (t..=t_end).fold(1u64 << v, |m, k| propagate(m, trace.graph(k)))
}

fn heard_of_bound_holds(ho_len: usize, r: u64, n: usize, c: u32, window: u32) -> bool {
    // |HO| >= min((1 - c) + c(r + 1)/T, n), scaled by T.
    let (c, w) = (c as i128, window as i128);
    let growth = w * (1 - c) + c * (r as i128 + 1);
    w * ho_len as i128 >= growth.min(w * n as i128)
}

fn check_heard_of_growth(trace: &Trace) -> Verdict {
    let ProtocolParams::HeardOf { c, window } = trace.scenario.params else {
        return Verdict::new(Check::HeardOfGrowth, Status::Inconclusive).noted("applies to heard-of traces only");
    };
    let class = WindowClass::InConnected { c, window };
    let certified = trace
        .scenario
        .adversary()
        .and_then(|a| a.certify_window(class, trace.horizon()));
    match certified {
        Ok(cert) if cert.holds() => {}
        Ok(cert) => {
            return Verdict::new(Check::HeardOfGrowth, Status::Inconclusive)
                .with("first_failing_window", cert.first_failure.unwrap_or(0))
                .noted("graph sequence is not certified (c, T) in-connected");
        }
        Err(e) => {
            return Verdict::new(Check::HeardOfGrowth, Status::Inconclusive)
                .noted(format!("cannot certify the graph sequence: {e}"));
        }
    }
    let ids = trace.nodes();
    let n = trace.n();
    for (u, &id) in ids.iter().enumerate() {
        for t in trace.start(u)..=trace.horizon() + 1 {
            let s = trace.state_at(u, t).expect("active");
            let ho = s.ho.as_ref().map_or(0, NodeSet::len);
            if !heard_of_bound_holds(ho, s.r, n, c, window) {
                return Verdict::violated(
                    Check::HeardOfGrowth,
                    witness(t, id, None, None, format!("|HO| = {ho} too small for r = {}", s.r)),
                );
            }
        }
    }
    Verdict::new(Check::HeardOfGrowth, Status::Holds)
}

pub fn check_counting(trace: &Trace) -> Verdict {
    if !matches!(trace.scenario.params, ProtocolParams::HeardOf { .. }) {
        return Verdict::new(Check::Counting, Status::Inconclusive).noted("applies to heard-of traces only");
    }
    let ids = trace.nodes();
    let all: NodeSet = ids.iter().copied().collect();
    let mut undetected = false;
    for (i, d) in trace.detection_rounds().into_iter().enumerate() {
        match d {
            None => undetected = true,
            Some(d) => {
                let ho = trace.record(d, i).after.as_ref().and_then(|s| s.ho.as_ref());
                if ho != Some(&all) {
                    return Verdict::violated(
                        Check::Counting,
                        witness(
                            d,
                            ids[i],
                            None,
                            None,
                            format!(
                                "heard of {} of {} nodes at detection",
                                ho.map_or(0, NodeSet::len),
                                ids.len()
                            ),
                        ),
                    );
                }
            }
        }
    }
    if undetected {
        Verdict::new(Check::Counting, Status::Inconclusive).noted("some node has not detected by the horizon")
    } else {
        Verdict::new(Check::Counting, Status::Holds).with("n", ids.len())
    }
}

/// Detection-time bounds.
///
/// - [`Check::CompleteExact`]: every node detects in round `s_max + T - 1`
///   (flag observable from `s_max + T`).
/// - [`Check::InConnectedBound`]: one common detection round, strictly
///   below `s_max + ⌈T(n-1)/c⌉ + T`.
/// - [`Check::RandomizedBound`]: one common detection round, not before
///   `t_synch`, and at most `s_max + 2n`.
/// - [`Check::SizeBoundWindow`]: complete-window detection with `T = N`,
///   one common round at most `s_max + N - 1`.
pub fn check_bound_theorem(trace: &Trace, which: Check) -> Verdict {
    let n = trace.n() as u64;
    let s_max = trace.s_max();
    let params = &trace.scenario.params;
    // (first round the bound forbids, exact round if the bound is an equality)
    let (limit, exact) = match (which, params) {
        (Check::CompleteExact, ProtocolParams::Complete { window }) => {
            let d = s_max + *window as u64 - 1;
            (d + 1, Some(d))
        }
        (Check::SizeBoundWindow, ProtocolParams::Complete { window }) => (s_max + *window as u64, None),
        (Check::InConnectedBound, ProtocolParams::HeardOf { c, window }) => {
            let w = *window as u64;
            (s_max + (w * (n - 1)).div_ceil(*c as u64) + w, None)
        }
        (Check::RandomizedBound, ProtocolParams::Randomized { .. }) => (s_max + 2 * n + 1, None),
        _ => {
            return Verdict::new(which, Status::Inconclusive)
                .noted(format!("not applicable to the {} algorithm", params.algorithm()));
        }
    };
    let ids = trace.nodes();
    let rounds = trace.detection_rounds();
    let base = |status| {
        let v = Verdict::new(which, status)
            .with("s_max", s_max)
            .with("bound_exclusive", limit)
            .with("detection_rounds", detection_values(trace));
        match exact {
            Some(d) => v.with("expected_detection_round", d).with("expected_flag_round", d + 1),
            None => v,
        }
    };
    let fail = |i: usize, round: u64, detail: String| {
        let mut v = base(Status::Violated);
        v.witness = Some(witness(round, ids[i], None, None, detail));
        v
    };

    for (i, d) in rounds.iter().enumerate() {
        match *d {
            Some(d) if d >= limit => return fail(i, d, format!("detected in round {d}, bound is < {limit}")),
            Some(d) if exact.is_some_and(|e| e != d) => {
                return fail(i, d, format!("detected in round {d}, expected {}", exact.unwrap()))
            }
            None if trace.horizon() >= limit - 1 => {
                return fail(i, limit - 1, format!("no detection by round {}", limit - 1))
            }
            _ => {}
        }
    }
    if let Some(j) = (1..rounds.len()).find(|&j| rounds[j] != rounds[0]) {
        return fail(
            j,
            rounds[j].or(rounds[0]).unwrap_or(0),
            "detection rounds differ".into(),
        );
    }
    if which == Check::RandomizedBound {
        let det = check_detection(trace, find_t_synch(trace));
        if det.status == Status::Violated {
            let mut v = base(Status::Violated);
            v.witness = det.witness;
            return v;
        }
    }
    if rounds.iter().any(Option::is_none) {
        return base(Status::Inconclusive).noted("horizon ends before the bound");
    }
    base(Status::Holds).with("common_detection_round", rounds[0].unwrap())
}

/// Re-derives a violation from its witness alone, using graph products
/// rather than the checkers' incremental sweeps.
pub fn confirm_witness(trace: &Trace, verdict: &Verdict) -> bool {
    let Some(w) = &verdict.witness else { return false };
    if verdict.status != Status::Violated {
        return false;
    }
    let ids = trace.nodes();
    let idx = |id: Option<NodeId>| id.and_then(|id| ids.binary_search(&id).ok());
    let (Some(u), t) = (idx(w.node), w.round) else {
        return false;
    };
    let in_graph = |v: usize, from: u64, to: u64| -> bool {
        let g = (from + 1..=to).fold(trace.graph(from).clone(), |acc, k| acc.product(trace.graph(k)).unwrap());
        g.has_edge(ids[v], ids[u])
    };
    match verdict.property {
        Check::Detection => {
            let bound = find_t_synch(trace).unwrap_or(trace.horizon() + 1);
            trace.synch(u, t) && t < bound
        }
        Check::Simultaneity => match idx(w.peer) {
            Some(v) => t >= trace.start(u).max(trace.start(v)) && trace.synch(u, t) != trace.synch(v, t),
            None => false,
        },
        Check::BrokenPathCeiling => {
            let (Some(v), Some(from)) = (idx(w.peer), w.from_round) else {
                return false;
            };
            broken_path_exists(trace, ids[v], ids[u], from, t - 1).unwrap_or(false)
                && trace.counter(u, t).is_some_and(|r| r + from + 1 > t)
        }
        Check::RelayCeiling => {
            let (Some(v), Some(from)) = (idx(w.peer), w.from_round) else {
                return false;
            };
            let no_broken =
                (0..ids.len()).all(|x| !broken_path_exists(trace, ids[x], ids[u], from, t - 1).unwrap_or(true));
            let exceeds = match (trace.counter(u, t), trace.counter(v, from)) {
                (Some(ru), Some(rv)) => ru > rv + t - from,
                (Some(_), None) => true,
                _ => false,
            };
            no_broken && in_graph(v, from, t - 1) && exceeds
        }
        Check::CounterFloor => {
            let s_max = trace.s_max();
            let Some(r) = trace.counter(u, t) else { return false };
            if r + s_max < t {
                return true;
            }
            match idx(w.peer) {
                Some(v) => trace.start(v) == s_max && t > s_max && in_graph(v, s_max, t - 1) && r + s_max != t,
                None => false,
            }
        }
        Check::HeardOfGrowth => match (&trace.scenario.params, trace.state_at(u, t)) {
            (ProtocolParams::HeardOf { c, window }, Some(s)) => {
                !heard_of_bound_holds(s.ho.as_ref().map_or(0, NodeSet::len), s.r, ids.len(), *c, *window)
            }
            _ => false,
        },
        Check::Counting => {
            let all: NodeSet = ids.iter().copied().collect();
            trace.detection_round(u) == Some(t)
                && trace.record(t, u).after.as_ref().and_then(|s| s.ho.as_ref()) != Some(&all)
        }
        Check::CompleteExact | Check::InConnectedBound | Check::RandomizedBound | Check::SizeBoundWindow => {
            check_bound_theorem(trace, verdict.property).status == Status::Violated
        }
        Check::Synchronization => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversaryKind;
    use crate::engine::{run, GraphSpec, Scenario};
    use crate::graph::node_range;

    fn scenario(n: usize, starts: &[u64], kind: AdversaryKind, params: ProtocolParams, horizon: u64) -> Scenario {
        let ids = node_range(n);
        Scenario {
            starts: ids.iter().copied().zip(starts.iter().copied()).collect(),
            node_ids: ids,
            graph: GraphSpec { kind, seed: 3 },
            params,
            horizon,
            master_seed: 1,
            terminate_on_detect: false,
        }
    }

    #[test]
    fn t_synch_examples() {
        let t = run(&scenario(
            3,
            &[1, 1, 1],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Sync,
            8,
        ))
        .unwrap();
        assert_eq!(find_t_synch(&t), Some(1));
        let t = run(&scenario(
            2,
            &[1, 3],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Sync,
            10,
        ))
        .unwrap();
        assert_eq!(find_t_synch(&t), Some(3));
        let t = run(&scenario(
            2,
            &[1, 4],
            AdversaryKind::SelfLoops,
            ProtocolParams::Sync,
            20,
        ))
        .unwrap();
        assert_eq!(find_t_synch(&t), None);
        assert_eq!(check_synchronization(&t).status, Status::Inconclusive);
    }

    #[test]
    fn complete_window_detects_exactly() {
        let s = scenario(
            4,
            &[2, 5, 1, 3],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Complete { window: 3 },
            12,
        );
        let t = run(&s).unwrap();
        assert_eq!(t.detection_rounds(), vec![Some(7); 4]);
        let v = check_bound_theorem(&t, Check::CompleteExact);
        assert!(v.holds(), "{v:?}");
        assert_eq!(v.measured["expected_flag_round"], 8);
        assert!(check_detection(&t, find_t_synch(&t)).holds());
        assert!(check_simultaneity(&t).holds());
    }

    #[test]
    fn terminating_runs_are_judged_up_to_the_freeze() {
        let mut s = scenario(
            4,
            &[1, 3, 2, 3],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Complete { window: 2 },
            15,
        );
        s.terminate_on_detect = true;
        let t = run(&s).unwrap();
        assert_eq!(last_live_round(&t), 5);
        assert_eq!(find_t_synch(&t), Some(3));
        for check in Check::ALL {
            let v = run_check(&t, check, &CheckOptions::full_sweep());
            assert_ne!(v.status, Status::Violated, "{v:?}");
        }
        assert!(check_detection(&t, find_t_synch(&t)).holds());
    }

    #[test]
    fn undetected_trace_is_inconclusive() {
        let s = scenario(
            3,
            &[1, 1, 1],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Complete { window: 50 },
            10,
        );
        let t = run(&s).unwrap();
        assert_eq!(check_detection(&t, find_t_synch(&t)).status, Status::Inconclusive);
        assert_eq!(
            check_bound_theorem(&t, Check::CompleteExact).status,
            Status::Inconclusive
        );
    }

    #[test]
    fn premature_detection_on_sparser_graphs() {
        // Window-1 detection on a sequence that is only 2-complete: an early
        // node that does not hear a passive node's null in some round counts
        // past 1 and fires before the late node has started.
        let ids = node_range(3);
        let rounds = vec![
            vec![(ids[0], ids[1]), (ids[1], ids[2])],
            vec![(ids[1], ids[0]), (ids[2], ids[1])],
        ];
        let s = scenario(
            3,
            &[1, 1, 4],
            AdversaryKind::Explicit { rounds },
            ProtocolParams::Complete { window: 1 },
            10,
        );
        let t = run(&s).unwrap();
        let v = check_detection(&t, find_t_synch(&t));
        assert_eq!(v.status, Status::Violated, "{v:?}");
        assert!(confirm_witness(&t, &v));
    }

    #[test]
    fn lemma_checks_hold_on_honest_traces() {
        let kind = AdversaryKind::CyclicInConnected {
            c: 1,
            window: 2,
            density: 0.1,
        };
        let s = scenario(
            6,
            &[3, 1, 6, 2, 6, 4],
            kind,
            ProtocolParams::HeardOf { c: 1, window: 2 },
            30,
        );
        let t = run(&s).unwrap();
        for check in [
            Check::BrokenPathCeiling,
            Check::RelayCeiling,
            Check::CounterFloor,
            Check::HeardOfGrowth,
        ] {
            let v = check_lemma_bounds(&t, check, &CheckOptions::full_sweep());
            assert!(v.holds(), "{v:?}");
        }
        assert!(check_counting(&t).holds());
        assert!(check_bound_theorem(&t, Check::InConnectedBound).holds());
    }

    #[test]
    fn corrupted_counter_is_caught() {
        let kind = AdversaryKind::CyclicInConnected {
            c: 1,
            window: 1,
            density: 0.0,
        };
        let s = scenario(4, &[1, 2, 3, 3], kind, ProtocolParams::Sync, 15);
        let mut t = run(&s).unwrap();
        t.rounds[9].nodes[2].before.as_mut().unwrap().r = 0;
        let v = check_lemma_bounds(&t, Check::CounterFloor, &CheckOptions::default());
        assert_eq!(v.status, Status::Violated);
        assert_eq!(v.witness.as_ref().unwrap().round, 10);
        assert!(confirm_witness(&t, &v));

        let mut t = run(&s).unwrap();
        t.rounds[9].nodes[1].before.as_mut().unwrap().r += 5;
        let v = check_lemma_bounds(&t, Check::RelayCeiling, &CheckOptions::default());
        assert_eq!(v.status, Status::Violated);
        assert!(confirm_witness(&t, &v));

        let mut t = run(&s).unwrap();
        // Node 3 starts in round 3; its null in round 2 caps counters downstream.
        t.rounds[2].nodes[0].before.as_mut().unwrap().r = 7;
        let v = check_lemma_bounds(&t, Check::BrokenPathCeiling, &CheckOptions::default());
        assert_eq!(v.status, Status::Violated, "{v:?}");
        assert!(confirm_witness(&t, &v));
    }

    #[test]
    fn counting_trivial_and_truncated() {
        let s = scenario(
            1,
            &[1],
            AdversaryKind::SelfLoops,
            ProtocolParams::HeardOf { c: 1, window: 1 },
            4,
        );
        assert!(check_counting(&run(&s).unwrap()).holds());
        let kind = AdversaryKind::CyclicInConnected {
            c: 1,
            window: 1,
            density: 0.0,
        };
        let s = scenario(6, &[1; 6], kind, ProtocolParams::HeardOf { c: 1, window: 1 }, 3);
        assert_eq!(check_counting(&run(&s).unwrap()).status, Status::Inconclusive);
    }

    #[test]
    fn broken_path_basics() {
        let s = scenario(3, &[1, 1, 1], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 5);
        let t = run(&s).unwrap();
        for v in node_range(3) {
            for u in node_range(3) {
                assert!(!broken_path_exists(&t, v, u, 1, 4).unwrap());
            }
        }
        let s = scenario(2, &[3, 1], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 5);
        let t = run(&s).unwrap();
        assert!(broken_path_exists(&t, NodeId(0), NodeId(1), 2, 2).unwrap());
        assert!(!broken_path_exists(&t, NodeId(0), NodeId(1), 3, 3).unwrap());
        assert!(broken_path_exists(&t, NodeId(0), NodeId(1), 3, 2).is_err());
        assert!(broken_path_exists(&t, NodeId(0), NodeId(1), 1, 6).is_err());
    }

    #[test]
    fn exit_codes() {
        let h = Verdict::new(Check::Detection, Status::Holds);
        let i = Verdict::new(Check::Detection, Status::Inconclusive);
        let v = Verdict::new(Check::Detection, Status::Violated);
        assert_eq!(exit_code([&h]), 0);
        assert_eq!(exit_code([&h, &i]), 2);
        assert_eq!(exit_code([&i, &v, &h]), 1);
        assert_eq!(exit_code(std::iter::empty()), 0);
    }

    #[test]
    fn check_names_round_trip() {
        for c in Check::ALL {
            assert_eq!(Check::from_name(c.name()), Some(c));
            assert_eq!(serde_json::to_value(c).unwrap(), Value::from(c.name()));
        }
    }
}
