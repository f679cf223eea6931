//! Deterministic round-by-round execution.
//!
//! Each round has two phases. First every node emits: passive nodes send
//! `Null`, a node whose start round has come is initialised and then sends
//! its payload. Then every active node receives the message of each of its
//! in-neighbours in that round's graph (its own included) and steps. Nothing
//! emitted in round `t` is visible after round `t`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{mix64, Adversary, AdversaryKind};
use crate::error::{Error, Result};
use crate::graph::{mask_indices, Digraph, NodeId, MAX_NODES};
use crate::protocol::{self, Message, NodeState, ProtocolParams};

const NODE_STREAM: u64 = 0x6e6f_6465_5f72_6e67;

/// Private random stream of `node`. Depends only on the master seed and the
/// node id; the adversary draws from its own seed.
pub fn rng_stream_for(master_seed: u64, node: NodeId) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(mix64(master_seed ^ NODE_STREAM));
    rng.set_stream(node.0 as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(flatten)]
    pub kind: AdversaryKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub node_ids: Vec<NodeId>,
    pub starts: BTreeMap<NodeId, u64>,
    pub graph: GraphSpec,
    pub params: ProtocolParams,
    pub horizon: u64,
    pub master_seed: u64,
    /// Freeze a node's state once it has detected.
    #[serde(default)]
    pub terminate_on_detect: bool,
}

impl Scenario {
    pub fn s_max(&self) -> u64 {
        self.starts.values().copied().max().unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn adversary(&self) -> Result<Adversary> {
        Adversary::new(self.node_ids.iter().copied(), self.graph.kind.clone(), self.graph.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.node_ids.is_empty() || self.node_ids.len() > MAX_NODES {
            return bad(format!("need 1 to {MAX_NODES} nodes, got {}", self.node_ids.len()));
        }
        let base =
            Digraph::self_loops(self.node_ids.iter().copied()).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        for &id in base.nodes() {
            match self.starts.get(&id) {
                None => return bad(format!("node {id} has no start round")),
                Some(0) => return bad(format!("node {id} starts in round 0; rounds start at 1")),
                Some(_) => {}
            }
        }
        if let Some(extra) = self.starts.keys().find(|id| base.index_of(**id).is_none()) {
            return bad(format!("start round given for unknown node {extra}"));
        }
        if self.horizon < self.s_max() {
            return bad(format!(
                "horizon {} is before the last start round {}",
                self.horizon,
                self.s_max()
            ));
        }
        self.params
            .validate()
            .map_err(|e| Error::InvalidScenario(e.to_string()))?;
        if let ProtocolParams::HeardOf { c, .. } = self.params {
            if self.n() >= 2 && c as usize >= self.n() {
                return bad(format!("c = {c} must be below the network size {}", self.n()));
            }
        }
        self.adversary().map_err(|e| Error::InvalidScenario(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub active: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub frozen: bool,
    pub before: Option<NodeState>,
    pub sent: Message,
    pub msg_bytes: usize,
    pub after: Option<NodeState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub graph: Digraph,
    pub nodes: Vec<NodeRecord>,
}

/// Complete record of one execution. Nodes are indexed by their position in
/// the sorted id list throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: Scenario,
    pub rounds: Vec<RoundRecord>,
}

/// CSV header of [`Trace::write_csv`].
pub const TRACE_CSV_COLUMNS: [&str; 8] = ["round", "node", "r", "synch", "ho", "ok", "n_hat", "msg_bytes"];

impl Trace {
    pub fn nodes(&self) -> Vec<NodeId> {
        self.rounds
            .first()
            .map(|r| r.graph.nodes().to_vec())
            .unwrap_or_default()
    }

    pub fn n(&self) -> usize {
        self.scenario.n()
    }

    pub fn horizon(&self) -> u64 {
        self.rounds.len() as u64
    }

    pub fn s_max(&self) -> u64 {
        self.scenario.s_max()
    }

    pub fn start(&self, i: usize) -> u64 {
        self.scenario.starts[&self.rounds[0].nodes[i].id]
    }

    pub fn starts(&self) -> Vec<u64> {
        (0..self.n()).map(|i| self.start(i)).collect()
    }

    pub fn graph(&self, t: u64) -> &Digraph {
        &self.rounds[(t - 1) as usize].graph
    }

    pub fn record(&self, t: u64, i: usize) -> &NodeRecord {
        &self.rounds[(t - 1) as usize].nodes[i]
    }

    /// State at the beginning of round `t`, for `1 <= t <= horizon + 1`.
    pub fn state_at(&self, i: usize, t: u64) -> Option<&NodeState> {
        let h = self.horizon();
        if t == 0 || t > h + 1 {
            None
        } else if t == h + 1 {
            self.record(h, i).after.as_ref()
        } else {
            self.record(t, i).before.as_ref()
        }
    }

    /// `r_u(t)`, defined once the node is active.
    pub fn counter(&self, i: usize, t: u64) -> Option<u64> {
        self.state_at(i, t).map(|s| s.r)
    }

    /// `synch_u(t)`; false before activation.
    pub fn synch(&self, i: usize, t: u64) -> bool {
        self.state_at(i, t).is_some_and(|s| s.synch)
    }

    /// First round during which the node's flag turned true.
    pub fn detection_round(&self, i: usize) -> Option<u64> {
        self.rounds
            .iter()
            .find(|r| r.nodes[i].after.as_ref().is_some_and(|s| s.synch))
            .map(|r| r.round)
    }

    pub fn detection_rounds(&self) -> Vec<Option<u64>> {
        (0..self.n()).map(|i| self.detection_round(i)).collect()
    }

    /// Messages received by node `i` in round `t`, by sender.
    pub fn inbox(&self, t: u64, i: usize) -> Vec<(NodeId, &Message)> {
        let round = &self.rounds[(t - 1) as usize];
        mask_indices(round.graph.in_mask(i))
            .map(|j| (round.nodes[j].id, &round.nodes[j].sent))
            .collect()
    }

    /// Edges of `G*(t)`: those of `G(t)` whose source is active.
    pub fn active_edges(&self, t: u64) -> Vec<(NodeId, NodeId)> {
        let round = &self.rounds[(t - 1) as usize];
        round
            .graph
            .edges()
            .filter(|(src, _)| round.nodes[round.graph.index_of(*src).unwrap()].active)
            .collect()
    }

    pub fn max_msg_bytes(&self) -> usize {
        self.rounds
            .iter()
            .flat_map(|r| r.nodes.iter().map(|n| n.msg_bytes))
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialises")
    }

    /// One row per round and node, describing the state at the beginning of
    /// the round and the size of the message sent in it. State columns are
    /// empty for passive nodes.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_CSV_COLUMNS)?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for round in &self.rounds {
            for node in &round.nodes {
                let s = node.before.as_ref();
                w.write_record([
                    round.round.to_string(),
                    node.id.to_string(),
                    opt(s.map(|s| s.r.to_string())),
                    opt(s.map(|s| s.synch.to_string())),
                    opt(s.and_then(|s| s.ho.as_ref()).map(|h| h.len().to_string())),
                    opt(s.and_then(|s| s.ok.as_ref()).map(|h| h.len().to_string())),
                    opt(s.and_then(|s| s.n_hat).map(|v| v.to_string())),
                    node.msg_bytes.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Executes the scenario for rounds `1..=horizon`.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let adversary = scenario.adversary()?;
    let ids = adversary.nodes().to_vec();
    let starts: Vec<u64> = ids.iter().map(|id| scenario.starts[id]).collect();
    let params = &scenario.params;

    let mut states: Vec<Option<NodeState>> = vec![None; ids.len()];
    let mut frozen = vec![false; ids.len()];
    let mut rounds = Vec::with_capacity(scenario.horizon as usize);

    for t in 1..=scenario.horizon {
        let graph = adversary.graph(t);
        for (i, &id) in ids.iter().enumerate() {
            if starts[i] == t {
                let mut rng = rng_stream_for(scenario.master_seed, id);
                states[i] = Some(protocol::init(id, t, params, &mut rng)?);
            }
        }
        let sent: Vec<Message> = states
            .iter()
            .map(|s| s.as_ref().map_or(Message::Null, |s| protocol::emit(s, params)))
            .collect();

        let mut after = Vec::with_capacity(ids.len());
        for (i, state) in states.iter().enumerate() {
            let next = match state {
                None => None,
                Some(s) if frozen[i] => Some(s.clone()),
                Some(s) => {
                    let inbox: Vec<&Message> = mask_indices(graph.in_mask(i)).map(|j| &sent[j]).collect();
                    Some(protocol::step(s, &inbox, params)?)
                }
            };
            after.push(next);
        }

        let nodes = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| NodeRecord {
                id,
                active: states[i].is_some(),
                frozen: frozen[i],
                before: states[i].clone(),
                msg_bytes: sent[i].encoded_len(),
                sent: sent[i].clone(),
                after: after[i].clone(),
            })
            .collect();
        rounds.push(RoundRecord { round: t, graph, nodes });

        if scenario.terminate_on_detect {
            for (f, s) in frozen.iter_mut().zip(&after) {
                *f |= s.as_ref().is_some_and(|s| s.synch);
            }
        }
        states = after;
    }
    Ok(Trace {
        scenario: scenario.clone(),
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::node_range;
    use rand::Rng;

    fn scenario(n: usize, starts: &[u64], kind: AdversaryKind, params: ProtocolParams, horizon: u64) -> Scenario {
        let ids = node_range(n);
        Scenario {
            starts: ids.iter().copied().zip(starts.iter().copied()).collect(),
            node_ids: ids,
            graph: GraphSpec { kind, seed: 11 },
            params,
            horizon,
            master_seed: 5,
            terminate_on_detect: false,
        }
    }

    #[test]
    fn lone_node_counts_up() {
        let s = scenario(1, &[1], AdversaryKind::SelfLoops, ProtocolParams::Sync, 5);
        let trace = run(&s).unwrap();
        let rs: Vec<u64> = (1..=5).map(|t| trace.counter(0, t).unwrap()).collect();
        assert_eq!(rs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn late_starter_holds_back_early_one() {
        let s = scenario(2, &[1, 3], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 10);
        let trace = run(&s).unwrap();
        for t in 1..=3 {
            assert_eq!(trace.counter(0, t), Some(0), "round {t}");
        }
        assert_eq!(trace.counter(1, 2), None);
        for t in 3..=11 {
            assert_eq!(trace.counter(0, t), Some(t - 3));
            assert_eq!(trace.counter(1, t), Some(t - 3));
        }
    }

    #[test]
    fn passive_nodes_send_null_and_keep_no_state() {
        let s = scenario(3, &[1, 1, 4], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 6);
        let trace = run(&s).unwrap();
        for t in 1..=3 {
            let rec = trace.record(t, 2);
            assert!(!rec.active);
            assert_eq!(rec.sent, Message::Null);
            assert_eq!(rec.msg_bytes, 1);
            assert!(rec.before.is_none() && rec.after.is_none());
        }
        assert!(trace.record(4, 2).active);
        assert_eq!(trace.record(4, 2).before.as_ref().unwrap().r, 0);
        assert_eq!(trace.active_edges(2).len(), 2 * 3);
        assert_eq!(trace.active_edges(4).len(), 9);
    }

    #[test]
    fn every_active_inbox_contains_own_message() {
        let kind = AdversaryKind::CyclicInConnected {
            c: 1,
            window: 1,
            density: 0.1,
        };
        let s = scenario(
            5,
            &[1, 2, 3, 5, 5],
            kind,
            ProtocolParams::HeardOf { c: 1, window: 1 },
            12,
        );
        let trace = run(&s).unwrap();
        let ids = trace.nodes();
        for t in 1..=12 {
            for (i, &id) in ids.iter().enumerate() {
                let inbox = trace.inbox(t, i);
                let own = inbox.iter().find(|(src, _)| *src == id).unwrap();
                assert_eq!(own.1, &trace.record(t, i).sent);
            }
        }
    }

    #[test]
    fn active_steps_depend_only_on_active_edges_and_nulls() {
        // Rebuild each step from G*(t) plus one null per passive in-neighbour.
        let kind = AdversaryKind::TCompleteRandom {
            window: 3,
            density: 0.2,
        };
        let s = scenario(6, &[1, 4, 2, 7, 1, 3], kind, ProtocolParams::ExactSize { n: 6 }, 15);
        let trace = run(&s).unwrap();
        let ids = trace.nodes();
        for t in 1..=15 {
            let star = trace.active_edges(t);
            for i in 0..6 {
                let Some(before) = &trace.record(t, i).before else {
                    continue;
                };
                let mut inbox: Vec<Message> = star
                    .iter()
                    .filter(|(_, dst)| *dst == ids[i])
                    .map(|(src, _)| trace.record(t, ids.binary_search(src).unwrap()).sent.clone())
                    .collect();
                let passive_in = trace
                    .graph(t)
                    .in_neighbors(ids[i])
                    .unwrap()
                    .into_iter()
                    .filter(|v| !trace.record(t, ids.binary_search(v).unwrap()).active)
                    .count();
                inbox.extend(std::iter::repeat_n(Message::Null, passive_in));
                let refs: Vec<&Message> = inbox.iter().collect();
                let again = protocol::step(before, &refs, &s.params).unwrap();
                assert_eq!(Some(&again), trace.record(t, i).after.as_ref());
            }
        }
    }

    #[test]
    fn replay_is_byte_identical() {
        let p = ProtocolParams::Randomized {
            size_bound: 10,
            eta: 0.25,
            ell: Some(64),
        };
        let s = scenario(
            4,
            &[2, 1, 3, 1],
            AdversaryKind::CyclicInConnected {
                c: 1,
                window: 1,
                density: 0.0,
            },
            p,
            20,
        );
        assert_eq!(run(&s).unwrap().to_json(), run(&s).unwrap().to_json());
    }

    #[test]
    fn node_streams_are_reproducible_and_distinct() {
        let mut a = rng_stream_for(1, NodeId(3));
        let mut b = rng_stream_for(1, NodeId(3));
        let xs: Vec<u64> = (0..64).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
        let mut collisions = 0;
        for k in 0..1000u32 {
            let mut p = rng_stream_for(9, NodeId(k));
            let mut q = rng_stream_for(9, NodeId(k + 1000));
            let ps: Vec<u64> = (0..64).map(|_| p.random()).collect();
            let qs: Vec<u64> = (0..64).map(|_| q.random()).collect();
            collisions += (ps == qs) as u32;
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn graph_ignores_protocol_seed() {
        let kind = AdversaryKind::TCompleteRandom {
            window: 2,
            density: 0.3,
        };
        let p = ProtocolParams::Randomized {
            size_bound: 6,
            eta: 0.25,
            ell: Some(16),
        };
        let mut s = scenario(4, &[1, 2, 3, 4], kind, p, 10);
        let a = run(&s).unwrap();
        s.master_seed = 999;
        let b = run(&s).unwrap();
        let graphs = |t: &Trace| t.rounds.iter().map(|r| r.graph.clone()).collect::<Vec<_>>();
        assert_eq!(graphs(&a), graphs(&b));
        assert_ne!(a.record(1, 0).before, b.record(1, 0).before);
    }

    #[test]
    fn terminate_on_detect_freezes_state() {
        let mut s = scenario(
            3,
            &[1, 1, 1],
            AdversaryKind::ConstantComplete,
            ProtocolParams::Complete { window: 2 },
            8,
        );
        s.terminate_on_detect = true;
        let trace = run(&s).unwrap();
        assert_eq!(trace.detection_round(0), Some(2));
        for t in 3..=9 {
            assert_eq!(trace.counter(0, t), Some(2));
        }
        assert!(trace.record(4, 0).frozen);
    }

    #[test]
    fn rejects_invalid_scenarios() {
        let mut s = scenario(2, &[1, 5], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 4);
        assert!(matches!(run(&s), Err(Error::InvalidScenario(_))));
        s.horizon = 5;
        assert!(run(&s).is_ok());
        s.starts.remove(&NodeId(1));
        assert!(run(&s).is_err());
        let s = scenario(2, &[0, 1], AdversaryKind::ConstantComplete, ProtocolParams::Sync, 4);
        assert!(run(&s).is_err());
        let s = scenario(
            3,
            &[1, 1, 1],
            AdversaryKind::ConstantComplete,
            ProtocolParams::HeardOf { c: 3, window: 1 },
            4,
        );
        assert!(run(&s).is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = scenario(
            3,
            &[1, 2, 3],
            AdversaryKind::CyclicInConnected {
                c: 1,
                window: 2,
                density: 0.1,
            },
            ProtocolParams::HeardOf { c: 1, window: 2 },
            9,
        );
        let json = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let trace = run(&s).unwrap();
        let back: Trace = serde_json::from_str(&trace.to_json()).unwrap();
        assert_eq!(back.scenario, s);
    }

    #[test]
    fn csv_rows() {
        let s = scenario(
            2,
            &[1, 2],
            AdversaryKind::ConstantComplete,
            ProtocolParams::HeardOf { c: 1, window: 1 },
            2,
        );
        let trace = run(&s).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "round,node,r,synch,ho,ok,n_hat,msg_bytes");
        assert_eq!(lines[1], "1,0,0,false,1,,,4");
        assert_eq!(lines[2], "1,1,,,,,,1");
        assert_eq!(lines.len(), 5);
    }
}
