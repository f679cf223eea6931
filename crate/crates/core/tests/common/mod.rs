#![allow(dead_code)]

use dynsync::engine::{GraphSpec, Scenario};
use dynsync::graph::{node_range, NodeId};
use dynsync::{AdversaryKind, ProtocolParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random start rounds with the latest start drawn from `1..=max_s_max` and
/// attained by at least one node.
pub fn schedule(rng: &mut impl Rng, n: usize, max_s_max: u64) -> Vec<u64> {
    let s_max = rng.random_range(1..=max_s_max);
    let mut starts: Vec<u64> = (0..n).map(|_| rng.random_range(1..=s_max)).collect();
    starts[rng.random_range(0..n)] = s_max;
    starts
}

pub fn scenario(
    starts: &[u64],
    kind: AdversaryKind,
    graph_seed: u64,
    params: ProtocolParams,
    horizon: u64,
    master_seed: u64,
) -> Scenario {
    let ids = node_range(starts.len());
    Scenario {
        starts: ids.iter().copied().zip(starts.iter().copied()).collect(),
        node_ids: ids,
        graph: GraphSpec { kind, seed: graph_seed },
        params,
        horizon,
        master_seed,
        terminate_on_detect: false,
    }
}

pub fn with_ids(ids: Vec<NodeId>, starts: &[u64], mut s: Scenario) -> Scenario {
    s.starts = ids.iter().copied().zip(starts.iter().copied()).collect();
    s.node_ids = ids;
    s
}
