//! Directed communication graphs over a fixed node set.
//!
//! Every [`Digraph`] carries a self-loop at each node. Adjacency is stored as
//! one bitmask row per node, indexed by the node's position in the sorted node
//! list, so graphs are limited to [`MAX_NODES`] nodes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest node set a [`Digraph`] can represent.
pub const MAX_NODES: usize = 64;

/// Largest node set accepted by the exhaustive connectivity predicates.
pub const MAX_ENUMERATION_NODES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(id: u32) -> Self {
        NodeId(id)
    }
}

pub type NodeSet = BTreeSet<NodeId>;

/// Nodes `0..n` as identifiers.
pub fn node_range(n: usize) -> Vec<NodeId> {
    (0..n as u32).map(NodeId).collect()
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Digraph {
    nodes: Vec<NodeId>,
    out: Vec<u64>,
    inc: Vec<u64>,
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(i)
        }
    })
}

pub(crate) fn mask_indices(mask: u64) -> impl Iterator<Item = usize> {
    bits(mask)
}

fn validated_nodes(nodes: impl IntoIterator<Item = NodeId>) -> Result<Vec<NodeId>> {
    let mut nodes: Vec<NodeId> = nodes.into_iter().collect();
    nodes.sort_unstable();
    if let Some(w) = nodes.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateNode(w[0]));
    }
    if nodes.is_empty() || nodes.len() > MAX_NODES {
        return Err(Error::NodeCount {
            got: nodes.len(),
            max: MAX_NODES,
        });
    }
    Ok(nodes)
}

fn transpose_rows(rows: &[u64]) -> Vec<u64> {
    let mut t = vec![0u64; rows.len()];
    for (i, &row) in rows.iter().enumerate() {
        for j in bits(row) {
            t[j] |= 1 << i;
        }
    }
    t
}

impl Digraph {
    /// Builds a graph from an edge list. Self-loops are added at every node.
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let nodes = validated_nodes(nodes)?;
        let mut out: Vec<u64> = (0..nodes.len()).map(|i| 1u64 << i).collect();
        for (src, dst) in edges {
            let s = nodes.binary_search(&src).map_err(|_| Error::UnknownNode(src))?;
            let d = nodes.binary_search(&dst).map_err(|_| Error::UnknownNode(dst))?;
            out[s] |= 1 << d;
        }
        Ok(Self::from_rows(nodes, out))
    }

    /// Rows are out-neighbour masks by node position; self-loop bits are forced on.
    pub(crate) fn from_rows(nodes: Vec<NodeId>, mut out: Vec<u64>) -> Self {
        debug_assert_eq!(nodes.len(), out.len());
        let full = full_mask(nodes.len());
        for (i, row) in out.iter_mut().enumerate() {
            *row = (*row | (1 << i)) & full;
        }
        let inc = transpose_rows(&out);
        Self { nodes, out, inc }
    }

    /// The graph `I` with only self-loops.
    pub fn self_loops(nodes: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        Self::new(nodes, std::iter::empty())
    }

    pub fn complete(nodes: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let nodes = validated_nodes(nodes)?;
        let full = full_mask(nodes.len());
        let out = vec![full; nodes.len()];
        Ok(Self::from_rows(nodes, out))
    }

    /// Star with edges from `hub` to every other node.
    pub fn out_star(nodes: impl IntoIterator<Item = NodeId>, hub: NodeId) -> Result<Self> {
        let nodes = validated_nodes(nodes)?;
        let h = nodes.binary_search(&hub).map_err(|_| Error::UnknownNode(hub))?;
        let mut out = vec![0u64; nodes.len()];
        out[h] = full_mask(nodes.len());
        Ok(Self::from_rows(nodes, out))
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    fn require(&self, id: NodeId) -> Result<usize> {
        self.index_of(id).ok_or(Error::UnknownNode(id))
    }

    pub fn out_mask(&self, i: usize) -> u64 {
        self.out[i]
    }

    pub fn in_mask(&self, i: usize) -> u64 {
        self.inc[i]
    }

    pub fn has_edge(&self, src: NodeId, dst: NodeId) -> bool {
        match (self.index_of(src), self.index_of(dst)) {
            (Some(s), Some(d)) => self.out[s] & (1 << d) != 0,
            _ => false,
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(move |(s, &row)| bits(row).map(move |d| (self.nodes[s], self.nodes[d])))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn set_of(&self, mask: u64) -> NodeSet {
        bits(mask).map(|i| self.nodes[i]).collect()
    }

    pub fn in_neighbors(&self, u: NodeId) -> Result<NodeSet> {
        let i = self.require(u)?;
        Ok(self.set_of(self.inc[i]))
    }

    pub fn out_neighbors(&self, u: NodeId) -> Result<NodeSet> {
        let i = self.require(u)?;
        Ok(self.set_of(self.out[i]))
    }

    pub fn transpose(&self) -> Digraph {
        Self {
            nodes: self.nodes.clone(),
            out: self.inc.clone(),
            inc: self.out.clone(),
        }
    }

    /// `self ∘ other`: edge (u, v) iff u → w in `self` and w → v in `other`.
    pub fn product(&self, other: &Digraph) -> Result<Digraph> {
        if self.nodes != other.nodes {
            return Err(Error::NodeSetMismatch);
        }
        let out = self
            .out
            .iter()
            .map(|&row| bits(row).fold(0u64, |acc, w| acc | other.out[w]))
            .collect();
        Ok(Self::from_rows(self.nodes.clone(), out))
    }

    pub fn is_complete(&self) -> bool {
        let full = full_mask(self.len());
        self.out.iter().all(|&row| row == full)
    }

    pub fn is_strongly_connected(&self) -> bool {
        let full = full_mask(self.len());
        closure(&self.out, 1) == full && closure(&self.inc, 1) == full
    }

    /// Every non-empty proper subset S has at least `min(c, |V \ S|)`
    /// in-neighbours outside S. Exhaustive over all subsets.
    pub fn is_c_in_connected(&self, c: u32) -> Result<bool> {
        self.check_connectivity_args(c)?;
        Ok(cut_condition(&self.inc, c))
    }

    /// Out-neighbour analogue of [`Digraph::is_c_in_connected`].
    pub fn is_c_out_connected(&self, c: u32) -> Result<bool> {
        self.check_connectivity_args(c)?;
        Ok(cut_condition(&self.out, c))
    }

    fn check_connectivity_args(&self, c: u32) -> Result<()> {
        let n = self.len();
        if n < 2 || c == 0 || c as usize >= n {
            return Err(Error::ConnectivityOutOfRange { c, n });
        }
        if n > MAX_ENUMERATION_NODES {
            return Err(Error::TooLargeForEnumeration {
                got: n,
                max: MAX_ENUMERATION_NODES,
            });
        }
        Ok(())
    }
}

pub fn product(g: &Digraph, h: &Digraph) -> Result<Digraph> {
    g.product(h)
}

fn closure(rows: &[u64], start: u64) -> u64 {
    let mut seen = start;
    let mut frontier = start;
    while frontier != 0 {
        let next = bits(frontier).fold(0u64, |acc, i| acc | rows[i]);
        frontier = next & !seen;
        seen |= next;
    }
    seen
}

fn cut_condition(neighbourhoods: &[u64], c: u32) -> bool {
    let n = neighbourhoods.len();
    let full = full_mask(n) as usize;
    // gamma[s] = union of neighbourhoods of the members of s, built from s minus its lowest bit.
    let mut gamma = vec![0u64; full + 1];
    for s in 1..full {
        let low = s.trailing_zeros() as usize;
        gamma[s] = gamma[s & (s - 1)] | neighbourhoods[low];
        let external = (gamma[s] & !(s as u64)).count_ones();
        let outside = (n - s.count_ones() as usize) as u32;
        if external < c.min(outside) {
            return false;
        }
    }
    true
}

impl fmt::Debug for Digraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Digraph")
            .field("nodes", &self.nodes)
            .field("edges", &self.edges().filter(|(a, b)| a != b).collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct DigraphRepr {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
}

impl Serialize for Digraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DigraphRepr {
            nodes: self.nodes.clone(),
            edges: self.edges().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Digraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DigraphRepr::deserialize(deserializer)?;
        Digraph::new(repr.nodes, repr.edges).map_err(serde::de::Error::custom)
    }
}
