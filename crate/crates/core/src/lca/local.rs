//! Local clusterings and the alternatives the engine considers for them.
//!
//! A local clustering is one cluster, or two clusters joined by at least one
//! edge. Alternatives re-partition the same vertex set; their score delta is
//! exact because only edges inside the set change intra/inter status.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::graph::{IdentificationGraph, VertexId};
use super::partition::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LocalKey {
    Single(VertexId),
    /// Ordered: first id < second id.
    Pair(VertexId, VertexId),
}

impl LocalKey {
    pub fn pair(a: VertexId, b: VertexId) -> Self {
        if a < b {
            LocalKey::Pair(a, b)
        } else {
            LocalKey::Pair(b, a)
        }
    }

    pub fn clusters(&self) -> Vec<VertexId> {
        match *self {
            LocalKey::Single(c) => vec![c],
            LocalKey::Pair(a, b) => vec![a, b],
        }
    }

    pub fn involves(&self, cluster: VertexId) -> bool {
        match *self {
            LocalKey::Single(c) => c == cluster,
            LocalKey::Pair(a, b) => a == cluster || b == cluster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternative {
    /// New grouping of the local vertex set; each group sorted, no empties.
    pub parts: Vec<Vec<VertexId>>,
    /// Alternative score minus current score.
    pub delta: i64,
}

/// The vertex groups of a local clustering, or `None` if it is not valid
/// (a missing cluster, or a pair with no connecting edge).
pub fn local_parts<'p>(
    graph: &IdentificationGraph,
    partition: &'p Partition,
    key: LocalKey,
) -> Option<Vec<&'p [VertexId]>> {
    match key {
        LocalKey::Single(c) => Some(vec![partition.members(c)?]),
        LocalKey::Pair(a, b) => {
            let (pa, pb) = (partition.members(a)?, partition.members(b)?);
            let joined = pa.iter().any(|&v| {
                graph
                    .neighbors(v)
                    .iter()
                    .any(|&(n, _)| partition.cluster_of(n) == b)
            });
            joined.then(|| vec![pa, pb])
        }
    }
}

/// Induced subgraph over a local vertex set, in local indices.
struct LocalGraph {
    verts: Vec<VertexId>,
    /// (i, j, weight, global edge index), i < j.
    edges: Vec<(usize, usize, i64, usize)>,
    /// Per local vertex: (neighbor, weight).
    adj: Vec<Vec<(usize, i64)>>,
}

impl LocalGraph {
    fn build(graph: &IdentificationGraph, parts: &[&[VertexId]]) -> Self {
        let verts: Vec<VertexId> = parts.iter().flat_map(|p| p.iter().copied()).collect();
        let local: HashMap<VertexId, usize> =
            verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges = Vec::new();
        let mut adj = vec![Vec::new(); verts.len()];
        for (i, &v) in verts.iter().enumerate() {
            for &(n, idx) in graph.neighbors(v) {
                if let Some(&j) = local.get(&n) {
                    if i < j {
                        let w = graph.weight(idx);
                        edges.push((i, j, w, idx));
                        adj[i].push((j, w));
                        adj[j].push((i, w));
                    }
                }
            }
        }
        Self { verts, edges, adj }
    }

    fn weight_to(&self, x: usize, side: &[bool], target: bool) -> i64 {
        self.adj[x]
            .iter()
            .filter(|&&(n, _)| n != x && side[n] == target)
            .map(|&(_, w)| w)
            .sum()
    }

    fn parts_from_sides(&self, side: &[bool]) -> Vec<Vec<VertexId>> {
        let mut a: Vec<VertexId> = Vec::new();
        let mut b: Vec<VertexId> = Vec::new();
        for (i, &s) in side.iter().enumerate() {
            if s {
                b.push(self.verts[i]);
            } else {
                a.push(self.verts[i]);
            }
        }
        a.sort_unstable();
        b.sort_unstable();
        let mut parts: Vec<Vec<VertexId>> = [a, b].into_iter().filter(|p| !p.is_empty()).collect();
        parts.sort();
        parts
    }
}

/// Every alternative for a local clustering.
///
/// Single cluster: all two-way splits when the cluster has at most
/// `exhaustive_max` members, otherwise heuristic splits grown from every
/// edge as a seed pair. Pair: the merge, then
/// every single-vertex transfer in either direction.
pub fn enumerate_alternatives(
    graph: &IdentificationGraph,
    parts: &[&[VertexId]],
    exhaustive_max: usize,
) -> Vec<Alternative> {
    let lg = LocalGraph::build(graph, parts);
    match parts {
        [single] => {
            let s = single.len();
            if s <= 1 {
                Vec::new()
            } else if s <= exhaustive_max {
                exhaustive_splits(&lg)
            } else {
                greedy_splits(&lg)
            }
        }
        [a, b] => pair_alternatives(&lg, a.len(), b.len()),
        _ => Vec::new(),
    }
}

fn exhaustive_splits(lg: &LocalGraph) -> Vec<Alternative> {
    let s = lg.verts.len();
    // Vertex 0 always stays on side A; each mask picks side B among the rest.
    let masks = 1u32 << (s - 1);
    let mut out = Vec::with_capacity(masks as usize - 1);
    for mask in 1..masks {
        let side: Vec<bool> = (0..s).map(|i| i > 0 && mask & (1 << (i - 1)) != 0).collect();
        let cut: i64 = lg
            .edges
            .iter()
            .filter(|&&(i, j, _, _)| side[i] != side[j])
            .map(|&(_, _, w, _)| w)
            .sum();
        out.push(Alternative {
            parts: lg.parts_from_sides(&side),
            delta: -2 * cut,
        });
    }
    out
}

/// Grow a two-way split from a seed pair placed on opposite sides, always
/// placing next the vertex with the strongest preference, then improve it
/// by single-vertex moves.
fn grow_split(lg: &LocalGraph, seed_a: usize, seed_b: usize) -> Vec<bool> {
    let s = lg.verts.len();
    let mut side = vec![false; s];
    let mut placed = vec![false; s];
    // Running attachment of each vertex to side A and side B.
    let mut pull = vec![(0i64, 0i64); s];
    let place = |x: usize, b: bool, side: &mut Vec<bool>, placed: &mut Vec<bool>, pull: &mut Vec<(i64, i64)>| {
        side[x] = b;
        placed[x] = true;
        for &(n, w) in &lg.adj[x] {
            if b {
                pull[n].1 += w;
            } else {
                pull[n].0 += w;
            }
        }
    };
    place(seed_a, false, &mut side, &mut placed, &mut pull);
    place(seed_b, true, &mut side, &mut placed, &mut pull);
    for _ in 2..s {
        let x = (0..s)
            .filter(|&x| !placed[x])
            .max_by_key(|&x| ((pull[x].0 - pull[x].1).abs(), std::cmp::Reverse(x)))
            .expect("an unplaced vertex remains");
        let b = pull[x].1 > pull[x].0;
        place(x, b, &mut side, &mut placed, &mut pull);
    }

    let mut size_b = side.iter().filter(|&&b| b).count();
    for _ in 0..s * s {
        // Moving x across changes the cut by w(x, own side) - w(x, other side).
        let best = (0..s)
            .filter(|&x| {
                let own = if side[x] { size_b } else { s - size_b };
                own > 1
            })
            .map(|x| {
                let gain = lg.weight_to(x, &side, !side[x]) - lg.weight_to(x, &side, side[x]);
                (gain, std::cmp::Reverse(x))
            })
            .max();
        match best {
            Some((gain, std::cmp::Reverse(x))) if gain > 0 => {
                side[x] = !side[x];
                if side[x] {
                    size_b += 1;
                } else {
                    size_b -= 1;
                }
            }
            _ => break,
        }
    }
    side
}

/// Heuristic splits of a large cluster: one grown from each edge as a seed
/// pair, deduplicated.
fn greedy_splits(lg: &LocalGraph) -> Vec<Alternative> {
    let s = lg.verts.len();
    if s < 2 {
        return Vec::new();
    }
    let mut seeds: Vec<(usize, usize)> = lg.edges.iter().map(|&(i, j, _, _)| (i, j)).collect();
    if seeds.is_empty() {
        seeds.push((0, 1));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (a, b) in seeds {
        let side = grow_split(lg, a, b);
        let parts = lg.parts_from_sides(&side);
        if parts.len() < 2 || !seen.insert(parts.clone()) {
            continue;
        }
        let cut: i64 = lg
            .edges
            .iter()
            .filter(|&&(i, j, _, _)| side[i] != side[j])
            .map(|&(_, _, w, _)| w)
            .sum();
        out.push(Alternative { parts, delta: -2 * cut });
    }
    out
}

fn pair_alternatives(lg: &LocalGraph, len_a: usize, len_b: usize) -> Vec<Alternative> {
    let n = lg.verts.len();
    let side: Vec<bool> = (0..n).map(|i| i >= len_a).collect();
    let cross: i64 = lg
        .edges
        .iter()
        .filter(|&&(i, j, _, _)| side[i] != side[j])
        .map(|&(_, _, w, _)| w)
        .sum();

    let mut merged = lg.verts.clone();
    merged.sort_unstable();
    let mut out = vec![Alternative {
        parts: vec![merged],
        delta: 2 * cross,
    }];

    for x in 0..n {
        let own_len = if side[x] { len_b } else { len_a };
        if own_len == 1 {
            // Moving the only member is the merge again.
            continue;
        }
        let to_other = lg.weight_to(x, &side, !side[x]);
        let to_own = lg.weight_to(x, &side, side[x]);
        let mut moved = side.clone();
        moved[x] = !moved[x];
        out.push(Alternative {
            parts: lg.parts_from_sides(&moved),
            delta: 2 * (to_other - to_own),
        });
    }
    out
}

/// Global indices of edges inside the local vertex set whose intra/inter
/// status differs between the current grouping and `alt`.
pub fn decisive_edges(
    graph: &IdentificationGraph,
    parts: &[&[VertexId]],
    alt: &Alternative,
) -> Vec<usize> {
    let lg = LocalGraph::build(graph, parts);
    let mut current = HashMap::new();
    for (pi, p) in parts.iter().enumerate() {
        for &v in p.iter() {
            current.insert(v, pi);
        }
    }
    let mut proposed = HashMap::new();
    for (pi, p) in alt.parts.iter().enumerate() {
        for &v in p {
            proposed.insert(v, pi);
        }
    }
    lg.edges
        .iter()
        .filter(|&&(i, j, _, _)| {
            let (u, v) = (lg.verts[i], lg.verts[j]);
            (current[&u] == current[&v]) != (proposed[&u] == proposed[&v])
        })
        .map(|&(_, _, _, idx)| idx)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, w: &[(u32, u32, i64)]) -> IdentificationGraph {
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let weights: Vec<(String, String, i64)> = w
            .iter()
            .map(|&(a, b, w)| (format!("v{a}"), format!("v{b}"), w))
            .collect();
        IdentificationGraph::from_weights(&ids, &weights).unwrap()
    }

    #[test]
    fn singleton_has_no_alternatives() {
        let g = graph(1, &[]);
        assert!(enumerate_alternatives(&g, &[&[0]], 8).is_empty());
    }

    #[test]
    fn merge_delta_is_twice_the_connecting_weight() {
        let g = graph(2, &[(0, 1, 10)]);
        let alts = enumerate_alternatives(&g, &[&[0], &[1]], 8);
        assert_eq!(alts.len(), 1);
        assert_eq!(alts[0].parts, vec![vec![0, 1]]);
        assert_eq!(alts[0].delta, 20);
    }

    #[test]
    fn split_count_is_two_to_the_s_minus_one_minus_one() {
        let g = graph(5, &[(0, 1, 3), (1, 2, 3), (2, 3, 3), (3, 4, 3)]);
        let alts = enumerate_alternatives(&g, &[&[0, 1, 2, 3, 4]], 8);
        assert_eq!(alts.len(), 15);
        // Cutting a path once costs one edge.
        assert_eq!(alts.iter().map(|a| a.delta).max(), Some(-6));
    }

    #[test]
    fn transfer_delta() {
        // A = {0, 1}, B = {2}; 0 pulls toward B more than toward 1.
        let g = graph(3, &[(0, 1, 5), (0, 2, 20), (1, 2, -30)]);
        let alts = enumerate_alternatives(&g, &[&[0, 1], &[2]], 8);
        let transfer = alts.iter().find(|a| a.parts == vec![vec![0, 2], vec![1]]).unwrap();
        assert_eq!(transfer.delta, 2 * (20 - 5));
        let merge = &alts[0];
        assert_eq!(merge.delta, 2 * (20 - 30));
    }

    #[test]
    fn greedy_split_finds_the_weak_bridge() {
        // Two 5-cliques joined by one weak edge.
        let mut w = Vec::new();
        for base in [0u32, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    w.push((base + i, base + j, 50));
                }
            }
        }
        w.push((4, 5, 5));
        let g = graph(10, &w);
        let members: Vec<u32> = (0..10).collect();
        let alts = enumerate_alternatives(&g, &[&members], 8);
        let best = alts.iter().max_by_key(|a| a.delta).unwrap();
        assert_eq!(best.parts, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
        assert_eq!(best.delta, -10);
    }

    #[test]
    fn greedy_split_finds_a_bridge_despite_negative_inner_edges() {
        // A 6-clique with two negative edges, bridged to a 4-clique.
        let mut w = Vec::new();
        for i in 0..6u32 {
            for j in i + 1..6 {
                let weight = if (i, j) == (2, 5) || (i, j) == (2, 4) { -85 } else { 90 };
                w.push((i, j, weight));
            }
        }
        for i in 6..10u32 {
            for j in i + 1..10 {
                w.push((i, j, 90));
            }
        }
        w.push((0, 9, 89));
        let g = graph(10, &w);
        let members: Vec<u32> = (0..10).collect();
        let alts = enumerate_alternatives(&g, &[&members], 8);
        assert!(alts
            .iter()
            .any(|a| a.parts == vec![vec![0, 1, 2, 3, 4, 5], vec![6, 7, 8, 9]] && a.delta == -178));
    }

    #[test]
    fn decisive_edges_of_a_merge() {
        let g = graph(3, &[(0, 1, 5), (0, 2, 20), (1, 2, -30)]);
        let parts: [&[u32]; 2] = [&[0, 1], &[2]];
        let alts = enumerate_alternatives(&g, &parts, 8);
        let mut edges = decisive_edges(&g, &parts, &alts[0]);
        edges.sort();
        assert_eq!(edges, vec![1, 2]);
    }
}
