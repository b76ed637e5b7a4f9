use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::review::{ReviewDecision, ReviewSource};
use super::LcaError;

/// Vertex handle. Vertices are numbered in lexicographic id order, so
/// comparing handles compares annotation ids.
pub type VertexId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: VertexId,
    pub v: VertexId,
    pub reviews: Vec<ReviewDecision>,
    pub weight: i64,
}

impl Edge {
    pub fn algorithmic_reviews(&self) -> u32 {
        self.reviews
            .iter()
            .filter(|r| r.source == ReviewSource::Algorithmic)
            .count() as u32
    }

    pub fn human_reviews(&self) -> u32 {
        self.reviews.iter().filter(|r| r.source.is_human()).count() as u32
    }

    pub fn weight_is_consistent(&self) -> bool {
        self.weight == self.reviews.iter().map(|r| r.contribution).sum::<i64>()
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    ids: Vec<String>,
    edges: Vec<Edge>,
}

/// Annotations as vertices, accumulated pairwise reviews as weighted edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct IdentificationGraph {
    ids: Vec<String>,
    edges: Vec<Edge>,
    id_index: HashMap<String, VertexId>,
    edge_index: HashMap<(VertexId, VertexId), usize>,
    /// Per vertex: (neighbor, edge index), sorted by neighbor.
    adj: Vec<Vec<(VertexId, usize)>>,
}

impl PartialEq for IdentificationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids && self.edges == other.edges
    }
}

impl TryFrom<GraphRepr> for IdentificationGraph {
    type Error = String;

    fn try_from(repr: GraphRepr) -> Result<Self, String> {
        let mut g = IdentificationGraph::new(repr.ids).map_err(|e| e.to_string())?;
        for edge in repr.edges {
            if edge.u >= edge.v || edge.v as usize >= g.ids.len() {
                return Err(format!("invalid edge ({}, {})", edge.u, edge.v));
            }
            if !edge.weight_is_consistent() {
                return Err(format!("edge ({}, {}) weight disagrees with its reviews", edge.u, edge.v));
            }
            let idx = g.insert_edge(edge.u, edge.v);
            g.edges[idx] = edge;
        }
        Ok(g)
    }
}

impl From<IdentificationGraph> for GraphRepr {
    fn from(g: IdentificationGraph) -> Self {
        GraphRepr {
            ids: g.ids,
            edges: g.edges,
        }
    }
}

impl IdentificationGraph {
    /// Vertices only. Ids are sorted; duplicates are an error.
    pub fn new(mut ids: Vec<String>) -> Result<Self, LcaError> {
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(LcaError::DuplicateAnnotation(w[0].clone()));
        }
        let id_index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as VertexId))
            .collect();
        let n = ids.len();
        Ok(Self {
            ids,
            edges: Vec::new(),
            id_index,
            edge_index: HashMap::new(),
            adj: vec![Vec::new(); n],
        })
    }

    /// Convenience constructor for fixed-weight graphs: each listed pair
    /// gets one review carrying the given contribution.
    pub fn from_weights<S: AsRef<str>>(
        ids: &[S],
        weights: &[(S, S, i64)],
    ) -> Result<Self, LcaError> {
        let mut g = Self::new(ids.iter().map(|s| s.as_ref().to_string()).collect())?;
        for (a, b, w) in weights {
            let (u, v) = (g.vertex(a.as_ref())?, g.vertex(b.as_ref())?);
            let idx = g.add_edge(u, v)?;
            g.push_review(idx, ReviewDecision {
                decision: if *w >= 0 {
                    super::Decision::Same
                } else {
                    super::Decision::Different
                },
                source: ReviewSource::Algorithmic,
                confidence: None,
                contribution: *w,
            });
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, v: VertexId) -> &str {
        &self.ids[v as usize]
    }

    pub fn vertex(&self, id: &str) -> Result<VertexId, LcaError> {
        self.id_index
            .get(id)
            .copied()
            .ok_or_else(|| LcaError::UnknownAnnotation(id.to_string()))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn edge_between(&self, a: VertexId, b: VertexId) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edge_index.get(&key).copied()
    }

    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, usize)] {
        &self.adj[v as usize]
    }

    pub fn weight(&self, idx: usize) -> i64 {
        self.edges[idx].weight
    }

    fn insert_edge(&mut self, u: VertexId, v: VertexId) -> usize {
        let idx = self.edges.len();
        self.edges.push(Edge {
            u,
            v,
            reviews: Vec::new(),
            weight: 0,
        });
        self.edge_index.insert((u, v), idx);
        for (a, b) in [(u, v), (v, u)] {
            let list = &mut self.adj[a as usize];
            let pos = list.partition_point(|(n, _)| *n < b);
            list.insert(pos, (b, idx));
        }
        idx
    }

    /// Add an undirected edge, returning the existing one if present.
    pub fn add_edge(&mut self, a: VertexId, b: VertexId) -> Result<usize, LcaError> {
        if a == b {
            return Err(LcaError::SelfLoop(self.id(a).to_string()));
        }
        if a as usize >= self.ids.len() || b as usize >= self.ids.len() {
            return Err(LcaError::UnknownAnnotation(format!("#{}", a.max(b))));
        }
        let (u, v) = if a < b { (a, b) } else { (b, a) };
        Ok(match self.edge_index.get(&(u, v)) {
            Some(&idx) => idx,
            None => self.insert_edge(u, v),
        })
    }

    pub fn push_review(&mut self, idx: usize, review: ReviewDecision) {
        let edge = &mut self.edges[idx];
        edge.weight += review.contribution;
        edge.reviews.push(review);
        debug_assert!(edge.weight_is_consistent());
    }

    /// Sorted edge list as annotation id pairs.
    pub fn edge_pairs(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|e| (self.id(e.u).to_string(), self.id(e.v).to_string()))
            .collect()
    }

    pub fn weights_consistent(&self) -> bool {
        self.edges.iter().all(Edge::weight_is_consistent)
    }
}
