use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{IdentificationGraph, VertexId};
use super::LcaError;

/// Vertex partition. A cluster's id is its smallest member.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<VertexId>", into = "Vec<VertexId>")]
pub struct Partition {
    labels: Vec<VertexId>,
    members: BTreeMap<VertexId, Vec<VertexId>>,
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
    }
}

impl From<Vec<VertexId>> for Partition {
    fn from(labels: Vec<VertexId>) -> Self {
        Self::from_groups(group_labels(&labels))
    }
}

impl From<Partition> for Vec<VertexId> {
    fn from(p: Partition) -> Self {
        p.labels
    }
}

fn group_labels(labels: &[VertexId]) -> Vec<Vec<VertexId>> {
    let mut groups: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
    for (v, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(v as VertexId);
    }
    groups.into_values().collect()
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Self::from_groups((0..n as VertexId).map(|v| vec![v]).collect())
    }

    /// Build from disjoint groups covering `0..n`. Empty groups are dropped.
    pub fn from_groups(groups: Vec<Vec<VertexId>>) -> Self {
        let n: usize = groups.iter().map(Vec::len).sum();
        let mut labels = vec![0; n];
        let mut members = BTreeMap::new();
        for mut g in groups.into_iter().filter(|g| !g.is_empty()) {
            g.sort_unstable();
            let id = g[0];
            for &v in &g {
                labels[v as usize] = id;
            }
            members.insert(id, g);
        }
        Self { labels, members }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_of(&self, v: VertexId) -> VertexId {
        self.labels[v as usize]
    }

    pub fn same_cluster(&self, a: VertexId, b: VertexId) -> bool {
        self.labels[a as usize] == self.labels[b as usize]
    }

    pub fn members(&self, cluster: VertexId) -> Option<&[VertexId]> {
        self.members.get(&cluster).map(Vec::as_slice)
    }

    pub fn clusters(&self) -> impl Iterator<Item = (VertexId, &[VertexId])> {
        self.members.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn cluster_count(&self) -> usize {
        self.members.len()
    }

    /// Replace the clusters `old` with `groups` (which must cover the same
    /// vertices). Returns the new cluster ids.
    pub fn replace(&mut self, old: &[VertexId], groups: &[Vec<VertexId>]) -> Vec<VertexId> {
        for id in old {
            self.members.remove(id);
        }
        let mut new_ids = Vec::with_capacity(groups.len());
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let mut g = g.clone();
            g.sort_unstable();
            let id = g[0];
            for &v in &g {
                self.labels[v as usize] = id;
            }
            self.members.insert(id, g);
            new_ids.push(id);
        }
        new_ids
    }

    /// Clusters adjacent to `cluster` through at least one edge.
    pub fn neighbor_clusters(&self, graph: &IdentificationGraph, cluster: VertexId) -> Vec<VertexId> {
        let mut out: Vec<VertexId> = self
            .members(cluster)
            .unwrap_or_default()
            .iter()
            .flat_map(|&v| graph.neighbors(v).iter().map(|&(n, _)| self.cluster_of(n)))
            .filter(|&c| c != cluster)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn to_clustering(&self, graph: &IdentificationGraph) -> Clustering {
        Clustering {
            assignments: self
                .labels
                .iter()
                .enumerate()
                .map(|(v, &c)| (graph.id(v as VertexId).to_string(), graph.id(c).to_string()))
                .collect(),
        }
    }

    pub fn from_clustering(graph: &IdentificationGraph, clustering: &Clustering) -> Result<Self, LcaError> {
        if clustering.assignments.len() != graph.len() {
            return Err(LcaError::IncompleteClustering {
                expected: graph.len(),
                found: clustering.assignments.len(),
            });
        }
        let mut groups: BTreeMap<&str, Vec<VertexId>> = BTreeMap::new();
        for (id, cluster) in &clustering.assignments {
            groups.entry(cluster.as_str()).or_default().push(graph.vertex(id)?);
        }
        Ok(Self::from_groups(groups.into_values().collect()))
    }
}

/// Annotation id to cluster id. Cluster ids are the smallest member id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: BTreeMap<String, String>,
}

impl Clustering {
    pub fn from_groups<S: AsRef<str>>(groups: &[Vec<S>]) -> Self {
        let mut assignments = BTreeMap::new();
        for g in groups {
            let Some(min) = g.iter().map(AsRef::as_ref).min() else {
                continue;
            };
            for id in g {
                assignments.insert(id.as_ref().to_string(), min.to_string());
            }
        }
        Self { assignments }
    }

    pub fn cluster_of(&self, annotation_id: &str) -> Option<&str> {
        self.assignments.get(annotation_id).map(String::as_str)
    }

    /// Cluster id to sorted member ids.
    pub fn clusters(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, c) in &self.assignments {
            out.entry(c.as_str()).or_default().push(a.as_str());
        }
        out
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters().len()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Sum of intra-cluster weights minus sum of inter-cluster weights.
pub fn partition_score(graph: &IdentificationGraph, partition: &Partition) -> i64 {
    graph
        .edges()
        .iter()
        .map(|e| {
            if partition.same_cluster(e.u, e.v) {
                e.weight
            } else {
                -e.weight
            }
        })
        .sum()
}

pub fn clustering_score(graph: &IdentificationGraph, clustering: &Clustering) -> Result<i64, LcaError> {
    Ok(partition_score(graph, &Partition::from_clustering(graph, clustering)?))
}
