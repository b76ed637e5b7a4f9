#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use census_core::lca::{run_lca, Clustering, LcaConfig, LcaEngine, RunResult};
use census_core::matchers::{SimHuman, SimOracleConfig, SimOracleModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` individuals with `lo..=hi` annotations each.
pub fn planted_truth(n: usize, lo: usize, hi: usize, seed: u64) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut truth = BTreeMap::new();
    for i in 0..n {
        let k = rng.random_range(lo..=hi);
        for j in 0..k {
            truth.insert(format!("i{i:03}-{j}"), format!("ind{i:03}"));
        }
    }
    truth
}

pub fn perfect_oracle(seed: u64, flip: f64) -> SimOracleConfig {
    SimOracleConfig {
        seed,
        verifier_flip: flip,
        human_error: 0.0,
        human_incomparable: 0.0,
        ..SimOracleConfig::default()
    }
}

pub fn run_planted(
    truth: &BTreeMap<String, String>,
    oracle: SimOracleConfig,
    lca: LcaConfig,
) -> (LcaEngine, RunResult) {
    let model = Arc::new(SimOracleModel::new(truth.clone(), oracle));
    let mut human = SimHuman::new(model.clone());
    let ids = truth.keys().cloned().collect();
    run_lca(ids, model.as_ref(), model.as_ref(), &mut human, lca).unwrap()
}

/// Pair counts by direct enumeration of all unordered pairs:
/// (same in both, same in predicted, same in truth, total pairs).
pub fn brute_force_pairs(predicted: &Clustering, truth: &BTreeMap<String, String>) -> (u64, u64, u64, u64) {
    let ids: Vec<&String> = truth.keys().collect();
    let (mut both, mut pred, mut tru, mut all) = (0, 0, 0, 0);
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let p = predicted.cluster_of(ids[i]) == predicted.cluster_of(ids[j]);
            let t = truth[ids[i]] == truth[ids[j]];
            both += (p && t) as u64;
            pred += p as u64;
            tru += t as u64;
            all += 1;
        }
    }
    (both, pred, tru, all)
}

/// Pairwise F1 from brute-force pair counts.
pub fn brute_force_f1(predicted: &Clustering, truth: &BTreeMap<String, String>) -> f64 {
    let (both, pred, tru, _) = brute_force_pairs(predicted, truth);
    let p = if pred == 0 { 1.0 } else { both as f64 / pred as f64 };
    let r = if tru == 0 { 1.0 } else { both as f64 / tru as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Every set partition of `0..n` as a label vector (restricted growth
/// strings).
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur.push(l);
            rec(i + 1, n, cur, max.max(l), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut cur = vec![0];
    rec(1, n, &mut cur, 0, &mut out);
    out
}

pub fn labels_score(labels: &[usize], weights: &[(usize, usize, i64)]) -> i64 {
    weights
        .iter()
        .map(|&(a, b, w)| if labels[a] == labels[b] { w } else { -w })
        .sum()
}

/// Canonical groups of a label vector: sorted groups, sorted by first member.
pub fn groups_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(v);
    }
    let mut g: Vec<Vec<usize>> = m.into_values().collect();
    g.sort();
    g
}

/// Exhaustive optimum: (best score, all optimal partitions as groups).
pub fn brute_force_optimum(n: usize, weights: &[(usize, usize, i64)]) -> (i64, Vec<Vec<Vec<usize>>>) {
    let mut best = i64::MIN;
    let mut winners = Vec::new();
    for labels in all_partitions(n) {
        let s = labels_score(&labels, weights);
        if s > best {
            best = s;
            winners.clear();
        }
        if s == best {
            winners.push(groups_of(&labels));
        }
    }
    (best, winners)
}

pub type WeightedEdges = Vec<(usize, usize, i64)>;

/// Random graph on `n` vertices with a planted partition: intra-cluster
/// edges positive and connected, inter-cluster edges negative with at least
/// one between every pair of planted clusters. `density` is the chance of
/// each optional edge.
pub fn planted_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, WeightedEdges) {
    let k = rng.random_range(1..=n);
    let mut labels: Vec<usize> = (0..n).map(|v| if v < k { v } else { rng.random_range(0..k) }).collect();
    // Shuffle so cluster membership is not tied to vertex order.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let mut edges: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(v);
    }
    for members in clusters.values() {
        for i in 1..members.len() {
            let j = rng.random_range(0..i);
            edges.insert((members[j], members[i]), rng.random_range(1..=100));
        }
    }
    let ids: Vec<usize> = clusters.keys().copied().collect();
    for (x, &ca) in ids.iter().enumerate() {
        for &cb in &ids[x + 1..] {
            let a = clusters[&ca][rng.random_range(0..clusters[&ca].len())];
            let b = clusters[&cb][rng.random_range(0..clusters[&cb].len())];
            edges.insert((a.min(b), a.max(b)), -rng.random_range(1..=100));
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            if edges.contains_key(&(a, b)) || rng.random::<f64>() >= density {
                continue;
            }
            let w = rng.random_range(1..=100);
            edges.insert((a, b), if labels[a] == labels[b] { w } else { -w });
        }
    }
    let weights = edges.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    (groups_of(&labels), weights)
}

pub fn vertex_name(v: usize) -> String {
    format!("v{v}")
}
