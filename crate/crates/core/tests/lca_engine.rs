mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use census_core::lca::{
    drive, partition_score, Decision, DriveOutcome, IdentificationGraph, LcaConfig, LcaEngine, LcaError,
    ReviewOutcome, ReviewerKind, SubmitResult,
};
use census_core::matchers::{ClosedChannel, Ranker, SimHuman, SimOracleConfig, SimOracleModel};
use census_core::state::{load_state, save_state};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn engine_for(n: usize, weights: &[(usize, usize, i64)]) -> LcaEngine {
    let names: Vec<String> = (0..n).map(vertex_name).collect();
    let named: Vec<(String, String, i64)> = weights
        .iter()
        .map(|&(a, b, w)| (vertex_name(a), vertex_name(b), w))
        .collect();
    let graph = IdentificationGraph::from_weights(&names, &named).unwrap();
    LcaEngine::with_graph(graph, LcaConfig::default()).unwrap()
}

fn groups(engine: &LcaEngine) -> Vec<Vec<usize>> {
    let mut g: Vec<Vec<usize>> = engine
        .partition()
        .clusters()
        .map(|(_, m)| m.iter().map(|&v| v as usize).collect())
        .collect();
    g.sort();
    g
}

fn arb_weights(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize, i64)>)> {
    (2..=max_n).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let m = pairs.len();
        (Just(n), proptest::collection::vec(proptest::option::of(-100i64..=100), m)).prop_map(
            move |(n, ws)| {
                let edges = pairs
                    .iter()
                    .zip(ws)
                    .filter_map(|(&(a, b), w)| w.map(|w| (a, b, w)))
                    .collect();
                (n, edges)
            },
        )
    })
}

proptest! {
    #[test]
    fn tracked_score_matches_recomputation((n, weights) in arb_weights(7)) {
        let mut engine = engine_for(n, &weights);
        prop_assert!(engine.scoring_phase());
        prop_assert_eq!(engine.score(), partition_score(engine.graph(), engine.partition()));
        let labels: Vec<usize> = (0..n)
            .map(|v| engine.partition().cluster_of(v as u32) as usize)
            .collect();
        prop_assert_eq!(engine.score(), labels_score(&labels, &weights));
    }

    #[test]
    fn scoring_never_ends_below_singletons((n, weights) in arb_weights(7)) {
        let mut engine = engine_for(n, &weights);
        let start = engine.score();
        engine.scoring_phase();
        prop_assert!(engine.score() >= start);
        let (best, _) = brute_force_optimum(n, &weights);
        prop_assert!(engine.score() <= best);
    }

    #[test]
    fn converged_scoring_has_no_improving_alternative((n, weights) in arb_weights(7)) {
        let mut engine = engine_for(n, &weights);
        engine.scoring_phase();
        prop_assert!(engine.certify().improvable.is_empty());
    }

    #[test]
    fn planted_graphs_reach_the_exhaustive_optimum(seed in any::<u64>(), n in 2usize..=8, dense in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (planted, weights) = planted_graph(n, if dense { 1.0 } else { 0.3 }, &mut rng);
        let (_, winners) = brute_force_optimum(n, &weights);
        prop_assert_eq!(&winners, &vec![planted.clone()]);
        let mut engine = engine_for(n, &weights);
        engine.scoring_phase();
        prop_assert_eq!(groups(&engine), planted);
    }
}

#[test]
fn nine_vertex_planted_graphs_match_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let (planted, weights) = planted_graph(9, 0.5, &mut rng);
        let (_, winners) = brute_force_optimum(9, &weights);
        assert_eq!(winners, vec![planted.clone()]);
        let mut engine = engine_for(9, &weights);
        engine.scoring_phase();
        assert_eq!(groups(&engine), planted);
    }
}

#[test]
fn all_partitions_counts_are_bell_numbers() {
    let bell = [1, 1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, &b) in bell.iter().enumerate() {
        assert_eq!(all_partitions(n).len(), b, "n = {n}");
    }
}

#[test]
fn initial_edges_are_the_union_of_top_k_lists() {
    let truth = planted_truth(12, 3, 5, 4);
    let model = SimOracleModel::new(truth.clone(), SimOracleConfig::default());
    let ids: Vec<String> = truth.keys().cloned().collect();
    let config = LcaConfig::default();
    let mut engine = LcaEngine::new(ids.clone(), config.clone()).unwrap();
    engine.init_graph(&model);

    let mut expected = BTreeSet::new();
    for q in &ids {
        let others: Vec<&str> = ids.iter().filter(|c| *c != q).map(String::as_str).collect();
        for c in model.top_k(q, &others, config.top_k).unwrap() {
            let (a, b) = if *q < c.annotation_id {
                (q.clone(), c.annotation_id)
            } else {
                (c.annotation_id, q.clone())
            };
            expected.insert((a, b));
        }
    }
    assert_eq!(engine.graph().edge_pairs(), expected);
    assert!(engine.graph().edges().iter().all(|e| e.reviews.is_empty()));
}

#[test]
fn seeded_runs_are_deterministic() {
    let truth = planted_truth(15, 3, 6, 2);
    let oracle = SimOracleConfig {
        seed: 2,
        verifier_flip: 0.1,
        ..SimOracleConfig::default()
    };
    let (a, ra) = run_planted(&truth, oracle.clone(), LcaConfig::default());
    let (b, rb) = run_planted(&truth, oracle, LcaConfig::default());
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn review_counts_match_edge_histories() {
    let truth = planted_truth(25, 3, 6, 8);
    let oracle = SimOracleConfig {
        seed: 8,
        verifier_flip: 0.1,
        ..SimOracleConfig::default()
    };
    let (engine, result) = run_planted(&truth, oracle, LcaConfig::default());
    let reviews: usize = engine.graph().edges().iter().map(|e| e.reviews.len()).sum();
    assert_eq!(result.total_reviews, reviews);
    assert_eq!(result.total_reviews, result.algorithmic_reviews + result.human_reviews);
    assert!(engine.graph().weights_consistent());
    let cfg = engine.config();
    for e in engine.graph().edges() {
        assert!(e.algorithmic_reviews() <= cfg.max_algo_reviews_per_pair);
        assert!(e.human_reviews() <= cfg.max_human_reviews_per_pair);
    }
    let seqs: Vec<u64> = engine.log().iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
}

#[test]
fn a_closed_channel_suspends_and_the_run_resumes_identically() {
    let truth = planted_truth(20, 3, 6, 5);
    let oracle = SimOracleConfig {
        seed: 5,
        verifier_flip: 0.1,
        ..SimOracleConfig::default()
    };
    let (reference, _) = run_planted(&truth, oracle.clone(), LcaConfig::default());
    assert!(reference.log().iter().any(|e| e.source.is_human()));

    let model = Arc::new(SimOracleModel::new(truth.clone(), oracle));
    let mut engine = LcaEngine::new(truth.keys().cloned().collect(), LcaConfig::default()).unwrap();
    engine.init_graph(model.as_ref());
    let out = drive(&mut engine, model.as_ref(), &mut ClosedChannel, None).unwrap();
    assert_eq!(out, DriveOutcome::Suspended);
    let pending = engine.pending().cloned().expect("a human request is pending");
    assert_eq!(pending.reviewer, ReviewerKind::Human);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("engine.json");
    save_state("lca_engine", &engine, &path).unwrap();
    let mut engine: LcaEngine = load_state("lca_engine", &path).unwrap();
    assert_eq!(engine.pending(), Some(&pending));
    assert_eq!(engine.next_request(), Some(pending));

    let mut human = SimHuman::new(model.clone());
    let outcome = drive(&mut engine, model.as_ref(), &mut human, None).unwrap();
    assert_eq!(outcome, DriveOutcome::Converged);
    assert_eq!(engine.clustering(), reference.clustering());
    assert_eq!(engine.log(), reference.log());
}

#[test]
fn repeated_and_conflicting_submissions() {
    let truth = planted_truth(6, 3, 3, 1);
    let model = SimOracleModel::new(truth.clone(), SimOracleConfig::default());
    let mut engine = LcaEngine::new(truth.keys().cloned().collect(), LcaConfig::default()).unwrap();
    engine.init_graph(&model);
    let req = engine.next_request().unwrap();
    assert_eq!(engine.next_request().as_ref(), Some(&req));
    let same = ReviewOutcome::algorithmic(Decision::Same, 0.9);
    assert_eq!(engine.submit(req.request_id, same.clone()).unwrap(), SubmitResult::Applied);
    let len = engine.log().len();
    assert_eq!(engine.submit(req.request_id, same).unwrap(), SubmitResult::Duplicate);
    assert_eq!(engine.log().len(), len);
    let err = engine
        .submit(req.request_id, ReviewOutcome::algorithmic(Decision::Different, 0.1))
        .unwrap_err();
    assert!(matches!(err, LcaError::Conflict { .. }), "{err:?}");
    let err = engine
        .submit(9_999, ReviewOutcome::algorithmic(Decision::Same, 0.9))
        .unwrap_err();
    assert!(matches!(err, LcaError::UnknownRequest(_)), "{err:?}");
    let next = engine.next_request().unwrap();
    let err = engine
        .submit(next.request_id, ReviewOutcome::human(Decision::Same))
        .unwrap_err();
    assert!(matches!(err, LcaError::WrongSource { .. }), "{err:?}");
}

#[test]
fn engine_fields_survive_a_snapshot() {
    let truth = planted_truth(10, 3, 6, 3);
    let (engine, _) = run_planted(&truth, SimOracleConfig::default(), LcaConfig::default());
    let json = serde_json::to_string(&engine).unwrap();
    let back: LcaEngine = serde_json::from_str(&json).unwrap();
    assert_eq!(back, engine);
    assert!(back.certify().is_valid());
}
