use std::collections::BTreeSet;

use seed_core::pipeline::{build_graph, HISTOGRAM_BINS};
use seed_core::synthbench::DomainSpec;
use seed_core::{
    adaptive_thresholds, build_conflict_graph, build_node_embeddings, emit_report, generate,
    greedy_wis, knn_search, local_density, normalize_rows, run_select, run_select_labeled,
    run_vote, tally_votes, top_k_by_weight, Budget, Bundle, RunReport, SeedConfig, SeedError,
    SynthSpec, TargetSelector,
};

fn small_spec(seed: u64, targets: usize) -> SynthSpec {
    SynthSpec {
        domains: vec![DomainSpec::new(60, 50.0, 0.2), DomainSpec::new(60, 2.0, 0.2)],
        channel_count: 72,
        signal_channels: 8,
        noise_channels: 64,
        target_sets: targets,
        ..SynthSpec::standard(seed)
    }
}

fn instance(seed: u64) -> Bundle {
    generate(&small_spec(seed, 1)).unwrap().0
}

fn config(subspace: bool, local: bool, wis: bool) -> SeedConfig {
    SeedConfig {
        k: 10,
        budget: Budget::Count(20),
        target: TargetSelector::Named("target0".into()),
        enable_subspace: subspace,
        enable_local_scaling: local,
        enable_wis: wis,
        ..SeedConfig::default()
    }
}

#[test]
fn all_switches_off_is_top_k_of_full_weights() {
    let b = instance(1);
    let run = run_select_labeled(&b, &config(false, false, false), None).unwrap();
    let expect = top_k_by_weight(&run.full_weights, 20, false).unwrap();
    assert_eq!(run.report.selection.selected, expect.selected);
    assert!(!run.report.mask.applied);
}

#[test]
fn wis_only_is_greedy_over_global_graph() {
    let b = instance(2);
    let cfg = config(false, false, true);
    let run = run_select_labeled(&b, &cfg, None).unwrap();

    let e = normalize_rows(&build_node_embeddings(&b)).matrix;
    let knn = knn_search(&e, cfg.k, 17).unwrap();
    let th = adaptive_thresholds(&local_density(&knn), cfg.tau, cfg.alpha).unwrap();
    let graph = build_conflict_graph(&knn, &th, false, cfg.tau).unwrap();
    let expect = greedy_wis(&graph, &run.full_weights, 20, false).unwrap();
    assert_eq!(run.report.selection.selected, expect.selected);
    assert_eq!(run.graph, graph);
}

#[test]
fn later_switches_leave_earlier_stages_alone() {
    let b = instance(3);
    let with_local = run_select_labeled(&b, &config(true, true, true), None).unwrap();
    let without = run_select_labeled(&b, &config(true, false, true), None).unwrap();
    assert_eq!(with_local.weights, without.weights);
    assert_eq!(with_local.embeddings, without.embeddings);
    let no_wis = run_select_labeled(&b, &config(true, true, false), None).unwrap();
    assert_eq!(no_wis.graph, with_local.graph);
}

#[test]
fn selection_is_valid_and_deterministic() {
    let b = instance(4);
    let cfg = config(true, true, true);
    let a = run_select(&b, &cfg).unwrap();
    let again = run_select(&b, &cfg).unwrap();
    assert_eq!(a.selection, again.selection);
    let ids: BTreeSet<usize> = a.selection.selected.iter().copied().collect();
    assert_eq!(ids.len(), a.selection.selected.len());
    assert!(ids.iter().all(|&i| i < b.train_count()));
    assert_eq!(a.score_histogram.full_mask.len(), HISTOGRAM_BINS);
    assert_eq!(a.score_histogram.full_mask.iter().sum::<u64>() as usize, b.train_count());
    assert_eq!(a.score_histogram.mutual_mask.iter().sum::<u64>() as usize, b.train_count());
}

#[test]
fn errors_carry_stage_names() {
    let b = instance(5);
    let cfg = SeedConfig {
        target: TargetSelector::Named("missing".into()),
        ..config(true, true, true)
    };
    let err = run_select(&b, &cfg).unwrap_err();
    assert!(matches!(err.root(), SeedError::UnknownTarget(_)));
    assert_eq!(err.exit_code(), 2);

    let cfg = SeedConfig {
        alpha: 1.5,
        ..config(true, true, true)
    };
    assert!(run_select(&b, &cfg).unwrap_err().to_string().contains("config"));
}

#[test]
fn labels_add_per_domain_degrees() {
    let (b, truth) = generate(&small_spec(6, 1)).unwrap();
    let run = run_select_labeled(&b, &config(true, true, true), Some(&truth.domain_label)).unwrap();
    let per = run.report.graph_stats.per_domain.unwrap();
    assert_eq!(per.per_domain.len(), 2);
    assert_eq!(per.per_domain[0].count, 60);

    let built = build_graph(&b, &config(true, true, true), None).unwrap();
    assert_eq!(built.graph, run.graph);
}

#[test]
fn emitted_files_follow_the_format() {
    let b = instance(7);
    let mut report: RunReport = run_select(&b, &config(true, true, true)).unwrap();
    report.selection.selected = vec![7, 2, 9];
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path(), None).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("selected.txt")).unwrap(), "7\n2\n9\n");
    assert!(!dir.path().join("edges.txt").exists());

    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.selection.selected, vec![7, 2, 9]);
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["full_mask", "mutual_mask"] {
        let sum: u64 = json["score_histogram"][key].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(sum as usize, b.train_count());
    }
}

#[test]
fn edge_list_is_written_on_request() {
    let b = instance(8);
    let run = run_select_labeled(&b, &config(true, true, true), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&run.report, dir.path(), Some(&run.graph)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("edges.txt")).unwrap();
    assert_eq!(text.lines().count(), run.graph.edge_count());
    for line in text.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 3);
        assert!(f[0].parse::<u32>().unwrap() < f[1].parse::<u32>().unwrap());
    }
}

#[test]
fn voting_over_three_targets() {
    let (b, _) = generate(&small_spec(9, 3)).unwrap();
    let cfg = SeedConfig {
        target: TargetSelector::All,
        ..config(true, true, true)
    };
    let tally = run_vote(&b, &cfg, 0.25).unwrap();
    assert_eq!(tally.per_target_selected.len(), 3);
    assert_eq!(tally.retained.len(), 30);
    assert!(tally.votes.iter().all(|&v| v <= 3));
    for (name, ids) in &tally.per_target_selected {
        let solo = run_select(&b, &cfg.for_target(name)).unwrap();
        assert_eq!(&solo.selection.selected, ids);
    }
    let single = instance(9);
    assert!(matches!(run_vote(&single, &cfg, 0.25), Err(SeedError::Validation(_))));
}

#[test]
fn identical_targets_vote_all_or_nothing() {
    let sel: Vec<(String, Vec<usize>)> = (0..4).map(|b| (format!("t{b}"), vec![3, 1, 4])).collect();
    let t = tally_votes(6, &sel, &[0.0; 6], 1.0).unwrap();
    assert!(t.votes.iter().all(|&v| v == 0 || v == 4));
}

#[test]
fn retain_fraction_sets_the_count() {
    let sel = vec![("a".to_string(), vec![0, 1, 2]), ("b".to_string(), vec![5])];
    let t = tally_votes(1000, &sel, &vec![0.0; 1000], 0.2).unwrap();
    assert_eq!(t.retained.len(), 200);
    assert_eq!(&t.retained[..4], &[0, 1, 2, 5]);
}
