use acvae_core::dataset::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use acvae_core::eval::{distances_for_mode, rank_targets, split_edges, DistanceTable};
use acvae_core::graph::SpanningForest;
use acvae_core::trainer::{train, write_metrics_log, Checkpoint, Mode, TrainConfig};

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_vertices: 48,
        n_clusters: 4,
        p_intra: 0.3,
        p_inter: 0.02,
        vocab: 40,
        doc_length: 15,
        topic_strength: 0.5,
        seed: 11,
    }
}

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        latent_dim: 4,
        h1: 8,
        h2: 8,
        epochs: 6,
        eval_every: 2,
        b1: 16,
        b2: 32,
        gamma: 10.0,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_files_round_trip() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (e, f) = (dir.path().join("e.tsv"), dir.path().join("f.tsv"));
    save_dataset(&ds, &e, &f).unwrap();
    let back = load_dataset(&e, &f).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn every_mode_trains_and_ranks() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let split = split_edges(&ds.graph, 2);
    let train_ds = ds.with_graph(split.train_graph.clone()).unwrap();
    for mode in Mode::ALL {
        let out = train(&small_config(mode), &train_ds, &split.test_edges).unwrap();
        assert!(out.aborted.is_none(), "{mode}: {:?}", out.aborted);
        assert_eq!(out.log.len(), 3);
        assert!(out.log[0].accepted);
        let ncrr = out.best_test_ncrr().unwrap();
        assert!(ncrr > 0.0 && ncrr <= 1.0);
        assert!(out.final_objective.total.is_finite());
        if mode.adaptive() {
            let forest = out.state.w.as_forest(&train_ds.graph).expect("rounded to a forest");
            assert_eq!(forest.edge_indices().len(), train_ds.graph.forest_size());
            for rec in &out.log {
                assert!((rec.w_sum - train_ds.graph.forest_size() as f64).abs() < 1e-9);
            }
        }

        // the checkpoint reproduces the recorded test NCRR
        let ck = Checkpoint::from_outcome(&out);
        let (params, forest) = ck.selected();
        let forest = forest.map(|f| SpanningForest::from_edge_indices(&train_ds.graph, f.to_vec()).unwrap());
        let dist = distances_for_mode(mode, params, train_ds.features.rows(), &train_ds.graph, forest.as_ref(), true).unwrap();
        let report = rank_targets(&dist, &split.test_edges, &train_ds.graph).unwrap();
        assert_eq!(report.mean_ncrr, ncrr);
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let split = split_edges(&ds.graph, 2);
    let train_ds = ds.with_graph(split.train_graph.clone()).unwrap();
    let cfg = small_config(Mode::AcvaeSaddle);
    let a = train(&cfg, &train_ds, &split.test_edges).unwrap();
    let b = train(&cfg, &train_ds, &split.test_edges).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (la, lb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_metrics_log(&la, &a.log).unwrap();
    write_metrics_log(&lb, &b.log).unwrap();
    assert_eq!(std::fs::read(&la).unwrap(), std::fs::read(&lb).unwrap());

    let path = dir.path().join("ck.json");
    let ck = Checkpoint::from_outcome(&a);
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn distance_matrices_round_trip_bitwise() {
    let t = DistanceTable::from_fn(5, |i, j| (i as f64 - j as f64).abs().sqrt() / 3.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    t.save(&p).unwrap();
    let back = DistanceTable::load(&p).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(t.get(i, j).map(f64::to_bits), back.get(i, j).map(f64::to_bits));
        }
    }
}
