use dmage_core::eval::{evaluate_clustering, run_linkpred, F1Variant, Scorer};
use dmage_core::graph::{load_graph, write_edges, write_features, write_labels};
use dmage_core::synthetic::TwoBlockSbm;
use dmage_core::trainer::{precompute, train_with, TrainConfig};

fn small() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        fc_dims: vec![32, 16],
        fca_dim: 16,
        latent_dim: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn files_to_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let g = TwoBlockSbm::default().generate(21).unwrap();
    let (e, x, y) = (dir.path().join("g.edges"), dir.path().join("x"), dir.path().join("y"));
    write_edges(&e, g.edges()).unwrap();
    write_features(&x, g.features()).unwrap();
    write_labels(&y, g.labels().unwrap()).unwrap();
    let loaded = load_graph(&e, &x, Some(&y)).unwrap();
    assert_eq!(loaded.features(), g.features());

    let cache = dir.path().join("cache");
    let cfg = small();
    let cold = precompute(&loaded, &cfg, Some(&cache)).unwrap();
    let warm = precompute(&loaded, &cfg, Some(&cache)).unwrap();
    assert!(!cold.cache_hit && warm.cache_hit);

    let a = train_with(&loaded, &cfg, &cold).unwrap();
    let b = train_with(&loaded, &cfg, &warm).unwrap();
    assert_eq!(a.embeddings, b.embeddings);

    let report = evaluate_clustering(&a.embeddings, loaded.labels().unwrap(), 0, 5, F1Variant::Macro).unwrap();
    assert!(report.acc >= 0.9, "acc {}", report.acc);
}

#[test]
fn link_prediction_beats_chance() {
    let g = TwoBlockSbm { n: 80, ..TwoBlockSbm::default() }.generate(22).unwrap();
    let out = run_linkpred(&g, &small(), 3, Scorer::TKernel { nu: 0.01 }, None).unwrap();
    assert!(out.test.auc > 0.5, "auc {}", out.test.auc);
    assert!((0.0..=1.0).contains(&out.test.ap));
    assert_eq!(out.embeddings.nrows(), g.n());
}
