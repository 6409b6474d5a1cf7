use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmage_core::graph::{write_edges, write_features, write_labels};
use dmage_core::synthetic::TwoBlockSbm;
use tempfile::TempDir;

const SMALL: &str = "epochs = 15\nfc_dims = [16, 8]\nfca_dim = 8\nlatent_dim = 4\np_minus = 0.05\n";

fn dmage(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dmage"));
    cmd.args(args).env("RUST_LOG", "info");
    match cache {
        Some(c) => cmd.env("DMAGE_CACHE_DIR", c),
        None => cmd.env_remove("DMAGE_CACHE_DIR"),
    };
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// A 40-node two-block graph with labels plus a config naming its files.
fn dataset(extra: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let g = TwoBlockSbm { n: 40, ..TwoBlockSbm::default() }.generate(3).unwrap();
    write_edges(&dir.path().join("g.edges"), g.edges()).unwrap();
    write_features(&dir.path().join("x.txt"), g.features()).unwrap();
    write_labels(&dir.path().join("y.txt"), g.labels().unwrap()).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!("edges = \"g.edges\"\nfeatures = \"x.txt\"\nlabels = \"y.txt\"\n{SMALL}{extra}"),
    )
    .unwrap();
    (dir, config)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn precompute_writes_caches_and_reuses_them() {
    let (dir, config) = dataset("");
    let out = dir.path().join("pre");
    let first = dmage(&["precompute", "--config", s(&config), "--out", s(&out)], None);
    assert_ok(&first);
    let cached: Vec<_> = fs::read_dir(out.join("cache")).unwrap().collect();
    assert_eq!(cached.len(), 4, "two distance and two similarity files");
    assert!(out.join("manifest.json").exists());
    let second = dmage(&["precompute", "--config", s(&config), "--out", s(&out)], None);
    assert_ok(&second);
    assert!(stderr(&second).contains("cache hit"), "{}", stderr(&second));
}

#[test]
fn cache_dir_can_be_redirected() {
    let (dir, config) = dataset("");
    let cache = dir.path().join("shared");
    let out = dir.path().join("pre");
    assert_ok(&dmage(&["precompute", "--config", s(&config), "--out", s(&out)], Some(&cache)));
    assert!(!out.join("cache").exists());
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 4);
}

#[test]
fn missing_feature_file_is_a_data_error() {
    let (dir, config) = dataset("");
    fs::remove_file(dir.path().join("x.txt")).unwrap();
    let o = dmage(&["train", "--config", s(&config), "--out", s(&dir.path().join("t"))], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("x.txt"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let (dir, config) = dataset("learning_rat = 0.1\n");
    let o = dmage(&["train", "--config", s(&config), "--out", s(&dir.path().join("t"))], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_value_is_a_config_error() {
    let (dir, config) = dataset("q_p = 0.5\n");
    let o = dmage(&["train", "--config", s(&config), "--out", s(&dir.path().join("t"))], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn diverging_training_is_a_numeric_error() {
    let (dir, config) = dataset("optimizer = \"sgd\"\nlearning_rate = 1e300\n");
    let o = dmage(&["train", "--config", s(&config), "--out", s(&dir.path().join("t"))], None);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn train_artifacts_and_manifest_rerun() {
    let (dir, config) = dataset("");
    let out = dir.path().join("t");
    assert_ok(&dmage(&["train", "--config", s(&config), "--out", s(&out), "--seed", "7"], None));
    for f in ["embeddings.tsv", "loss.tsv", "checkpoint.dmgw", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let emb = fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    assert_eq!(emb.lines().count(), 40);
    assert_eq!(emb.lines().next().unwrap().split('\t').count(), 5);
    let loss = fs::read_to_string(out.join("loss.tsv")).unwrap();
    assert_eq!(loss.lines().count(), 16);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["seed"], 7);
    assert!(manifest["input_hashes"].as_object().unwrap().len() >= 2);

    let again = dir.path().join("again");
    assert_ok(&dmage(&["train", "--config", s(&out.join("manifest.json")), "--out", s(&again)], None));
    assert_eq!(
        fs::read(out.join("embeddings.tsv")).unwrap(),
        fs::read(again.join("embeddings.tsv")).unwrap()
    );
}

#[test]
fn viz_preset_gives_two_columns() {
    let (dir, config) = dataset("");
    // The preset sets the output width; the file's own latent_dim is absent.
    fs::write(
        &config,
        "edges = \"g.edges\"\nfeatures = \"x.txt\"\nepochs = 5\nfc_dims = [16, 8]\nfca_dim = 8\n",
    )
    .unwrap();
    let out = dir.path().join("viz");
    assert_ok(&dmage(
        &["train", "--config", s(&config), "--out", s(&out), "--preset", "viz_2d"],
        None,
    ));
    let emb = fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    assert!(emb.lines().all(|l| l.split('\t').count() == 3));
}

#[test]
fn cluster_eval_reports_every_seed() {
    let (dir, config) = dataset("");
    let out = dir.path().join("t");
    assert_ok(&dmage(&["train", "--config", s(&config), "--out", s(&out)], None));
    let ev = dir.path().join("ev");
    let o = dmage(
        &[
            "eval", "--task", "cluster", "--out", s(&ev), "--seeds", "0..20",
            "--embeddings", s(&out.join("embeddings.tsv")),
            "--labels", s(&dir.path().join("y.txt")), "--restarts", "2",
        ],
        None,
    );
    assert_ok(&o);
    let table = fs::read_to_string(ev.join("report.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 20 + 2);
    assert!(lines[21].starts_with("mean\t"));
    assert!(lines[22].starts_with("std\t"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert!(json.is_object());
}

#[test]
fn perfectly_separated_embeddings_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut emb = String::new();
    let mut labels = String::new();
    for i in 0..30 {
        let c = i % 3;
        emb.push_str(&format!("{i}\t{}\t{}\n", 10.0 * c as f64 + 0.01 * i as f64, -5.0 * c as f64));
        labels.push_str(&format!("{c}\n"));
    }
    fs::write(dir.path().join("e.tsv"), emb).unwrap();
    fs::write(dir.path().join("y.txt"), labels).unwrap();
    let ev = dir.path().join("ev");
    assert_ok(&dmage(
        &[
            "eval", "--task", "cluster", "--out", s(&ev), "--seeds", "1,2",
            "--embeddings", s(&dir.path().join("e.tsv")),
            "--labels", s(&dir.path().join("y.txt")),
        ],
        None,
    ));
    let table = fs::read_to_string(ev.join("report.tsv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split('\t').collect();
    let mean: Vec<&str> = table.lines().find(|l| l.starts_with("mean")).unwrap().split('\t').collect();
    for col in ["acc", "nmi", "f1"] {
        let k = header.iter().position(|h| *h == col).unwrap();
        assert_eq!(mean[k], "1.000000", "{col}");
    }
}

#[test]
fn label_count_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("e.tsv"), "0\t1.0\n1\t2.0\n2\t3.0\n").unwrap();
    fs::write(dir.path().join("y.txt"), "0\n1\n").unwrap();
    let o = dmage(
        &[
            "eval", "--task", "cluster", "--out", s(&dir.path().join("ev")),
            "--embeddings", s(&dir.path().join("e.tsv")),
            "--labels", s(&dir.path().join("y.txt")),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn linkpred_persists_one_split_per_seed() {
    let (dir, config) = dataset("");
    let ev = dir.path().join("lp");
    assert_ok(&dmage(
        &["eval", "--task", "linkpred", "--config", s(&config), "--out", s(&ev), "--seeds", "0,1"],
        None,
    ));
    for seed in [0, 1] {
        let split = ev.join("splits").join(format!("seed_{seed}"));
        for f in ["train.edges", "val.edges", "test.edges", "val_negatives.edges", "test_negatives.edges"] {
            assert!(split.join(f).exists(), "{}", split.join(f).display());
        }
    }
    let table = fs::read_to_string(ev.join("report.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 + 2);
}

#[test]
fn ablation_covers_variants_and_grid() {
    let (dir, config) = dataset("");
    let text = fs::read_to_string(&config).unwrap().replace("epochs = 15", "epochs = 3");
    fs::write(&config, text).unwrap();
    let out = dir.path().join("ab");
    assert_ok(&dmage(
        &[
            "ablate", "--config", s(&config), "--out", s(&out), "--seeds", "0",
            "--q-p-grid", "4,16", "--nu-latent-grid", "0.1",
        ],
        None,
    ));
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    for name in ["full", "no_augment", "no_fca", "hard_similarity", "q_p=4", "q_p=16", "nu_latent=0.1"] {
        assert!(table.lines().any(|l| l.starts_with(name)), "{name} missing:\n{table}");
    }
}
