//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmage_core::container::save_checkpoint;
use dmage_core::eval::{evaluate_clustering, mean_std, run_linkpred, F1Variant, Scorer};
use dmage_core::graph::{load_graph, read_labels, AttributedGraph};
use dmage_core::trainer::{precompute, train_with, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, RunManifest};
use crate::error::{CliError, CliResult};
use crate::output::{format_embeddings, format_loss, format_seed_table, read_embeddings, write_text};

pub const CACHE_ENV: &str = "DMAGE_CACHE_DIR";

/// Cache location: `$DMAGE_CACHE_DIR` if set, else `<out>/cache`.
pub fn cache_dir(out: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => out.join("cache"),
    }
}

fn create_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::output(out, e))
}

fn load(cfg: &RunConfig) -> CliResult<AttributedGraph> {
    let d = &cfg.data;
    Ok(load_graph(&d.edges, &d.features, d.labels.as_deref())?)
}

struct Stopwatch(Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(Instant::now())
    }

    fn lap(&mut self) -> f64 {
        let s = self.0.elapsed().as_secs_f64();
        self.0 = Instant::now();
        s
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

pub fn precompute_cmd(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_out(out)?;
    let mut manifest = RunManifest::new("precompute", cfg)?;
    let mut clock = Stopwatch::start();
    let g = load(cfg)?;
    manifest.timings_secs.insert("load".into(), clock.lap());
    let cache = cache_dir(out);
    let pre = precompute(&g, &cfg.train, Some(&cache))?;
    manifest.timings_secs.insert("precompute".into(), clock.lap());
    if !pre.cache_hit {
        log::info!("computed similarities {}", pre.cache_key);
    }
    for f in &pre.cache_files {
        let name = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.outputs.insert(name, f.clone());
    }
    manifest.write(&out.join("manifest.json"))
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_out(out)?;
    let mut manifest = RunManifest::new("train", cfg)?;
    let mut clock = Stopwatch::start();
    let g = load(cfg)?;
    manifest.timings_secs.insert("load".into(), clock.lap());
    let pre = precompute(&g, &cfg.train, Some(&cache_dir(out)))?;
    manifest.timings_secs.insert("precompute".into(), clock.lap());
    let result = train_with(&g, &cfg.train, &pre)?;
    manifest.timings_secs.insert("train".into(), clock.lap());

    let emb = out.join("embeddings.tsv");
    let loss = out.join("loss.tsv");
    let ckpt = out.join("checkpoint.dmgw");
    write_text(&emb, &format_embeddings(&result.embeddings))?;
    write_text(&loss, &format_loss(&result.loss_history))?;
    save_checkpoint(&ckpt, &result.params)?;
    manifest.outputs.insert("embeddings".into(), emb);
    manifest.outputs.insert("loss".into(), loss);
    manifest.outputs.insert("checkpoint".into(), ckpt);
    if let Some(last) = result.loss_history.last() {
        log::info!("trained {} epochs, final loss {:.6e}", result.loss_history.len(), last.total);
    }
    manifest.write(&out.join("manifest.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScorerArg {
    #[value(name = "t_kernel")]
    TKernel,
    Cosine,
}

pub struct ClusterArgs<'a> {
    pub embeddings: &'a Path,
    pub labels: &'a Path,
    pub seeds: &'a [u64],
    pub restarts: usize,
    pub f1: F1Variant,
}

pub fn eval_cluster_cmd(args: &ClusterArgs, out: &Path) -> CliResult<()> {
    create_out(out)?;
    let z = read_embeddings(args.embeddings)?;
    let labels = read_labels(args.labels)?;
    if labels.len() != z.nrows() {
        return Err(CliError::Data(format!(
            "{} has {} labels but {} has {} rows",
            args.labels.display(),
            labels.len(),
            args.embeddings.display(),
            z.nrows()
        )));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &s in args.seeds {
        let r = evaluate_clustering(&z, &labels, s, args.restarts, args.f1)?;
        rows.push((s, vec![r.acc, r.nmi, r.f1]));
        reports.push(r);
    }
    let table = format_seed_table(&["acc", "nmi", "f1"], &rows);
    write_text(&out.join("report.tsv"), &table)?;
    let col = |k: usize| mean_std(&rows.iter().map(|r| r.1[k]).collect::<Vec<_>>());
    let (acc, nmi, f1) = (col(0), col(1), col(2));
    write_json(
        &out.join("report.json"),
        &json!({
            "task": "cluster",
            "embeddings": args.embeddings,
            "labels": args.labels,
            "f1_variant": args.f1,
            "restarts": args.restarts,
            "runs": reports,
            "mean": {"acc": acc.0, "nmi": nmi.0, "f1": f1.0},
            "std": {"acc": acc.1, "nmi": nmi.1, "f1": f1.1},
        }),
    )?;
    print!("{table}");
    Ok(())
}

pub fn eval_linkpred_cmd(cfg: &RunConfig, seeds: &[u64], scorer: ScorerArg, out: &Path) -> CliResult<()> {
    create_out(out)?;
    let mut manifest = RunManifest::new("eval-linkpred", cfg)?;
    let g = load(cfg)?;
    let scorer = match scorer {
        ScorerArg::TKernel => Scorer::TKernel { nu: cfg.train.nu_latent },
        ScorerArg::Cosine => Scorer::Cosine,
    };
    let cache = cache_dir(out);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut clock = Stopwatch::start();
    for &s in seeds {
        let o = run_linkpred(&g, &cfg.train, s, scorer, Some(&cache))?;
        let split_dir = out.join("splits").join(format!("seed_{s}"));
        o.split.save(&split_dir)?;
        manifest.outputs.insert(format!("split_seed_{s}"), split_dir);
        rows.push((s, vec![o.test.auc, o.test.ap, o.val_auc, o.val_ap]));
        runs.push(json!({
            "seed": s, "auc": o.test.auc, "ap": o.test.ap,
            "val_auc": o.val_auc, "val_ap": o.val_ap,
        }));
        manifest.timings_secs.insert(format!("seed_{s}"), clock.lap());
    }
    let table = format_seed_table(&["auc", "ap", "val_auc", "val_ap"], &rows);
    write_text(&out.join("report.tsv"), &table)?;
    let col = |k: usize| mean_std(&rows.iter().map(|r| r.1[k]).collect::<Vec<_>>());
    let (auc, ap) = (col(0), col(1));
    write_json(
        &out.join("report.json"),
        &json!({
            "task": "linkpred",
            "scorer": scorer,
            "runs": runs,
            "mean": {"auc": auc.0, "ap": ap.0},
            "std": {"auc": auc.1, "ap": ap.1},
        }),
    )?;
    manifest.outputs.insert("report".into(), out.join("report.json"));
    manifest.write(&out.join("manifest.json"))?;
    print!("{table}");
    Ok(())
}

/// One ablation variant: a label and the config it runs.
fn ablation_variants(base: &TrainConfig, q_p_grid: &[f64], nu_grid: &[f64]) -> Vec<(String, TrainConfig)> {
    let mut v = vec![
        ("full".to_string(), base.clone()),
        ("no_augment".into(), TrainConfig { no_augment: true, ..base.clone() }),
        ("no_fca".into(), TrainConfig { no_fca: true, ..base.clone() }),
        ("hard_similarity".into(), TrainConfig { hard_similarity: true, ..base.clone() }),
    ];
    for &q in q_p_grid {
        v.push((format!("q_p={q}"), TrainConfig { q_p: q, ..base.clone() }));
    }
    for &nu in nu_grid {
        v.push((format!("nu_latent={nu}"), TrainConfig { nu_latent: nu, ..base.clone() }));
    }
    v
}

pub fn ablate_cmd(
    cfg: &RunConfig,
    seeds: &[u64],
    q_p_grid: &[f64],
    nu_grid: &[f64],
    out: &Path,
) -> CliResult<()> {
    create_out(out)?;
    let g = load(cfg)?;
    let Some(labels) = g.labels().map(<[usize]>::to_vec) else {
        return Err(CliError::Config("ablate needs `labels` in the config".into()));
    };
    let cache = cache_dir(out);
    let mut table = String::from("variant\tacc_mean\tacc_std\tnmi_mean\tnmi_std\tf1_mean\tf1_std\n");
    let mut entries = Vec::new();
    for (name, tc) in ablation_variants(&cfg.train, q_p_grid, nu_grid) {
        tc.validate()?;
        let mut metrics: Vec<[f64; 3]> = Vec::new();
        for &s in seeds {
            let tc = TrainConfig { seed: s, ..tc.clone() };
            let pre = precompute(&g, &tc, Some(&cache))?;
            let z = train_with(&g, &tc, &pre)?.embeddings;
            let r = evaluate_clustering(&z, &labels, s, 10, F1Variant::Macro)?;
            metrics.push([r.acc, r.nmi, r.f1]);
        }
        let stat = |k: usize| mean_std(&metrics.iter().map(|m| m[k]).collect::<Vec<_>>());
        let (acc, nmi, f1) = (stat(0), stat(1), stat(2));
        table.push_str(&format!(
            "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            acc.0, acc.1, nmi.0, nmi.1, f1.0, f1.1
        ));
        entries.push(json!({
            "variant": name,
            "acc": {"mean": acc.0, "std": acc.1},
            "nmi": {"mean": nmi.0, "std": nmi.1},
            "f1": {"mean": f1.0, "std": f1.1},
            "per_seed": metrics,
        }));
        log::info!("ablation {name}: acc {:.4}", acc.0);
    }
    write_text(&out.join("ablation.tsv"), &table)?;
    write_json(&out.join("ablation.json"), &json!({ "seeds": seeds, "variants": entries }))?;
    print!("{table}");
    Ok(())
}

/// Parses `0,3,7`, `0..20` (half-open) or a mix of both.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {part:?}"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {part:?}"))?;
            if a >= b {
                return Err(format!("empty seed range {part:?}"));
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(out)
}
