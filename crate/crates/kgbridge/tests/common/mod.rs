#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kgbridge::cli::run;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn kgbridge(args: &[&str]) -> Outcome {
    let mut argv = vec!["kgbridge".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// Small bridge and trainer settings so a fixture run takes well under a second.
pub fn write_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "paths": {
            "nodes": fixture("nodes.tsv"),
            "triples": fixture("triples.tsv"),
            "cache": dir.join("cache.emb"),
            "checkpoint": dir.join("model.bbr"),
            "output_dir": dir,
        },
        "bridge": {"d": 16, "layers": 1, "heads": 2, "ff_mult": 2},
        "train": {"epochs": 3, "batch_size": 16, "negatives": 3, "lr": 1e-3},
        "kge": {"d_e": 8, "d_r": 8, "epochs": 5, "negatives": 2, "batch_size": 16},
        "seed": 5,
    });
    merge(&mut cfg, extra);
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    p
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
