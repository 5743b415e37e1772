use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simgraph::cli::{load_data, load_prepared, RunConfig};
use simgraph::evalkit::{random_baseline, random_baseline_std, Denominator, Part};

const SMALL: &str = r#"
[generate]
patients = 40
visits = 60
diagnoses = 30
procedures = 12
medications = 20
labs = 25
microbiology = 10
symptoms = 15
mean_diagnoses = 5.0
mean_procedures = 2.0
mean_medications = 6.0
mean_labs = 8.0
mean_microbiology = 0.5
mean_symptoms = 4.0
n_latent_conditions = 3
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simgraph"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `<dir>/run.toml` with output into `<dir>/out`.
fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("output_dir = \"out\"\n{SMALL}\n{body}")).unwrap();
    path
}

fn stage(cfg: &Path, name: &str) {
    let o = bin(&[name, "-c", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{name}: {}", stderr(&o));
}

fn pipeline_body() -> &'static str {
    "[preprocess]\npaths = [\"V-L\", \"V-S\"]\n[train]\nepochs = 20\nlearning_rate = 0.05\nweight_decay = 0.0\n"
}

/// Every file under `root` by relative path.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn help_lists_commands_and_config_keys() {
    let o = bin(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for word in [
        "generate",
        "preprocess",
        "train",
        "eval",
        "infer",
        "embed",
        "ablate",
    ] {
        assert!(text.contains(word), "missing {word}");
    }
    for key in [
        "output_dir",
        "[preprocess]",
        "normalization",
        "weight_decay",
        "top_k",
    ] {
        assert!(text.contains(key), "missing {key}");
    }
    assert_eq!(bin(&["bogus"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[train]\nepoch = 3\n");
    let o = bin(&["generate", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));

    let cfg = config(dir.path(), "[preprocess]\npaths = [\"V-L-D\"]\n");
    stage(&cfg, "generate");
    let o = bin(&["preprocess", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("position 5"), "{}", stderr(&o));

    let missing = dir.path().join("nope.toml");
    assert_ne!(
        bin(&["train", "-c", missing.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn reruns_are_byte_identical() {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), pipeline_body());
        for s in ["generate", "preprocess", "train", "eval"] {
            stage(&cfg, s);
        }
        let mut snap = snapshot(&dir.path().join("out"));
        // Wall-clock column.
        assert!(snap.remove("train_log.csv").is_some());
        runs.push(snap);
    }
    assert_eq!(
        runs[0].keys().collect::<Vec<_>>(),
        runs[1].keys().collect::<Vec<_>>()
    );
    for (k, v) in &runs[0] {
        assert!(v == &runs[1][k], "{k} differs");
    }
    let manifest = String::from_utf8(runs[0]["manifest_train.toml"].clone()).unwrap();
    assert!(manifest.contains("config_sha256"));
    assert!(manifest.contains("\"checkpoint.txt\""));
    assert!(!manifest.contains("train_log"));
}

#[test]
fn manifest_hashes_ignore_config_formatting() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(dir.path(), pipeline_body());
    let text = fs::read_to_string(&a).unwrap();
    let b = dir.path().join("spaced.toml");
    fs::write(
        &b,
        format!("# same run\n\n{}", text.replace(" = ", "   =   ")),
    )
    .unwrap();
    stage(&a, "generate");
    let first = fs::read_to_string(dir.path().join("out/manifest_generate.toml")).unwrap();
    stage(&b, "generate");
    let second = fs::read_to_string(dir.path().join("out/manifest_generate.toml")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn infer_handles_batches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), pipeline_body());
    for s in ["generate", "preprocess", "train"] {
        stage(&cfg, s);
    }
    let c = cfg.to_str().unwrap();
    let batch = dir.path().join("batch.csv");

    fs::write(&batch, "# V,L\nsrc_key,dst_key\n").unwrap();
    let o = bin(&["infer", "-c", c, "--batch", batch.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    assert_eq!(pred, "node_key,rank,label,logit\n");

    let data = fs::read_to_string(dir.path().join("out/data/nodes_L.csv")).unwrap();
    let lab = data
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .to_string();
    fs::write(&batch, format!("# V,L\nnew_a,{lab}\nnew_b,{lab}\n")).unwrap();
    let o = bin(&["infer", "-c", c, "--batch", batch.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    assert_eq!(pred.lines().count(), 1 + 2 * 10);

    fs::write(&batch, "# V,L\nnew_a,no_such_lab\n").unwrap();
    let o = bin(&["infer", "-c", c, "--batch", batch.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no_such_lab"));
}

#[test]
fn raw_mode_writes_integer_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[preprocess]\npaths = [\"V-L-V\", \"L-V-S\"]\nnormalization = \"raw_pathcount\"\n",
    );
    stage(&cfg, "generate");
    stage(&cfg, "preprocess");
    let sub = dir.path().join("out/subgraphs");
    let mut names: Vec<String> = fs::read_dir(&sub)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2);
    for name in names {
        let text = fs::read_to_string(sub.join(&name)).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains("norm=raw_pathcount"));
        let mut rows = 0;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 3);
            let (i, j, v): (usize, usize, u64) = (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
            );
            assert!(i <= j && v > 0);
            rows += 1;
        }
        assert!(rows > 0, "{name}");
    }
}

#[test]
fn untrained_model_scores_near_random() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = config(
        dir.path(),
        "[preprocess]\npaths = [\"V-L\", \"V-S\"]\n[train]\nepochs = 0\n",
    );
    for s in ["generate", "preprocess", "train", "eval"] {
        stage(&cfg_path, s);
    }
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let got: f64 = csv
        .lines()
        .find(|l| l.contains(",visit,10,"))
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let data = load_data(&cfg).unwrap();
    let prepared = load_prepared(&cfg, &data).unwrap();
    let test = prepared.plan.nodes(&prepared.graph, &data.task, Part::Test);
    let truth = data.labels.truth_of(&prepared.graph, &data.task, &test);
    let n = data.labels.n_labels;
    let mean = random_baseline(&truth, 10, n, Denominator::Capped);
    let sd = random_baseline_std(&truth, 10, n, Denominator::Capped);
    assert!((got - mean).abs() <= 3.0 * sd, "{got} vs {mean} ± {sd}");
}

#[test]
fn eval_before_train_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), pipeline_body());
    stage(&cfg, "generate");
    let o = bin(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("split.csv"));
}
