use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use subset_flow::data::Dataset;

const CONFIG: &str = r#"
[model]
bin_conditioning = true

[[model.layers]]
transform = "quadratic"
bins = 4
hidden = [16]

[train]
objective = "exact"
lr = 0.01
batch = 32
epochs = 2
seed = 3

[eval]
k_list = [4]
"#;

fn subflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subflow")).args(args).output().expect("spawn subflow")
}

fn ok(args: &[&str]) -> String {
    let out = subflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a config and a small Markov dataset, returning their paths.
fn setup(dir: &Path, config: &str) -> (String, String) {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let data = dir.join("train.subf");
    ok(&["gen-toy", "--kind", "markov-chain", "--n", "120", "--dims", "3", "--levels", "4", "--seed", "1", "--out", p(&data)]);
    (p(&cfg).to_string(), p(&data).to_string())
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), CONFIG);
    let a = dir.path().join("a.ck");
    let b = dir.path().join("b.ck");
    ok(&["train", "--config", &cfg, "--data", &data, "--out", p(&a)]);
    ok(&["train", "--config", &cfg, "--data", &data, "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let eval = ["eval", "--checkpoint", p(&a), "--data", &data, "--seed", "9"];
    let first = ok(&eval);
    assert_eq!(first, ok(&eval));
    assert!(first.contains("Exact") && first.contains("IWBO(4)"), "{first}");
    assert!(first.contains("estimator,k,bits_per_dim,stderr"));
    let gap = ok(&["gap", "--checkpoint", p(&a), "--data", &data, "--k", "2,8"]);
    assert!(gap.contains("iwbo,8,"), "{gap}");

    let s1 = dir.path().join("s1.subf");
    let s2 = dir.path().join("s2.subf");
    ok(&["sample", "--checkpoint", p(&a), "--n", "50", "--seed", "4", "--out", p(&s1)]);
    ok(&["sample", "--checkpoint", p(&a), "--n", "50", "--seed", "4", "--out", p(&s2)]);
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    assert_eq!(Dataset::read(&s1).unwrap().len(), 50);
}

#[test]
fn zero_epochs_and_empty_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), &CONFIG.replace("epochs = 2", "epochs = 0"));
    let ck = dir.path().join("init.ck");
    ok(&["train", "--config", &cfg, "--data", &data, "--out", p(&ck)]);
    let report = ok(&["eval", "--checkpoint", p(&ck), "--data", &data, "--estimators", "exact,elbo"]);
    assert!(report.contains("exact,0,2.0,0.0"), "{report}");
    assert!(report.contains("elbo,1,2.0,0.0"), "{report}");

    let empty = dir.path().join("empty.subf");
    ok(&["sample", "--checkpoint", p(&ck), "--n", "0", "--out", p(&empty)]);
    assert_eq!(fs::read(&empty).unwrap().len(), 20);
    assert!(Dataset::read(&empty).unwrap().is_empty());
}

#[test]
fn interpolation_endpoints_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path(), CONFIG);
    let ck = dir.path().join("m.ck");
    ok(&["train", "--config", &cfg, "--data", &data, "--out", p(&ck)]);
    let out = dir.path().join("path.subf");
    let text = ok(&["interpolate", "--checkpoint", p(&ck), "--data", &data, "--idx-a", "0", "--idx-b", "5", "--steps", "6", "--out", p(&out)]);
    assert_eq!(text.lines().count(), 6);
    let path = Dataset::read(&out).unwrap();
    let d = Dataset::read(Path::new(&data)).unwrap();
    assert_eq!(path.row(0), d.row(0));
    assert_eq!(path.row(5), d.row(5));
    let bad = subflow(&["interpolate", "--checkpoint", p(&ck), "--data", &data, "--idx-a", "0", "--idx-b", "500", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn splits_share_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |split: &str, name: &str| {
        let out = dir.path().join(name);
        let text = ok(&["gen-toy", "--kind", "markov-chain", "--n", "50", "--dims", "3", "--levels", "4", "--seed", "7", "--split", split, "--out", p(&out)]);
        (text, fs::read(out).unwrap())
    };
    let (h0, d0) = gen("0", "a.subf");
    let (h1, d1) = gen("1", "b.subf");
    assert_eq!(h0, h1);
    assert_ne!(d0, d1);
    assert_eq!(gen("0", "c.subf").1, d0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path(), CONFIG);

    // Exact objective without bin conditioning violates the capability rule.
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, CONFIG.replace("bin_conditioning = true", "bin_conditioning = false")).unwrap();
    let out = subflow(&["train", "--config", p(&bad_cfg), "--data", &data, "--out", p(&dir.path().join("x.ck"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bin_conditioning"));

    // Exact evaluation of a model that cannot provide it.
    let elbo_cfg = dir.path().join("elbo.toml");
    let text = CONFIG
        .replace("bin_conditioning = true", "bin_conditioning = false")
        .replace("objective = \"exact\"", "objective = \"elbo-uniform\"")
        .replace("epochs = 2", "epochs = 0");
    fs::write(&elbo_cfg, text).unwrap();
    let ck = dir.path().join("elbo.ck");
    ok(&["train", "--config", p(&elbo_cfg), "--data", &data, "--out", p(&ck)]);
    let out = subflow(&["eval", "--checkpoint", p(&ck), "--data", &data, "--estimators", "exact"]);
    assert_eq!(out.status.code(), Some(2));
    let out = subflow(&["gap", "--checkpoint", p(&ck), "--data", &data]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed and truncated data files.
    let junk = dir.path().join("junk.subf");
    fs::write(&junk, b"NOPE").unwrap();
    let out = subflow(&["eval", "--checkpoint", p(&ck), "--data", p(&junk)]);
    assert_eq!(out.status.code(), Some(3));
    let mut truncated = fs::read(&data).unwrap();
    truncated.pop();
    fs::write(&junk, truncated).unwrap();
    let out = subflow(&["eval", "--checkpoint", p(&ck), "--data", p(&junk)]);
    assert_eq!(out.status.code(), Some(3));

    // K above 256 is rejected when generating.
    let out = subflow(&["gen-toy", "--kind", "independent-categorical", "--n", "1", "--dims", "2", "--levels", "300", "--out", p(&junk)]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn oracle_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), CONFIG);
    let norm = ok(&["oracle", "normalize", "--config", &cfg, "--dims", "2", "--levels", "4", "--seed", "2"]);
    let err: f64 = norm.split_whitespace().last().unwrap().parse().unwrap();
    assert!(err < 1e-8, "{norm}");
    let mv = ok(&["oracle", "mvdmol", "--draws", "2"]);
    assert!(mv.starts_with("max relative error"));
    let gc = ok(&["oracle", "gradcheck", "--config", &cfg, "--dims", "2", "--levels", "4"]);
    assert!(gc.contains("relative error"));
    let q = ok(&["oracle", "quadrature", "--config", &cfg, "--dims", "2", "--levels", "4", "--points", "2"]);
    assert!(q.contains("over 2 points"));
}
