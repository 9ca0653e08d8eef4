use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn digits() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits.csv")
}

fn gbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run gbnet")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "gbnet failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Splits the first rows of the Digits file into small train and test CSVs.
fn small_split(dir: &Path) -> (PathBuf, PathBuf) {
    let text = fs::read_to_string(digits()).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.take(400).collect();
    let write = |name: &str, rows: &[&str]| {
        let path = dir.join(name);
        fs::write(&path, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
        path
    };
    (write("train.csv", &rows[..300]), write("test.csv", &rows[300..]))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let (train, test) = small_split(dir);
    let path = dir.join("run.toml");
    let text = format!(
        "seed = 3\nout_dir = \"out\"\n{body}\n[data]\ntrain = {:?}\ntest = {:?}\n",
        train.display().to_string(),
        test.display().to_string()
    );
    fs::write(&path, text).unwrap();
    path
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn evaluate_reproduces_logged_test_metrics_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "model = \"gb-dnn\"\n[architecture]\ndense_width = 16\n[boost]\niterations = 3\ntolerance = 0.0\nshrinkage = 0.5\n[train]\nepochs = 5\n",
    );
    ok(&gbnet(&["train", cfg.to_str().unwrap()]));
    let out = dir.path().join("out");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let epochs = column(&metrics, "epoch");
    let summary = |col: &str| -> Vec<f64> {
        column(&metrics, col)
            .into_iter()
            .zip(&epochs)
            .filter(|(_, e)| e.is_empty())
            .map(|(v, _)| v.parse().unwrap())
            .skip(1)
            .collect()
    };
    let (logged_acc, logged_ce) = (summary("test_acc"), summary("test_ce"));
    assert_eq!(logged_acc.len(), 3);

    let test = dir.path().join("test.csv");
    ok(&gbnet(&["evaluate", out.join("model.json").to_str().unwrap(), test.to_str().unwrap()]));
    let eval = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    let stages: Vec<String> = column(&eval, "stages");
    assert_eq!(stages, ["1", "2", "3"]);
    let acc: Vec<f64> = column(&eval, "accuracy").iter().map(|v| v.parse().unwrap()).collect();
    let ce: Vec<f64> = column(&eval, "cross_entropy").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(acc, logged_acc);
    for (a, b) in ce.iter().zip(&logged_ce) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{ce:?} vs {logged_ce:?}");
    }
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "model = \"dnn\"\n[architecture]\ndense_width = 8\n[train]\nepochs = 3\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&gbnet(&["train", cfg.to_str().unwrap(), "--out-dir", a.to_str().unwrap()]));
    ok(&gbnet(&["train", cfg.to_str().unwrap(), "--out-dir", b.to_str().unwrap()]));
    for name in ["metrics.csv", "model.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    ok(&gbnet(&["train", cfg.to_str().unwrap(), "--out-dir", c.to_str().unwrap(), "--seed", "4"]));
    assert_ne!(fs::read(a.join("model.json")).unwrap(), fs::read(c.join("model.json")).unwrap());
}

#[test]
fn baseline_with_boost_section_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "model = \"dnn\"\n[architecture]\ndense_width = 8\ndense_layers = 1\n[boost]\nshrinkage = 0.5\n[train]\nepochs = 1\n",
    );
    let out = gbnet(&["train", cfg.to_str().unwrap()]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ignoring the [boost] section"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "model = \"dnn\"\n[architecture]\ndense_width = 8\ndense_layers = 1\n[train]\nepochs = 1\n");
    ok(&gbnet(&["train", cfg.to_str().unwrap()]));
    let model = dir.path().join("out/model.json");

    let text = fs::read_to_string(&model).unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, &text[..text.len() / 2]).unwrap();
    let out = gbnet(&["evaluate", broken.to_str().unwrap(), digits().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "a,b,label\n1,2,0\n3,4,1\n").unwrap();
    let out = gbnet(&["evaluate", model.to_str().unwrap(), narrow.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "model = \"dnn\"\nlearning_rate = 0.1\n[data]\ntrain = \"x.csv\"\n").unwrap();
    let out = gbnet(&["train", unknown.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!dir.path().join("runs").exists());
}
