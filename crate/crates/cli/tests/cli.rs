use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"
[data]
preset = "synthetic"
per_class_counts = [40, 8]
val_per_class = 10
test_per_class = 20

[slppl]
epochs = 2
batch_size = 16

[adversarial]
epochs = 2
batch_size = 16

[run]
seeds = [5]
grid_rows = 2
"#;

fn lpgan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpgan"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("DATA_ROOT")
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.toml"), config).unwrap();
    dir
}

#[test]
fn train_eval_grid_round_trip() {
    let dir = setup(QUICK);
    let out = lpgan(&["train", "--strategy", "amo", "--config", "quick.toml", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    assert!(o.join("config.snapshot").exists());
    assert!(o.join("seed-5/amo/history.csv").exists());
    let metrics = fs::read_to_string(o.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,strategy,acsa,f_macro,g_macro,r_min,p_maj\n5,amo,"), "{metrics}");

    // A second strategy is merged into the same metrics file.
    let out = lpgan(&["train", "--strategy", "dso", "--config", "quick.toml", "--out", "o"], dir.path());
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(o.join("metrics.csv")).unwrap().lines().count(), 3);

    let out = lpgan(&["eval", "--strategy", "amo", "--config", "quick.toml", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ACSA"));

    let out = lpgan(
        &["grid", "--strategy", "amo", "--config", "quick.toml", "--out", "o", "--output", "g.pgm", "--rows", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read(dir.path().join("g.pgm")).unwrap().starts_with(b"P5\n"));
}

#[test]
fn prepare_data_reports_imbalance() {
    let dir = setup(QUICK);
    let out = lpgan(&["prepare-data", "--config", "quick.toml", "--seed", "9", "--out", "p"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed 9: 48 training samples") && stdout.contains("IR = 5"), "{stdout}");
    assert!(dir.path().join("p/seed-9/data/train-images-idx3-ubyte").exists());
}

#[test]
fn exit_codes() {
    let dir = setup("[data]\npreset = \"synthetic\"\nnonsense = true\n");
    let out = lpgan(&["train-slppl", "--config", "quick.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));

    let out = lpgan(&["run-all", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let dir = setup(QUICK);
    let out = lpgan(&["eval", "--config", "quick.toml", "--checkpoint", "absent.nbnd", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(3));

    let mnist = "[data]\npreset = \"mnist\"\nroot = \"nowhere\"\n";
    fs::write(dir.path().join("mnist.toml"), mnist).unwrap();
    let out = lpgan(&["prepare-data", "--config", "mnist.toml", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = lpgan(&["train", "--strategy", "gan", "--config", "quick.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit with 2");
}

#[test]
fn data_root_env_overrides_config() {
    let dir = setup("[data]\npreset = \"mnist\"\nroot = \"nowhere\"\n");
    let out = Command::new(env!("CARGO_BIN_EXE_lpgan"))
        .args(["prepare-data", "--config", "quick.toml", "--out", "m"])
        .current_dir(dir.path())
        .env("DATA_ROOT", "/also/missing")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/also/missing"));
}
