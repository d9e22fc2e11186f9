//! The `latentclean` binary: chaining, exit codes, manifests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    std::env::var_os("LATENTCLEAN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn have_mnist() -> bool {
    data_dir().join("mnist/train-images-idx3-ubyte").is_file()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentclean")).args(args).env("LATENTCLEAN_DATA", data_dir()).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn full_chain_on_a_2000_sample_subset() {
    if !have_mnist() {
        eprintln!("MNIST not present; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let r = tmp.path().to_str().unwrap();
    ok(&["inject", "--run", r, "--dataset", "mnist", "--subset", "2000", "--seed", "5"]);
    let ledger = read(&tmp.path().join("ledger.csv"));
    assert_eq!(ledger.lines().filter(|l| !l.starts_with('#')).count(), 1 + 300);
    ok(&["--threads", "1", "train", "--run", r, "--epochs", "1"]);
    ok(&["detect", "--run", r]);
    let report = ok(&["evaluate", "--run", r]);
    assert_eq!(report, read(&tmp.path().join("report.txt")));
    assert!(report.contains("samples=2000\n"));
    assert!(report.contains("jaccard_noised=0.85\n"));
    assert!(report.contains("config.detect.epsilon=auto-per-class\n"));
    assert!(!report.contains(r), "report leaks the run path");

    let removed = read(&tmp.path().join("cleaned/removed.csv"));
    assert!(removed.starts_with("sample_index,class,epsilon_used,was_flipped\n"));
    let retained: usize = report.lines().find_map(|l| l.strip_prefix("retained=")).unwrap().parse().unwrap();
    assert_eq!(retained + removed.lines().count() - 1, 2000);
    for plot in ["plots/latent_pca.csv", "plots/kdist_class0.csv", "plots/clusters_class9.csv"] {
        assert!(tmp.path().join(plot).is_file(), "{plot}");
    }

    let manifest = read(&tmp.path().join("detect.manifest"));
    assert!(manifest.starts_with("command=detect\n"));
    for key in ["config.seed=5\n", "config_sha256=", "input.model.ckpt=", "output.cleaned/removed.csv="] {
        assert!(manifest.contains(key), "{key} missing from\n{manifest}");
    }
    let inject = read(&tmp.path().join("inject.manifest"));
    assert!(inject.contains("config.dataset=mnist\n") && inject.contains("input.source/train-images-idx3-ubyte="));
}

#[test]
fn missing_upstream_artifacts_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let r = tmp.path().to_str().unwrap();
    let out = run(&["detect", "--run", r, "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.ckpt"));
    assert_eq!(code(&["evaluate", "--run", r, "--seed", "1"]), 2);
    assert_eq!(code(&["train", "--run", r, "--seed", "1"]), 2);
    assert_eq!(code(&["report", "--run", r, "--from", r]), 2);
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let r = tmp.path().to_str().unwrap();
    let out = run(&["inject", "--run", r, "--dataset", "mnist", "--rate", "1.5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate"));
    assert_eq!(code(&["inject", "--run", r, "--dataset", "mnist", "--rate", "0.1"]), 2, "seed is mandatory");
    assert_eq!(code(&["inject", "--run", r, "--dataset", "no-such-set", "--seed", "1"]), 2);
    assert_eq!(code(&["inject", "--run", r, "--dataset", "mnist", "--seed", "1", "--config", "/nonexistent"]), 2);
    assert_eq!(code(&["--threads", "0", "evaluate", "--run", r]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn zero_rate_gives_an_empty_ledger_and_config_files_apply() {
    if !have_mnist() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let r = tmp.path().to_str().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# desk run\ndataset = mnist\nsubset = 50\nrate = 0.5\nseed = 9\n").unwrap();
    ok(&["inject", "--run", r, "--config", cfg.to_str().unwrap(), "--rate", "0"]);
    let ledger = read(&tmp.path().join("ledger.csv"));
    assert!(ledger.contains("# rate=0\n") && ledger.contains("# seed=9\n"));
    assert!(ledger.ends_with("index,original,assigned\n"));
    let manifest = read(&tmp.path().join("inject.manifest"));
    assert!(manifest.contains("config.rate=0\n") && manifest.contains("config.subset=50\n"));
    assert_eq!(code(&["baseline", "--run", r, "--method", "nearest"]), 2);
}
