//! End-to-end tests of the `pacfl` binary: exit codes, artifact round-trips,
//! the newcomer workflow, and seed/thread behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pacfl")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.ini");
    let base = "
[experiment]
seed = 7

[dataset]
kind = gaussian_mix
sources = 3
n_classes = 2
n_features = 12
samples_per_class = 70
class_mean_scale = 8.0
covariance_scale = 1.0

[partition]
scheme = mix
client_counts = 4,3,3
samples_per_client = 30
n_clients = 10
test_fraction = 0.25

[train]
mode = pacfl
rounds = 3
sample_rate = 1.0
local_epochs = 1
batch_size = 8
learning_rate = 0.05
beta = 30
p = 2
";
    std::fs::write(&path, format!("{base}\n{extra}")).unwrap();
    path
}

#[test]
fn missing_config_flag_exits_2() {
    let out = run(&["train"], &[]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn config_error_exits_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "");
    let text = std::fs::read_to_string(good)
        .unwrap()
        .replace("rounds = 3", "rounds = banana");
    let path = dir.path().join("bad.ini");
    std::fs::write(&path, text).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("rounds") && stderr.contains("banana"),
        "{stderr}"
    );
}

#[test]
fn unknown_key_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\n");
    // Append a typo key.
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("\n[train]\nlerning_rate = 0.1\n");
    // Duplicate section header is fine to reject too, but target the key.
    let path = dir.path().join("typo.ini");
    std::fs::write(&path, text.replace("[train]\nlerning_rate", "lerning_rate")).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lerning_rate"), "{stderr}");
}

#[test]
fn runtime_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // Demand far more samples per client than the sources hold.
    let cfg = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("samples_per_client = 30", "samples_per_client = 4000");
    let path = dir.path().join("starved.ini");
    std::fs::write(&path, text).unwrap();
    let out = run(
        &[
            "train",
            "--config",
            path.to_str().unwrap(),
            "--output",
            dir.path().join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn train_artifacts_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("run");
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{out:?}");

    let prox = pacfl::subspace::ProximityMatrix::load_csv(&out_dir.join("proximity.csv")).unwrap();
    assert_eq!(prox.k(), 10);
    let mut f = std::fs::File::open(out_dir.join("clusters.csv")).unwrap();
    let pairs = pacfl::clustering::ClusterState::read_csv_pairs(&mut f).unwrap();
    assert_eq!(pairs.len(), 10);
    let mut f = std::fs::File::open(out_dir.join("metrics.csv")).unwrap();
    let rounds = pacfl::federation::read_metrics_csv(&mut f).unwrap();
    assert_eq!(rounds.len(), 3);
    assert_eq!(rounds[0].per_client.len(), 10);
    let mut f = std::fs::File::open(out_dir.join("manifest.txt")).unwrap();
    let entries = pacfl::partition::read_manifest(&mut f).unwrap();
    assert_eq!(entries.len(), 10);
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("mean_final_accuracy = "), "{summary}");
    assert!(summary.contains("z = "), "{summary}");
}

#[test]
fn partition_signature_cluster_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out_dir = dir.path().join("stages");

    for sub in ["partition", "signature", "cluster"] {
        let out = run(
            &[
                sub,
                "--config",
                cfg.to_str().unwrap(),
                "--output",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert!(out.status.success(), "{sub}: {out:?}");
    }
    assert!(out_dir.join("manifest.txt").exists());
    assert!(out_dir.join("dendrogram.txt").exists());
    assert!(out_dir.join("proximity.csv").exists());
    let sigs = std::fs::read_dir(out_dir.join("signatures"))
        .unwrap()
        .count();
    assert_eq!(sigs, 10);
    // Signature files parse back.
    let sig = pacfl::subspace::SubspaceSignature::load(
        &out_dir.join("signatures/client_000.pacs"),
        "client_000",
    )
    .unwrap();
    assert_eq!(sig.p(), 2);
    assert_eq!(sig.feature_dim(), 12);
}

#[test]
fn sweep_beta_writes_monotone_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sweep]\nbetas = 0, 15, 40, inf\n");
    let out_dir = dir.path().join("sweep");
    let out = run(
        &[
            "sweep-beta",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{out:?}");
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut zs = Vec::new();
    for line in table.lines().skip(1) {
        let z: usize = line.split(',').nth(1).unwrap().parse().unwrap();
        zs.push(z);
    }
    assert_eq!(zs.first(), Some(&10));
    assert_eq!(zs.last(), Some(&1));
    assert!(zs.windows(2).all(|w| w[0] >= w[1]), "{zs:?}");
}

#[test]
fn newcomer_workflow_assigns_holdouts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[newcomer]\nholdout = 2\nfine_tune_epochs = 2\n",
    );
    let out_dir = dir.path().join("run");
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{out:?}");
    let out = run(
        &[
            "newcomer",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{out:?}");
    let table = std::fs::read_to_string(out_dir.join("newcomers.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{table}");
    for row in rows {
        assert!(row.starts_with("client_00"), "{row}");
    }
}

#[test]
fn consistency_report_prints_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "consistency-report",
            "--seeds",
            "3",
            "--output",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean-shift ordering held in"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("consistency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for (out_name, threads) in [("t1", "1"), ("t4", "4")] {
        let out = run(
            &[
                "train",
                "--config",
                cfg.to_str().unwrap(),
                "--output",
                dir.path().join(out_name).to_str().unwrap(),
            ],
            &[("PACFL_THREADS", threads)],
        );
        assert!(out.status.success(), "{out:?}");
    }
    let a = std::fs::read(dir.path().join("t1/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("t4/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_override_changes_and_restores_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run_with = |name: &str, seed: Option<&str>| {
        let out_path = dir.path().join(name);
        let mut args = vec![
            "train".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--output".into(),
            out_path.to_str().unwrap().into(),
        ];
        if let Some(s) = seed {
            args.push("--seed".into());
            args.push(s.into());
        }
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = run(&arg_refs, &[]);
        assert!(out.status.success(), "{out:?}");
        std::fs::read(out_path.join("metrics.csv")).unwrap()
    };
    let base = run_with("s_base", None);
    let other = run_with("s_other", Some("99"));
    let again = run_with("s_again", Some("99"));
    assert_ne!(base, other);
    assert_eq!(other, again);
}
