use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rbm-anneal");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed: {}", stderr(&o));
    o
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

/// Exact log-likelihood per record by enumerating every joint state.
fn brute_force_loglik(b: &[f64], c: &[f64], w: &[Vec<f64>], data: &[Vec<u8>]) -> f64 {
    let (n, m) = (b.len(), c.len());
    let energy = |v: &[u8], h: &[u8]| {
        let mut e = 0.0;
        for i in 0..n {
            e -= b[i] * v[i] as f64;
            for j in 0..m {
                e -= w[i][j] * (v[i] * h[j]) as f64;
            }
        }
        for j in 0..m {
            e -= c[j] * h[j] as f64;
        }
        e
    };
    let bits = |code: usize, len: usize| (0..len).map(|k| ((code >> k) & 1) as u8).collect::<Vec<_>>();
    let z: f64 = (0..1 << n)
        .flat_map(|vc| (0..1 << m).map(move |hc| (vc, hc)))
        .map(|(vc, hc)| (-energy(&bits(vc, n), &bits(hc, m))).exp())
        .sum();
    let total: f64 = data
        .iter()
        .map(|v| ((0..1 << m).map(|hc| (-energy(v, &bits(hc, m))).exp()).sum::<f64>() / z).ln())
        .sum();
    total / data.len() as f64
}

#[test]
fn gen_data_reports_pool_and_writes_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = ok(run(&["gen-data", "--side", "8", "--count", "500", "--train", "300", "--out-dir", d]));
    assert!(stdout(&o).contains("pool size 508"));
    assert_eq!(lines(&dir.path().join("train.txt")), 300);
    assert_eq!(lines(&dir.path().join("test.txt")), 200);
    assert!(dir.path().join("run.cfg").exists());
}

#[test]
fn gen_data_without_split_writes_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(run(&["gen-data", "--side", "4", "--count", "10", "--out-dir", d]));
    assert_eq!(lines(&dir.path().join("records.txt")), 10);
}

#[test]
fn too_many_records_is_a_capacity_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen-data", "--side", "4", "--count", "29", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn missing_output_directory_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = run(&["gen-data", "--side", "4", "--count", "4", "--out-dir", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(missing.to_str().unwrap()));
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["gen-data", "--side", "4", "--count", "4"])
        .env("RBM_ANNEAL_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("records.txt").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_sets_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    fs::write(&cfg, "# corpus\nside = 4\ncount = 12\ntrain = 8\n").unwrap();
    let d = dir.path().to_str().unwrap();
    ok(run(&["gen-data", "--config", cfg.to_str().unwrap(), "--count", "10", "--out-dir", d]));
    assert_eq!(lines(&dir.path().join("train.txt")), 8);
    assert_eq!(lines(&dir.path().join("test.txt")), 2);
    let resolved = fs::read_to_string(dir.path().join("run.cfg")).unwrap();
    assert!(resolved.contains("side = 4"));
    assert!(resolved.contains("count = 10"));
}

#[test]
fn resolved_config_replays_the_run() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let d1 = first.path().to_str().unwrap();
    ok(run(&["gen-data", "--side", "4", "--count", "20", "--train", "14", "--seed", "3", "--out-dir", d1]));
    let cfg = first.path().join("run.cfg");
    ok(run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out-dir", second.path().to_str().unwrap()]));
    for f in ["train.txt", "test.txt"] {
        assert_eq!(
            fs::read(first.path().join(f)).unwrap(),
            fs::read(second.path().join(f)).unwrap()
        );
    }
}

#[test]
fn bad_config_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sidez = 4\n").unwrap();
    let o = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sidez"));
    let o = run(&["gen-data", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/x.cfg"));
}

fn small_corpus(dir: &Path) {
    ok(run(&["gen-data", "--side", "4", "--count", "28", "--train", "20", "--out-dir", dir.to_str().unwrap()]));
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let d = dir.path().to_str().unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    ok(run(&[
        "train", "--train-file", train.to_str().unwrap(), "--test-file", test.to_str().unwrap(),
        "--hidden", "4", "--epochs", "7", "--checkpoint-every", "3", "--eval-every", "2",
        "--loglik-every", "1", "--out-dir", d,
    ]));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "epoch,accuracy_bar,accuracy_stripe,accuracy_total,loglik_per_record,mean_sample_energy,chain_break_rate,seconds");
    assert_eq!(rows.len(), 8);
    for (k, row) in rows[1..].iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], (k + 1).to_string());
        assert_eq!(fields[3].is_empty(), (k + 1) % 2 != 0, "row {row}");
        assert!(!fields[4].is_empty());
        assert!(fields[6].is_empty() && fields[7].is_empty());
    }
    for e in [0, 3, 6, 7] {
        assert!(dir.path().join(format!("ckpt_{e}.rbm")).exists(), "ckpt_{e}");
    }
    assert!(!dir.path().join("ckpt_1.rbm").exists());
}

#[test]
fn timing_fills_the_seconds_column() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let train = dir.path().join("train.txt");
    ok(run(&[
        "train", "--train-file", train.to_str().unwrap(), "--hidden", "4", "--epochs", "2",
        "--eval-every", "0", "--timing", "--out-dir", dir.path().to_str().unwrap(),
    ]));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let secs: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(secs >= 0.0);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    let mut outputs = Vec::new();
    for sampler in ["cd1", "anneal", "cd1", "anneal"] {
        let out = tempfile::tempdir().unwrap();
        ok(run(&[
            "train", "--train-file", train.to_str().unwrap(), "--test-file", test.to_str().unwrap(),
            "--sampler", sampler, "--hidden", "4", "--epochs", "3", "--sweeps", "20", "--chimera-m", "4",
            "--seed", "11", "--out-dir", out.path().to_str().unwrap(),
        ]));
        outputs.push((
            fs::read(out.path().join("metrics.csv")).unwrap(),
            fs::read(out.path().join("ckpt_3.rbm")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
    assert_ne!(outputs[0].1, outputs[1].1);
}

#[test]
fn exact_sampler_capacity_is_checked_before_training() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let train = dir.path().join("train.txt");
    let o = run(&[
        "train", "--train-file", train.to_str().unwrap(), "--sampler", "exact", "--hidden", "8",
        "--eval-every", "0", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn loglik_capacity_is_checked_before_training() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let train = dir.path().join("train.txt");
    let o = run(&[
        "train", "--train-file", train.to_str().unwrap(), "--hidden", "26", "--loglik-every", "1",
        "--eval-every", "0", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn malformed_training_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "0101x\n").unwrap();
    let o = run(&["train", "--train-file", bad.to_str().unwrap(), "--eval-every", "0", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("bad.txt"));
}

#[test]
fn eval_matches_golden_output_and_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt_3.rbm");
    fs::copy(fixture("tiny.rbm"), &ckpt).unwrap();
    let data = fixture("tiny.txt");
    let o = ok(run(&[
        "eval", "--checkpoints", ckpt.to_str().unwrap(), "--test-file", data.to_str().unwrap(),
        "--train-file", data.to_str().unwrap(), "--loglik", "--seed", "5",
        "--out-dir", dir.path().to_str().unwrap(),
    ]));
    let golden = fs::read_to_string(fixture("tiny_eval.csv")).unwrap();
    assert_eq!(stdout(&o), golden);

    let b = [0.5, -0.25, 0.125, -1.0];
    let c = [0.25, 0.75];
    let w = vec![vec![1.5, -0.5], vec![-0.75, 0.25], vec![0.5, 1.0], vec![-1.25, 0.375]];
    let records: Vec<Vec<u8>> = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| l.split('#').next().unwrap().trim().bytes().map(|x| x - b'0').collect())
        .collect();
    let expected = brute_force_loglik(&b, &c, &w, &records);
    let reported: f64 = golden.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!((expected - reported).abs() < 1e-12, "{expected} vs {reported}");
}

#[test]
fn eval_expands_globs_in_epoch_order() {
    let dir = tempfile::tempdir().unwrap();
    for e in [10, 2, 100] {
        fs::copy(fixture("tiny.rbm"), dir.path().join(format!("ckpt_{e}.rbm"))).unwrap();
    }
    let data = fixture("tiny.txt");
    let out = dir.path().join("eval.csv");
    let pattern = format!("{}/ckpt_*.rbm", dir.path().display());
    ok(run(&[
        "eval", "--checkpoints", &pattern, "--train-file", data.to_str().unwrap(), "--loglik",
        "--output", out.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(),
    ]));
    let epochs: Vec<String> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(epochs, ["2", "10", "100"]);
}

#[test]
fn eval_rejects_empty_glob_and_oversized_loglik() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let data = fixture("tiny.txt");
    let pattern = format!("{d}/ckpt_*.rbm");
    let o = run(&["eval", "--checkpoints", &pattern, "--test-file", data.to_str().unwrap(), "--out-dir", d]);
    assert_eq!(o.status.code(), Some(3));

    let big = dir.path().join("ckpt_1.rbm");
    let zeros = |k: usize| vec!["0"; k].join(" ");
    let mut text = format!("rbm-checkpoint v1\n4 26\n{}\n{}\n", zeros(4), zeros(26));
    for _ in 0..4 {
        text.push_str(&zeros(26));
        text.push('\n');
    }
    fs::write(&big, text).unwrap();
    let o = run(&["eval", "--checkpoints", big.to_str().unwrap(), "--train-file", data.to_str().unwrap(), "--loglik", "--out-dir", d]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn reconstruct_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let data = fixture("tiny.txt");
    let ckpt = fixture("tiny.rbm");
    let o = ok(run(&[
        "reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--data-file", data.to_str().unwrap(),
        "--corrupt", "labels", "--out-dir", d,
    ]));
    assert!(stdout(&o).contains("records 4 corrupted_bits 2"));
    let report = fs::read_to_string(dir.path().join("reconstruct_labels.txt")).unwrap();
    assert_eq!(report.matches("# record ").count(), 4);
    for (line, orig) in report.lines().filter(|l| l.starts_with("original")).zip(["0001", "1101", "0110", "1010"]) {
        assert!(line.ends_with(orig));
    }
    let restored: Vec<&str> = report.lines().filter(|l| l.starts_with("restored")).collect();
    let originals = ["0001", "1101", "0110", "1010"];
    for (r, o) in restored.iter().zip(originals) {
        assert_eq!(&r.trim_start_matches("restored").trim()[..2], &o[..2], "features are clamped");
    }
}

#[test]
fn reconstruct_block_must_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&[
        "reconstruct", "--checkpoint", fixture("tiny.rbm").to_str().unwrap(),
        "--data-file", fixture("tiny.txt").to_str().unwrap(), "--corrupt", "block16", "--out-dir", d,
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn embed_reports_full_chimera_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(run(&["embed", "--out-dir", dir.path().to_str().unwrap()]));
    let out = stdout(&o);
    assert!(out.contains("visible chain length 16..16"));
    assert!(out.contains("hidden chain length 16..16"));
    assert!(out.contains("qubits used 2048"));
    assert!(out.contains("logical edges mapped 4096 of 4096"));
    let export = fs::read_to_string(dir.path().join("embedding.txt")).unwrap();
    assert_eq!(export.lines().filter(|l| !l.starts_with('#')).count(), 128);
}

#[test]
fn embed_with_dead_qubits_reports_trimming() {
    let dir = tempfile::tempdir().unwrap();
    let dead = dir.path().join("dead.txt");
    fs::write(&dead, "0\n37\n").unwrap();
    let o = ok(run(&["embed", "--m", "4", "--visible", "16", "--hidden", "16", "--dead-file", dead.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]));
    let report = fs::read_to_string(dir.path().join("embedding_report.txt")).unwrap();
    assert_eq!(stdout(&o).lines().next(), report.lines().next());
    assert!(report.contains("2 dead"));
    assert!(!report.contains("trimmed qubits 0"));
}
