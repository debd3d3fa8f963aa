use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &[&str] = &[
    "max_steps=30",
    "val_batches=16",
    "warmup=32",
    "eval_every=10",
    "lossnet_width=16",
    "lossnet_depth=1",
    "descent_starts=8",
    "descent_steps=20",
    "descent_every=5",
    "epochs=2",
    "blob_train=256",
    "blob_val=128",
    "eval_samples=20",
];

fn surrogate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surrogate"))
        .args(args)
        .output()
        .unwrap()
}

/// Runs a subcommand with the tiny budget and `extra` settings.
fn tiny(cmd: &[&str], out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
    args.extend(["--out".into(), out.display().to_string()]);
    for kv in TINY.iter().chain(extra) {
        args.extend(["--set".into(), kv.to_string()]);
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    surrogate(&refs)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

/// Every file under `dir` except `config.txt` (which records the output
/// path), relative path and contents, sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "config.txt" {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn assert_no_nan(dir: &Path) {
    for (path, bytes) in snapshot(dir) {
        if path.extension().is_some_and(|e| e == "csv" || e == "txt") {
            let text = String::from_utf8(bytes).unwrap();
            assert!(
                !text.to_lowercase().contains("nan"),
                "{} contains NaN",
                path.display()
            );
        }
    }
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(k).unwrap().to_string())
        .collect()
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&surrogate(&[])), 2);
    assert_eq!(code(&surrogate(&["frobnicate"])), 2);
    assert_eq!(
        code(&surrogate(&["synthetic", "--out", out, "--set", "bogus=1"])),
        2
    );
    assert_eq!(
        code(&surrogate(&[
            "synthetic",
            "--out",
            out,
            "--set",
            "no-equals"
        ])),
        2
    );
    assert_eq!(
        code(&surrogate(&["synthetic", "--out", out, "--seed", ""])),
        2
    );
    assert_eq!(code(&surrogate(&["sweep", "sideways", "--out", out])), 2);
    assert_eq!(
        code(&surrogate(&["corr-eval", "--out", out, "--samples", "2"])),
        2
    );
}

#[test]
fn empty_sweep_grids_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(
        code(&tiny(&["sweep", "capacity"], tmp.path(), &["widths="])),
        2
    );
    assert_eq!(
        code(&tiny(&["sweep", "levels"], tmp.path(), &["levels="])),
        2
    );
}

#[test]
fn io_errors_exit_three() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.cfg");
    let o = surrogate(&["synthetic", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&tiny(&["synthetic"], &blocker.join("out"), &[])), 3);
    let bad = tmp.path().join("nothing.reloss");
    let o = tiny(
        &["corr-eval", "--loss", bad.to_str().unwrap()],
        &tmp.path().join("o"),
        &[],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn gradcheck_passes_and_is_stable() {
    let a = ok(surrogate(&["gradcheck"]));
    let b = ok(surrogate(&["gradcheck"]));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("all gradient checks passed"));
    assert!(text.contains("gradient_penalty"));
}

#[test]
fn corrupted_elu_fails_verification() {
    let o = surrogate(&["gradcheck", "--corrupt-elu"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("elu"));
}

#[test]
fn zero_steps_write_only_step_zero_rows() {
    let tmp = TempDir::new().unwrap();
    ok(tiny(
        &["synthetic"],
        tmp.path(),
        &["max_steps=0", "descent_steps=0"],
    ));
    for name in ["fig2b.csv", "fig2c.csv"] {
        let text = fs::read_to_string(tmp.path().join("seed-0").join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2, "{name}: {text}");
        assert_eq!(lines[0], "step,direct,approximation,correlation");
        assert!(lines[1].starts_with("0,"));
    }
}

#[test]
fn synthetic_is_reproducible_and_parallel_matches_sequential() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    ok(tiny(&["synthetic", "--seed", "0,1"], &a, &[]));
    ok(tiny(&["synthetic", "--seed", "0,1"], &b, &[]));
    ok(tiny(&["synthetic", "--seed", "0,1", "--parallel"], &c, &[]));
    let sa = snapshot(&a);
    assert_eq!(sa, snapshot(&b));
    assert_eq!(sa, snapshot(&c));
    assert_no_nan(&a);
    for f in [
        "fig2b.csv",
        "fig2c.csv",
        "correlation.reloss",
        "approximation.reloss",
        "correlation_log.csv",
    ] {
        assert!(a.join("seed-1").join(f).exists(), "{f}");
    }
    let steps = csv_column(&a.join("seed-0/correlation_log.csv"), "step");
    assert_eq!(steps.len(), 30);
    assert!(
        csv_column(&a.join("seed-0/correlation_log.csv"), "elapsed_ms")
            .iter()
            .all(|v| v == "0")
    );
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "max_steps = 0\ndescent_steps = 0\nseed = 4\n").unwrap();
    let out = tmp.path().join("o");
    ok(surrogate(&[
        "synthetic",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "2",
    ]));
    assert!(out.join("seed-2/fig2b.csv").exists());
    assert!(!out.join("seed-4").exists());
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.lines().any(|l| l.replace(' ', "") == "max_steps=0"));
}

#[test]
fn corr_eval_reference_losses() {
    let tmp = TempDir::new().unwrap();
    let read = |loss: &str| {
        let out = tmp.path().join(loss);
        ok(tiny(
            &["corr-eval", "--loss", loss, "--samples", "200"],
            &out,
            &[],
        ));
        let file = out.join("corr_eval.csv");
        let s: f64 = csv_column(&file, "spearman")[0].parse().unwrap();
        let k: f64 = csv_column(&file, "kendall")[0].parse().unwrap();
        (s, k)
    };
    let (s, k) = read("negated-metric");
    assert!((s + 1.0).abs() <= 1e-6, "{s}");
    assert!(k < -0.8, "{k}");
    assert_eq!(read("constant"), (0.0, 0.0));
    // flat random probability vectors make CE only weakly informative
    let (s, _) = read("ce");
    assert!(s < 0.0, "{s}");
}

#[test]
fn trained_loss_feeds_corr_eval_and_train_model() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("loss");
    ok(tiny(&["train-loss"], &out, &[]));
    let ckpt = out.join("seed-0/reloss.reloss");
    assert!(ckpt.exists());
    assert!(out.join("seed-0/dumps/epoch-2.csv").exists());
    let eval = tmp.path().join("eval");
    ok(tiny(
        &["corr-eval", "--loss", ckpt.to_str().unwrap()],
        &eval,
        &[],
    ));
    let dumps: Vec<String> = (0..=2)
        .map(|e| {
            out.join(format!("seed-0/dumps/epoch-{e}.csv"))
                .display()
                .to_string()
        })
        .collect();
    let with_dumps = format!("dump_paths={}", dumps.join(","));
    ok(tiny(
        &["corr-eval", "--loss", "ce", "--samples", "200"],
        &eval,
        &[&with_dumps],
    ));
    let s: f64 = csv_column(&eval.join("corr_eval.csv"), "spearman")[0]
        .parse()
        .unwrap();
    assert!(s < -0.5, "{s}");
    let model = tmp.path().join("model");
    ok(tiny(
        &["train-model", "--loss", ckpt.to_str().unwrap()],
        &model,
        &[],
    ));
    assert_eq!(
        csv_column(&model.join("toy_classification.csv"), "loss").len(),
        5
    );
}

#[test]
fn train_model_report_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(tiny(&["train-model"], &a, &[]));
    ok(tiny(&["train-model"], &b, &[]));
    let report = fs::read(a.join("toy_classification.csv")).unwrap();
    assert_eq!(report, fs::read(b.join("toy_classification.csv")).unwrap());
    let text = String::from_utf8(report).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "seed,loss,accuracy,spearman,kendall"
    );
    let losses = csv_column(&a.join("toy_classification.csv"), "loss");
    assert_eq!(losses, ["ce", "reloss", "ce+reloss", "approx", "rankloss"]);
    assert_no_nan(&a);
}

#[test]
fn capacity_sweep_reports_parameter_counts() {
    let tmp = TempDir::new().unwrap();
    ok(tiny(
        &["sweep", "capacity"],
        tmp.path(),
        &["widths=16,128", "depths=3"],
    ));
    let counts = csv_column(&tmp.path().join("sweep_capacity.csv"), "param_count");
    assert!(counts.contains(&"33409".to_string()), "{counts:?}");
    assert_no_nan(tmp.path());
}
