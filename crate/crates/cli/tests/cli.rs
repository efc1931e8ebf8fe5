use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn shm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shm")).args(args).env_remove("SHM_OUT_DIR").output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_TRAIN: &[&str] = &[
    "--set", "mode=supervised", "--set", "h=4", "--set", "l=8", "--set", "length=6", "--set", "dataset_size=16",
    "--set", "test_size=8", "--set", "batch=8", "--set", "epochs=2", "--set", "eval_every=1",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--threads", "1", "train", "--out", path_arg(out)];
    args.extend_from_slice(TINY_TRAIN);
    args.extend_from_slice(extra);
    shm(&args)
}

#[test]
fn verify_passes_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = shm(&["verify", "--suite", "scan", "--out", path_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("suite=scan status=pass"));
    assert!(dir.path().join("verify.csv").exists());
    assert!(fs::read_to_string(dir.path().join("manifest.txt")).unwrap().contains("command = verify"));
}

#[test]
fn injected_fault_is_caught_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = shm(&["verify", "--suite", "scan", "--inject-fault", "scan", "--out", path_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("scan case 7"), "{}", text(&o));
}

#[test]
fn usage_errors_exit_two() {
    let o = shm(&["verify", "--suite", "nonsense"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = shm(&["verify", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = shm(&["train", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn diag_writes_six_series_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("diag");
    let o = shm(&[
        "--threads", "2", "diag", "--episodes", "6", "--steps", "12", "--samples", "2000", "--out", path_arg(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let curve = fs::read_to_string(run.join("cumprod_curve.csv")).unwrap();
    let mut variants: Vec<&str> = curve.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    variants.sort();
    variants.dedup();
    assert_eq!(variants.len(), 6, "{variants:?}");
    for f in ["prop3.csv", "prop4.csv", "prop5.csv", "heatmaps/heatmap_M_t12.csv", "heatmaps/heatmap_C_t3.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let out = dir.path().join("export");
    let o = shm(&["export", "--run", path_arg(&run), "--out", path_arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(out.join("curves/cumprod_curve.csv").exists());
    assert!(out.join("heatmaps").read_dir().unwrap().count() >= 8);
}

#[test]
fn exporting_an_empty_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = shm(&["export", "--run", path_arg(dir.path()), "--out", path_arg(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("empty manifest"), "{}", text(&o));
}

#[test]
fn multi_seed_training_exports_a_learning_curve() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    let o = train(&run, &["--seeds", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for s in 0..3 {
        assert!(run.join(format!("report_seed{s}.csv")).exists());
        assert!(run.join(format!("checkpoint_seed{s}.bin")).exists());
    }
    let out = dir.path().join("export");
    let o = shm(&["export", "--run", path_arg(&run), "--out", path_arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let curve = fs::read_to_string(out.join("curves/learning_curve.csv")).unwrap();
    assert!(curve.starts_with("step,metric,mean,std,seeds"));
    assert!(curve.lines().skip(1).all(|l| l.ends_with(",3")), "{curve}");
}

/// FNV-1a; enough to compare files without printing them.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x100000001b3))
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        // Timing files hold wall-clock measurements and are expected to differ.
        .filter(|p| p.is_file() && !p.file_name().unwrap().to_str().unwrap().starts_with("timing_"))
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            let body = if p.file_name().unwrap() == "manifest.txt" {
                String::from_utf8(bytes).unwrap().lines().filter(|l| !l.starts_with("created_unix")).collect::<Vec<_>>().join("\n")
            } else {
                format!("{:x}", fnv1a(&bytes))
            };
            (p.strip_prefix(dir).unwrap().to_path_buf(), body)
        })
        .collect()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(train(&a, &[]).status.code(), Some(0));
    assert_eq!(train(&b, &[]).status.code(), Some(0));
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.len() >= 4);
    assert_eq!(sa, sb);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_shm"))
        .args(["verify", "--suite", "memory"])
        .env("SHM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(dir.path().join("verify/verify.csv").exists());
}

#[test]
fn checkpoint_shape_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("train");
    assert_eq!(train(&run, &[]).status.code(), Some(0));
    let ckpt = run.join("checkpoint_seed0.bin");
    let eval_out = dir.path().join("eval");
    let args = vec!["eval", "--checkpoint", path_arg(&ckpt), "--episodes", "4", "--out", path_arg(&eval_out)];
    let mut wrong = args.clone();
    for pair in TINY_TRAIN.chunks(2) {
        wrong.extend_from_slice(if pair[1] == "h=4" { &["--set", "h=8"] } else { pair });
    }
    let o = shm(&wrong);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("dimension mismatch"), "{}", text(&o));

    let mut right = args;
    right.extend_from_slice(TINY_TRAIN);
    let o = shm(&right);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(eval_out.join("eval.csv").exists());
}

#[test]
fn bench_depth_column_is_logarithmic() {
    let dir = tempfile::tempdir().unwrap();
    let o = shm(&["bench", "--t", "7,64,100", "--h", "4", "--reps", "1", "--out", path_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (ti, di) = (header.iter().position(|c| *c == "t").unwrap(), header.iter().position(|c| *c == "depth").unwrap());
    let mut n = 0;
    for l in lines {
        let cols: Vec<&str> = l.split(',').collect();
        let t: usize = cols[ti].parse().unwrap();
        let depth: u32 = cols[di].parse().unwrap();
        assert_eq!(depth, (t as f64 + 1.0).log2().ceil() as u32, "t = {t}");
        n += 1;
    }
    assert_eq!(n, 3);
}
