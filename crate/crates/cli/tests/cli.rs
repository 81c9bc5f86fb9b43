use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_crffuse");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scene8")
}

fn crffuse(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("CRFFUSE_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = crffuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn zero_weights_reproduce_the_finest_side_output() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("zero.txt");
    fs::write(&params, "model unified\niterations 5\nbetas 0 0 0 0\n").unwrap();
    let cfg = fixtures().join("config.txt");
    let pred = tmp.path().join("pred.pfm");
    ok(&["fuse", "--config", p(&cfg), "--input", p(&fixtures()), "--params", p(&params), "--out", p(&pred)]);
    assert_eq!(fs::read(&pred).unwrap(), fs::read(fixtures().join("side_3.pfm")).unwrap());
    assert!(tmp.path().join("pred.pfm.manifest").exists());
}

#[test]
fn eval_of_identical_maps_is_zeros_and_ones() {
    let gt = fixtures().join("gt.pfm");
    let out = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["rel,rms,log10,rms_sc_inv,delta1,delta2,delta3", "0,0,0,0,1,1,1"]);
}

#[test]
fn eval_pairs_files_in_order() {
    let f = fixtures();
    let out = ok(&[
        "eval",
        "--pred",
        p(&f.join("gt.pfm")),
        "--gt",
        p(&f.join("gt.pfm")),
        "--pred",
        p(&f.join("side_3.pfm")),
        "--gt",
        p(&f.join("gt.pfm")),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_ne!(text.lines().nth(2).unwrap(), "0,0,0,0,1,1,1");
    assert!(!crffuse(&["eval", "--pred", p(&f.join("gt.pfm"))]).status.success());
}

#[test]
fn gradcheck_on_shipped_fixtures_passes() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let worst: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("worst relative error: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(worst < 1e-4, "{worst}");
    assert_eq!(text.lines().count(), 9);
    ok(&["gradcheck", "--fixtures", p(&fixtures())]);
}

#[test]
fn fuse_then_eval_matches_pinned_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let pred = tmp.path().join("pred.pfm");
    let csv = tmp.path().join("metrics.csv");
    ok(&[
        "fuse",
        "--config",
        p(&f.join("config.txt")),
        "--input",
        p(&f),
        "--params",
        p(&f.join("params.txt")),
        "--out",
        p(&pred),
    ]);
    ok(&["eval", "--pred", p(&pred), "--gt", p(&f.join("gt.pfm")), "--out", p(&csv)]);
    assert_eq!(fs::read(&pred).unwrap(), fs::read(f.join("expected_pred.pfm")).unwrap());
    assert_eq!(fs::read_to_string(&csv).unwrap(), fs::read_to_string(f.join("expected_metrics.csv")).unwrap());
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "model = cascade\nscales = 2\n[synth]\nwidth = 12\nheight = 10\n");
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        ok(&["synth", "--config", p(&cfg), "--seed", seed, "--out", p(&dir)]);
        ["image.ppm", "gt.pfm", "side_1.pfm", "side_2.pfm"].map(|f| fs::read(dir.join(f)).unwrap())
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    assert_ne!(a, run("c", "6"));
    assert!(!tmp.path().join("a/side_3.pfm").exists());
}

#[test]
fn seed_environment_variable_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "model = unified\nseed = 1\n[synth]\nwidth = 8\nheight = 8\n");
    let synth = |name: &str, flag: Option<&str>, env: Option<&str>| {
        let dir = tmp.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args(["synth", "--config", p(&cfg), "--out", p(&dir)]).env_remove("CRFFUSE_SEED");
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        if let Some(s) = env {
            cmd.env("CRFFUSE_SEED", s);
        }
        assert!(cmd.status().unwrap().success());
        fs::read(dir.join("gt.pfm")).unwrap()
    };
    let config_seed = synth("cfg", None, None);
    let flag_seed = synth("flag", Some("9"), None);
    assert_ne!(config_seed, flag_seed);
    assert_eq!(synth("env", Some("1"), Some("9")), flag_seed);
    assert_eq!(synth("explicit", Some("1"), None), config_seed);
    let manifest = fs::read_to_string(tmp.path().join("env/manifest.txt")).unwrap();
    assert!(manifest.contains("\nseed = 9\n"));
}

#[test]
fn train_writes_params_that_fuse_accepts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "model = cascade\nbackend = exact\nscales = 2\n[train]\nepochs = 2\nbatch_size = 2\nscenes = 3\n[synth]\nwidth = 8\nheight = 8\n",
    );
    let out = tmp.path().join("trained");
    ok(&["train", "--config", p(&cfg), "--out", p(&out)]);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines[0], "step,epoch,loss");
    // 3 scenes in batches of 2 is two steps per epoch
    assert_eq!(lines.len(), 1 + 4);
    assert!(fs::read_to_string(out.join("params.txt")).unwrap().starts_with("model cascade\n"));

    let scene = tmp.path().join("scene");
    ok(&["synth", "--config", p(&cfg), "--out", p(&scene)]);
    let pred = tmp.path().join("pred.pfm");
    let params = out.join("params.txt");
    ok(&["fuse", "--config", p(&cfg), "--input", p(&scene), "--params", p(&params), "--out", p(&pred)]);

    // the same scenes loaded from disk train identically
    let data = tmp.path().join("data");
    for k in 0..3 {
        let seed = k.to_string();
        ok(&["synth", "--config", p(&cfg), "--seed", &seed, "--out", p(&data.join(format!("s{k}")))]);
    }
    let from_disk = tmp.path().join("disk");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&from_disk)]);
    assert!(fs::read_to_string(from_disk.join("loss.csv")).unwrap().lines().count() == 5);
}

#[test]
fn bench_filter_writes_one_row_per_size_and_backend() {
    let out = ok(&["bench-filter", "--sizes", "8,12"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["size", "backend", "seconds", "rel_error"]);
    assert_eq!(rows.len(), 5);
    assert_eq!((rows[1][0], rows[1][1], rows[2][1]), ("8", "exact", "lattice"));
    let rel: f64 = rows[2][3].parse().unwrap();
    assert!(rel > 0.0 && rel < 0.5, "{rel}");
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = crffuse(&["blend"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(!crffuse(&["synth", "somewhere"]).status.success());
    assert!(!crffuse(&["synth", "-o", "x"]).status.success());
    assert!(!crffuse(&[]).status.success());
}

#[test]
fn malformed_inputs_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["image.ppm", "side_1.pfm", "side_2.pfm", "side_3.pfm"] {
        fs::copy(fixtures().join(f), tmp.path().join(f)).unwrap();
    }
    fs::write(tmp.path().join("side_2.pfm"), b"Pf\n8 8\n-1.0\nshort").unwrap();
    let out = crffuse(&["fuse", "--input", p(tmp.path()), "--out", p(&tmp.path().join("pred.pfm"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("side_2.pfm"));

    let cfg = write_config(tmp.path(), "model = unified\ncolour = red\n");
    let out = crffuse(&["synth", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.cfg"));
}

#[test]
fn mismatched_params_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("c.txt");
    fs::write(&params, "model cascade\niterations 5 5 5\nbetas 0 0\nbetas 0 0\nbetas 0 0\n").unwrap();
    let out = crffuse(&[
        "fuse",
        "--input",
        p(&fixtures()),
        "--params",
        p(&params),
        "--out",
        p(&tmp.path().join("pred.pfm")),
    ]);
    assert!(!out.status.success());
}
