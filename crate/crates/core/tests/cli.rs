use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
tag = "tiny"
[market]
days = 8
[training]
epochs = 12
pretrain_epochs = 4
batch_size = 32
heldout_size = 128
heldout_every = 6
hidden = 6
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_buyback"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    (dir, cfg)
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn train_writes_all_outputs() {
    let (dir, _) = setup(TINY);
    let o = run(dir.path(), &["train", "run.toml", "--quiet", "--out", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let curve = read(out.join("learning_curve.csv"));
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("epoch,phase,J,J_normalized,J_heldout"));
    assert_eq!(lines.count(), 12);
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    for key in ["mean", "variance", "J", "J_normalized"] {
        assert!(report[key].is_f64(), "{key}");
    }
    assert!(read(out.join("model.ckpt")).contains("fixed-shares"));
    assert!(read(out.join("manifest.toml")).contains("command = \"train\""));
}

#[test]
fn zero_epochs_reports_the_untrained_policy() {
    let (dir, _) = setup(&TINY.replace("epochs = 12\npretrain_epochs = 4", "epochs = 0\npretrain_epochs = 0"));
    let o = run(dir.path(), &["train", "run.toml", "--quiet", "--out", "out"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(dir.path().join("out/learning_curve.csv")).lines().count(), 1);
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    for text in ["[market\n", "[market]\neta = -0.1\n", "[training]\nepochs = 1\npretrain_epochs = 5\n", "nonsense = 3\n"] {
        let (dir, _) = setup(text);
        let o = run(dir.path(), &["train", "run.toml", "--out", "out"]);
        assert_eq!(code(&o), 2, "{text}");
        assert!(!dir.path().join("out").exists());
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    let (dir, _) = setup(TINY);
    assert_eq!(code(&run(dir.path(), &["train", "missing.toml"])), 2);
    assert_eq!(code(&run(dir.path(), &["train"])), 2);
}

#[test]
fn manifests_reproduce_outputs_bit_identically() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--out", "a"])), 0);
    assert_eq!(code(&run(d, &["rerun", "a/manifest.toml", "--quiet", "--out", "b"])), 0);
    for f in ["learning_curve.csv", "model.ckpt", "report.json"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }

    assert_eq!(code(&run(d, &["simulate-paths", "run.toml", "--count", "5", "--out", "p"])), 0);
    assert_eq!(code(&run(d, &["rerun", "p/manifest.toml", "--out", "q"])), 0);
    assert_eq!(read(d.join("p/paths.csv")), read(d.join("q/paths.csv")));

    let args = ["trajectory-report", "run.toml", "--checkpoint", "a/model.ckpt", "--kind", "v-shape", "--out", "t"];
    assert_eq!(code(&run(d, &args)), 0);
    assert_eq!(code(&run(d, &["rerun", "t/manifest.toml", "--out", "u"])), 0);
    assert_eq!(read(d.join("t/trace.csv")), read(d.join("u/trace.csv")));

    let sweep = ["sweep", "run.toml", "--param", "eta", "--values", "0.05,0.2", "--restarts", "2", "--quiet", "--out", "s"];
    assert_eq!(code(&run(d, &sweep)), 0);
    assert_eq!(code(&run(d, &["rerun", "s/manifest.toml", "--quiet", "--out", "s2"])), 0);
    assert_eq!(read(d.join("s/sweep.csv")), read(d.join("s2/sweep.csv")));
    assert_eq!(read(d.join("s/eta-0.2/model.ckpt")), read(d.join("s2/eta-0.2/model.ckpt")));
}

#[test]
fn thread_count_does_not_change_results() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    for (threads, out) in [("1", "one"), ("4", "four")] {
        let o = bin()
            .current_dir(d)
            .env("BUYBACK_THREADS", threads)
            .args(["train", "run.toml", "--quiet", "--out", out])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
    }
    assert_eq!(read(d.join("one/learning_curve.csv")), read(d.join("four/learning_curve.csv")));
    let o = bin()
        .current_dir(d)
        .env("BUYBACK_THREADS", "zero")
        .args(["train", "run.toml", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_override_is_recorded() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--out", "a"])), 0);
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--seed", "9", "--out", "b"])), 0);
    assert!(read(d.join("b/manifest.toml")).contains("seed = 9"));
    assert_ne!(read(d.join("a/model.ckpt")), read(d.join("b/model.ckpt")));
}

#[test]
fn single_value_sweep_equals_train() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--out", "t"])), 0);
    let sweep = ["sweep", "run.toml", "--param", "gamma", "--values", "2.5e-7", "--restarts", "1", "--quiet", "--out", "s"];
    assert_eq!(code(&run(d, &sweep)), 0);
    let rows = read(d.join("s/sweep.csv"));
    assert_eq!(rows.lines().count(), 2);
    assert_eq!(rows.lines().next(), Some("param,value,J_normalized"));
    let sub = d.join("s/gamma-0.00000025");
    assert_eq!(read(d.join("t/model.ckpt")), read(sub.join("model.ckpt")));
    assert_eq!(read(d.join("t/learning_curve.csv")), read(sub.join("learning_curve.csv")));
}

#[test]
fn trajectory_report_checks_the_checkpoint() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--out", "a"])), 0);
    std::fs::write(d.join("ps.toml"), TINY.replace("[training]", "[contract]\nkind = \"profit-sharing\"\n[training]")).unwrap();
    let o = run(d, &["trajectory-report", "ps.toml", "--checkpoint", "a/model.ckpt", "--kind", "down", "--out", "x"]);
    assert_eq!(code(&o), 3);
    std::fs::write(d.join("bad.ckpt"), "not a checkpoint").unwrap();
    let o = run(d, &["trajectory-report", "run.toml", "--checkpoint", "bad.ckpt", "--kind", "up", "--out", "x"]);
    assert_eq!(code(&o), 3);
    let o = run(d, &["trajectory-report", "run.toml", "--kind", "up", "--out", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn naive_trace_buys_pro_rata() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    let o = run(d, &["trajectory-report", "run.toml", "--policy", "naive", "--kind", "up", "--out", "n"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(d.join("n/trace.csv")).unwrap();
    let mut days = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let day: f64 = rec[1].parse().unwrap();
        let inventory: f64 = rec[4].parse().unwrap();
        assert!((inventory - day * 2e7 / 8.0).abs() < 1e-6, "{rec:?}");
        days += 1;
    }
    assert_eq!(days, 9);
}

#[test]
fn trajectory_report_reads_path_files() {
    let (dir, _) = setup(&TINY.replace("days = 8", "days = 2"));
    let d = dir.path();
    std::fs::write(d.join("p.csv"), "path_id,day,price\n0,0,45\n0,1,46\n0,2,44\n3,0,45\n3,2,43\n3,1,44\n").unwrap();
    let o = run(d, &["trajectory-report", "run.toml", "--policy", "hedged-naive", "--kind", "file", "--path-file", "p.csv", "--out", "f"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read(d.join("f/trace.csv"));
    assert_eq!(trace.lines().count(), 7);
    std::fs::write(d.join("short.csv"), "path_id,day,price\n0,0,45\n0,1,46\n").unwrap();
    let o = run(d, &["trajectory-report", "run.toml", "--policy", "naive", "--kind", "file", "--path-file", "short.csv", "--out", "g"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn domain_errors_exit_4() {
    let (dir, _) = setup(
        "[market]\ns0 = 1.0\nsigma = 3.0\ndays = 10\n[contract]\nkind = \"fixed-notional\"\n[training]\nheldout_size = 256\n",
    );
    let o = run(dir.path(), &["evaluate", "run.toml", "--policy", "naive", "--out", "e"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_reproduces_the_training_report() {
    let (dir, _) = setup(TINY);
    let d = dir.path();
    assert_eq!(code(&run(d, &["train", "run.toml", "--quiet", "--out", "a"])), 0);
    let o = run(d, &["evaluate", "run.toml", "--checkpoint", "a/model.ckpt", "--out", "e"]);
    assert_eq!(code(&o), 0);
    let train: serde_json::Value = serde_json::from_str(&read(d.join("a/report.json"))).unwrap();
    let eval: serde_json::Value = serde_json::from_str(&read(d.join("e/report.json"))).unwrap();
    assert_eq!(train["J"], eval["J"]);
    let o = run(d, &["evaluate", "run.toml", "--policy", "hedged-naive", "--mode", "sampled", "--paths", "64", "--out", "h"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn self_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["grad-check", "--seeds", "6", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(read(d.join("g/grad_check.jsonl")).lines().count(), 6);
    let o = run(d, &["oracle-check", "--paths", "20000", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    for line in read(d.join("o/oracle_checks.jsonl")).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["passed"], true, "{line}");
    }
}
