use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_everywhere"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and a one-epoch zoo, shared by the tests in this file.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let zoo = root.join("zoo");
    ok(&["gen-data", "--count", "60", "--seed", "4", "--out", s(&data)]);
    ok(&["train", "--data", s(&data), "--test-data", s(&data), "--epochs", "1", "--out", s(&zoo)]);
    (data, zoo)
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let (data, zoo) = fixture(dir.path());
    let names: Vec<String> = ["plain", "residual", "wide"].iter().map(|n| format!("{n}.ewm")).collect();
    for n in &names {
        assert!(zoo.join(n).is_file());
    }
    let manifest = fs::read_to_string(zoo.join("zoo.json")).unwrap();
    for a in ["plain", "residual", "wide"] {
        assert!(manifest.contains(&format!("\"arch\": \"{a}\"")));
    }

    let quick = ["--iterations", "2", "--partitions", "2", "--samples", "1"];
    let eval = dir.path().join("eval");
    let mut args = vec!["eval", "--zoo", s(&zoo), "--data", s(&data), "--images", "2", "--out", s(&eval)];
    args.extend(quick);
    ok(&args);
    let csv = fs::read_to_string(eval.join("transfer.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "surrogate,victim,attack,loss,mode,n_blocks,m_partitions,epsilon,successes,total,rate"
    );
    assert!(lines.all(|l| l.split(',').count() == 11));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(run["seed"], 0);

    let cov = dir.path().join("cov");
    let mut args = vec![
        "coverage", "--zoo", s(&zoo), "--data", s(&data), "--surrogate", "plain", "--images", "3", "--out", s(&cov),
    ];
    args.extend(quick);
    ok(&args);
    let text = fs::read_to_string(cov.join("coverage.csv")).unwrap();
    let own: Vec<&str> = text.lines().filter(|l| l.starts_with("plain,")).collect();
    assert_eq!(own.len(), 2);
    for l in own {
        let cols: Vec<&str> = l.split(',').collect();
        if cols[3] != "0" {
            assert_eq!(cols[2], "1.0", "{l}");
        }
    }

    let abl = dir.path().join("abl");
    let mut args = vec![
        "ablate", "--zoo", s(&zoo), "--data", s(&data), "--values", "0,1", "--images", "2", "--out", s(&abl),
    ];
    args.extend(quick);
    ok(&args);
    for n in ["plain", "residual", "wide"] {
        let curve = fs::read_to_string(abl.join(format!("curve_{n}.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 3, "{curve}");
        assert_eq!(curve.lines().next().unwrap(), "value,rate");
    }

    let uap = dir.path().join("uap");
    let mut args = vec![
        "dtuap", "--zoo", s(&zoo), "--data", s(&data), "--targets", "1,2", "--images", "10", "--out", s(&uap),
    ];
    args.extend(quick);
    ok(&args);
    assert_eq!(fs::read_to_string(uap.join("uap.csv")).unwrap().lines().count(), 1 + 3 * 2 * 2);
    let audit = ok(&["audit", s(&uap)]);
    assert!(audit.starts_with("PASS"));
}

#[test]
fn attack_outputs_pass_the_audit_and_match_baseline_at_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (data, zoo) = fixture(dir.path());
    let common = ["attack", "--zoo", s(&zoo), "--data", s(&data), "--images", "4", "--iterations", "3"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args = common.to_vec();
    args.extend(["--samples", "0", "--out", s(&a)]);
    ok(&args);
    // Partition count is irrelevant once no block is sampled.
    let mut args = common.to_vec();
    args.extend(["--samples", "0", "--partitions", "2", "--out", s(&b)]);
    ok(&args);
    for i in 0..4 {
        let f = format!("adv_{i:05}.png");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["images"].as_array().unwrap().len(), 4);
    assert!(ok(&["audit", s(&a)]).starts_with("PASS"));

    // Tamper with one output; the audit must now fail with a runtime error.
    let f = a.join("adv_00000.png");
    let mut img = image::open(&f).unwrap().to_rgb8();
    let clean = image::open(a.join("clean_00000.png")).unwrap().to_rgb8();
    let p = clean.get_pixel(0, 0)[0];
    img.get_pixel_mut(0, 0)[0] = if p > 127 { p - 40 } else { p + 40 };
    img.save(&f).unwrap();
    let o = run(&["audit", s(&a)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (data, zoo) = fixture(dir.path());
    let zoo2 = dir.path().join("zoo2");
    ok(&["train", "--data", s(&data), "--test-data", s(&data), "--epochs", "1", "--out", s(&zoo2)]);
    for f in ["plain.ewm", "residual.ewm", "wide.ewm", "zoo.json", "train_report.json"] {
        assert_eq!(fs::read(zoo.join(f)).unwrap(), fs::read(zoo2.join(f)).unwrap(), "{f}");
    }
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("e{i}"))).collect();
    for (i, o) in outs.iter().enumerate() {
        let jobs = if i == 0 { "1" } else { "2" };
        ok(&[
            "eval", "--zoo", s(&zoo), "--data", s(&data), "--images", "3", "--iterations", "2", "--samples", "1",
            "--partitions", "2", "--jobs", jobs, "--out", s(o),
        ]);
    }
    for f in ["transfer.csv", "run.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (data, zoo) = fixture(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "iterations = 2\nsamples = 3\npartitions = 2\nimages = 2\n").unwrap();
    let out = dir.path().join("o");
    ok(&[
        "eval", "--config", s(&cfg), "--zoo", s(&zoo), "--data", s(&data), "--samples", "1", "--out", s(&out),
    ]);
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["settings"]["iterations"], "2");
    assert_eq!(run["settings"]["samples"], "1");
    assert_eq!(run["settings"]["alpha"], "2.0");
}

#[test]
fn config_errors_exit_2_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cases: Vec<Vec<String>> = vec![
        vec!["train".into(), "--data".into(), s(&dir.path().join("missing")).into()],
        vec!["eval".into(), "--zoo".into(), "nowhere".into(), "--data".into(), "nowhere".into()],
        vec!["gen-data".into(), "--count".into(), "0".into()],
        vec!["gen-data".into(), "--set".into(), "bogus=1".into()],
        vec!["gen-data".into(), "--set".into(), "iterations=x".into()],
    ];
    for args in cases {
        let mut full = args.clone();
        full.extend(["--out".into(), s(&out).into()]);
        let o = bin().args(&full).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        assert_eq!(err["kind"], "config");
        assert!(!out.exists(), "{args:?} created output");
    }
}

#[test]
fn invalid_attack_settings_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (data, zoo) = fixture(dir.path());
    let out = dir.path().join("x");
    for bad in [["--samples", "17"], ["--loss", "Hinge"], ["--epsilon", "-1"]] {
        let o = run(&["attack", "--zoo", s(&zoo), "--data", s(&data), bad[0], bad[1], "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
        assert!(!out.exists());
    }
    let o = run(&["attack", "--zoo", s(&zoo), "--data", s(&data), "--surrogate", "vit", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_defaults_to_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("EVERYWHERE_OUT", dir.path())
        .args(["gen-data", "--count", "3"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("data").join("labels.csv").is_file());
}
