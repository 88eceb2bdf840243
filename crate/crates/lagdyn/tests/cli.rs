use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lagdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagdyn")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    out
}

/// Six short oracle sequences plus a small trained checkpoint.
fn fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let gen = lagdyn(&[
        "generate-oracle",
        "--sequences",
        "6",
        "--frames",
        "120",
        "--min-segment",
        "30",
        "--seed",
        "3",
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(code(&gen), 0, "{gen:?}");
    let data = out.join("oracle.jsonl");
    let train = lagdyn(&[
        "train-dynamics",
        "--data",
        s(&data),
        "--output-dir",
        s(&out),
        "--epochs",
        "2",
        "--hidden",
        "8,8",
        "--channels",
        "4",
        "--stages",
        "2",
        "--pad-replicate",
        "true",
    ]);
    assert_eq!(code(&train), 0, "{train:?}");
    (dir, data, out)
}

#[test]
fn pipeline_writes_the_declared_formats() {
    let (_dir, data, out) = fixture();
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,l_torque,l_ec,mean_abs_residual,lambda_ec"));
    assert_eq!(lines.count(), 2);
    assert!(out.join("checkpoint.json").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["holdout"]["sequences"], 1);

    let ckpt = out.join("checkpoint.json");
    for extra in [vec![], vec!["--checkpoint", s(&ckpt)]] {
        let mut args = vec![
            "energy-audit",
            "--data",
            s(&data),
            "--output-dir",
            s(&out),
            "--sequence",
            "2",
            "--pad-replicate",
            "true",
        ];
        args.extend(&extra);
        assert_eq!(code(&lagdyn(&args)), 0);
        let audit = fs::read_to_string(out.join("energy_audit.csv")).unwrap();
        assert!(audit.starts_with("t,E_K,ΔE_K,P,W,r_E,mask\n"));
        assert_eq!(audit.lines().count(), 121);
    }

    let sig = lagdyn(&["signals", "--data", s(&data), "--output-dir", s(&out), "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&sig), 0);
    let table = fs::read_to_string(out.join("signals.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "t,g_P,g_τ,g_τ̇,gate0_P,gate0_τ,gate0_τ̇,gate1_P,gate1_τ,gate1_τ̇"
    );

    let seg = lagdyn(&[
        "segment-boundaries",
        "--data",
        s(&data),
        "--output-dir",
        s(&out),
        "--pad-replicate",
        "true",
    ]);
    assert_eq!(code(&seg), 0);
    let found: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out.join("boundaries.json")).unwrap()).unwrap();
    assert!(!found.is_empty());
    assert!(found.iter().all(|b| b["frame"].is_u64() && b["prominence"].as_f64().unwrap() > 0.0));
}

#[test]
fn commands_are_idempotent_and_stay_in_the_output_dir() {
    let (dir, data, out) = fixture();
    let before = files_under(dir.path());
    let args = ["energy-audit", "--data", s(&data), "--output-dir", s(&out), "--sequence", "1"];
    assert_eq!(code(&lagdyn(&args)), 0);
    let first = fs::read(out.join("energy_audit.csv")).unwrap();
    assert_eq!(code(&lagdyn(&args)), 0);
    assert_eq!(fs::read(out.join("energy_audit.csv")).unwrap(), first);
    assert_eq!(files_under(dir.path()), before);
}

#[test]
fn training_is_reproducible_and_binary_checkpoints_load() {
    let (_dir, data, out) = fixture();
    let again = out.join("again");
    let train = lagdyn(&[
        "train-dynamics",
        "--data",
        s(&data),
        "--output-dir",
        s(&again),
        "--epochs",
        "2",
        "--hidden",
        "8,8",
        "--channels",
        "4",
        "--stages",
        "2",
        "--pad-replicate",
        "true",
        "--binary",
    ]);
    assert_eq!(code(&train), 0);
    assert_eq!(
        fs::read(out.join("metrics.csv")).unwrap(),
        fs::read(again.join("metrics.csv")).unwrap()
    );
    let a = lagdyn(&[
        "energy-audit",
        "--data",
        s(&data),
        "--output-dir",
        s(&out),
        "--checkpoint",
        s(&out.join("checkpoint.json")),
    ]);
    let b = lagdyn(&[
        "energy-audit",
        "--data",
        s(&data),
        "--output-dir",
        s(&again),
        "--checkpoint",
        s(&again.join("checkpoint.bin")),
    ]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(
        fs::read(out.join("energy_audit.csv")).unwrap(),
        fs::read(again.join("energy_audit.csv")).unwrap()
    );
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# small run\nseed = 4\noutput_dir = ignored\n").unwrap();
    let out = dir.path().join("chosen");
    let gen = lagdyn(&[
        "generate-oracle",
        "--config",
        s(&cfg),
        "--output-dir",
        s(&out),
        "--sequences",
        "2",
        "--frames",
        "90",
        "--min-segment",
        "30",
    ]);
    assert_eq!(code(&gen), 0, "{gen:?}");
    assert!(out.join("oracle.jsonl").exists());
    assert!(!dir.path().join("ignored").exists());
    let other = dir.path().join("other");
    lagdyn(&[
        "generate-oracle",
        "--output-dir",
        s(&other),
        "--seed",
        "4",
        "--sequences",
        "2",
        "--frames",
        "90",
        "--min-segment",
        "30",
    ]);
    assert_eq!(
        fs::read(out.join("oracle.jsonl")).unwrap(),
        fs::read(other.join("oracle.jsonl")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&lagdyn(&["validate", "--epochs", "many"])), 2);
    assert_eq!(code(&lagdyn(&["validate", "--data", "/no/such/file.jsonl"])), 2);
    let bad_cfg = dir.path().join("bad.conf");
    fs::write(&bad_cfg, "not a key value line\n").unwrap();
    assert_eq!(code(&lagdyn(&["validate", "--config", s(&bad_cfg)])), 2);
    let corrupt = dir.path().join("corrupt.jsonl");
    fs::write(&corrupt, "{\"chain\": 1}\n").unwrap();
    assert_eq!(code(&lagdyn(&["validate", "--data", s(&corrupt)])), 3);
    assert_eq!(code(&lagdyn(&["eval", "--predicted", s(&corrupt), "--truth", s(&corrupt)])), 3);
    assert_eq!(
        code(&lagdyn(&[
            "gradcheck",
            "--hidden",
            "16,16",
            "--channels",
            "4",
            "--tolerance",
            "1e-30"
        ])),
        4
    );
    assert_eq!(code(&lagdyn(&["gradcheck", "--hidden", "16,16", "--channels", "4"])), 0);
    assert_eq!(code(&lagdyn(&["validate"])), 0);
}

#[test]
fn eval_prints_the_fixed_table() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, "frame,label\n0,0\n1,0\n2,1\n3,1\n").unwrap();
    fs::write(&b, "frame,label\n0,0\n1,1\n2,1\n3,1\n").unwrap();
    let same = lagdyn(&["eval", "--predicted", s(&a), "--truth", s(&a)]);
    assert_eq!(code(&same), 0);
    let text = stdout(&same);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0].split_whitespace().collect::<Vec<_>>(),
        ["Acc", "Edit", "F1@10", "F1@25", "F1@50"]
    );
    assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["100.00"; 5]);
    let diff = stdout(&lagdyn(&["eval", "--predicted", s(&a), "--truth", s(&b)]));
    assert_eq!(
        diff.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>(),
        ["75.00", "100.00", "100.00", "100.00", "50.00"]
    );
}

#[test]
fn coords_from_a_planar_skeleton() {
    let dir = TempDir::new().unwrap();
    let topo = dir.path().join("topology.json");
    fs::write(
        &topo,
        r#"{"joints":["pelvis","spine","neck","rhip","rknee","lhip"],"parents":[-1,0,1,0,3,0],"frame_joints":["pelvis","spine","rhip","lhip"],"dim":2}"#,
    )
    .unwrap();
    let mut poses = String::new();
    for t in 0..5 {
        // the neck bone turns 0.1 rad per frame relative to a vertical spine
        let a = 0.1 * t as f64;
        poses.push_str(&format!(
            "{{\"t\":{t},\"xyz\":[[0,0],[0,1],[{},{}],[0.3,-0.2],[0.3,-1.0],[-0.3,-0.2]]}}\n",
            a.sin(),
            1.0 + a.cos()
        ));
    }
    let pose_path = dir.path().join("poses.jsonl");
    fs::write(&pose_path, poses).unwrap();
    let out = dir.path().join("out");
    let run = lagdyn(&[
        "coords",
        "--poses",
        s(&pose_path),
        "--topology",
        s(&topo),
        "--output-dir",
        s(&out),
        "--pad-replicate",
        "true",
    ]);
    assert_eq!(code(&run), 0, "{run:?}");
    let table = fs::read_to_string(out.join("coords.csv")).unwrap();
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(table.lines().next().unwrap(), "t,q0,q1,q2,qd0,qd1,qd2,qdd0,qdd1,qdd2");
    assert_eq!(rows.len(), 5);
    for t in 1..5 {
        assert!((rows[t][4] - rows[t - 1][4]).abs() < 1e-12, "root angle is constant");
        let step: f64 = (1..4).map(|j| (rows[t][j] - rows[t - 1][j]).abs()).sum();
        assert!((step - 0.1).abs() < 1e-9, "frame {t}: {step}");
    }
    let missing = lagdyn(&["coords", "--poses", s(&pose_path), "--output-dir", s(&out)]);
    assert_eq!(code(&missing), 2);
}
