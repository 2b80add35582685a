use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use heatpose::net::{Network, NetworkConfig};
use tempfile::TempDir;

fn heatpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatpose")).args(args).env_remove("HEATPOSE_THREADS").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = heatpose(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) {
    ok(&["synth-gen", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(dir)]);
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            let bytes = fs::read(&p).unwrap();
            out.push((p, bytes));
        }
    }
    out.sort();
    out
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn synth_gen_writes_pairs_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("set");
    synth(&dir, 4, 7);
    let seq = dir.join("01");
    for i in 0..4 {
        assert!(seq.join(format!("frame_{i:05}_rgb.png")).is_file());
        assert!(seq.join(format!("frame_{i:05}_pose.txt")).is_file());
    }
    assert!(!seq.join("frame_00004_rgb.png").exists());
    let manifest: toml::Table = fs::read_to_string(dir.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(7));
    assert_eq!(manifest["command"].as_str(), Some("synth-gen"));
    assert!(manifest["config_hash"].as_str().unwrap().starts_with("sha256:"));
    let resolved: toml::Table = fs::read_to_string(dir.join("config.resolved.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(7));

    let before = files(&dir);
    synth(&dir, 4, 7);
    assert_eq!(before, files(&dir));
}

#[test]
fn synth_gen_rejects_zero_samples() {
    let tmp = TempDir::new().unwrap();
    let out = heatpose(&["synth-gen", "--n", "0", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[E_USAGE]"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn background_flag_changes_images() {
    let tmp = TempDir::new().unwrap();
    let (on, off) = (tmp.path().join("on"), tmp.path().join("off"));
    ok(&["synth-gen", "--n", "1", "--background", "on", "--out", s(&on)]);
    ok(&["synth-gen", "--n", "1", "--background", "off", "--out", s(&off)]);
    let read = |d: &Path| image::open(d.join("01/frame_00000_rgb.png")).unwrap().to_rgb8();
    let corner = |d: &Path| read(d).get_pixel(0, 0).0;
    assert_eq!(corner(&off), [0, 0, 0]);
    assert_ne!(read(&on), read(&off));
}

#[test]
fn config_file_is_overridden_by_flags_and_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n[synth]\nn = 2\n").unwrap();
    let dir = tmp.path().join("a");
    ok(&["synth-gen", "--config", s(&cfg), "--seed", "5", "--out", s(&dir)]);
    let manifest: toml::Table = fs::read_to_string(dir.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(5));
    assert!(dir.join("01/frame_00001_rgb.png").exists());
    assert!(!dir.join("01/frame_00002_rgb.png").exists());

    fs::write(&cfg, "seed = 3\n[synth]\nsamples = 2\n").unwrap();
    let out = heatpose(&["synth-gen", "--config", s(&cfg), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_CONFIG]"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = heatpose(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_USAGE]"));
}

#[test]
fn train_missing_dataset_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = heatpose(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[E_MISSING_PATH]"), "{err}");
    assert!(err.contains(s(&missing)));
}

fn train_run(data: &Path, out: &Path, seed: &str) {
    ok(&["train", "--data", s(data), "--seed", seed, "--epochs", "2", "--batch-size", "8", "--out", s(out)]);
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 16, 1);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    train_run(&data, &a, "4");
    train_run(&data, &b, "4");
    train_run(&data, &c, "5");
    let ckpt = |d: &Path| fs::read(d.join("checkpoint.hpck")).unwrap();
    let hist = |d: &Path| fs::read_to_string(d.join("history.jsonl")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
    assert_eq!(hist(&a), hist(&b));
    assert_ne!(ckpt(&a), ckpt(&c));
    let lines: Vec<serde_json::Value> = hist(&a).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 1);
    assert!(lines[0]["train_loss"].as_f64().unwrap().is_finite());
    let manifest: toml::Table = fs::read_to_string(a.join("manifest.toml")).unwrap().parse().unwrap();
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"checkpoint.hpck") && outputs.contains(&"history.jsonl"));
}

#[test]
fn eval_oracle_is_exact() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 20, 2);
    let out = tmp.path().join("eval");
    ok(&["eval", "--oracle", "--data", s(&data), "--out", s(&out)]);
    let c1 = csv(&out.join("criterion1.csv"));
    assert_eq!(c1.len(), 4);
    for row in &c1 {
        let v: f64 = row[1].parse().unwrap();
        assert!(v < 1e-3, "{row:?}");
    }
    let curve: Vec<f64> = csv(&out.join("criterion2.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    let total: f64 = csv(&out.join("criterion3.csv")).iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
}

#[test]
fn eval_checkpoint_with_robustness_and_threads() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 16, 3);
    let run = tmp.path().join("run");
    train_run(&data, &run, "0");
    let ckpt = run.join("checkpoint.hpck");
    let eval = |out: &Path, threads: &str, extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(out)];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_heatpose")).args(&args).env("HEATPOSE_THREADS", threads).output().unwrap()
    };
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    let o = eval(&one, "1", &["--robustness"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(eval(&two, "2", &[]).status.success());
    assert_eq!(fs::read(one.join("criterion1.csv")).unwrap(), fs::read(two.join("criterion1.csv")).unwrap());
    assert!(!two.join("robustness.csv").exists());
    let rows = csv(&one.join("robustness.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["clean", "translated", "occluded"]);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);

    let bad = eval(&tmp.path().join("bad"), "zero", &[]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error[E_CONFIG]"));

    let out = heatpose(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--preset", "tiny", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_VERSION]"));
}

fn read_pgm(path: &Path) -> image::GrayImage {
    let bytes = fs::read(path).unwrap();
    assert_eq!(&bytes[..2], b"P5");
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm).unwrap().to_luma8()
}

#[test]
fn inspect_matches_validation_error() {
    let tmp = TempDir::new().unwrap();
    let (data, val) = (tmp.path().join("data"), tmp.path().join("val"));
    synth(&data, 128, 10);
    synth(&val, 24, 11);
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&data), "--val", s(&val), "--epochs", "6", "--batch-size", "8", "--out", s(&run)]);
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    let val_mae = last["val_mae"]["overall"].as_f64().unwrap();
    let undetected = last["val_no_detection"].as_u64().unwrap();

    let ckpt = run.join("checkpoint.hpck");
    let (mut sum, mut count, mut missed) = (0.0, 0, 0);
    for i in 0..24 {
        let out = tmp.path().join(format!("inspect{i}"));
        let frame = val.join(format!("01/frame_{i:05}_rgb.png"));
        let stdout = ok(&["inspect", "--checkpoint", s(&ckpt), "--out", s(&out), s(&frame)]);
        for name in ["pitch", "yaw", "roll", "gaussian"] {
            let img = read_pgm(&out.join(format!("{name}.pgm")));
            assert_eq!(img.dimensions(), (16, 16));
        }
        if stdout.trim() == "no head detected" {
            missed += 1;
            continue;
        }
        let first = stdout.lines().next().unwrap();
        let v: Vec<f64> = first.split_whitespace().skip(1).step_by(2).map(|x| x.parse().unwrap()).collect();
        let pose = fs::read_to_string(val.join(format!("01/frame_{i:05}_pose.txt"))).unwrap();
        let gt = heatpose::data::parse_biwi_pose(&pose).unwrap();
        let a = heatpose::data::matrix_to_euler(&gt.rotation).unwrap();
        sum += (v[0] - a.pitch).abs() + (v[1] - a.yaw).abs() + (v[2] - a.roll).abs();
        count += 3;
        assert!(stdout.lines().nth(1).unwrap().starts_with("center "));
    }
    assert_eq!(missed, undetected);
    let mae = sum / count as f64;
    // printed angles carry three decimals
    assert!((mae - val_mae).abs() < 1e-3, "inspect MAE {mae} vs validation {val_mae}");
}

#[test]
fn inspect_flat_confidence_reports_no_head() {
    let tmp = TempDir::new().unwrap();
    let mut net = Network::<f32>::new(NetworkConfig::toy(), 0).unwrap();
    let store = net.store_mut();
    for name in ["head.weight", "head.bias"] {
        let id = store.find(name).unwrap();
        store.param_mut(id).value.data_mut().fill(0.0);
    }
    let bias = store.find("head.bias").unwrap();
    store.param_mut(bias).value.data_mut()[3] = -50.0;
    let ckpt = tmp.path().join("flat.hpck");
    heatpose::checkpoint::save(&net, &ckpt).unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 0);
    let out = tmp.path().join("inspect");
    let stdout = ok(&["inspect", "--checkpoint", s(&ckpt), "--out", s(&out), s(&data.join("01/frame_00000_rgb.png"))]);
    assert_eq!(stdout.trim(), "no head detected");
    let g = read_pgm(&out.join("gaussian.pgm"));
    assert!(g.pixels().all(|p| p.0[0] == 0));
}

#[test]
fn inspect_rejects_undecodable_image() {
    let tmp = TempDir::new().unwrap();
    let net = Network::<f32>::new(NetworkConfig::toy(), 0).unwrap();
    let ckpt = tmp.path().join("n.hpck");
    heatpose::checkpoint::save(&net, &ckpt).unwrap();
    let junk = tmp.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    let out = heatpose(&["inspect", "--checkpoint", s(&ckpt), "--out", s(tmp.path()), s(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_FORMAT]"));
}

#[test]
fn train_toy_on_512_samples() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 512, 21);
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&data), "--preset", "toy", "--epochs", "1", "--out", s(&run)]);
    let net = heatpose::checkpoint::load::<f32>(&run.join("checkpoint.hpck")).unwrap();
    assert_eq!(*net.config(), NetworkConfig::toy());
    assert_eq!(net.num_params(), 228068);
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn resolved_config_reproduces_its_hash() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth-gen", "--n", "1", "--seed", "9", "--r-heat", "3", "--out", s(&a)]);
    let resolved = a.join("config.resolved.toml");
    ok(&["synth-gen", "--config", s(&resolved), "--out", s(&a)]);
    let hash = |d: &Path| {
        let m: toml::Table = fs::read_to_string(d.join("manifest.toml")).unwrap().parse().unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    let first = hash(&a);
    ok(&["synth-gen", "--config", s(&resolved), "--out", s(&a)]);
    assert_eq!(first, hash(&a));
    ok(&["synth-gen", "--config", s(&resolved), "--out", s(&b)]);
    assert_ne!(first, hash(&b));
}
