use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dsscc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsscc")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_ppm(path: &Path) {
    let mut bytes = b"P6\n32 32\n255\n".to_vec();
    for i in 0..32 * 32 {
        let (x, y) = (i % 32, i / 32);
        bytes.extend([(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]);
    }
    fs::write(path, bytes).unwrap();
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        "[data]\nsynthetic_images = 16\nsynthetic_seed = 3\n\n[train]\niterations = 1\nepochs1 = 1\nepochs2 = 1\nbatch1 = 8\nbatch2 = 8\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_encode_decode_transmit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "\n[channel]\nmode = \"ideal_capacity\"\nsnr_db = 10.0\n");
    let model_dir = dir.path().join("model");
    let out = ok(dsscc(&["-c", &cfg, "train", "--out", model_dir.to_str().unwrap()]));
    assert!(out.contains("epochs"));
    let ckpt = model_dir.join("model.ckpt");
    assert!(ckpt.exists() && model_dir.join("state.json").exists());

    let img = dir.path().join("in.ppm");
    write_ppm(&img);
    let stream = dir.path().join("in.dscc");
    let map = dir.path().join("map.pgm");
    let p = |q: &Path| q.to_str().unwrap().to_string();
    ok(dsscc(&["-c", &cfg, "encode", "--model", &p(&ckpt), &p(&img), "-o", &p(&stream), "--bit-map", &p(&map)]));
    assert_eq!(&fs::read(&stream).unwrap()[..4], b"DSCC");
    assert!(fs::read(&map).unwrap().starts_with(b"P5"));

    let sent = dir.path().join("sent.dscc");
    ok(dsscc(&["-c", &cfg, "transmit", &p(&stream), "-o", &p(&sent)]));
    assert_eq!(fs::read(&sent).unwrap(), fs::read(&stream).unwrap());

    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    ok(dsscc(&["-c", &cfg, "decode", "--model", &p(&ckpt), &p(&stream), "-o", &p(&a)]));
    ok(dsscc(&["-c", &cfg, "decode", "--model", &p(&ckpt), &p(&sent), "-o", &p(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::read(&a).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn evaluate_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("eval");
    let stdout = ok(dsscc(&["-c", &cfg, "evaluate", "--out", out.to_str().unwrap(), "--bitstreams", "--bit-maps", "2"]));
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["images"], 16);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(out.join("summary.json").exists());
    assert_eq!(fs::read_dir(out.join("streams")).unwrap().count(), 16);
    assert_eq!(fs::read_dir(out.join("maps")).unwrap().count(), 2);
}

#[test]
fn make_dataset_is_cifar_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    ok(dsscc(&["make-dataset", "--count", "7", "--seed", "2", "-o", path.to_str().unwrap()]));
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 7 * 3073);
    assert!(bytes.chunks(3073).all(|r| r[0] < 10));
    let cfg = tiny_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "synthetic_images = 16",
        &format!("dataset = {:?}\nlimit = 3", path.to_str().unwrap()),
    );
    fs::write(&cfg, text).unwrap();
    let stdout = ok(dsscc(&["-c", &cfg, "evaluate", "--out", dir.path().join("e").to_str().unwrap()]));
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["images"], 3);
}

#[test]
fn theory_check_and_ber_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("theory.json");
    ok(dsscc(&["theory-check", "--models", "20", "--surrogates", "10", "-o", report.to_str().unwrap()]));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["proposition"]["models"], 20);

    let csv = dir.path().join("ber.csv");
    ok(dsscc(&["ber-sweep", "--from", "10", "--to", "12", "--step", "2", "--min-bits", "2000", "-o", csv.to_str().unwrap()]));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("snr_db,bits,bit_errors,ber"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nno_such_key = 1\n").unwrap();
    let out = dsscc(&["-c", cfg.to_str().unwrap(), "make-dataset", "-o", "x.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = dsscc(&["ber-sweep", "--from", "4", "--to", "2", "-o", dir.path().join("b.csv").to_str().unwrap()]);
    assert!(!out.status.success());

    let junk = dir.path().join("junk.dscc");
    fs::write(&junk, b"not a stream").unwrap();
    let out = dsscc(&["transmit", junk.to_str().unwrap(), "-o", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
}
