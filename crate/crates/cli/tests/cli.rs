use std::path::Path;
use std::process::{Command, Output};

use hnsf::dsp::Waveform;
use hnsf::io::{read_features, wav_write};

fn hnsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hnsf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tone(path: &Path, seconds: f64) {
    let n = (seconds * 16000.0) as usize;
    let samples = (0..n)
        .map(|t| {
            let time = t as f64 / 16000.0;
            if t < n / 2 {
                0.3 * (std::f64::consts::TAU * 180.0 * time).sin()
                    + 0.1 * (std::f64::consts::TAU * 360.0 * time).sin()
            } else {
                0.05 * ((t * 7919 % 1000) as f64 / 500.0 - 1.0)
            }
        })
        .collect();
    wav_write(&Waveform::new(samples).unwrap(), path).unwrap();
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = hnsf(&["gradcheck", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(hnsf(&[]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = hnsf(&["gradcheck", "--M", "31", "--fc", "0.3"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.contains("sinc taps"));
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(first["command"], "gradcheck");
    assert_eq!(first["run_config"]["model"]["source"]["num_harmonics"], 8);
}

#[test]
fn filter_inspect_writes_513_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = hnsf(&["filter-inspect", "--fc", "0.5", "--M", "31", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let headers = reader.headers().unwrap().clone();
    let low_db = headers.iter().position(|h| h == "low_db").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 513);
    let dc: f64 = rows[0][low_db].parse().unwrap();
    assert!(dc.abs() < 1e-6, "{dc}");
}

#[test]
fn filter_inspect_rejects_bad_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = hnsf(&["filter-inspect", "--fc", "1.5", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extract_train_synth_mvf_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    tone(&wav, 0.25);
    let feats = dir.path().join("a.f32");
    let o = hnsf(&["extract", "--wav", path_str(&wav), "--out", path_str(&feats)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let f = read_features(&feats).unwrap();
    assert_eq!(f.frames(), 50);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"variant": "sinc1", "channels": 8, "harmonic_blocks": 1, "layers_per_block": 3},
            "train": {"steps": 2, "checkpoint_every": 1, "segment_frames": 40}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = hnsf(&["train", "--config", path_str(&cfg), "--data", path_str(&wav), "--out", path_str(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let logged: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(logged["run_config"]["model"]["channels"], 8);
    assert_eq!(logged["run_config"]["model"]["filter_len"], 31);
    assert_eq!(logged["run_config"]["train"]["adam"]["lr"], 3e-4);
    let curve = std::fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(run.join("step_000001.ckpt").exists());

    let ckpt = run.join("final.ckpt");
    let out_wav = dir.path().join("out.wav");
    let o = hnsf(&[
        "synth", "--ckpt", path_str(&ckpt), "--feats", path_str(&feats), "--out", path_str(&out_wav), "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let w = hnsf::io::wav_read(&out_wav).unwrap();
    assert_eq!(w.len(), 50 * 80);

    let o = hnsf(&[
        "synth", "--ckpt", path_str(&ckpt), "--feats", path_str(&feats), "--out", path_str(&out_wav), "--variant", "base",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sinc1"));

    let mvf = dir.path().join("mvf.csv");
    let o = hnsf(&["mvf", "--ckpt", path_str(&ckpt), "--feats", path_str(&feats), "--out", path_str(&mvf)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&mvf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "frame,time_ms,f0,voiced,fc,mvf_hz");
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn missing_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hnsf(&[
        "extract",
        "--wav",
        path_str(&dir.path().join("nope.wav")),
        "--out",
        path_str(&dir.path().join("x.f32")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
