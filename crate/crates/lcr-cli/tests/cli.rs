//! CLI contract: exit codes, machine-parsable errors, format guarantees.

use std::path::Path;
use std::process::{Command, Output};

fn lcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let out = lcr(&["gen-data", "--frobnicate", "7"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn errors_are_one_line_and_machine_parsable() {
    let dir = tempfile::tempdir().unwrap();
    let out = lcr(&[
        "compress",
        "missing.ppm",
        s(&dir.path().join("x.lcr")),
        "--codec",
        s(&dir.path().join("nocodec")),
    ]);
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    assert!(lines[0].starts_with("error: "), "{stderr}");
    // category slug between the first two colons
    let rest = &lines[0]["error: ".len()..];
    let category = rest.split(':').next().unwrap();
    assert!(!category.is_empty() && category.chars().all(|c| c.is_ascii_lowercase() || c == '-'));
}

#[test]
fn compress_decompress_smoke_with_d2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let codec = dir.path().join("codec");
    assert!(lcr(&["gen-data", "--out", s(&data), "--seed", "3", "--count", "5", "--size", "64"])
        .status
        .success());
    assert!(lcr(&[
        "train-codec",
        "--data",
        s(&data),
        "--out",
        s(&codec),
        "--seed",
        "3",
        "--d",
        "2",
        "--epochs",
        "4",
    ])
    .status
    .success());

    let blob = dir.path().join("out.lcr");
    let rec = dir.path().join("rec.ppm");
    assert!(lcr(&[
        "compress",
        s(&data.join("img_004.ppm")),
        s(&blob),
        "--codec",
        s(&codec),
        "--d",
        "2",
        "--n",
        "8",
    ])
    .status
    .success());
    assert!(lcr(&["decompress", s(&blob), s(&rec), "--codec", s(&codec)])
        .status
        .success());
    assert!(rec.exists());

    // PSNR is finite (reconstruction differs from the source but parses)
    let eval = lcr(&[
        "eval",
        "--orig",
        s(&data.join("img_004.ppm")),
        "--recon",
        s(&rec),
    ]);
    assert!(eval.status.success());
    let stdout = String::from_utf8_lossy(&eval.stdout);
    let psnr_line = stdout.lines().find(|l| l.starts_with("psnr_db,")).unwrap();
    let value: f64 = psnr_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(value.is_finite());

    // wrong-d request is an explicit incompatibility error, no output file
    let bad = lcr(&[
        "compress",
        s(&data.join("img_000.ppm")),
        s(&dir.path().join("bad.lcr")),
        "--codec",
        s(&codec),
        "--d",
        "1",
    ]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(!dir.path().join("bad.lcr").exists());
}

#[test]
fn latent_segmentation_needs_no_decompressor_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let codec = dir.path().join("codec");
    let seg = dir.path().join("seg");
    for args in [
        vec!["gen-data", "--out", s(&data), "--seed", "4", "--count", "5", "--size", "64"],
        vec![
            "train-codec", "--data", s(&data), "--out", s(&codec), "--seed", "4", "--d", "1",
            "--epochs", "4",
        ],
        vec![
            "train-seg", "--mode", "latent", "--data", s(&data), "--codec", s(&codec), "--out",
            s(&seg), "--seed", "4", "--iters", "40",
        ],
    ] {
        let out = lcr(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    let blob = dir.path().join("img.lcr");
    assert!(lcr(&[
        "compress",
        s(&data.join("img_004.ppm")),
        s(&blob),
        "--codec",
        s(&codec),
    ])
    .status
    .success());

    // drop every codec artifact: the latent path must still run, because
    // segmentation never touches the decompressor
    std::fs::remove_dir_all(&codec).unwrap();
    let mask = dir.path().join("mask.pgm");
    let out = lcr(&["segment", s(&blob), s(&mask), "--mode", "latent", "--seg", s(&seg)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let saved = lcr::image::read_pgm(&mask).unwrap();
    assert_eq!((saved.width, saved.height), (64, 64));
    assert!(saved.pixels.iter().all(|p| *p < 4));
}

#[test]
fn grid_csv_has_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("grid");
    assert!(lcr(&["gen-data", "--out", s(&data), "--seed", "6", "--count", "5", "--size", "64"])
        .status
        .success());
    let out = lcr(&[
        "grid",
        "--data",
        s(&data),
        "--out",
        s(&out_dir),
        "--seed",
        "6",
        "--d-list",
        "1",
        "--n-list",
        "8",
        "--epochs",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("grid.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "d,n,cf_raw,cf_measured,ssim,psnr,status");
    let row = lines.next().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 7);
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1], "8");
    assert_eq!(fields[6], "ok");
    for f in &fields[2..6] {
        let v: f64 = f.parse().unwrap();
        assert!(v.is_finite());
    }
}
