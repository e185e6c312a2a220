//! Acceptance suite: one test per shipping criterion, each printing a
//! single PASS line with its measured numbers (run with `--nocapture` to
//! see them). Tolerances are pinned in the assertions.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lcr::codec::{build_codec, train_codec, CodecConfig};
use lcr::compute::pipeline_report;
use lcr::container::{
    compress_image, decompress_blob, raw_compression_factor, CompressedBlob,
};
use lcr::data::{generate_scene, generate_synthetic, CLASS_COUNT};
use lcr::harness::{run_baselines, run_grid, train_codec_on_images, ExperimentSpec};
use lcr::huffman::{decode, encode, HuffmanDict};
use lcr::metrics::psnr;
use lcr::optim::Optimizer;
use lcr::quant::{fit_params, float2int, int2float};
use lcr::seg::{build_seg_net, SegNetConfig};
use lcr::tensor::init::seeded_rng;
use lcr::tensor::{Shape, Tensor};
use rand::Rng;

#[test]
fn criterion_01_quantizer_round_trip_bound() {
    let start = Instant::now();
    let mut rng = seeded_rng(1001);
    let mut tensors_checked = 0usize;
    for round in 0..1000 {
        let bits = [2u8, 4, 6, 8][round % 4];
        let len = rng.gen_range(1..=96);
        let center = rng.gen_range(-50.0f32..50.0);
        let spread = rng.gen_range(0.0f32..40.0);
        let data: Vec<f32> = (0..len)
            .map(|_| center + rng.gen_range(-1.0f32..1.0) * spread)
            .collect();
        let t = Tensor::from_vec(Shape::new(1, 1, 1, len), data).unwrap();
        let params = fit_params(&t, bits).unwrap();
        let q = float2int(&t, &params).unwrap();
        let r = int2float(&q).unwrap();
        let half_step = if params.is_degenerate() {
            0.0
        } else {
            (params.max - params.min) / (2.0 * ((1u32 << bits) - 1) as f32)
        };
        for (x, y) in t.data().iter().zip(r.data()) {
            assert!(
                (x - y).abs() <= half_step + 1e-6,
                "round {round} bits {bits}: |{x} - {y}| > {half_step} + 1e-6"
            );
        }
        tensors_checked += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, limit 10 s");
    println!(
        "criterion 1 (quantizer bound): PASS — {tensors_checked} tensors across n in {{2,4,6,8}} within half-step + 1e-6 in {elapsed:?}"
    );
}

#[test]
fn criterion_02_entropy_losslessness_and_optimality() {
    let start = Instant::now();
    let mut rng = seeded_rng(1002);
    for round in 0..1000 {
        let bits = [2u8, 3, 4, 5, 6, 7, 8][round % 7];
        let cap = (1u16 << bits) - 1;
        let len = rng.gen_range(1..=512);
        let symbols: Vec<u8> = (0..len)
            .map(|_| (rng.gen_range(0..=cap)) as u8)
            .collect();
        let dict = HuffmanDict::build(&symbols).unwrap();
        let payload = encode(&symbols, &dict).unwrap();
        let back = decode(&payload, &dict, symbols.len()).unwrap();
        assert_eq!(symbols, back, "round {round}: decode(encode(s)) != s");
    }
    // optimality against the textbook two-queue oracle, alphabets <= 16
    let mut oracle_rounds = 0usize;
    for round in 0..200 {
        let alphabet = rng.gen_range(2usize..=16);
        let len = rng.gen_range(alphabet..=400);
        let symbols: Vec<u8> = (0..len)
            .map(|_| rng.gen_range(0..alphabet) as u8)
            .collect();
        let mut freq = [0u64; 256];
        for s in &symbols {
            freq[*s as usize] += 1;
        }
        if freq.iter().filter(|f| **f > 0).count() < 2 {
            continue;
        }
        let dict = HuffmanDict::build(&symbols).unwrap();
        let payload = encode(&symbols, &dict).unwrap();
        let oracle_bits = lcr_testkit::huffman_total_bits(&freq);
        assert_eq!(
            payload.bit_count, oracle_bits,
            "round {round}: expected code length differs from the textbook oracle"
        );
        oracle_rounds += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, limit 30 s");
    println!(
        "criterion 2 (entropy losslessness): PASS — 1000 lossless round trips, {oracle_rounds} optimality checks vs the two-queue oracle in {elapsed:?}"
    );
}

#[test]
fn criterion_03_container_round_trip_and_corruption() {
    // a realistic blob from a real latent
    let pair = build_codec(CodecConfig::default(), 33).unwrap();
    let mut rng = seeded_rng(1003);
    let image = generate_scene(64, &mut rng).unwrap().image.to_tensor();
    let blob = compress_image(&pair, &image, 8).unwrap();
    let bytes = blob.serialize();
    let parsed = CompressedBlob::parse(&bytes).unwrap();
    assert_eq!(parsed.serialize(), bytes, "round trip must be byte-equal");

    // field map: structural bytes must yield typed errors on corruption;
    // pure value bytes (n, quant range, dictionary symbol values, payload
    // bits) may parse to different content but must never crash.
    let dict_len = blob.dict.to_bytes().len();
    let payload_start = 28 + dict_len + 4;
    let is_value_byte = |pos: usize| -> bool {
        if pos == 15 || (16..24).contains(&pos) || pos >= payload_start {
            return true;
        }
        // dictionary entries are (symbol, length) pairs after the u16 size
        if pos >= 30 && pos < 28 + dict_len {
            return (pos - 30) % 2 == 0;
        }
        false
    };

    let mut structural_errors = 0usize;
    let mut silent_value_changes = 0usize;
    for round in 0..1000 {
        let pos = rng.gen_range(0..bytes.len());
        let mask = rng.gen_range(1u8..=255);
        let mut corrupted = bytes.clone();
        corrupted[pos] ^= mask;

        let outcome = std::panic::catch_unwind(|| {
            CompressedBlob::parse(&corrupted).and_then(|b| b.dequantized_latent())
        });
        let result = match outcome {
            Ok(r) => r,
            Err(_) => panic!("round {round}: corruption at byte {pos} caused a panic"),
        };
        match result {
            Err(_) => structural_errors += 1,
            Ok(_) => {
                assert!(
                    is_value_byte(pos),
                    "round {round}: structural byte {pos} corrupted silently"
                );
                silent_value_changes += 1;
            }
        }
    }
    assert!(structural_errors > 0);
    println!(
        "criterion 3 (container): PASS — byte-equal round trip; 1000 mutations: {structural_errors} typed errors, {silent_value_changes} value-only changes, 0 crashes"
    );
}

#[test]
fn criterion_04_gradient_checks() {
    let outcomes = lcr_testkit::gradcheck::all_cases();
    let mut worst = 0.0f64;
    for outcome in &outcomes {
        assert!(
            outcome.passed(),
            "{}: max rel error {} over {} of {} comparable components",
            outcome.name,
            outcome.check.max_rel_error,
            outcome.check.checked,
            outcome.check.total
        );
        worst = worst.max(outcome.check.max_rel_error);
    }
    println!(
        "criterion 4 (gradients): PASS — {} cases (conv, upsample-conv, relu, losses, residual block, both graph branches, chains) max rel error {worst:.2e} < 1e-3",
        outcomes.len()
    );
}

#[test]
fn criterion_05_codec_learning() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    generate_synthetic(1005, 8, 64, &data_dir).unwrap();
    let dataset = lcr::data::load_dataset(&data_dir).unwrap();
    let patches: Vec<Tensor> = dataset.iter().map(|(img, _)| img.to_tensor()).collect();
    assert_eq!(patches.len(), 8);

    let config = CodecConfig::default(); // d = 1, n = 8
    let mut pair = build_codec(config, 1005).unwrap();
    let mut opt = Optimizer::adam(1e-3).with_step_schedule(10, 0.75);
    let history = train_codec(&mut pair, &patches, 30, &mut opt, false).unwrap();
    let (first, last) = (history[0], *history.last().unwrap());
    assert!(
        last < 0.5 * first,
        "final MSE {last} not below half of initial {first}"
    );

    // decoded through the full quantized pipeline, against mid-gray
    let mut worst_margin = f64::INFINITY;
    for image in &patches {
        let blob = compress_image(&pair, image, 8).unwrap();
        let recon = decompress_blob(&pair, &blob).unwrap();
        let gray = Tensor::full(image.shape(), 0.5);
        let p_recon = psnr(image, &recon, 1.0).unwrap();
        let p_gray = psnr(image, &gray, 1.0).unwrap();
        worst_margin = worst_margin.min(p_recon - p_gray);
    }
    assert!(
        worst_margin >= 3.0,
        "PSNR margin over mid-gray is {worst_margin:.2} dB, need >= 3"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}, limit 5 min");
    println!(
        "criterion 5 (codec learning): PASS — MSE {first:.4} -> {last:.4} (ratio {:.3}), min PSNR margin {worst_margin:.2} dB in {elapsed:?}",
        last / first
    );
}

#[test]
fn criterion_06_quality_trends() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    generate_synthetic(21, 12, 64, &data_dir).unwrap();
    let mut spec = ExperimentSpec::desk(data_dir, dir.path().join("out"), 21);
    spec.n_values = vec![2, 4, 8];
    let rows = run_grid(&spec).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");

    let cell = |d: u8, n: u8| {
        rows.iter()
            .find(|r| r.d == d && r.n == n)
            .expect("cell present")
    };
    // at fixed d, quality must not increase as n drops 8 -> 4 -> 2
    for d in [1u8, 2, 3] {
        for (hi, lo) in [(8u8, 4u8), (4, 2)] {
            let a = cell(d, hi);
            let b = cell(d, lo);
            assert!(
                a.ssim >= b.ssim,
                "d={d}: SSIM rose when n dropped {hi}->{lo}: {} -> {}",
                a.ssim,
                b.ssim
            );
            assert!(
                a.psnr >= b.psnr,
                "d={d}: PSNR rose when n dropped {hi}->{lo}: {} -> {}",
                a.psnr,
                b.psnr
            );
        }
    }
    // at n = 8, quality must not increase as d rises 1 -> 2 -> 3
    for (shallow, deep) in [(1u8, 2u8), (2, 3)] {
        let a = cell(shallow, 8);
        let b = cell(deep, 8);
        assert!(
            a.ssim >= b.ssim,
            "SSIM rose when d rose {shallow}->{deep}: {} -> {}",
            a.ssim,
            b.ssim
        );
        assert!(
            a.psnr >= b.psnr,
            "PSNR rose when d rose {shallow}->{deep}: {} -> {}",
            a.psnr,
            b.psnr
        );
    }
    println!(
        "criterion 6 (quality trends): PASS — SSIM/PSNR non-increasing for n 8->4->2 at every d and for d 1->2->3 at n=8 (d=1: ssim {:.4}/{:.4}/{:.4} for n=8/4/2)",
        cell(1, 8).ssim,
        cell(1, 4).ssim,
        cell(1, 2).ssim
    );
}

#[test]
fn criterion_07_compression_factor_accounting() {
    // large enough image that header and dictionary overhead amortize
    let mut rng = seeded_rng(1007);
    let image = generate_scene(256, &mut rng).unwrap().image.to_tensor();
    assert_eq!(raw_compression_factor(16, 8, 2), 48.0);

    let mut summary = Vec::new();
    for d in [1u8, 2, 3] {
        let config = CodecConfig {
            digest_units: d,
            ..CodecConfig::default()
        };
        let pair = build_codec(config, 1007).unwrap();
        for n in [2u8, 4, 6, 8] {
            let blob = compress_image(&pair, &image, n).unwrap();
            let size = blob.serialize().len();
            let cf = lcr::container::compression_factor(256, 256, size).unwrap();
            let cf_raw = raw_compression_factor(16, n, d);
            assert!(
                cf >= 0.8 * cf_raw && cf <= 3.0 * cf_raw,
                "d={d} n={n}: measured CF {cf:.1} outside [0.8, 3.0] x raw {cf_raw:.1}"
            );
            if d == 2 && n == 8 {
                summary.push(format!("d=2,n=8: raw 48.0, measured {cf:.1}"));
            }
        }
    }
    println!(
        "criterion 7 (CF accounting): PASS — every (d, n) cell within [0.8, 3.0] x raw CF on a 256x256 image ({})",
        summary.join("; ")
    );
}

#[test]
fn criterion_08_compressed_domain_segmentation() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    generate_synthetic(21, 12, 64, &data_dir).unwrap();
    let spec = ExperimentSpec::desk(data_dir, dir.path().join("out"), 21);

    let dataset = lcr::data::load_dataset(&spec.data_dir).unwrap();
    let (train, _) = lcr::data::split_train_val(dataset);
    let train_images: Vec<_> = train.iter().map(|(img, _)| img.clone()).collect();
    let pair = train_codec_on_images(&spec, 1, &train_images).unwrap();
    let outcome = run_baselines(&spec, &pair).unwrap();

    let dice_of = |method: &str| {
        outcome
            .rows
            .iter()
            .find(|r| r.method == method)
            .expect("row present")
            .dice
    };
    let (bl1, bl3, proposed) = (dice_of("bl1"), dice_of("bl3"), dice_of("proposed"));
    for row in &outcome.rows {
        assert!(row.dice.is_finite(), "{}: non-finite dice", row.method);
    }
    assert!(proposed >= 0.75, "latent-mode Dice {proposed:.4} below 0.75");
    assert!(
        proposed >= bl3 - 0.1,
        "latent-mode Dice {proposed:.4} more than 0.1 below BL3 {bl3:.4}"
    );
    assert!(
        bl1 >= proposed,
        "BL1 {bl1:.4} below latent-mode {proposed:.4}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}, limit 10 min");
    println!(
        "criterion 8 (compressed-domain segmentation): PASS — dice bl1 {bl1:.3} >= proposed {proposed:.3} >= 0.75, bl3 {bl3:.3} within 0.1, in {elapsed:?}"
    );
}

#[test]
fn criterion_09_compute_claim() {
    let mut reports = Vec::new();
    for d in [1u8, 2, 3] {
        let config = CodecConfig {
            digest_units: d,
            ..CodecConfig::default()
        };
        let codec = build_codec(config, 9).unwrap();
        let s = config.spatial_factor();
        let latent_net = build_seg_net(
            SegNetConfig::latent(config.latent_channels, CLASS_COUNT, s),
            9,
        )
        .unwrap();
        let image_net = build_seg_net(SegNetConfig::image(CLASS_COUNT, s), 9).unwrap();
        let report = pipeline_report(&codec, &latent_net, &image_net, 64, 64).unwrap();
        assert!(
            report.proposed_cloud().macs < report.baseline_cloud().macs,
            "d={d}: proposed cloud {} not below baseline cloud {}",
            report.proposed_cloud().macs,
            report.baseline_cloud().macs
        );
        let cloud_pct = report.cloud_saving_pct();
        let total_pct = report.total_saving_pct();
        assert!(cloud_pct > 0.0 && total_pct > 0.0, "d={d}: saving not positive");
        reports.push(format!("d={d}: cloud -{cloud_pct:.1}%, total -{total_pct:.1}%"));
    }
    println!(
        "criterion 9 (compute claim): PASS — proposed cloud MACs strictly below baseline at every default config ({})",
        reports.join("; ")
    );
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lcr"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "lcr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn chain(root: &Path) {
    let data = root.join("data");
    let codec = root.join("codec");
    let seg = root.join("seg");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&["gen-data", "--out", &s(&data), "--seed", "11", "--count", "6", "--size", "64"]);
    run_cli(&[
        "train-codec", "--data", &s(&data), "--out", &s(&codec), "--seed", "11", "--d", "1",
        "--epochs", "6",
    ]);
    run_cli(&[
        "compress", &s(&data.join("img_005.ppm")), &s(&root.join("img.lcr")), "--codec",
        &s(&codec),
    ]);
    run_cli(&[
        "train-seg", "--mode", "latent", "--data", &s(&data), "--codec", &s(&codec), "--out",
        &s(&seg), "--seed", "11", "--iters", "200",
    ]);
    run_cli(&[
        "segment", &s(&root.join("img.lcr")), &s(&root.join("mask.pgm")), "--mode", "latent",
        "--seg", &s(&seg),
    ]);
    run_cli(&[
        "eval", "--pred", &s(&root.join("mask.pgm")), "--gt", &s(&data.join("mask_005.pgm")),
        "--out", &s(&root.join("eval.csv")),
    ]);
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    chain(&a);
    chain(&b);

    let artifacts = [
        "data/img_000.ppm",
        "data/mask_000.pgm",
        "data/img_005.ppm",
        "codec/codec.lcw",
        "codec/codec.cfg",
        "codec/history.csv",
        "img.lcr",
        "seg/seg.lcw",
        "seg/seg.cfg",
        "seg/history.csv",
        "mask.pgm",
        "eval.csv",
    ];
    for artifact in artifacts {
        let fa = std::fs::read(a.join(artifact)).unwrap();
        let fb = std::fs::read(b.join(artifact)).unwrap();
        assert_eq!(fa, fb, "{artifact} differs between identical runs");
    }
    println!(
        "criterion 10 (determinism): PASS — {} artifacts byte-identical across two seeded end-to-end runs",
        artifacts.len()
    );
}
