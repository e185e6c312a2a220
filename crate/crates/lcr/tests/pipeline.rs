//! End-to-end compression pipeline behavior on real (tiny) training runs.

use lcr::codec::{build_codec, train_codec, CodecConfig};
use lcr::container::{compress_file, compress_image, decompress_blob, decompress_file, CompressedBlob};
use lcr::data::generate_scene;
use lcr::metrics::psnr;
use lcr::optim::Optimizer;
use lcr::quant::{fit_params, float2int, int2float};
use lcr::tensor::init::seeded_rng;
use lcr::tensor::{Shape, Tensor};

fn training_scenes(seed: u64, count: usize) -> Vec<Tensor> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| generate_scene(64, &mut rng).unwrap().image.to_tensor())
        .collect()
}

#[test]
fn training_improves_reconstruction() {
    let config = CodecConfig::default();
    let data = training_scenes(31, 4);
    let untrained = build_codec(config, 8).unwrap();
    let mut trained = build_codec(config, 8).unwrap();
    let mut opt = Optimizer::adam(1e-3).with_step_schedule(10, 0.75);
    let history = train_codec(&mut trained, &data, 15, &mut opt, false).unwrap();
    assert!(history.last().unwrap() < history.first().unwrap());

    let probe = &data[0];
    let recon_of = |pair: &lcr::codec::CodecPair| {
        let latent = pair.compress_forward(probe).unwrap();
        pair.decompress_forward(&latent).unwrap()
    };
    let untrained_psnr = psnr(probe, &recon_of(&untrained), 1.0).unwrap();
    let trained_psnr = psnr(probe, &recon_of(&trained), 1.0).unwrap();
    assert!(
        trained_psnr > untrained_psnr,
        "trained {trained_psnr} dB vs untrained {untrained_psnr} dB"
    );

    // and better than predicting mid-gray
    let gray = Tensor::full(probe.shape(), 0.5);
    let gray_psnr = psnr(probe, &gray, 1.0).unwrap();
    assert!(trained_psnr > gray_psnr);
}

#[test]
fn file_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = CodecConfig::default();
    let mut pair = build_codec(config, 4).unwrap();
    let data = training_scenes(77, 3);
    let mut opt = Optimizer::adam(1e-3);
    train_codec(&mut pair, &data, 10, &mut opt, false).unwrap();

    let mut rng = seeded_rng(500);
    let scene = generate_scene(64, &mut rng).unwrap();
    let img_path = dir.path().join("in.ppm");
    lcr::image::write_ppm(&img_path, &scene.image).unwrap();

    let blob_path = dir.path().join("out.lcr");
    compress_file(&img_path, &pair, 8, &blob_path).unwrap();
    let blob_path2 = dir.path().join("out2.lcr");
    compress_file(&img_path, &pair, 8, &blob_path2).unwrap();
    assert_eq!(
        std::fs::read(&blob_path).unwrap(),
        std::fs::read(&blob_path2).unwrap(),
        "compression must be deterministic"
    );

    let recon_path = dir.path().join("rec.ppm");
    decompress_file(&blob_path, &pair, &recon_path).unwrap();
    let recon = lcr::image::read_ppm(&recon_path).unwrap().to_tensor();
    let original = scene.image.to_tensor();
    let gray = Tensor::full(original.shape(), 0.5);
    assert!(
        psnr(&original, &recon, 1.0).unwrap() > psnr(&original, &gray, 1.0).unwrap(),
        "decoded image should beat the mid-gray baseline"
    );
}

#[test]
fn file_decode_equals_direct_quantized_forward_bit_exactly() {
    // the container adds exactly the quantization error: decoding a blob
    // must equal running the decompressor on the quantize-dequantized latent
    let pair = build_codec(CodecConfig::default(), 12).unwrap();
    let mut rng = seeded_rng(13);
    let image = generate_scene(64, &mut rng).unwrap().image.to_tensor();

    let blob = compress_image(&pair, &image, 6).unwrap();
    let from_file = decompress_blob(&pair, &CompressedBlob::parse(&blob.serialize()).unwrap()).unwrap();

    let latent = pair.compress_forward(&image).unwrap();
    let params = fit_params(&latent, 6).unwrap();
    let qdq = int2float(&float2int(&latent, &params).unwrap()).unwrap();
    let direct = pair.decompress_forward(&qdq).unwrap();

    assert_eq!(from_file.shape(), direct.shape());
    for (a, b) in from_file.data().iter().zip(direct.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn wrong_codec_config_is_rejected() {
    let d1 = build_codec(CodecConfig::default(), 3).unwrap();
    let d2 = build_codec(
        CodecConfig {
            digest_units: 2,
            ..CodecConfig::default()
        },
        3,
    )
    .unwrap();
    let mut rng = seeded_rng(14);
    let image = generate_scene(64, &mut rng).unwrap().image.to_tensor();
    let blob = compress_image(&d2, &image, 8).unwrap();
    let err = decompress_blob(&d1, &blob).unwrap_err();
    assert!(matches!(err, lcr::Error::Config(_)), "{err:?}");
}

#[test]
fn checkpoint_round_trip_preserves_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let mut pair = build_codec(CodecConfig::default(), 9).unwrap();
    let data = training_scenes(42, 2);
    let mut opt = Optimizer::adam(1e-3);
    train_codec(&mut pair, &data, 5, &mut opt, false).unwrap();

    let path = dir.path().join("codec.lcw");
    pair.save_weights(&path).unwrap();
    let mut fresh = build_codec(CodecConfig::default(), 1234).unwrap();
    fresh.load_weights(&path).unwrap();

    let latent_a = pair.compress_forward(&data[0]).unwrap();
    let latent_b = fresh.compress_forward(&data[0]).unwrap();
    assert_eq!(latent_a.data(), latent_b.data());

    // saving again must produce identical bytes
    let path2 = dir.path().join("codec2.lcw");
    fresh.save_weights(&path2).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&path2).unwrap()
    );
}

#[test]
fn raw_bit_budget_beats_source_for_every_config() {
    // latent_elements * n < 24 * H * W for all d, n
    for d in 1u8..=3 {
        for n in [2u8, 4, 6, 8] {
            let config = CodecConfig {
                digest_units: d,
                bits: n,
                ..CodecConfig::default()
            };
            let s = config.spatial_factor();
            let (h, w) = (2 * s, 3 * s);
            let latent = config.latent_shape(h, w).unwrap();
            let latent_bits = latent.numel() * n as usize;
            assert!(
                latent_bits < 24 * h * w,
                "d={d} n={n}: {latent_bits} raw latent bits vs {}",
                24 * h * w
            );
            let cf_raw = lcr::container::raw_compression_factor(16, n, d);
            assert!(cf_raw > 1.0);
        }
    }
    assert_eq!(lcr::container::raw_compression_factor(16, 8, 2), 48.0);
}
