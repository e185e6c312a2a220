//! Command-line surface for the compression + compressed-domain
//! segmentation toolkit.
//!
//! Every subcommand exits 0 on success and nonzero with a single
//! `error: <category>: <message>` line on stderr otherwise. Unknown flags
//! print usage and exit 2 (clap's default).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcr::codec::{build_codec, CodecConfig};
use lcr::container::CompressedBlob;
use lcr::data::CLASS_COUNT;
use lcr::error::Error;
use lcr::harness::{load_codec, run_baselines, run_grid, save_codec, ExperimentSpec};
use lcr::metrics::{dice, psnr, ssim};
use lcr::seg::{build_seg_net, predict, SegMap, SegMode, SegNet, SegNetConfig};

#[derive(Parser)]
#[command(name = "lcr", version, about = "Learned image compression with compressed-domain segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Directory with img_*.ppm / mask_*.pgm pairs.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic 4-class dataset of PPM/PGM pairs.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train the compressor/decompressor pair on the training split.
    TrainCodec {
        #[command(flatten)]
        data: DataArgs,
        /// Codec config file (key=value); overrides --d / --n.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Digest units.
        #[arg(long, default_value_t = 1)]
        d: u8,
        /// Quantization bit length recorded in the config.
        #[arg(long, default_value_t = 8)]
        n: u8,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        /// Quantize inside the training loop with a straight-through
        /// gradient.
        #[arg(long, default_value_t = false)]
        ste: bool,
    },
    /// Compress one PPM image into an .lcr container.
    Compress {
        input: PathBuf,
        output: PathBuf,
        /// Directory holding codec.cfg and codec.lcw.
        #[arg(long)]
        codec: PathBuf,
        /// Expected digest units; errors if the codec differs.
        #[arg(long)]
        d: Option<u8>,
        /// Bit length override (defaults to the codec config).
        #[arg(long)]
        n: Option<u8>,
    },
    /// Decompress an .lcr container into a PPM image.
    Decompress {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        codec: PathBuf,
    },
    /// Train a segmentation network on the training split.
    TrainSeg {
        #[command(flatten)]
        data: DataArgs,
        /// `latent` trains on quantization-reconstructed latents, `image`
        /// on the original images.
        #[arg(long, default_value = "latent")]
        mode: String,
        /// Codec directory; required in latent mode.
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long, default_value_t = 3000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f32,
    },
    /// Segment one input (an .lcr container in latent mode, a PPM image in
    /// image mode) into a PGM class mask.
    Segment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "latent")]
        mode: String,
        /// Directory holding seg.cfg and seg.lcw.
        #[arg(long)]
        seg: PathBuf,
    },
    /// Metric reports: reconstruction quality and/or mask overlap.
    Eval {
        #[arg(long, requires = "recon")]
        orig: Option<PathBuf>,
        #[arg(long, requires = "orig")]
        recon: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = CLASS_COUNT)]
        classes: u8,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train codecs across d values and evaluate every (d, n) cell.
    Grid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3])]
        d_list: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u8, 4, 6, 8])]
        n_list: Vec<u8>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
    },
    /// Train and evaluate BL1-BL3 plus the proposed latent-mode network.
    Baselines {
        #[command(flatten)]
        data: DataArgs,
        /// Trained codec directory.
        #[arg(long)]
        codec: PathBuf,
        #[arg(long, default_value_t = 3000)]
        iters: usize,
    },
    /// Parameter / MAC accounting of the proposed pipeline vs the baseline.
    Report {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", category(&e), e);
            ExitCode::FAILURE
        }
    }
}

fn category(e: &Error) -> &'static str {
    match e {
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::Numeric(_) => "numeric",
        Error::State(_) => "state",
        Error::Validation(_) => "validation",
        Error::BadMagic(_) => "bad-magic",
        Error::UnsupportedVersion(_) => "unsupported-version",
        Error::Truncated(_) => "truncated",
        Error::Inconsistent(_) => "inconsistent",
        Error::Corrupt(_) => "corrupt",
        Error::Io(_) => "io",
    }
}

fn load_seg(dir: &PathBuf) -> Result<SegNet, Error> {
    let config = SegNetConfig::read_file(&dir.join("seg.cfg"))?;
    let mut net = build_seg_net(config, 0)?;
    net.load_weights(&dir.join("seg.lcw"))?;
    Ok(net)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData {
            out,
            seed,
            count,
            size,
        } => {
            let paths = lcr::data::generate_synthetic(seed, count, size, &out)?;
            println!("wrote {} image/mask pairs under {}", paths.len(), out.display());
            Ok(())
        }

        Command::TrainCodec {
            data,
            config,
            d,
            n,
            epochs,
            lr,
            ste,
        } => {
            let config = match config {
                Some(path) => CodecConfig::read_file(&path)?,
                None => CodecConfig {
                    digest_units: d,
                    bits: n,
                    ..CodecConfig::default()
                },
            };
            let dataset = lcr::data::load_dataset(&data.data)?;
            let (train, _) = lcr::data::split_train_val(dataset);
            let patches: Vec<_> = train
                .iter()
                .map(|(img, _)| img.to_tensor())
                .collect();
            let mut pair = build_codec(config, data.seed)?;
            let (comp_params, dec_params) = pair.param_counts();
            let mut opt = lcr::optim::Optimizer::adam(lr).with_step_schedule(10, 0.75);
            let history = lcr::codec::train_codec(&mut pair, &patches, epochs, &mut opt, ste)?;
            std::fs::create_dir_all(&data.out)?;
            save_codec(&data.out, &pair)?;
            println!(
                "codec d={} trained for {epochs} epochs on {} patches (params: {comp_params} compressor, {dec_params} decompressor)",
                config.digest_units,
                patches.len()
            );
            println!(
                "mse first={:.6} last={:.6}",
                history.first().copied().unwrap_or(f32::NAN),
                history.last().copied().unwrap_or(f32::NAN)
            );
            Ok(())
        }

        Command::Compress {
            input,
            output,
            codec,
            d,
            n,
        } => {
            let pair = load_codec(&codec)?;
            if let Some(d) = d {
                if d != pair.config.digest_units {
                    return Err(Error::Config(format!(
                        "requested d={d} but codec was trained with d={}",
                        pair.config.digest_units
                    )));
                }
            }
            let bits = n.unwrap_or(pair.config.bits);
            lcr::container::compress_file(&input, &pair, bits, &output)?;
            let size = std::fs::metadata(&output)?.len() as usize;
            let img = lcr::image::read_ppm(&input)?;
            let cf = lcr::container::compression_factor(img.height, img.width, size)?;
            println!("{} -> {} ({size} bytes, CF {cf:.2})", input.display(), output.display());
            Ok(())
        }

        Command::Decompress {
            input,
            output,
            codec,
        } => {
            let pair = load_codec(&codec)?;
            lcr::container::decompress_file(&input, &pair, &output)?;
            println!("{} -> {}", input.display(), output.display());
            Ok(())
        }

        Command::TrainSeg {
            data,
            mode,
            codec,
            iters,
            lr,
        } => {
            let mode = SegMode::parse(&mode)?;
            let dataset = lcr::data::load_dataset(&data.data)?;
            let (train, _) = lcr::data::split_train_val(dataset);
            let mut pairs = Vec::new();
            let config = match mode {
                SegMode::Latent => {
                    let codec_dir = codec.ok_or_else(|| {
                        Error::Config("latent mode requires --codec".into())
                    })?;
                    let pair = load_codec(&codec_dir)?;
                    let s = pair.config.spatial_factor();
                    for (img, gray) in &train {
                        let image = img.to_tensor();
                        let latent = lcr::container::compress_image(&pair, &image, pair.config.bits)?
                            .dequantized_latent()?;
                        let mask = SegMap::from_gray(gray, CLASS_COUNT, 255)?;
                        pairs.push((latent, mask));
                    }
                    SegNetConfig::latent(pair.config.latent_channels, CLASS_COUNT, s)
                }
                SegMode::Image => {
                    for (img, gray) in &train {
                        pairs.push((
                            img.to_tensor(),
                            SegMap::from_gray(gray, CLASS_COUNT, 255)?,
                        ));
                    }
                    SegNetConfig::image(CLASS_COUNT, 8)
                }
            };
            let mut net = build_seg_net(config, data.seed)?;
            let mut opt = lcr::optim::Optimizer::sgd(lr, 0.9);
            let history = lcr::seg::train_seg(&mut net, &pairs, iters, &mut opt)?;
            std::fs::create_dir_all(&data.out)?;
            config.write_file(&data.out.join("seg.cfg"))?;
            net.save_weights(&data.out.join("seg.lcw"))?;
            let mut csv = String::from("iteration,cross_entropy\n");
            for (i, loss) in history.iter().enumerate() {
                csv.push_str(&format!("{i},{loss:.8}\n"));
            }
            std::fs::write(data.out.join("history.csv"), csv)?;
            println!(
                "seg net ({}) trained for {iters} iterations on {} pairs; loss first={:.4} last={:.4}",
                mode.as_str(),
                pairs.len(),
                history.first().copied().unwrap_or(f32::NAN),
                history.last().copied().unwrap_or(f32::NAN)
            );
            Ok(())
        }

        Command::Segment {
            input,
            output,
            mode,
            seg,
        } => {
            let mode = SegMode::parse(&mode)?;
            let net = load_seg(&seg)?;
            if net.config.mode != mode {
                return Err(Error::Config(format!(
                    "network was trained in {} mode, requested {}",
                    net.config.mode.as_str(),
                    mode.as_str()
                )));
            }
            let input_tensor = match mode {
                // the container alone carries everything segmentation
                // needs; no decompressor is ever built on this path
                SegMode::Latent => CompressedBlob::read_file(&input)?.dequantized_latent()?,
                SegMode::Image => lcr::image::read_ppm(&input)?.to_tensor(),
            };
            let logits = net.segment(&input_tensor)?;
            let map = predict(&logits, net.config.ignore_label)?;
            lcr::image::write_pgm(&output, &map.to_gray())?;
            println!("{} -> {}", input.display(), output.display());
            Ok(())
        }

        Command::Eval {
            orig,
            recon,
            pred,
            gt,
            classes,
            out,
        } => {
            let mut csv = String::from("metric,value\n");
            let mut any = false;
            if let (Some(orig), Some(recon)) = (orig, recon) {
                let a = lcr::image::read_ppm(&orig)?.to_tensor();
                let b = lcr::image::read_ppm(&recon)?.to_tensor();
                let p = psnr(&a, &b, 1.0)?;
                let s = ssim(&a, &b)?;
                if p.is_infinite() {
                    csv.push_str("psnr_db,inf\n");
                } else {
                    csv.push_str(&format!("psnr_db,{p:.4}\n"));
                }
                csv.push_str(&format!("ssim,{s:.6}\n"));
                any = true;
            }
            if let (Some(pred_path), Some(gt_path)) = (pred, gt) {
                let p = SegMap::from_gray(&lcr::image::read_pgm(&pred_path)?, classes, 255)?;
                let g = SegMap::from_gray(&lcr::image::read_pgm(&gt_path)?, classes, 255)?;
                let scores = dice(&p, &g)?;
                for (c, score) in scores.per_class.iter().enumerate() {
                    match score {
                        Some(v) => csv.push_str(&format!("dice_class{c},{v:.6}\n")),
                        None => csv.push_str(&format!("dice_class{c},absent\n")),
                    }
                }
                csv.push_str(&format!("dice_macro,{:.6}\n", scores.macro_mean));
                any = true;
            }
            if !any {
                return Err(Error::Config(
                    "eval needs --orig/--recon and/or --pred/--gt".into(),
                ));
            }
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }

        Command::Grid {
            data,
            d_list,
            n_list,
            epochs,
        } => {
            let mut spec = ExperimentSpec::desk(data.data, data.out.clone(), data.seed);
            spec.d_values = d_list;
            spec.n_values = n_list;
            spec.codec_epochs = epochs;
            let rows = run_grid(&spec)?;
            println!("{} grid cells -> {}", rows.len(), data.out.join("grid.csv").display());
            Ok(())
        }

        Command::Baselines {
            data,
            codec,
            iters,
        } => {
            let mut spec = ExperimentSpec::desk(data.data, data.out.clone(), data.seed);
            spec.seg_iterations = iters;
            let pair = load_codec(&codec)?;
            let outcome = run_baselines(&spec, &pair)?;
            for row in &outcome.rows {
                println!("{} dice={:.4} cloud_macs={}", row.method, row.dice, row.cloud_macs);
            }
            println!("-> {}", data.out.join("baselines.csv").display());
            Ok(())
        }

        Command::Report {
            codec,
            height,
            width,
            out,
        } => {
            let pair = load_codec(&codec)?;
            let s = pair.config.spatial_factor();
            let latent_net = build_seg_net(
                SegNetConfig::latent(pair.config.latent_channels, CLASS_COUNT, s),
                0,
            )?;
            let image_net = build_seg_net(SegNetConfig::image(CLASS_COUNT, s), 0)?;
            let report =
                lcr::compute::pipeline_report(&pair, &latent_net, &image_net, height, width)?;
            let csv = report.to_csv();
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}
