//! Parameter and multiply-accumulate accounting per pipeline stage.
//!
//! MACs are counted by the tape as ops execute (see `tensor::tape`), so a
//! stage's cost is measured by running its forward graph on a dummy input
//! of the requested shape. Counts are reported as MACs, not FLOPs.

use crate::codec::CodecPair;
use crate::error::Result;
use crate::seg::SegNet;
use crate::tensor::{Shape, Tape, Tensor};

/// MACs of one convolution layer.
pub fn conv_macs(cout: usize, cin: usize, kernel: usize, out_h: usize, out_w: usize) -> u64 {
    (cout * cin * kernel * kernel * out_h * out_w) as u64
}

/// Total elements across named parameters.
pub fn count_params(named: &[(String, &Tensor)]) -> usize {
    named.iter().map(|(_, t)| t.numel()).sum()
}

impl CodecPair {
    /// MACs of one compressor forward at the given image size.
    pub fn compressor_macs(&self, height: usize, width: usize) -> Result<u64> {
        self.config.latent_shape(height, width)?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.compressor.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 3, height, width)), false);
        bound.forward(&mut tape, x)?;
        Ok(tape.macs())
    }

    /// MACs of one decompressor forward for the latent of the given image
    /// size.
    pub fn decompressor_macs(&self, height: usize, width: usize) -> Result<u64> {
        let latent_shape = self.config.latent_shape(height, width)?;
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = self.decompressor.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(Tensor::zeros(latent_shape), false);
        bound.forward(&mut tape, x)?;
        Ok(tape.macs())
    }
}

/// Parameter count and forward MACs of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCost {
    pub params: usize,
    pub macs: u64,
}

impl std::ops::Add for StageCost {
    type Output = StageCost;
    fn add(self, rhs: StageCost) -> StageCost {
        StageCost {
            params: self.params + rhs.params,
            macs: self.macs + rhs.macs,
        }
    }
}

/// Costs of the proposed compressed-domain pipeline against the
/// decompress-then-segment baseline, at one input size.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub input_height: usize,
    pub input_width: usize,
    pub compressor: StageCost,
    pub decompressor: StageCost,
    pub seg_image: StageCost,
    pub seg_latent: StageCost,
}

impl PipelineReport {
    /// Cloud-side cost of the proposed pipeline: segmentation straight on
    /// the latent.
    pub fn proposed_cloud(&self) -> StageCost {
        self.seg_latent
    }

    /// Cloud-side cost of the baseline: decompress, then segment the image.
    pub fn baseline_cloud(&self) -> StageCost {
        self.decompressor + self.seg_image
    }

    pub fn proposed_total(&self) -> StageCost {
        self.compressor + self.proposed_cloud()
    }

    pub fn baseline_total(&self) -> StageCost {
        self.compressor + self.baseline_cloud()
    }

    /// Percentage of cloud-side MACs saved by the proposed pipeline.
    pub fn cloud_saving_pct(&self) -> f64 {
        let base = self.baseline_cloud().macs as f64;
        (base - self.proposed_cloud().macs as f64) / base * 100.0
    }

    /// Percentage of total MACs saved by the proposed pipeline.
    pub fn total_saving_pct(&self) -> f64 {
        let base = self.baseline_total().macs as f64;
        (base - self.proposed_total().macs as f64) / base * 100.0
    }

    /// CSV form. Columns: component,params,macs. Aggregate rows carry summed
    /// params; percentage rows put the value in the macs column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,params,macs\n");
        let mut row = |name: &str, c: StageCost| {
            out.push_str(&format!("{name},{},{}\n", c.params, c.macs));
        };
        row("net_c", self.compressor);
        row("net_d", self.decompressor);
        row("net_seg_image", self.seg_image);
        row("net_seg_latent", self.seg_latent);
        row("baseline_cloud", self.baseline_cloud());
        row("proposed_cloud", self.proposed_cloud());
        row("baseline_total", self.baseline_total());
        row("proposed_total", self.proposed_total());
        out.push_str(&format!("cloud_saving_pct,,{:.4}\n", self.cloud_saving_pct()));
        out.push_str(&format!("total_saving_pct,,{:.4}\n", self.total_saving_pct()));
        out
    }
}

/// Measures every stage at the given input size.
pub fn pipeline_report(
    codec: &CodecPair,
    seg_latent: &SegNet,
    seg_image: &SegNet,
    height: usize,
    width: usize,
) -> Result<PipelineReport> {
    let latent_shape = codec.config.latent_shape(height, width)?;
    let (comp_params, dec_params) = codec.param_counts();
    Ok(PipelineReport {
        input_height: height,
        input_width: width,
        compressor: StageCost {
            params: comp_params,
            macs: codec.compressor_macs(height, width)?,
        },
        decompressor: StageCost {
            params: dec_params,
            macs: codec.decompressor_macs(height, width)?,
        },
        seg_image: StageCost {
            params: seg_image.param_count(),
            macs: seg_image.count_macs(Shape::new(1, 3, height, width))?,
        },
        seg_latent: StageCost {
            params: seg_latent.param_count(),
            macs: seg_latent.count_macs(latent_shape)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{build_codec, CodecConfig};
    use crate::seg::{build_seg_net, SegNetConfig};

    #[test]
    fn conv_layer_formula() {
        // 3 -> 16 channels, 3x3 kernel, 64x64 output
        assert_eq!(conv_macs(16, 3, 3, 64, 64), 1_769_472);
        let w = Tensor::zeros(Shape::new(16, 3, 3, 3));
        assert_eq!(count_params(&[("w".into(), &w)]), 432);
    }

    #[test]
    fn empty_net_counts_zero() {
        assert_eq!(count_params(&[]), 0);
        let tape = Tape::new();
        assert_eq!(tape.macs(), 0);
    }

    #[test]
    fn layer_sums_equal_whole_net() {
        // measuring layers separately matches the whole-graph count
        let codec = build_codec(CodecConfig::default(), 3).unwrap();
        let total = codec.compressor_macs(64, 64).unwrap() + codec.decompressor_macs(64, 64).unwrap();
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bc = codec.compressor.bind(&mut tape, &mut rec, false);
        let bd = codec.decompressor.bind(&mut tape, &mut rec, false);
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 3, 64, 64)), false);
        let latent = bc.forward(&mut tape, x).unwrap();
        bd.forward(&mut tape, latent).unwrap();
        assert_eq!(tape.macs(), total);
    }

    #[test]
    fn proposed_cloud_is_cheaper_for_every_default_config() {
        for d in 1..=3u8 {
            let config = CodecConfig {
                digest_units: d,
                ..CodecConfig::default()
            };
            let codec = build_codec(config, 1).unwrap();
            let s = config.spatial_factor();
            let latent_net = build_seg_net(SegNetConfig::latent(16, 4, s), 2).unwrap();
            let image_net = build_seg_net(SegNetConfig::image(4, s), 2).unwrap();
            let report = pipeline_report(&codec, &latent_net, &image_net, 64, 64).unwrap();
            assert!(
                report.proposed_cloud().macs < report.baseline_cloud().macs,
                "d={d}: {} !< {}",
                report.proposed_cloud().macs,
                report.baseline_cloud().macs
            );
            assert!(report.cloud_saving_pct() > 0.0);
            assert!(report.total_saving_pct() > 0.0);
        }
    }

    #[test]
    fn without_decompression_pipelines_differ_only_by_stems() {
        // image-mode and latent-mode nets share everything past the stem, so
        // the MAC difference is exactly the image stem cost
        let s = 8usize;
        let latent_net = build_seg_net(SegNetConfig::latent(16, 4, s), 2).unwrap();
        let image_net = build_seg_net(SegNetConfig::image(4, s), 2).unwrap();
        let latent_macs = latent_net.count_macs(Shape::new(1, 16, 8, 8)).unwrap();
        let image_macs = image_net.count_macs(Shape::new(1, 3, 64, 64)).unwrap();
        let stem_macs = conv_macs(16, 3, s, 8, 8);
        assert_eq!(image_macs - latent_macs, stem_macs);
    }

    #[test]
    fn csv_has_documented_header() {
        let codec = build_codec(CodecConfig::default(), 1).unwrap();
        let latent_net = build_seg_net(SegNetConfig::latent(16, 4, 8), 2).unwrap();
        let image_net = build_seg_net(SegNetConfig::image(4, 8), 2).unwrap();
        let report = pipeline_report(&codec, &latent_net, &image_net, 64, 64).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("component,params,macs\n"));
        assert!(csv.contains("cloud_saving_pct"));
    }
}
