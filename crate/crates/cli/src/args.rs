use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use butterfly_core::encoder::EncodeMode;
use butterfly_core::types::{ChiMode, DecoderConfig, Rho, SubpixelMode};
use clap::{Args, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationFormat {
    /// `frame,target_id,left,top,width,height,out_of_view,occlusion,category`
    Uavdt,
    /// `left,top,width,height,score,category,truncation,occlusion`, one file per image
    Visdrone,
}

impl AnnotationFormat {
    pub fn num_classes(self) -> usize {
        match self {
            AnnotationFormat::Uavdt => butterfly_core::io::UAVDT_CLASSES.len(),
            AnnotationFormat::Visdrone => butterfly_core::io::VISDRONE_CLASSES.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// AP at IoU 0.7, all-point interpolation
    Uavdt,
    /// AP over IoU 0.50:0.95, 101-point interpolation, AR at 1/10/100/500
    Coco,
}

#[derive(Debug, Clone, Args)]
pub struct GroundTruthArgs {
    /// Annotation file (UAVDT) or files/directories of per-image files (VisDrone)
    #[arg(long = "gt", required = true, num_args = 1..)]
    pub paths: Vec<PathBuf>,
    #[arg(long = "gt-format", value_enum, default_value = "uavdt")]
    pub format: AnnotationFormat,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Image width in pixels
    #[arg(long)]
    pub width: usize,
    /// Image height in pixels
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 4)]
    pub stride: u32,
    /// center1, window<k> (bd16 = window4) or full
    #[arg(long, default_value = "window4")]
    pub mode: EncodeMode,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Gaussian divisor; one value, or comma-separated per class
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<f64>,
    /// Minimum map value for a center
    #[arg(long, default_value_t = 0.05)]
    pub select_threshold: f64,
    /// Minimum cell confidence for a vote
    #[arg(long, default_value_t = 0.1)]
    pub accum_threshold: f64,
    /// Vote normalizer: a number, or `box` for the predicted box area in cells
    #[arg(long)]
    pub chi: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_min: f64,
    /// Use peak pixel centers instead of the vote targets
    #[arg(long)]
    pub no_subpixel: bool,
    /// Emit one box per confident cell instead of voting
    #[arg(long)]
    pub no_voting: bool,
}

pub fn parse_chi(s: &str) -> Result<ChiMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "box" | "area" | "box_area" => Ok(ChiMode::BoxArea),
        other => {
            let n: f64 = other.parse().with_context(|| format!("invalid chi '{s}'"))?;
            if !(n > 0.0) {
                bail!("chi must be positive, got {n}");
            }
            Ok(ChiMode::Fixed(n))
        }
    }
}

impl DecodeArgs {
    /// Decoder settings; `default_chi` applies when `--chi` is absent.
    pub fn config(&self, default_chi: ChiMode) -> Result<DecoderConfig> {
        let rho = match self.rho.as_slice() {
            [] => Rho::Uniform(10.0),
            [r] => Rho::Uniform(*r),
            many => Rho::PerClass(many.to_vec()),
        };
        let cfg = DecoderConfig {
            rho,
            accum_threshold: self.accum_threshold,
            select_threshold: self.select_threshold,
            sigma_min: self.sigma_min,
            chi_mode: self.chi.as_deref().map(parse_chi).transpose()?.unwrap_or(default_chi),
            subpixel: if self.no_subpixel { SubpixelMode::Disabled } else { SubpixelMode::WeightedMean },
            ..DecoderConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Protocol {
    pub fn config(self, num_classes: usize) -> butterfly_core::eval::EvalConfig {
        match self {
            Protocol::Uavdt => butterfly_core::eval::EvalConfig::uavdt(num_classes),
            Protocol::Coco => butterfly_core::eval::EvalConfig::coco(num_classes),
        }
    }
}

/// Comma-separated list of non-negative reals.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().with_context(|| format!("invalid number '{t}'"))?;
            if !(v >= 0.0) {
                bail!("expected a non-negative number, got {v}");
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode_args(rho: &[f64], chi: Option<&str>) -> DecodeArgs {
        DecodeArgs {
            rho: rho.to_vec(),
            select_threshold: 0.05,
            accum_threshold: 0.1,
            chi: chi.map(str::to_owned),
            sigma_min: 2.0,
            no_subpixel: false,
            no_voting: false,
        }
    }

    #[test]
    fn chi_values() {
        assert_eq!(parse_chi("box").unwrap(), ChiMode::BoxArea);
        assert_eq!(parse_chi(" 16 ").unwrap(), ChiMode::Fixed(16.0));
        assert!(parse_chi("0").is_err());
        assert!(parse_chi("nan").is_err());
        assert!(parse_chi("lots").is_err());
    }

    #[test]
    fn rho_forms() {
        let cfg = decode_args(&[], None).config(ChiMode::Fixed(1.0)).unwrap();
        assert_eq!(cfg.rho, Rho::Uniform(10.0));
        assert_eq!(cfg.chi_mode, ChiMode::Fixed(1.0));
        let cfg = decode_args(&[6.0, 8.0], Some("box")).config(ChiMode::Fixed(1.0)).unwrap();
        assert_eq!(cfg.rho, Rho::PerClass(vec![6.0, 8.0]));
        assert_eq!(cfg.chi_mode, ChiMode::BoxArea);
        assert!(decode_args(&[-1.0], None).config(ChiMode::Fixed(1.0)).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list("0, 0.25,1").unwrap(), vec![0.0, 0.25, 1.0]);
        assert!(parse_list("0,-1").is_err());
        assert!(parse_list("").is_err());
    }
}
