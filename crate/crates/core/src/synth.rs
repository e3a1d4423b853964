//! Synthetic scenes and field perturbations for exercising the decoder without a network.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::decoder::{decode, decode_no_voting};
use crate::encoder::{encode, EncodeMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, ImageEval};
use crate::types::{cell_center, BBox, ChiMode, DecoderConfig, FieldGrid};

/// Placement attempts per object before a scene is declared infeasible.
pub const MAX_PLACEMENT_RETRIES: usize = 1000;

/// Log-uniform size bounds for one class, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRange {
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl SizeRange {
    pub fn square(min: f64, max: f64) -> Self {
        Self { w_min: min, w_max: max, h_min: min, h_max: max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub image_w: usize,
    pub image_h: usize,
    pub count_min: usize,
    pub count_max: usize,
    /// One size range per class.
    pub class_sizes: Vec<SizeRange>,
    /// Largest IoU allowed between any two boxes of the scene.
    pub max_iou: f64,
    /// Class mixture, summing to 1.
    pub class_weights: Vec<f64>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.image_w == 0 || self.image_h == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.count_min > self.count_max {
            return bad(format!("count range [{}, {}] is empty", self.count_min, self.count_max));
        }
        if self.class_sizes.is_empty() || self.class_sizes.len() != self.class_weights.len() {
            return bad("need one size range and one weight per class".into());
        }
        for r in &self.class_sizes {
            let ok = r.w_min > 0.0 && r.h_min > 0.0 && r.w_min <= r.w_max && r.h_min <= r.h_max;
            if !ok || r.w_max > self.image_w as f64 || r.h_max > self.image_h as f64 {
                return bad(format!("invalid size range {r:?}"));
            }
        }
        if self.class_weights.iter().any(|&w| !(w >= 0.0)) || (self.class_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("class weights must be non-negative and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_iou) {
            return bad(format!("max_iou {} outside [0, 1]", self.max_iou));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Random boxes fully inside the image with pairwise IoU at most `max_iou`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<BBox>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = WeightedIndex::new(&spec.class_weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let count = rng.random_range(spec.count_min..=spec.count_max);
    let (img_w, img_h) = (spec.image_w as f64, spec.image_h as f64);

    let mut boxes: Vec<BBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let class_id = classes.sample(&mut rng);
            let r = spec.class_sizes[class_id];
            let w = log_uniform(&mut rng, r.w_min, r.w_max);
            let h = log_uniform(&mut rng, r.h_min, r.h_max);
            let cx = if w >= img_w { img_w / 2.0 } else { rng.random_range(w / 2.0..img_w - w / 2.0) };
            let cy = if h >= img_h { img_h / 2.0 } else { rng.random_range(h / 2.0..img_h - h / 2.0) };
            let candidate = BBox::new(cx, cy, w, h, class_id)?;
            if boxes.iter().all(|b| b.iou(&candidate) <= spec.max_iou) {
                boxes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleScene { placed: boxes.len(), requested: count });
        }
    }
    Ok(boxes)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    /// Probability that a cell's confidence is zeroed.
    pub dropout: f64,
    /// Gaussian noise on the vector channels, in pixels.
    pub vector_sigma: f64,
    /// Gaussian noise on the log-size channels.
    pub size_sigma: f64,
    /// Gaussian noise on the confidence, clamped back to `[0, 1]`.
    pub confidence_sigma: f64,
    /// Fraction of each object's cells zeroed as one contiguous half-plane.
    pub occlusion: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dropout", self.dropout), ("occlusion", self.occlusion)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("vector_sigma", self.vector_sigma),
            ("size_sigma", self.size_sigma),
            ("confidence_sigma", self.confidence_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        *self == NoiseSpec::default()
    }
}

/// Cells of one class plane grouped by the (rounded) point they vote for.
fn object_groups(grid: &FieldGrid, class_id: usize) -> BTreeMap<(i64, i64), Vec<(usize, usize)>> {
    let plane = grid.plane(class_id);
    let mut groups: BTreeMap<(i64, i64), Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..grid.grid_h() {
        for j in 0..grid.grid_w() {
            let k = grid.index(i, j);
            if plane.p()[k] <= 0.0 {
                continue;
            }
            let (x, y) = cell_center(i, j, grid.stride());
            let key = (((x + plane.vx()[k]) * 1e6).round() as i64, ((y + plane.vy()[k]) * 1e6).round() as i64);
            groups.entry(key).or_default().push((i, j));
        }
    }
    groups
}

/// Zero a contiguous `fraction` of each object's cells, cut from a random side.
fn occlude(grid: &mut FieldGrid, fraction: f64, rng: &mut impl Rng) {
    for class_id in 0..grid.num_classes() {
        for (_, mut cells) in object_groups(grid, class_id) {
            let n_zero = (fraction * cells.len() as f64).floor() as usize;
            match rng.random_range(0..4u8) {
                0 => cells.sort_by_key(|&(i, j)| (j, i)),
                1 => cells.sort_by_key(|&(i, j)| (std::cmp::Reverse(j), i)),
                2 => cells.sort_by_key(|&(i, j)| (i, j)),
                _ => cells.sort_by_key(|&(i, j)| (std::cmp::Reverse(i), j)),
            }
            for &(i, j) in cells.iter().take(n_zero) {
                let k = grid.index(i, j);
                grid.plane_mut(class_id).p_mut()[k] = 0.0;
            }
        }
    }
}

/// Apply occlusion, dropout and additive channel noise. Zero noise returns an identical grid.
pub fn perturb(grid: &FieldGrid, noise: &NoiseSpec, seed: u64) -> Result<FieldGrid> {
    noise.validate()?;
    let mut out = grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise.occlusion > 0.0 {
        occlude(&mut out, noise.occlusion, &mut rng);
    }
    for class_id in 0..out.num_classes() {
        let plane = out.plane_mut(class_id);
        for k in 0..plane.len() {
            if noise.dropout > 0.0 && rng.random_bool(noise.dropout) {
                plane.p_mut()[k] = 0.0;
            }
            if noise.confidence_sigma > 0.0 {
                let jitter: f64 = rng.sample(StandardNormal);
                let p = &mut plane.p_mut()[k];
                *p = (*p + noise.confidence_sigma * jitter).clamp(0.0, 1.0);
            }
            if noise.vector_sigma > 0.0 {
                let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                plane.vx_mut()[k] += noise.vector_sigma * nx;
                plane.vy_mut()[k] += noise.vector_sigma * ny;
            }
            if noise.size_sigma > 0.0 {
                let (nw, nh): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                plane.w_log_mut()[k] += noise.size_sigma * nw;
                plane.h_log_mut()[k] += noise.size_sigma * nh;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    Voting,
    NoVoting,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Voting => "voting",
            DecoderKind::NoVoting => "no_voting",
        })
    }
}

/// Vote normalizer matching an encoding mode.
pub fn chi_for_mode(mode: EncodeMode) -> ChiMode {
    match mode {
        EncodeMode::Center1 => ChiMode::Fixed(1.0),
        EncodeMode::Window(k) => ChiMode::Fixed((k * k) as f64),
        EncodeMode::FullBox => ChiMode::BoxArea,
    }
}

/// Seed used for the `index`-th scene derived from a base seed.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Shared settings for decoding synthetic scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub num_classes: usize,
    pub stride: u32,
    /// Decoder settings; `chi_mode` is replaced to match each encoding mode.
    pub decoder: DecoderConfig,
    pub eval: EvalConfig,
    /// Base seed for the perturbation of each scene.
    pub noise_seed: u64,
}

/// Encode, perturb and decode one scene.
pub fn decode_scene(
    scene: &[BBox],
    mode: EncodeMode,
    decoder: DecoderKind,
    noise: &NoiseSpec,
    harness: &HarnessConfig,
    noise_seed: u64,
) -> Result<ImageEval> {
    let grid = encode(scene, harness.image_w, harness.image_h, harness.num_classes, harness.stride, mode)?;
    let grid = perturb(&grid, noise, noise_seed)?;
    let cfg = DecoderConfig {
        chi_mode: chi_for_mode(mode),
        ..harness.decoder.clone()
    };
    let detections = match decoder {
        DecoderKind::Voting => decode(&grid, &cfg)?,
        DecoderKind::NoVoting => decode_no_voting(&grid, &cfg)?,
    };
    Ok(ImageEval {
        detections,
        ground_truth: scene.to_vec(),
        ignore_regions: Vec::new(),
    })
}

/// Encode, perturb, decode and evaluate a batch of scenes under one configuration.
pub fn evaluate_scenes(
    scenes: &[Vec<BBox>],
    mode: EncodeMode,
    decoder: DecoderKind,
    noise: &NoiseSpec,
    harness: &HarnessConfig,
) -> Result<EvalReport> {
    let images = scenes
        .par_iter()
        .enumerate()
        .map(|(s, scene)| decode_scene(scene, mode, decoder, noise, harness, scene_seed(harness.noise_seed, s)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&images, &harness.eval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: EncodeMode,
    pub decoder: DecoderKind,
    pub noise: NoiseSpec,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: &'static str =
        "mode,decoder,dropout,vector_sigma,size_sigma,confidence_sigma,occlusion,iou,ap,f1,tp,fp,fn";

    /// Comma-separated table with [`Self::HEADER`]; one line per configuration and IoU threshold.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for row in &self.rows {
            let n = &row.noise;
            for t in &row.report.thresholds {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{:.2},{:.6},{:.6},{},{},{}",
                    row.mode,
                    row.decoder,
                    n.dropout,
                    n.vector_sigma,
                    n.size_sigma,
                    n.confidence_sigma,
                    n.occlusion,
                    t.iou,
                    t.ap,
                    t.f1(),
                    t.tp,
                    t.fp,
                    t.fn_
                );
            }
        }
        s
    }
}

/// Evaluate the full cross product of modes × decoders × noise settings.
pub fn run_ablation(
    scenes: &[Vec<BBox>],
    modes: &[EncodeMode],
    decoders: &[DecoderKind],
    noises: &[NoiseSpec],
    harness: &HarnessConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(modes.len() * decoders.len() * noises.len());
    for &mode in modes {
        for &decoder in decoders {
            for noise in noises {
                let report = evaluate_scenes(scenes, mode, decoder, noise, harness)?;
                rows.push(AblationRow { mode, decoder, noise: *noise, report });
            }
        }
    }
    Ok(AblationTable { rows })
}
