//! Voting decoder: field grid → scored boxes.
//!
//! Every confident cell casts a vote for the center it points to. Votes are spread
//! into a per-class confidence map at pixel resolution with a Gaussian whose width
//! scales with the predicted object size, normalized by the expected number of
//! voters. Local maxima of that map are object centers; the boxes take the
//! confidence-weighted mean size of the votes that agree with the center.

use crate::error::Result;
use crate::nms::soft_nms_per_class;
use crate::types::{cell_center, BBox, ChiMode, DecoderConfig, Detection, FieldGrid, SubpixelMode};

/// Truncation radius, in sigmas, below which no vote is ever cut.
const MIN_TRUNCATION: f64 = 3.0;

/// Gaussian spread `(σx, σy)` for a vote predicting a `w_px × h_px` box.
pub fn sigma(w_px: f64, h_px: f64, rho: f64, sigma_min: f64) -> (f64, f64) {
    (sigma_min.max(w_px / rho), sigma_min.max(h_px / rho))
}

/// Vote normalizer.
pub fn chi(mode: ChiMode, w_px: f64, h_px: f64, stride: u32) -> f64 {
    match mode {
        ChiMode::Fixed(n) => n,
        ChiMode::BoxArea => {
            let s = stride as f64;
            ((w_px / s) * (h_px / s)).max(1.0)
        }
    }
}

/// One cell's contribution to the accumulated map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    /// Source cell `(row, col)`.
    pub source: (usize, usize),
    pub tx: f64,
    pub ty: f64,
    pub p: f64,
    pub w_px: f64,
    pub h_px: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub chi: f64,
}

impl Vote {
    /// Weight of the vote's Gaussian at its mode.
    pub fn weight(&self) -> f64 {
        self.p / self.chi
    }

    /// Untruncated Gaussian contribution at an arbitrary image point.
    pub fn density_at(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.tx) / self.sigma_x;
        let dy = (y - self.ty) / self.sigma_y;
        self.weight() * (-0.5 * dx * dx - 0.5 * dy * dy).exp()
    }

    /// Whether the target lies in pixel `(px, py)`, boundaries included.
    pub fn lands_in(&self, px: usize, py: usize) -> bool {
        let (x0, y0) = (px as f64, py as f64);
        self.tx >= x0 && self.tx <= x0 + 1.0 && self.ty >= y0 && self.ty <= y0 + 1.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Votes {
    pub per_class: Vec<Vec<Vote>>,
    /// Cells above the accumulation threshold skipped for non-finite channels.
    pub skipped_nonfinite: usize,
}

impl Votes {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }
}

/// Gather a vote from every cell with `p > accum_threshold`.
///
/// Targets falling outside the padded image are clamped to its border.
pub fn collect_votes(grid: &FieldGrid, cfg: &DecoderConfig) -> Votes {
    let (img_w, img_h) = grid.image_size();
    let (img_w, img_h) = (img_w as f64, img_h as f64);
    let s = grid.stride() as f64;
    let mut votes = Votes {
        per_class: Vec::with_capacity(grid.num_classes()),
        skipped_nonfinite: 0,
    };
    for (class_id, plane) in grid.planes().iter().enumerate() {
        let rho = cfg.rho.for_class(class_id);
        let mut class_votes = Vec::new();
        for i in 0..grid.grid_h() {
            for j in 0..grid.grid_w() {
                let k = grid.index(i, j);
                let p = plane.p()[k];
                if p.is_nan() {
                    votes.skipped_nonfinite += 1;
                    continue;
                }
                if p <= cfg.accum_threshold {
                    continue;
                }
                let (vx, vy) = (plane.vx()[k], plane.vy()[k]);
                let w_px = plane.w_log()[k].exp() * s;
                let h_px = plane.h_log()[k].exp() * s;
                let finite = [p, vx, vy, w_px, h_px].iter().all(|v| v.is_finite());
                if !finite || w_px <= 0.0 || h_px <= 0.0 {
                    votes.skipped_nonfinite += 1;
                    continue;
                }
                let (cx, cy) = cell_center(i, j, grid.stride());
                let (sigma_x, sigma_y) = sigma(w_px, h_px, rho, cfg.sigma_min);
                class_votes.push(Vote {
                    source: (i, j),
                    tx: (cx + vx).clamp(0.0, img_w),
                    ty: (cy + vy).clamp(0.0, img_h),
                    p: p.min(1.0),
                    w_px,
                    h_px,
                    sigma_x,
                    sigma_y,
                    chi: chi(cfg.chi_mode, w_px, h_px, grid.stride()),
                });
            }
        }
        votes.per_class.push(class_votes);
    }
    votes
}

/// Per-class confidence map at pixel resolution, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HighResMap {
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
}

impl HighResMap {
    pub fn zeros(num_classes: usize, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            planes: vec![vec![0.0; width * height]; num_classes],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, class_id: usize) -> &[f64] {
        &self.planes[class_id]
    }

    #[inline]
    pub fn get(&self, class_id: usize, x: usize, y: usize) -> f64 {
        self.planes[class_id][y * self.width + x]
    }
}

/// Truncation radius in sigmas keeping the summed tail mass of a plane below `tolerance`.
pub fn truncation_radius(total_weight: f64, tolerance: f64) -> f64 {
    if total_weight <= tolerance {
        return MIN_TRUNCATION;
    }
    (2.0 * (total_weight / tolerance).ln()).sqrt().max(MIN_TRUNCATION)
}

/// Pixel indices whose centers lie within `radius` of `t`, clipped to `[0, n)`.
fn pixel_span(t: f64, radius: f64, n: usize) -> std::ops::Range<usize> {
    let lo = (t - radius - 0.5).ceil().max(0.0);
    let hi = (t + radius - 0.5).floor() + 1.0;
    let lo = (lo as usize).min(n);
    let hi = (hi.max(0.0) as usize).min(n);
    lo..hi.max(lo)
}

fn accumulate_plane(votes: &[Vote], width: usize, height: usize, tolerance: f64, out: &mut [f64]) {
    let total: f64 = votes.iter().map(Vote::weight).sum();
    let radius = truncation_radius(total, tolerance);
    let mut gx = Vec::new();
    for v in votes {
        let xs = pixel_span(v.tx, radius * v.sigma_x, width);
        let ys = pixel_span(v.ty, radius * v.sigma_y, height);
        if xs.is_empty() || ys.is_empty() {
            continue;
        }
        gx.clear();
        gx.extend(xs.clone().map(|x| {
            let d = (x as f64 + 0.5 - v.tx) / v.sigma_x;
            (-0.5 * d * d).exp()
        }));
        let weight = v.weight();
        for y in ys {
            let d = (y as f64 + 0.5 - v.ty) / v.sigma_y;
            let a = weight * (-0.5 * d * d).exp();
            let row = &mut out[y * width + xs.start..y * width + xs.end];
            for (cell, g) in row.iter_mut().zip(&gx) {
                *cell += a * g;
            }
        }
    }
}

/// Sum every vote's Gaussian into a map sampled at pixel centers `(x + 0.5, y + 0.5)`.
///
/// Each Gaussian is truncated at a radius chosen so the summed truncation error at any
/// pixel stays below `cfg.accum_tolerance` (and never below 3σ).
pub fn accumulate(votes: &Votes, cfg: &DecoderConfig, width: usize, height: usize) -> HighResMap {
    let mut map = HighResMap::zeros(votes.per_class.len(), width, height);
    for (class_votes, plane) in votes.per_class.iter().zip(map.planes.iter_mut()) {
        accumulate_plane(class_votes, width, height, cfg.accum_tolerance, plane);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class_id: usize,
    pub px: usize,
    pub py: usize,
    pub score: f64,
}

/// Local maxima of the map at or above `select_threshold`.
///
/// A pixel is a peak when no pixel in its `peak_window` neighborhood is larger, and no
/// equal pixel in it comes earlier in `(y, x)` order.
pub fn extract_peaks(map: &HighResMap, cfg: &DecoderConfig) -> Vec<Peak> {
    let half = cfg.peak_window / 2;
    let (w, h) = (map.width, map.height);
    let mut peaks = Vec::new();
    for (class_id, plane) in map.planes.iter().enumerate() {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, &v) in row.iter().enumerate() {
                if v < cfg.select_threshold || v <= 0.0 {
                    continue;
                }
                let is_peak = (y.saturating_sub(half)..(y + half + 1).min(h)).all(|ny| {
                    (x.saturating_sub(half)..(x + half + 1).min(w)).all(|nx| {
                        let n = plane[ny * w + nx];
                        (ny, nx) == (y, x) || n < v || (n == v && (ny, nx) > (y, x))
                    })
                });
                if is_peak {
                    peaks.push(Peak {
                        class_id,
                        px: x,
                        py: y,
                        score: v.min(1.0),
                    });
                }
            }
        }
    }
    peaks
}

/// Sub-pixel center for a peak from the votes landing in its pixel.
///
/// Falls back to the pixel center when disabled or when no vote lands in the pixel.
pub fn subpixel_refine<'a>(
    px: usize,
    py: usize,
    votes: impl IntoIterator<Item = &'a Vote>,
    mode: SubpixelMode,
) -> (f64, f64) {
    let fallback = (px as f64 + 0.5, py as f64 + 0.5);
    let inside = votes.into_iter().filter(|v| v.lands_in(px, py));
    match mode {
        SubpixelMode::Disabled => fallback,
        SubpixelMode::WeightedMean => {
            let (mut sx, mut sy, mut sp) = (0.0, 0.0, 0.0);
            for v in inside {
                sx += v.p * v.tx;
                sy += v.p * v.ty;
                sp += v.p;
            }
            if sp > 0.0 {
                (sx / sp, sy / sp)
            } else {
                fallback
            }
        }
        SubpixelMode::BestVote => {
            let mut best: Option<&Vote> = None;
            for v in inside {
                if best.is_none_or(|b| v.p > b.p) {
                    best = Some(v);
                }
            }
            best.map_or(fallback, |v| (v.tx, v.ty))
        }
    }
}

/// Confidence-weighted mean size of the votes whose target lies within
/// `max(σx, σy)` of `(cx, cy)`; `None` when no vote qualifies.
pub fn aggregate_size<'a>(cx: f64, cy: f64, votes: impl IntoIterator<Item = &'a Vote>) -> Option<(f64, f64)> {
    let (mut sw, mut sh, mut sp) = (0.0, 0.0, 0.0);
    for v in votes {
        let r = v.sigma_x.max(v.sigma_y);
        let (dx, dy) = (v.tx - cx, v.ty - cy);
        if dx * dx + dy * dy <= r * r {
            sw += v.p * v.w_px;
            sh += v.p * v.h_px;
            sp += v.p;
        }
    }
    (sp > 0.0).then(|| (sw / sp, sh / sp))
}

/// Votes of one class ordered by target row, for range queries.
struct VoteIndex<'a> {
    sorted: Vec<&'a Vote>,
    max_sigma: f64,
}

impl<'a> VoteIndex<'a> {
    fn new(votes: &'a [Vote]) -> Self {
        let mut sorted: Vec<&Vote> = votes.iter().collect();
        sorted.sort_by(|a, b| a.ty.total_cmp(&b.ty));
        let max_sigma = votes.iter().map(|v| v.sigma_x.max(v.sigma_y)).fold(0.0, f64::max);
        Self { sorted, max_sigma }
    }

    /// Votes with `ty` in `[y0, y1]`, in index order.
    fn rows(&self, y0: f64, y1: f64) -> &[&'a Vote] {
        let lo = self.sorted.partition_point(|v| v.ty < y0);
        let hi = self.sorted.partition_point(|v| v.ty <= y1);
        &self.sorted[lo..hi.max(lo)]
    }
}

/// Full decoder output, including intermediate state useful for inspection.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub detections: Vec<Detection>,
    pub map: HighResMap,
    pub votes: Votes,
    /// Peaks dropped because no vote supported a size.
    pub unsupported_peaks: usize,
}

/// Decode and keep the accumulated map and votes.
pub fn decode_with_map(grid: &FieldGrid, cfg: &DecoderConfig) -> Result<DecodeOutput> {
    cfg.validate()?;
    let (width, height) = grid.image_size();
    let votes = collect_votes(grid, cfg);
    let map = accumulate(&votes, cfg, width, height);
    let peaks = extract_peaks(&map, cfg);

    let indices: Vec<VoteIndex> = votes.per_class.iter().map(|v| VoteIndex::new(v)).collect();
    let mut raw = Vec::with_capacity(peaks.len());
    let mut unsupported_peaks = 0;
    for peak in &peaks {
        let index = &indices[peak.class_id];
        let in_pixel = index.rows(peak.py as f64, peak.py as f64 + 1.0).iter().copied();
        let (cx, cy) = subpixel_refine(peak.px, peak.py, in_pixel, cfg.subpixel);
        let near = index.rows(cy - index.max_sigma, cy + index.max_sigma).iter().copied();
        let Some((w, h)) = aggregate_size(cx, cy, near) else {
            unsupported_peaks += 1;
            continue;
        };
        if let Ok(bbox) = BBox::new(cx, cy, w, h, peak.class_id) {
            raw.push(Detection::new(bbox, peak.score));
        }
    }

    let detections = finish(raw, cfg, width, height);
    Ok(DecodeOutput {
        detections,
        map,
        votes,
        unsupported_peaks,
    })
}

/// Decode a field grid into detections with the voting mechanism.
pub fn decode(grid: &FieldGrid, cfg: &DecoderConfig) -> Result<Vec<Detection>> {
    decode_with_map(grid, cfg).map(|out| out.detections)
}

/// Boxes predicted by every cell above `select_threshold` before suppression.
pub fn raw_cell_boxes(grid: &FieldGrid, cfg: &DecoderConfig) -> Vec<Detection> {
    let select = DecoderConfig {
        accum_threshold: cfg.select_threshold,
        ..cfg.clone()
    };
    collect_votes(grid, &select)
        .per_class
        .iter()
        .enumerate()
        .flat_map(|(class_id, votes)| {
            votes.iter().filter_map(move |v| {
                BBox::new(v.tx, v.ty, v.w_px, v.h_px, class_id)
                    .ok()
                    .map(|b| Detection::new(b, v.p))
            })
        })
        .collect()
}

/// Ablation baseline without voting: one box per confident cell, then soft-NMS.
pub fn decode_no_voting(grid: &FieldGrid, cfg: &DecoderConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let (width, height) = grid.image_size();
    Ok(finish(raw_cell_boxes(grid, cfg), cfg, width, height))
}

fn finish(raw: Vec<Detection>, cfg: &DecoderConfig, width: usize, height: usize) -> Vec<Detection> {
    soft_nms_per_class(&raw, cfg.softnms_sigma, cfg.softnms_min_score)
        .into_iter()
        .filter_map(|d| {
            d.bbox
                .clamp_to(width as f64, height as f64)
                .map(|bbox| Detection { bbox, score: d.score })
        })
        .collect()
}
