//! Helpers shared by the integration suites: random grids, brute-force oracles and
//! one-to-one box matching.

#![allow(dead_code)]

use butterfly_core::decoder::Vote;
use butterfly_core::eval::{LabeledDet, MatchLabel};
use butterfly_core::types::{BBox, Detection, FieldCell, FieldGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grid with random fields: about `density` of the cells confident, vectors within three
/// cells, sizes between 2 and 80 pixels.
pub fn random_grid(rng: &mut ChaCha8Rng, classes: usize, gh: usize, gw: usize, stride: u32, density: f64) -> FieldGrid {
    let mut g = FieldGrid::zeros(classes, gh, gw, stride).unwrap();
    let s = stride as f64;
    for c in 0..classes {
        for i in 0..gh {
            for j in 0..gw {
                let p = if rng.random_bool(density) { rng.random_range(0.0..1.0) } else { rng.random_range(0.0..0.1) };
                g.set_cell(
                    c,
                    i,
                    j,
                    &FieldCell {
                        p,
                        vx: rng.random_range(-3.0 * s..3.0 * s),
                        vy: rng.random_range(-3.0 * s..3.0 * s),
                        w_log: (rng.random_range(2.0..80.0f64) / s).ln(),
                        h_log: (rng.random_range(2.0..80.0f64) / s).ln(),
                        b: None,
                    },
                );
            }
        }
    }
    g
}

/// Untruncated sum of every vote's Gaussian at each pixel center, written out from
/// the vote fields directly.
pub fn naive_map(votes: &[Vote], width: usize, height: usize) -> Vec<f64> {
    (0..width * height)
        .into_par_iter()
        .map(|k| {
            let x = (k % width) as f64 + 0.5;
            let y = (k / width) as f64 + 0.5;
            let mut f = 0.0;
            for v in votes {
                let ex = (x - v.tx) / v.sigma_x;
                let ey = (y - v.ty) / v.sigma_y;
                f += v.p / v.chi * (-(ex * ex) / 2.0 - (ey * ey) / 2.0).exp();
            }
            f
        })
        .collect()
}

/// Strict local maxima of a row-major map in a 3×3 window, scanning every pixel.
pub fn brute_force_peaks(map: &[f64], width: usize, height: usize, floor: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let v = map[y * width + x];
            if v < floor {
                continue;
            }
            let mut best = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    if map[ny as usize * width + nx as usize] >= v {
                        best = false;
                    }
                }
            }
            if best {
                out.push((x, y));
            }
        }
    }
    out
}

/// Pairs each ground-truth box with its best same-class detection by IoU, one-to-one,
/// exhaustively over all remaining pairs.
pub fn match_one_to_one(gts: &[BBox], dets: &[Detection]) -> Vec<Option<(usize, f64)>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (d, det) in dets.iter().enumerate() {
            if det.bbox.class_id == gt.class_id {
                let iou = gt.iou(&det.bbox);
                if iou > 0.0 {
                    pairs.push((iou, g, d));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; gts.len()];
    let mut used = vec![false; dets.len()];
    for (iou, g, d) in pairs {
        if out[g].is_none() && !used[d] {
            out[g] = Some((d, iou));
            used[d] = true;
        }
    }
    out
}

pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt()
}

pub const H: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Minimizer of a unimodal function on `[lo, hi]`.
/// Zero of the central-difference derivative of `f` on `[lo, hi]`, by bisection.
pub fn stationary_point(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let slope = |x: f64| central(&f, x);
    let rising = slope(hi) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (slope(mid) > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}

pub fn ranked(labels: &str) -> Vec<LabeledDet> {
    let n = labels.len();
    labels
        .chars()
        .enumerate()
        .map(|(k, c)| {
            let score = 1.0 - k as f64 / (n as f64 + 1.0);
            match c {
                'T' => LabeledDet::tp(score),
                'F' => LabeledDet::fp(score),
                _ => LabeledDet { score, label: MatchLabel::Ignored },
            }
        })
        .collect()
}

/// `(ranked labels, ground truth, all-point AP, 101-point AP)`, enumerated by hand.
pub const GOLDEN: [(&str, usize, f64, f64); 10] = [
    ("T", 1, 1.0, 1.0),
    ("TF", 1, 1.0, 1.0),
    ("FT", 1, 0.5, 0.5),
    ("TFT", 2, 5.0 / 6.0, 253.0 / 303.0),
    ("FF", 1, 0.0, 0.0),
    ("", 3, 0.0, 0.0),
    ("TTFF", 4, 0.5, 51.0 / 101.0),
    ("FTFT", 2, 0.5, 0.5),
    ("TFFTT", 4, 0.55, 56.0 / 101.0),
    ("TFTFTF", 3, 34.0 / 45.0, 76.4 / 101.0),
];
