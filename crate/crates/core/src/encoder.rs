//! Ground-truth field targets from box annotations.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{cell_center, BBox, FieldCell, FieldGrid};

/// Fraction of the object size used for the ignore ring around assigned cells.
pub const IGNORE_FRACTION: f64 = 0.2;

/// Which cells of an object carry its field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodeMode {
    /// The single cell containing the center.
    Center1,
    /// The `k × k` block of cells nearest the center.
    Window(usize),
    /// Every cell whose center lies inside the box.
    FullBox,
}

impl EncodeMode {
    /// Number of cells expected to vote for an unobstructed object, when it is fixed.
    pub fn expected_votes(&self) -> Option<usize> {
        match self {
            EncodeMode::Center1 => Some(1),
            EncodeMode::Window(k) => Some(k * k),
            EncodeMode::FullBox => None,
        }
    }
}

impl fmt::Display for EncodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeMode::Center1 => write!(f, "center1"),
            EncodeMode::Window(k) => write!(f, "window{k}"),
            EncodeMode::FullBox => write!(f, "full"),
        }
    }
}

impl FromStr for EncodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "center1" | "center" | "bd1" => return Ok(EncodeMode::Center1),
            "full" | "fullbox" | "bdfull" => return Ok(EncodeMode::FullBox),
            "bd16" => return Ok(EncodeMode::Window(4)),
            _ => {}
        }
        let k = lower
            .strip_prefix("window")
            .map(|rest| rest.trim_start_matches([':', '=']))
            .and_then(|rest| rest.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown encode mode '{s}'")))?;
        if k == 0 {
            return Err(Error::InvalidConfig("window size must be at least 1".into()));
        }
        Ok(EncodeMode::Window(k))
    }
}

/// Cells with centers in the half-open pixel interval `[lo, hi)` along one axis.
fn centers_within(lo: f64, hi: f64, stride: u32, n: usize) -> std::ops::Range<usize> {
    let s = stride as f64;
    let center = |k: i64| (k as f64 + 0.5) * s;
    let mut first = (lo / s - 0.5).ceil() as i64 - 1;
    while center(first) < lo {
        first += 1;
    }
    let mut end = (hi / s - 0.5).ceil() as i64 - 1;
    while center(end) < hi {
        end += 1;
    }
    let first = first.clamp(0, n as i64) as usize;
    let end = end.clamp(0, n as i64) as usize;
    first..end.max(first)
}

/// Start index of the `k` consecutive cells whose centers are nearest `c`; ties go to the lower index.
fn window_start(c: f64, k: usize, stride: u32) -> i64 {
    let u = c / stride as f64 - 0.5;
    let v = u - (k as f64 - 1.0) / 2.0;
    (v - 0.5).ceil() as i64
}

fn clip_range(start: i64, k: usize, n: usize) -> std::ops::Range<usize> {
    let lo = start.clamp(0, n as i64) as usize;
    let hi = (start + k as i64).clamp(0, n as i64) as usize;
    lo..hi.max(lo)
}

fn overlaps_grid(bbox: &BBox, stride: u32, grid_h: usize, grid_w: usize) -> bool {
    let (x0, y0, x1, y1) = bbox.to_corners();
    let w = (grid_w as u64 * stride as u64) as f64;
    let h = (grid_h as u64 * stride as u64) as f64;
    x1 > 0.0 && y1 > 0.0 && x0 < w && y0 < h
}

/// Grid cells `(row, col)` assigned to `bbox`, in row-major order.
///
/// Empty when the box lies entirely outside the grid. `FullBox` falls back to the
/// center cell for boxes too small to contain any cell center.
pub fn assign_cells(bbox: &BBox, stride: u32, grid_h: usize, grid_w: usize, mode: EncodeMode) -> Vec<(usize, usize)> {
    if stride == 0 || grid_h == 0 || grid_w == 0 || !overlaps_grid(bbox, stride, grid_h, grid_w) {
        return Vec::new();
    }
    let center_cell = || {
        let s = stride as f64;
        let i = ((bbox.cy / s).floor().max(0.0) as usize).min(grid_h - 1);
        let j = ((bbox.cx / s).floor().max(0.0) as usize).min(grid_w - 1);
        vec![(i, j)]
    };
    match mode {
        EncodeMode::Center1 => center_cell(),
        EncodeMode::Window(k) => {
            let rows = clip_range(window_start(bbox.cy, k, stride), k, grid_h);
            let cols = clip_range(window_start(bbox.cx, k, stride), k, grid_w);
            let cells: Vec<_> = rows.flat_map(|i| cols.clone().map(move |j| (i, j))).collect();
            if cells.is_empty() {
                center_cell()
            } else {
                cells
            }
        }
        EncodeMode::FullBox => {
            let (x0, y0, x1, y1) = bbox.to_corners();
            let rows = centers_within(y0, y1, stride, grid_h);
            let cols = centers_within(x0, x1, stride, grid_w);
            let cells: Vec<_> = rows.flat_map(|i| cols.clone().map(move |j| (i, j))).collect();
            if cells.is_empty() {
                center_cell()
            } else {
                cells
            }
        }
    }
}

fn dist2(i: usize, j: usize, stride: u32, bbox: &BBox) -> f64 {
    let (x, y) = cell_center(i, j, stride);
    (x - bbox.cx).powi(2) + (y - bbox.cy).powi(2)
}

/// Encode annotations into field targets.
///
/// Same-class cells claimed by several objects point to the nearest center (lower
/// annotation index on ties). For `Center1`/`Window` modes, unassigned cells in a ring of
/// 20% of the object size around the assigned block (inside the box) are flagged ignore.
pub fn encode(
    annotations: &[BBox],
    image_w: usize,
    image_h: usize,
    num_classes: usize,
    stride: u32,
    mode: EncodeMode,
) -> Result<FieldGrid> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    if let EncodeMode::Window(0) = mode {
        return Err(Error::InvalidConfig("window size must be at least 1".into()));
    }
    for a in annotations {
        if a.class_id >= num_classes {
            return Err(Error::UnknownClass {
                class_id: a.class_id,
                num_classes,
            });
        }
        BBox::new(a.cx, a.cy, a.w, a.h, a.class_id)?;
    }

    let mut grid = FieldGrid::for_image(num_classes, image_w, image_h, stride)?;
    let (gh, gw) = (grid.grid_h(), grid.grid_w());
    let s = stride as f64;

    let assigned: Vec<Vec<(usize, usize)>> = annotations
        .iter()
        .enumerate()
        .map(|(n, a)| {
            let cells = assign_cells(a, stride, gh, gw, mode);
            if cells.is_empty() {
                log::warn!("annotation {n} at ({}, {}) lies outside the {}x{} grid; skipped", a.cx, a.cy, gw, gh);
            }
            cells
        })
        .collect();

    for class_id in 0..num_classes {
        // owner[k] = (annotation index, squared distance to its center)
        let mut owner: Vec<Option<(usize, f64)>> = vec![None; gh * gw];
        for (n, a) in annotations.iter().enumerate().filter(|(_, a)| a.class_id == class_id) {
            for &(i, j) in &assigned[n] {
                let d = dist2(i, j, stride, a);
                let k = i * gw + j;
                match owner[k] {
                    Some((_, best)) if best <= d => {}
                    _ => owner[k] = Some((n, d)),
                }
            }
        }

        for i in 0..gh {
            for j in 0..gw {
                if let Some((n, _)) = owner[i * gw + j] {
                    let a = &annotations[n];
                    let (x, y) = cell_center(i, j, stride);
                    grid.set_cell(
                        class_id,
                        i,
                        j,
                        &FieldCell {
                            p: 1.0,
                            vx: a.cx - x,
                            vy: a.cy - y,
                            w_log: (a.w / s).ln(),
                            h_log: (a.h / s).ln(),
                            b: None,
                        },
                    );
                }
            }
        }

        if mode == EncodeMode::FullBox {
            continue;
        }
        for (n, a) in annotations.iter().enumerate().filter(|(_, a)| a.class_id == class_id) {
            let cells = &assigned[n];
            let Some(&(i_first, j_first)) = cells.first() else {
                continue;
            };
            let (mut i0, mut i1, mut j0, mut j1) = (i_first, i_first, j_first, j_first);
            for &(i, j) in cells {
                i0 = i0.min(i);
                i1 = i1.max(i);
                j0 = j0.min(j);
                j1 = j1.max(j);
            }
            let (bx0, by0, bx1, by1) = a.to_corners();
            let rx0 = (j0 as f64 * s - IGNORE_FRACTION * a.w).max(bx0);
            let rx1 = ((j1 + 1) as f64 * s + IGNORE_FRACTION * a.w).min(bx1);
            let ry0 = (i0 as f64 * s - IGNORE_FRACTION * a.h).max(by0);
            let ry1 = ((i1 + 1) as f64 * s + IGNORE_FRACTION * a.h).min(by1);
            if rx0 >= rx1 || ry0 >= ry1 {
                continue;
            }
            for i in centers_within(ry0, ry1, stride, gh) {
                for j in centers_within(rx0, rx1, stride, gw) {
                    if owner[i * gw + j].is_none() {
                        grid.set_ignored(class_id, i, j, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}
