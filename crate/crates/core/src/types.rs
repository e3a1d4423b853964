//! Geometry primitives, the per-class field tensor and decoder configuration.
//!
//! All coordinates are image pixels. Grid cell `(i, j)` (row, column) covers
//! pixels `[j·S, (j+1)·S) × [i·S, (i+1)·S)` for stride `S`, and its center is
//! `((j + 0.5)·S, (i + 0.5)·S)`. The same convention with `S = 1` is used for
//! pixels of the high resolution map.

use crate::error::{Error, Result};

/// Axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: usize,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, class_id: usize) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite center ({cx}, {cy})")));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!("size must be positive, got {w}x{h}")));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            class_id,
        })
    }

    pub fn from_corners(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: usize) -> Result<Self> {
        Self::new(
            (x_min + x_max) / 2.0,
            (y_min + y_max) / 2.0,
            x_max - x_min,
            y_max - y_min,
            class_id,
        )
    }

    /// Box from the `(left, top, width, height)` form used by annotation files.
    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64, class_id: usize) -> Result<Self> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h, class_id)
    }

    /// `(x_min, y_min, x_max, y_max)`.
    pub fn to_corners(&self) -> (f64, f64, f64, f64) {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Area of the intersection with `other`.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.to_corners();
        let (bx0, by0, bx1, by1) = other.to_corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        iw * ih
    }

    /// Clip to `[0, width] × [0, height]`; `None` when nothing of positive area is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let (x0, y0, x1, y1) = self.to_corners();
        let x0 = x0.clamp(0.0, width);
        let x1 = x1.clamp(0.0, width);
        let y0 = y0.clamp(0.0, height);
        let y1 = y1.clamp(0.0, height);
        BBox::from_corners(x0, y0, x1, y1, self.class_id).ok()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self {
            bbox,
            score: score.clamp(0.0, 1.0),
        }
    }

    pub fn class_id(&self) -> usize {
        self.bbox.class_id
    }
}

/// Center of grid cell `(i, j)` in image pixels.
#[inline]
pub fn cell_center(i: usize, j: usize, stride: u32) -> (f64, f64) {
    let s = stride as f64;
    ((j as f64 + 0.5) * s, (i as f64 + 0.5) * s)
}

/// One cell of a class plane. `w_log`/`h_log` hold `ln(size / stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldCell {
    pub p: f64,
    pub vx: f64,
    pub vy: f64,
    pub w_log: f64,
    pub h_log: f64,
    pub b: Option<f64>,
}

/// Channels for a single class over the whole grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPlane {
    p: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    w_log: Vec<f64>,
    h_log: Vec<f64>,
    b: Option<Vec<f64>>,
    ignore: Vec<bool>,
}

macro_rules! plane_accessors {
    ($($name:ident, $name_mut:ident;)*) => {
        $(
            pub fn $name(&self) -> &[f64] {
                &self.$name
            }

            pub fn $name_mut(&mut self) -> &mut [f64] {
                &mut self.$name
            }
        )*
    };
}

impl ClassPlane {
    fn zeros(len: usize) -> Self {
        Self {
            p: vec![0.0; len],
            vx: vec![0.0; len],
            vy: vec![0.0; len],
            w_log: vec![0.0; len],
            h_log: vec![0.0; len],
            b: None,
            ignore: vec![false; len],
        }
    }

    plane_accessors! {
        p, p_mut;
        vx, vx_mut;
        vy, vy_mut;
        w_log, w_log_mut;
        h_log, h_log_mut;
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn b(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    pub fn b_mut(&mut self) -> Option<&mut [f64]> {
        self.b.as_deref_mut()
    }

    /// Install or remove the Laplace spread channel.
    pub fn set_b(&mut self, b: Option<Vec<f64>>) -> Result<()> {
        if let Some(values) = &b {
            if values.len() != self.len() {
                return Err(Error::ShapeMismatch {
                    expected: self.len(),
                    actual: values.len(),
                });
            }
        }
        self.b = b;
        Ok(())
    }

    pub fn ignore(&self) -> &[bool] {
        &self.ignore
    }

    pub fn ignore_mut(&mut self) -> &mut [bool] {
        &mut self.ignore
    }
}

/// Composite field tensor `[C][H][W]` plus an ignore mask per class.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    grid_h: usize,
    grid_w: usize,
    stride: u32,
    planes: Vec<ClassPlane>,
}

impl FieldGrid {
    pub fn zeros(num_classes: usize, grid_h: usize, grid_w: usize, stride: u32) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("at least one class is required".into()));
        }
        let len = grid_h
            .checked_mul(grid_w)
            .ok_or_else(|| Error::InvalidConfig("grid too large".into()))?;
        Ok(Self {
            grid_h,
            grid_w,
            stride,
            planes: (0..num_classes).map(|_| ClassPlane::zeros(len)).collect(),
        })
    }

    /// Grid covering an image, padding right/bottom up to a stride multiple.
    pub fn for_image(num_classes: usize, image_w: usize, image_h: usize, stride: u32) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive".into()));
        }
        let s = stride as usize;
        Self::zeros(num_classes, image_h.div_ceil(s), image_w.div_ceil(s), stride)
    }

    pub fn num_classes(&self) -> usize {
        self.planes.len()
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    /// Padded image size `(width, height)` in pixels.
    pub fn image_size(&self) -> (usize, usize) {
        let s = self.stride as usize;
        (self.grid_w * s, self.grid_h * s)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.grid_h && j < self.grid_w);
        i * self.grid_w + j
    }

    pub fn plane(&self, class_id: usize) -> &ClassPlane {
        &self.planes[class_id]
    }

    pub fn plane_mut(&mut self, class_id: usize) -> &mut ClassPlane {
        &mut self.planes[class_id]
    }

    pub fn planes(&self) -> &[ClassPlane] {
        &self.planes
    }

    pub fn cell(&self, class_id: usize, i: usize, j: usize) -> FieldCell {
        let k = self.index(i, j);
        let plane = &self.planes[class_id];
        FieldCell {
            p: plane.p[k],
            vx: plane.vx[k],
            vy: plane.vy[k],
            w_log: plane.w_log[k],
            h_log: plane.h_log[k],
            b: plane.b.as_ref().map(|b| b[k]),
        }
    }

    /// Write one cell. A `b` value allocates the spread channel (filled with 1) if absent.
    pub fn set_cell(&mut self, class_id: usize, i: usize, j: usize, cell: &FieldCell) {
        let k = self.index(i, j);
        let plane = &mut self.planes[class_id];
        plane.p[k] = cell.p;
        plane.vx[k] = cell.vx;
        plane.vy[k] = cell.vy;
        plane.w_log[k] = cell.w_log;
        plane.h_log[k] = cell.h_log;
        if let Some(b) = cell.b {
            let len = plane.p.len();
            plane.b.get_or_insert_with(|| vec![1.0; len])[k] = b;
        }
    }

    pub fn is_ignored(&self, class_id: usize, i: usize, j: usize) -> bool {
        self.planes[class_id].ignore[self.index(i, j)]
    }

    pub fn set_ignored(&mut self, class_id: usize, i: usize, j: usize, ignored: bool) {
        let k = self.index(i, j);
        self.planes[class_id].ignore[k] = ignored;
    }
}

/// Gaussian spread divisor, either one value for all classes or one per class.
#[derive(Debug, Clone, PartialEq)]
pub enum Rho {
    Uniform(f64),
    PerClass(Vec<f64>),
}

impl Rho {
    pub fn for_class(&self, class_id: usize) -> f64 {
        match self {
            Rho::Uniform(r) => *r,
            Rho::PerClass(r) => r.get(class_id).copied().unwrap_or_else(|| *r.last().unwrap_or(&1.0)),
        }
    }
}

/// Normalizer dividing each vote's confidence by the expected number of votes per object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChiMode {
    Fixed(f64),
    /// The vote's own predicted box area in grid cells, floored at 1.
    BoxArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubpixelMode {
    /// Peak pixel center.
    Disabled,
    /// Confidence-weighted mean of the targets landing in the peak pixel.
    WeightedMean,
    /// Target of the most confident vote landing in the peak pixel.
    BestVote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub rho: Rho,
    /// Cells at or below this confidence do not vote.
    pub accum_threshold: f64,
    /// Minimum map value for a peak to become a detection.
    pub select_threshold: f64,
    pub sigma_min: f64,
    pub chi_mode: ChiMode,
    /// Odd side length of the local-maximum window, in pixels.
    pub peak_window: usize,
    pub subpixel: SubpixelMode,
    pub softnms_sigma: f64,
    pub softnms_min_score: f64,
    /// Bound on the absolute per-pixel error introduced by truncating each vote's Gaussian.
    pub accum_tolerance: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            rho: Rho::Uniform(10.0),
            accum_threshold: 0.1,
            select_threshold: 0.05,
            sigma_min: 2.0,
            chi_mode: ChiMode::Fixed(16.0),
            peak_window: 3,
            subpixel: SubpixelMode::WeightedMean,
            softnms_sigma: 0.5,
            softnms_min_score: 0.001,
            accum_tolerance: 1e-7,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match &self.rho {
            Rho::Uniform(r) if !(*r > 0.0 && r.is_finite()) => return bad(format!("rho must be positive, got {r}")),
            Rho::PerClass(rs) if rs.is_empty() || rs.iter().any(|r| !(*r > 0.0 && r.is_finite())) => {
                return bad("per-class rho values must be positive".into())
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.accum_threshold) {
            return bad(format!("accum_threshold {} outside [0, 1]", self.accum_threshold));
        }
        if !(0.0..=1.0).contains(&self.select_threshold) {
            return bad(format!("select_threshold {} outside [0, 1]", self.select_threshold));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min.is_finite()) {
            return bad(format!("sigma_min must be non-negative, got {}", self.sigma_min));
        }
        if let ChiMode::Fixed(n) = self.chi_mode {
            if !(n > 0.0 && n.is_finite()) {
                return bad(format!("fixed chi must be positive, got {n}"));
            }
        }
        if self.peak_window == 0 || self.peak_window.is_multiple_of(2) {
            return bad(format!("peak_window must be odd, got {}", self.peak_window));
        }
        if !(self.softnms_sigma > 0.0) {
            return bad(format!("softnms_sigma must be positive, got {}", self.softnms_sigma));
        }
        if !(self.softnms_min_score >= 0.0) {
            return bad(format!("softnms_min_score must be non-negative, got {}", self.softnms_min_score));
        }
        if !(self.accum_tolerance > 0.0) {
            return bad(format!("accum_tolerance must be positive, got {}", self.accum_tolerance));
        }
        Ok(())
    }
}
