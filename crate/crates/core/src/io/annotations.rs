use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::BBox;

pub const UAVDT_CLASSES: [&str; 3] = ["car", "truck", "bus"];

pub const VISDRONE_CLASSES: [&str; 10] = [
    "pedestrian",
    "people",
    "bicycle",
    "car",
    "van",
    "truck",
    "tricycle",
    "awning-tricycle",
    "bus",
    "motor",
];

/// One annotated box from a dataset file, in `(left, top, width, height)` form.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub target_id: Option<u64>,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    /// `None` for ignore regions.
    pub class_id: Option<usize>,
    pub truncation: u32,
    pub occlusion: u32,
    pub ignore: bool,
}

impl AnnotationRecord {
    /// Center-form box, or `None` for ignore regions and zero-size boxes.
    pub fn to_bbox(&self) -> Option<BBox> {
        let class_id = self.class_id?;
        BBox::from_ltwh(self.left, self.top, self.width, self.height, class_id).ok()
    }

    /// The region covered by an ignore record, as a class-0 box.
    pub fn ignore_region(&self) -> Option<BBox> {
        if !self.ignore {
            return None;
        }
        BBox::from_ltwh(self.left, self.top, self.width, self.height, 0).ok()
    }

    /// `(x_min, y_min, x_max, y_max)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.left, self.top, self.left + self.width, self.top + self.height)
    }
}

struct Fields<'a> {
    line: usize,
    parts: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn split(line_no: usize, text: &'a str, expected: usize) -> Result<Self> {
        let mut parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() == expected + 1 && parts.last() == Some(&"") {
            parts.pop();
        }
        if parts.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected} comma-separated fields, found {}", parts.len()),
            });
        }
        Ok(Self { line: line_no, parts })
    }

    fn get<T: FromStr>(&self, idx: usize, name: &str) -> Result<T> {
        self.parts[idx].parse::<T>().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("invalid {name} '{}'", self.parts[idx]),
        })
    }

    fn coord(&self, idx: usize, name: &str) -> Result<f64> {
        let v: f64 = self.get(idx, name)?;
        if !v.is_finite() {
            return Err(Error::Parse { line: self.line, message: format!("non-finite {name}") });
        }
        Ok(v)
    }
}

fn require_size(line: usize, w: f64, h: f64) -> Result<()> {
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("box size must be positive, got {w}x{h}"),
        });
    }
    Ok(())
}

/// Lines of `frame,target_id,left,top,width,height,out_of_view,occlusion,category`,
/// with categories 1–3 mapping to car, truck, bus. Blank lines are skipped.
pub fn parse_uavdt(reader: impl BufRead) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = Fields::split(line_no, &line, 9)?;
        let frame: u64 = f.get(0, "frame")?;
        let target_id: u64 = f.get(1, "target id")?;
        let (left, top) = (f.coord(2, "left")?, f.coord(3, "top")?);
        let (width, height) = (f.coord(4, "width")?, f.coord(5, "height")?);
        require_size(line_no, width, height)?;
        let category: u32 = f.get(8, "category")?;
        if !(1..=3).contains(&category) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unknown category {category}"),
            });
        }
        out.push(AnnotationRecord {
            image_id: frame.to_string(),
            target_id: Some(target_id),
            left,
            top,
            width,
            height,
            class_id: Some(category as usize - 1),
            truncation: f.get(6, "out-of-view flag")?,
            occlusion: f.get(7, "occlusion")?,
            ignore: false,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisDroneAnnotations {
    pub records: Vec<AnnotationRecord>,
    /// Lines with category 11 ("others"), which are not kept.
    pub dropped_others: usize,
}

/// Lines of `left,top,width,height,score,category,truncation,occlusion` for one image.
///
/// Categories 1–10 map to class ids 0–9, category 0 becomes an ignore region and
/// category 11 is dropped and counted.
pub fn parse_visdrone(reader: impl BufRead, image_id: &str) -> Result<VisDroneAnnotations> {
    let mut out = VisDroneAnnotations::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = Fields::split(line_no, &line, 8)?;
        let (left, top) = (f.coord(0, "left")?, f.coord(1, "top")?);
        let (width, height) = (f.coord(2, "width")?, f.coord(3, "height")?);
        let _score: f64 = f.coord(4, "score")?;
        let category: u32 = f.get(5, "category")?;
        let truncation: u32 = f.get(6, "truncation")?;
        let occlusion: u32 = f.get(7, "occlusion")?;
        let (class_id, ignore) = match category {
            0 => (None, true),
            1..=10 => (Some(category as usize - 1), false),
            11 => {
                out.dropped_others += 1;
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown category {category}"),
                })
            }
        };
        if !ignore {
            require_size(line_no, width, height)?;
        }
        out.records.push(AnnotationRecord {
            image_id: image_id.to_string(),
            target_id: None,
            left,
            top,
            width,
            height,
            class_id,
            truncation,
            occlusion,
            ignore,
        });
    }
    Ok(out)
}
