//! Detection text format: `image_id,left,top,width,height,score,class` per line.
//!
//! Coordinates carry 3 decimals and scores 6; class ids are zero-based.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{BBox, Detection};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

pub fn write_detections(images: &[ImageDetections], mut writer: impl Write) -> Result<()> {
    for img in images {
        if img.image_id.contains([',', '\n']) {
            return Err(Error::Format(format!("image id '{}' contains a separator", img.image_id)));
        }
        for d in &img.detections {
            let b = &d.bbox;
            writeln!(
                writer,
                "{},{:.3},{:.3},{:.3},{:.3},{:.6},{}",
                img.image_id,
                b.left(),
                b.top(),
                b.w,
                b.h,
                d.score,
                b.class_id
            )?;
        }
    }
    Ok(())
}

/// Parse detections, grouped by image id in order of first appearance.
pub fn read_detections(reader: impl BufRead) -> Result<Vec<ImageDetections>> {
    let mut out: Vec<ImageDetections> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 7 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 7 comma-separated fields, found {}", parts.len()),
            });
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            parts[k].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("invalid {name} '{}'", parts[k]),
            })
        };
        let class_id: usize = parts[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid class '{}'", parts[6]),
        })?;
        let bbox = BBox::from_ltwh(num(1, "left")?, num(2, "top")?, num(3, "width")?, num(4, "height")?, class_id)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let score = num(5, "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        let det = Detection::new(bbox, score);
        match out.iter_mut().find(|img| img.image_id == parts[0]) {
            Some(img) => img.detections.push(det),
            None => out.push(ImageDetections {
                image_id: parts[0].to_string(),
                detections: vec![det],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_per_detection() {
        let img = ImageDetections {
            image_id: "7".into(),
            detections: vec![Detection::new(BBox::from_ltwh(10.0, 20.0, 30.0, 40.0, 2).unwrap(), 0.123_456_789)],
        };
        let mut buf = Vec::new();
        write_detections(&[img], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "7,10.000,20.000,30.000,40.000,0.123457,2\n");
        assert_eq!(text.trim_end().split(',').count(), 7);
    }

    #[test]
    fn empty_set_writes_nothing() {
        let mut buf = Vec::new();
        write_detections(&[], &mut buf).unwrap();
        write_detections(&[ImageDetections { image_id: "a".into(), detections: vec![] }], &mut buf).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn read_groups_by_image() {
        let text = "a,0,0,2,2,0.5,0\nb,1,1,2,2,0.25,1\na,5,5,2,2,1.0,0\n";
        let imgs = read_detections(text.as_bytes()).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].detections.len(), 2);
        assert_eq!(imgs[1].detections[0].bbox.class_id, 1);
        let mut buf = Vec::new();
        write_detections(&imgs, &mut buf).unwrap();
        let again = read_detections(buf.as_slice()).unwrap();
        assert_eq!(again, imgs);
    }

    #[test]
    fn read_rejects_malformed() {
        assert!(matches!(read_detections("a,0,0,2,2,0.5".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_detections("a,0,0,0,2,0.5,0".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_detections("\na,0,0,2,2,1.5,0".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
