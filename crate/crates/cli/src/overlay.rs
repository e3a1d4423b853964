use std::path::Path;

use anyhow::{Context, Result};
use butterfly_core::decoder::HighResMap;
use butterfly_core::types::Detection;
use image::{Rgb, RgbImage};

const PALETTE: [[u8; 3]; 6] = [[255, 64, 64], [64, 220, 64], [80, 140, 255], [255, 200, 0], [220, 80, 255], [0, 220, 220]];

/// Heatmap of the strongest class at each pixel, with detection outlines on top.
pub fn render(map: &HighResMap, detections: &[Detection]) -> RgbImage {
    let (w, h) = (map.width(), map.height());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (0..map.num_classes()).map(|c| map.get(c, x, y)).fold(0.0f64, f64::max);
            let g = (v.clamp(0.0, 1.0).sqrt() * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, Rgb([g, g, g]));
        }
    }
    for d in detections {
        draw_rect(&mut img, d, Rgb(PALETTE[d.class_id() % PALETTE.len()]));
    }
    img
}

fn draw_rect(img: &mut RgbImage, d: &Detection, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return;
    }
    let (x0, y0, x1, y1) = d.bbox.to_corners();
    let x0 = (x0.floor() as i64).clamp(0, w - 1);
    let y0 = (y0.floor() as i64).clamp(0, h - 1);
    let x1 = ((x1.ceil() as i64) - 1).clamp(0, w - 1);
    let y1 = ((y1.ceil() as i64) - 1).clamp(0, h - 1);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, color);
        img.put_pixel(x as u32, y1 as u32, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, color);
        img.put_pixel(x1 as u32, y as u32, color);
    }
}

pub fn save(map: &HighResMap, detections: &[Detection], path: &Path) -> Result<()> {
    render(map, detections).save(path).with_context(|| format!("writing {}", path.display()))
}
