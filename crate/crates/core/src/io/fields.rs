//! Binary field file.
//!
//! ```text
//! "BTFY"  u16 version  u32 C  u32 H  u32 W  u32 S        (little-endian)
//! per class:
//!   p, vx, vy, w_log, h_log       H·W f64 each, row-major
//!   u8 b-present, then H·W f64 if 1
//!   ignore bitmap                 ceil(H·W / 8) bytes, LSB first
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::FieldGrid;

pub const FIELDS_MAGIC: [u8; 4] = *b"BTFY";
pub const FIELDS_VERSION: u16 = 1;

fn write_plane(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn dim(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Format(format!("{what} {value} does not fit in u32")))
}

pub fn write_fields(grid: &FieldGrid, mut writer: impl Write) -> Result<()> {
    let cells = grid.grid_h() * grid.grid_w();
    let mut out = Vec::with_capacity(22 + grid.num_classes() * (cells * 48 + cells / 8 + 2));
    out.extend_from_slice(&FIELDS_MAGIC);
    out.extend_from_slice(&FIELDS_VERSION.to_le_bytes());
    for (value, what) in [
        (grid.num_classes(), "class count"),
        (grid.grid_h(), "grid height"),
        (grid.grid_w(), "grid width"),
    ] {
        out.extend_from_slice(&dim(value, what)?.to_le_bytes());
    }
    out.extend_from_slice(&grid.stride().to_le_bytes());

    for plane in grid.planes() {
        for values in [plane.p(), plane.vx(), plane.vy(), plane.w_log(), plane.h_log()] {
            write_plane(&mut out, values);
        }
        match plane.b() {
            Some(b) => {
                out.push(1);
                write_plane(&mut out, b);
            }
            None => out.push(0),
        }
        let mut bits = vec![0u8; cells.div_ceil(8)];
        for (k, _) in plane.ignore().iter().enumerate().filter(|(_, &ig)| ig) {
            bits[k / 8] |= 1 << (k % 8);
        }
        out.extend_from_slice(&bits);
    }
    writer.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or(Error::Truncated(what))?;
        let slice = &self.data[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64_plane(&mut self, dst: &mut [f64], what: &'static str) -> Result<()> {
        let bytes = self.take(dst.len() * 8, what)?;
        for (v, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

/// Read a grid written by [`write_fields`]; no partial grid is returned on error.
pub fn read_fields(mut reader: impl Read) -> Result<FieldGrid> {
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, pos: 0 };

    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != FIELDS_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u16("version")?;
    if version != FIELDS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_classes = cur.u32("class count")? as usize;
    let grid_h = cur.u32("grid height")? as usize;
    let grid_w = cur.u32("grid width")? as usize;
    let stride = cur.u32("stride")?;
    if num_classes == 0 || stride == 0 {
        return Err(Error::Format(format!("class count {num_classes} and stride {stride} must be positive")));
    }
    let cells = grid_h
        .checked_mul(grid_w)
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    // every class needs at least the five planes, the flag and the bitmap
    let min_class_bytes = cells
        .checked_mul(40)
        .and_then(|n| n.checked_add(1 + cells.div_ceil(8)))
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    if min_class_bytes.saturating_mul(num_classes) > data.len() - cur.pos {
        return Err(Error::Truncated("class planes"));
    }

    let mut grid = FieldGrid::zeros(num_classes, grid_h, grid_w, stride)?;
    for class_id in 0..num_classes {
        let plane = grid.plane_mut(class_id);
        cur.f64_plane(plane.p_mut(), "p plane")?;
        cur.f64_plane(plane.vx_mut(), "vx plane")?;
        cur.f64_plane(plane.vy_mut(), "vy plane")?;
        cur.f64_plane(plane.w_log_mut(), "w_log plane")?;
        cur.f64_plane(plane.h_log_mut(), "h_log plane")?;
        match cur.take(1, "b flag")?[0] {
            0 => {}
            1 => {
                let mut b = vec![0.0; cells];
                cur.f64_plane(&mut b, "b plane")?;
                plane.set_b(Some(b))?;
            }
            other => return Err(Error::Format(format!("invalid b flag {other}"))),
        }
        let bits = cur.take(cells.div_ceil(8), "ignore bitmap")?;
        for (k, ig) in plane.ignore_mut().iter_mut().enumerate() {
            *ig = bits[k / 8] >> (k % 8) & 1 == 1;
        }
    }
    if cur.pos != data.len() {
        return Err(Error::Format(format!("{} trailing bytes", data.len() - cur.pos)));
    }
    Ok(grid)
}
