use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use butterfly_core::io::{parse_uavdt, parse_visdrone, read_fields, AnnotationRecord};
use butterfly_core::types::{BBox, FieldGrid};

use crate::args::AnnotationFormat;

/// Boxes and ignore regions of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageAnnotations {
    pub boxes: Vec<BBox>,
    pub ignore: Vec<BBox>,
}

/// Annotations keyed by image id, in sorted order.
pub type AnnotationSet = BTreeMap<String, ImageAnnotations>;

/// Expand directories into their files with the given extension, sorted.
pub fn expand_paths(paths: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading directory {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.is_file() && f.extension().is_some_and(|e| e == ext));
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no .{ext} files found");
    }
    Ok(out)
}

pub fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("no usable file name in {}", path.display()))
}

fn add_records(set: &mut AnnotationSet, records: Vec<AnnotationRecord>) {
    for r in records {
        let entry = set.entry(r.image_id.clone()).or_default();
        if let Some(region) = r.ignore_region() {
            entry.ignore.push(region);
        } else if let Some(b) = r.to_bbox() {
            entry.boxes.push(b);
        }
    }
}

pub fn load_annotations(paths: &[PathBuf], format: AnnotationFormat) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new();
    match format {
        AnnotationFormat::Uavdt => {
            for p in paths {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                let records = parse_uavdt(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))?;
                add_records(&mut set, records);
            }
        }
        AnnotationFormat::Visdrone => {
            for p in expand_paths(paths, "txt")? {
                let id = file_stem(&p)?;
                let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                let parsed = parse_visdrone(BufReader::new(f), &id).with_context(|| format!("parsing {}", p.display()))?;
                if parsed.dropped_others > 0 {
                    log::debug!("{}: dropped {} 'others' boxes", p.display(), parsed.dropped_others);
                }
                // images with no kept boxes still count for evaluation
                set.entry(id.clone()).or_default();
                add_records(&mut set, parsed.records);
            }
        }
    }
    Ok(set)
}

pub fn load_fields(path: &Path) -> Result<FieldGrid> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_fields(BufReader::new(f)).with_context(|| format!("reading fields from {}", path.display()))
}

/// `image_id,group` lines.
pub fn load_groups(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((id, group)) = line.split_once(',') else {
            bail!("{}:{}: expected 'image_id,group'", path.display(), n + 1);
        };
        out.insert(id.trim().to_owned(), group.trim().to_owned());
    }
    Ok(out)
}
