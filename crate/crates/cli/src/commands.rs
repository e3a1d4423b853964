use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use butterfly_core::decoder::{decode_no_voting, decode_with_map};
use butterfly_core::encoder::{encode, EncodeMode};
use butterfly_core::eval::{evaluate, evaluate_groups, EvalReport, ImageEval};
use butterfly_core::io::{read_detections, write_detections, write_fields, ImageDetections};
use butterfly_core::synth::{
    chi_for_mode, generate_scene, run_ablation, scene_seed, DecoderKind, HarnessConfig, NoiseSpec, SceneSpec, SizeRange,
};
use butterfly_core::types::{DecoderConfig, Detection, FieldGrid};
use clap::Args;

use crate::args::{parse_list, AnnotationFormat, DecodeArgs, GridArgs, GroundTruthArgs, Protocol};
use crate::data::{expand_paths, file_stem, load_annotations, load_fields, load_groups, AnnotationSet};
use crate::overlay;

fn check_id(id: &str) -> Result<()> {
    ensure!(!id.is_empty() && !id.contains(['/', '\\']) && id != "." && id != "..", "image id '{id}' is not a usable file name");
    Ok(())
}

fn num_classes(explicit: Option<usize>, format: AnnotationFormat) -> usize {
    explicit.unwrap_or_else(|| format.num_classes())
}

fn decode_grid(grid: &FieldGrid, cfg: &DecoderConfig, no_voting: bool) -> Result<(Vec<Detection>, Option<butterfly_core::HighResMap>)> {
    if no_voting {
        Ok((decode_no_voting(grid, cfg)?, None))
    } else {
        let out = decode_with_map(grid, cfg)?;
        if out.unsupported_peaks > 0 {
            log::debug!("{} peaks had no supporting votes", out.unsupported_peaks);
        }
        Ok((out.detections, Some(out.map)))
    }
}

fn write_detections_file(path: &PathBuf, images: &[ImageDetections]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_detections(images, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EncodeCmd {
    /// Annotation files (UAVDT) or per-image files and directories (VisDrone)
    #[arg(long, required = true, num_args = 1..)]
    annotations: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "uavdt")]
    format: AnnotationFormat,
    #[command(flatten)]
    grid: GridArgs,
    /// Number of class planes; defaults to the dataset's class count
    #[arg(long)]
    classes: Option<usize>,
    /// Output directory for `<image_id>.fields`
    #[arg(long)]
    out: PathBuf,
}

impl EncodeCmd {
    pub fn run(self) -> Result<()> {
        let set = load_annotations(&self.annotations, self.format)?;
        let nc = num_classes(self.classes, self.format);
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        for (id, ann) in &set {
            check_id(id)?;
            let grid = encode(&ann.boxes, self.grid.width, self.grid.height, nc, self.grid.stride, self.grid.mode)
                .with_context(|| format!("encoding image {id}"))?;
            let path = self.out.join(format!("{id}.fields"));
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_fields(&grid, &mut w)?;
            w.flush()?;
        }
        println!("encoded {} images ({} mode, stride {})", set.len(), self.grid.mode, self.grid.stride);
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct DecodeCmd {
    /// Fields files or directories of them; image ids are the file stems
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Detections output file
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    decoder: DecodeArgs,
    /// Write a heatmap PNG with detections per image into this directory
    #[arg(long)]
    overlay: Option<PathBuf>,
}

impl DecodeCmd {
    pub fn run(self) -> Result<()> {
        let cfg = self.decoder.config(DecoderConfig::default().chi_mode)?;
        let mut paths = expand_paths(&self.inputs, "fields")?;
        paths.sort();
        if let Some(dir) = &self.overlay {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut images = Vec::with_capacity(paths.len());
        for path in &paths {
            let id = file_stem(path)?;
            let grid = load_fields(path)?;
            let (detections, map) = decode_grid(&grid, &cfg, self.decoder.no_voting)?;
            if let Some(dir) = &self.overlay {
                let map = match map {
                    Some(m) => m,
                    // the baseline has no map of its own, so show the voting map
                    None => decode_with_map(&grid, &cfg)?.map,
                };
                overlay::save(&map, &detections, &dir.join(format!("{id}.png")))?;
            }
            images.push(ImageDetections { image_id: id, detections });
        }
        write_detections_file(&self.out, &images)?;
        let n: usize = images.iter().map(|i| i.detections.len()).sum();
        println!("decoded {} images, {n} detections", images.len());
        Ok(())
    }
}

fn to_eval(set: &AnnotationSet, dets: &BTreeMap<String, Vec<Detection>>) -> (Vec<String>, Vec<ImageEval>) {
    let mut ids: Vec<String> = set.keys().cloned().collect();
    for id in dets.keys() {
        if !set.contains_key(id) {
            log::warn!("detections for image '{id}' have no ground truth");
            ids.push(id.clone());
        }
    }
    ids.sort();
    let images = ids
        .iter()
        .map(|id| {
            let ann = set.get(id).cloned().unwrap_or_default();
            ImageEval {
                detections: dets.get(id).cloned().unwrap_or_default(),
                ground_truth: ann.boxes,
                ignore_regions: ann.ignore,
            }
        })
        .collect();
    (ids, images)
}

#[derive(Debug, Args)]
pub struct RoundtripCmd {
    #[arg(long, required = true, num_args = 1..)]
    annotations: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "uavdt")]
    format: AnnotationFormat,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    decoder: DecodeArgs,
    #[arg(long, value_enum, default_value = "uavdt")]
    protocol: Protocol,
    /// Also write the decoded detections
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RoundtripCmd {
    pub fn run(self) -> Result<()> {
        let set = load_annotations(&self.annotations, self.format)?;
        let nc = num_classes(self.classes, self.format);
        let cfg = self.decoder.config(chi_for_mode(self.grid.mode))?;
        let mut dets = BTreeMap::new();
        for (id, ann) in &set {
            let grid = encode(&ann.boxes, self.grid.width, self.grid.height, nc, self.grid.stride, self.grid.mode)
                .with_context(|| format!("encoding image {id}"))?;
            dets.insert(id.clone(), decode_grid(&grid, &cfg, self.decoder.no_voting)?.0);
        }
        if let Some(out) = &self.out {
            let images: Vec<ImageDetections> =
                dets.iter().map(|(id, d)| ImageDetections { image_id: id.clone(), detections: d.clone() }).collect();
            write_detections_file(out, &images)?;
        }
        let (_, images) = to_eval(&set, &dets);
        let report = evaluate(&images, &self.protocol.config(nc))?;
        println!("mode: {}  stride: {}  images: {}", self.grid.mode, self.grid.stride, set.len());
        print!("{}", report.render());
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Detections file (`image_id,left,top,w,h,score,class`)
    #[arg(long)]
    detections: PathBuf,
    #[command(flatten)]
    gt: GroundTruthArgs,
    #[arg(long, value_enum, default_value = "uavdt")]
    protocol: Protocol,
    /// Sidecar of `image_id,group` lines; reports each group separately as well
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
}

impl EvalCmd {
    pub fn run(self) -> Result<()> {
        let set = load_annotations(&self.gt.paths, self.gt.format)?;
        let f = File::open(&self.detections).with_context(|| format!("opening {}", self.detections.display()))?;
        let mut dets: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for img in read_detections(BufReader::new(f)).with_context(|| format!("reading {}", self.detections.display()))? {
            dets.entry(img.image_id).or_default().extend(img.detections);
        }
        let nc = num_classes(self.classes, self.gt.format);
        let cfg = self.protocol.config(nc);
        let (ids, images) = to_eval(&set, &dets);
        let report = evaluate(&images, &cfg)?;
        print!("{}", report.render());
        if let Some(path) = &self.groups {
            let table = load_groups(path)?;
            let groups = ids
                .iter()
                .map(|id| table.get(id).cloned().with_context(|| format!("image '{id}' has no group in {}", path.display())))
                .collect::<Result<Vec<_>>>()?;
            for (name, r) in evaluate_groups(&images, &groups, &cfg)? {
                println!();
                println!("[group {name}]");
                print!("{}", r.render());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Output directory for `gt.txt` and `ablation.csv`
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 384)]
    height: usize,
    #[arg(long, default_value_t = 20)]
    count_min: usize,
    #[arg(long, default_value_t = 40)]
    count_max: usize,
    #[arg(long, default_value_t = 10.0)]
    w_min: f64,
    #[arg(long, default_value_t = 32.0)]
    w_max: f64,
    #[arg(long, default_value_t = 10.0)]
    h_min: f64,
    #[arg(long, default_value_t = 24.0)]
    h_max: f64,
    /// Number of classes, at most 3 so the ground truth fits the UAVDT format
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long, default_value_t = 0.0)]
    max_iou: f64,
    #[arg(long, default_value_t = 4)]
    stride: u32,
    /// Comma-separated encoding modes
    #[arg(long, default_value = "center1,window4,full", value_delimiter = ',')]
    modes: Vec<EncodeMode>,
    /// Comma-separated dropout probabilities
    #[arg(long, default_value = "0")]
    dropout: String,
    /// Comma-separated vector noise levels in pixels
    #[arg(long, default_value = "0")]
    vector_sigma: String,
    /// Comma-separated occlusion fractions
    #[arg(long, default_value = "0")]
    occlusion: String,
    #[arg(long, default_value_t = 0.0)]
    size_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    confidence_sigma: f64,
    #[arg(long, value_enum, default_value = "uavdt")]
    protocol: Protocol,
    /// Also evaluate the per-cell baseline decoder
    #[arg(long)]
    with_baseline: bool,
    #[command(flatten)]
    decoder: DecodeArgs,
}

impl SynthCmd {
    pub fn run(self) -> Result<()> {
        if self.classes == 0 || self.classes > 3 {
            bail!("--classes must be between 1 and 3");
        }
        let size = SizeRange { w_min: self.w_min, w_max: self.w_max, h_min: self.h_min, h_max: self.h_max };
        let mut scenes = Vec::with_capacity(self.scenes);
        for s in 0..self.scenes {
            let spec = SceneSpec {
                seed: scene_seed(self.seed, s),
                image_w: self.width,
                image_h: self.height,
                count_min: self.count_min,
                count_max: self.count_max,
                class_sizes: vec![size; self.classes],
                max_iou: self.max_iou,
                class_weights: vec![1.0 / self.classes as f64; self.classes],
            };
            scenes.push(generate_scene(&spec).with_context(|| format!("scene {s}"))?);
        }

        let mut noises = Vec::new();
        for &dropout in &parse_list(&self.dropout)? {
            for &vector_sigma in &parse_list(&self.vector_sigma)? {
                for &occlusion in &parse_list(&self.occlusion)? {
                    let n = NoiseSpec {
                        dropout,
                        vector_sigma,
                        size_sigma: self.size_sigma,
                        confidence_sigma: self.confidence_sigma,
                        occlusion,
                    };
                    n.validate()?;
                    noises.push(n);
                }
            }
        }
        let decoders = match (self.decoder.no_voting, self.with_baseline) {
            (true, false) => vec![DecoderKind::NoVoting],
            (false, false) => vec![DecoderKind::Voting],
            _ => vec![DecoderKind::Voting, DecoderKind::NoVoting],
        };
        let harness = HarnessConfig {
            image_w: self.width,
            image_h: self.height,
            num_classes: self.classes,
            stride: self.stride,
            decoder: self.decoder.config(DecoderConfig::default().chi_mode)?,
            eval: self.protocol.config(self.classes),
            noise_seed: self.seed.wrapping_add(1 << 32),
        };
        let table = run_ablation(&scenes, &self.modes, &decoders, &noises, &harness)?;

        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let mut gt = BufWriter::new(File::create(self.out.join("gt.txt"))?);
        for (s, scene) in scenes.iter().enumerate() {
            for (k, b) in scene.iter().enumerate() {
                // frame, target id, box, out-of-view, occlusion, 1-based category
                writeln!(gt, "{},{},{},{},{},{},1,1,{}", s + 1, k + 1, b.left(), b.top(), b.w, b.h, b.class_id + 1)?;
            }
        }
        gt.flush()?;
        let csv = table.to_csv();
        fs::write(self.out.join("ablation.csv"), &csv)?;

        let total: usize = scenes.iter().map(Vec::len).sum();
        println!("{} scenes, {total} objects", scenes.len());
        for row in &table.rows {
            println!("{:<9} {:<9} {}", row.mode.to_string(), row.decoder.to_string(), summary(&row.noise, &row.report));
        }
        Ok(())
    }
}

fn summary(n: &NoiseSpec, r: &EvalReport) -> String {
    let t = &r.thresholds[0];
    format!(
        "dropout {} vec {} occl {}  AP {:.4}  TP {} FP {} FN {}",
        n.dropout, n.vector_sigma, n.occlusion, r.ap, t.tp, t.fp, t.fn_
    )
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    fields: PathBuf,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[command(flatten)]
    decoder: DecodeArgs,
}

impl BenchCmd {
    pub fn run(self) -> Result<()> {
        ensure!(self.runs > 0, "--runs must be positive");
        let grid = load_fields(&self.fields)?;
        let cfg = self.decoder.config(DecoderConfig::default().chi_mode)?;
        // one warm-up run
        let n = decode_grid(&grid, &cfg, self.decoder.no_voting)?.0.len();
        let mut ms = Vec::with_capacity(self.runs);
        for _ in 0..self.runs {
            let t = Instant::now();
            std::hint::black_box(decode_grid(&grid, &cfg, self.decoder.no_voting)?);
            ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
        ms.sort_by(f64::total_cmp);
        let median = if ms.len() % 2 == 1 { ms[ms.len() / 2] } else { 0.5 * (ms[ms.len() / 2 - 1] + ms[ms.len() / 2]) };
        let (w, h) = grid.image_size();
        println!("image {w}x{h}, {} classes, {n} detections", grid.num_classes());
        println!("runs {}  median {median:.3} ms  min {:.3} ms  max {:.3} ms", self.runs, ms[0], ms[ms.len() - 1]);
        Ok(())
    }
}
