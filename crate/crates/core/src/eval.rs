//! Detection scoring: greedy matching, AP under all-point or 101-point interpolation,
//! COCO-style AR, and TP/FP/FN tallies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{BBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Unmatched detection lying in an ignore region; neither rewarded nor penalized.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledDet {
    pub score: f64,
    pub label: MatchLabel,
}

impl LabeledDet {
    pub fn tp(score: f64) -> Self {
        Self { score, label: MatchLabel::TruePositive }
    }

    pub fn fp(score: f64) -> Self {
        Self { score, label: MatchLabel::FalsePositive }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Labels in descending score order (input order among equal scores).
    pub labels: Vec<LabeledDet>,
    /// Input index of each entry of `labels`.
    pub order: Vec<usize>,
    /// Matched ground-truth index for each entry of `labels`.
    pub matched_gt: Vec<Option<usize>>,
    pub unmatched_gt: usize,
}

/// Fraction of a detection's area that must fall inside an ignore region for it to be ignored.
pub const IGNORE_OVERLAP: f64 = 0.5;

fn sorted_by_score(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching for one image and one class.
///
/// Detections are visited by descending score; each takes the unmatched ground truth
/// with the highest IoU at or above `iou_thresh` (lowest index on ties).
pub fn match_detections(dets: &[Detection], gts: &[BBox], ignore_regions: &[BBox], iou_thresh: f64) -> MatchResult {
    let order = sorted_by_score(dets);
    let mut taken = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(dets.len());
    let mut matched_gt = Vec::with_capacity(dets.len());
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let overlap = det.bbox.iou(gt);
            if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        let label = match best {
            Some((g, _)) => {
                taken[g] = true;
                MatchLabel::TruePositive
            }
            None if ignore_regions
                .iter()
                .any(|r| det.bbox.intersection(r) >= IGNORE_OVERLAP * det.bbox.area()) =>
            {
                MatchLabel::Ignored
            }
            None => MatchLabel::FalsePositive,
        };
        labels.push(LabeledDet { score: det.score, label });
        matched_gt.push(best.map(|(g, _)| g));
    }
    MatchResult {
        labels,
        order,
        matched_gt,
        unmatched_gt: taken.iter().filter(|&&t| !t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Exact area under the precision envelope.
    AllPoint,
    /// Mean of the precision envelope sampled at recall 0, 0.01, …, 1.
    Point101,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Set when there is no ground truth, where AP is undefined and reported as 0.
    pub undefined: bool,
}

/// Precision envelope `p̂_k = max_{j ≥ k} p_j` and recall along the ranked list.
fn pr_curve(dets: &[LabeledDet], total_gt: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ranked: Vec<&LabeledDet> = dets.iter().filter(|d| d.label != MatchLabel::Ignored).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for d in ranked {
        match d.label {
            MatchLabel::TruePositive => tp += 1,
            _ => fp += 1,
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    (recall, precision)
}

/// Average precision of a ranked, labeled detection list against `total_gt` objects.
pub fn average_precision(dets: &[LabeledDet], total_gt: usize, interpolation: Interpolation) -> ApResult {
    if total_gt == 0 {
        return ApResult { ap: 0.0, undefined: true };
    }
    let (recall, envelope) = pr_curve(dets, total_gt);
    let ap = match interpolation {
        Interpolation::AllPoint => {
            let mut area = 0.0;
            let mut prev = 0.0;
            for (&r, &p) in recall.iter().zip(&envelope) {
                if r > prev {
                    area += (r - prev) * p;
                    prev = r;
                }
            }
            area
        }
        Interpolation::Point101 => {
            let mut sum = 0.0;
            for i in 0..=100 {
                let threshold = i as f64 * 0.01;
                let k = recall.partition_point(|&r| r < threshold);
                if k < envelope.len() {
                    sum += envelope[k];
                }
            }
            sum / 101.0
        }
    };
    ApResult { ap, undefined: false }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub num_classes: usize,
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
    /// Per image and class cap on detections used for AP and the tallies.
    pub max_dets: usize,
    /// Detection caps for average recall.
    pub ar_limits: Vec<usize>,
    /// Only detections scoring at least this much enter the TP/FP/FN tallies.
    pub count_score_floor: f64,
    pub label: String,
}

impl EvalConfig {
    /// Single-threshold AP at IoU 0.7, all-point interpolation, no detection cap.
    pub fn uavdt(num_classes: usize) -> Self {
        Self {
            num_classes,
            iou_thresholds: vec![0.7],
            interpolation: Interpolation::AllPoint,
            max_dets: usize::MAX,
            ar_limits: vec![1, 10, 100, 500],
            count_score_floor: 0.05,
            label: "uavdt".into(),
        }
    }

    /// IoU 0.50:0.05:0.95, 101-point interpolation, 500 detections per image.
    pub fn coco(num_classes: usize) -> Self {
        Self {
            num_classes,
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            interpolation: Interpolation::Point101,
            max_dets: 500,
            ar_limits: vec![1, 10, 100, 500],
            count_score_floor: 0.05,
            label: "coco".into(),
        }
    }

    /// Same protocol at a single IoU threshold.
    pub fn at_threshold(mut self, iou: f64) -> Self {
        self.iou_thresholds = vec![iou];
        self
    }
}

/// Detections and annotations for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<BBox>,
    /// Class-agnostic regions whose unmatched detections are ignored.
    pub ignore_regions: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub iou: f64,
    /// Mean AP over classes that have ground truth.
    pub ap: f64,
    /// `None` for classes without ground truth.
    pub ap_per_class: Vec<Option<f64>>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp_per_class: Vec<usize>,
    pub fp_per_class: Vec<usize>,
    pub fn_per_class: Vec<usize>,
}

impl ThresholdReport {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub interpolation: Interpolation,
    pub thresholds: Vec<ThresholdReport>,
    /// AP averaged over all configured thresholds.
    pub ap: f64,
    /// `(limit, AR)` averaged over thresholds and classes with ground truth.
    pub ar: Vec<(usize, f64)>,
    pub num_gt_per_class: Vec<usize>,
    pub num_gt: usize,
    pub num_dets: usize,
    pub count_score_floor: f64,
}

impl EvalReport {
    pub fn at(&self, iou: f64) -> Option<&ThresholdReport> {
        self.thresholds.iter().find(|t| (t.iou - iou).abs() < 1e-9)
    }

    pub fn ap_at(&self, iou: f64) -> Option<f64> {
        self.at(iou).map(|t| t.ap)
    }

    pub fn ar_at(&self, limit: usize) -> Option<f64> {
        self.ar.iter().find(|(l, _)| *l == limit).map(|(_, v)| *v)
    }

    /// Plain-text summary, one metric per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let interp = match self.interpolation {
            Interpolation::AllPoint => "all-point",
            Interpolation::Point101 => "101-point",
        };
        let _ = writeln!(s, "protocol: {} ({interp})", self.label);
        let _ = writeln!(s, "ground truth: {}  detections: {}", self.num_gt, self.num_dets);
        if self.thresholds.len() > 1 {
            let lo = self.thresholds.first().map_or(0.0, |t| t.iou);
            let hi = self.thresholds.last().map_or(0.0, |t| t.iou);
            let _ = writeln!(s, "AP@[{lo:.2}:{hi:.2}] = {:.4}", self.ap);
        }
        for t in &self.thresholds {
            let _ = writeln!(
                s,
                "AP@{:.2} = {:.4}  TP = {}  FP = {}  FN = {}  F1 = {:.4}  (tallies at score >= {})",
                t.iou,
                t.ap,
                t.tp,
                t.fp,
                t.fn_,
                t.f1(),
                self.count_score_floor
            );
        }
        for (limit, ar) in &self.ar {
            let _ = writeln!(s, "AR@{limit} = {ar:.4}");
        }
        for (c, n) in self.num_gt_per_class.iter().enumerate() {
            let aps: Vec<String> = self
                .thresholds
                .iter()
                .map(|t| t.ap_per_class[c].map_or("n/a".to_string(), |a| format!("{a:.4}")))
                .collect();
            let _ = writeln!(s, "class {c}: gt = {n}  AP = {}", aps.join(" "));
        }
        s
    }
}

fn check_class(class_id: usize, num_classes: usize) -> Result<()> {
    if class_id >= num_classes {
        return Err(Error::UnknownClass { class_id, num_classes });
    }
    Ok(())
}

/// Score detections against ground truth over a set of images.
pub fn evaluate(images: &[ImageEval], cfg: &EvalConfig) -> Result<EvalReport> {
    let nc = cfg.num_classes;
    for img in images {
        for d in &img.detections {
            check_class(d.class_id(), nc)?;
        }
        for g in &img.ground_truth {
            check_class(g.class_id, nc)?;
        }
    }

    let mut num_gt_per_class = vec![0usize; nc];
    // per (class, threshold): labeled dets within the cap, plus AR hit counts per limit
    let nt = cfg.iou_thresholds.len();
    let mut labeled: Vec<Vec<Vec<LabeledDet>>> = vec![vec![Vec::new(); nt]; nc];
    let mut ar_hits: Vec<Vec<Vec<usize>>> = vec![vec![vec![0; cfg.ar_limits.len()]; nt]; nc];

    for img in images {
        for (class_id, gt_count) in num_gt_per_class.iter_mut().enumerate() {
            let dets: Vec<Detection> = img.detections.iter().filter(|d| d.class_id() == class_id).copied().collect();
            let gts: Vec<BBox> = img.ground_truth.iter().filter(|g| g.class_id == class_id).copied().collect();
            *gt_count += gts.len();
            if dets.is_empty() {
                continue;
            }
            for (t, &iou) in cfg.iou_thresholds.iter().enumerate() {
                let m = match_detections(&dets, &gts, &img.ignore_regions, iou);
                labeled[class_id][t].extend(m.labels.iter().take(cfg.max_dets).copied());
                for (l, &limit) in cfg.ar_limits.iter().enumerate() {
                    ar_hits[class_id][t][l] += m
                        .labels
                        .iter()
                        .take(limit)
                        .filter(|d| d.label == MatchLabel::TruePositive)
                        .count();
                }
            }
        }
    }

    let classes_with_gt: Vec<usize> = (0..nc).filter(|&c| num_gt_per_class[c] > 0).collect();
    let mean_over_classes = |f: &dyn Fn(usize) -> f64| -> f64 {
        if classes_with_gt.is_empty() {
            0.0
        } else {
            classes_with_gt.iter().map(|&c| f(c)).sum::<f64>() / classes_with_gt.len() as f64
        }
    };

    let mut thresholds = Vec::with_capacity(nt);
    for (t, &iou) in cfg.iou_thresholds.iter().enumerate() {
        let ap_per_class: Vec<Option<f64>> = (0..nc)
            .map(|c| {
                let r = average_precision(&labeled[c][t], num_gt_per_class[c], cfg.interpolation);
                (!r.undefined).then_some(r.ap)
            })
            .collect();
        let counted = |c: usize, label: MatchLabel| {
            labeled[c][t]
                .iter()
                .filter(|d| d.label == label && d.score >= cfg.count_score_floor)
                .count()
        };
        let tp_per_class: Vec<usize> = (0..nc).map(|c| counted(c, MatchLabel::TruePositive)).collect();
        let fp_per_class: Vec<usize> = (0..nc).map(|c| counted(c, MatchLabel::FalsePositive)).collect();
        let fn_per_class: Vec<usize> = (0..nc).map(|c| num_gt_per_class[c] - tp_per_class[c]).collect();
        thresholds.push(ThresholdReport {
            iou,
            ap: mean_over_classes(&|c| ap_per_class[c].unwrap_or(0.0)),
            ap_per_class,
            tp: tp_per_class.iter().sum(),
            fp: fp_per_class.iter().sum(),
            fn_: fn_per_class.iter().sum(),
            tp_per_class,
            fp_per_class,
            fn_per_class,
        });
    }

    let ar = cfg
        .ar_limits
        .iter()
        .enumerate()
        .map(|(l, &limit)| {
            let value = mean_over_classes(&|c| {
                (0..nt).map(|t| ar_hits[c][t][l] as f64 / num_gt_per_class[c] as f64).sum::<f64>() / nt.max(1) as f64
            });
            (limit, value)
        })
        .collect();

    let ap = if nt == 0 {
        0.0
    } else {
        thresholds.iter().map(|t| t.ap).sum::<f64>() / nt as f64
    };
    Ok(EvalReport {
        label: cfg.label.clone(),
        interpolation: cfg.interpolation,
        thresholds,
        ap,
        ar,
        num_gt: num_gt_per_class.iter().sum(),
        num_gt_per_class,
        num_dets: images.iter().map(|i| i.detections.len()).sum(),
        count_score_floor: cfg.count_score_floor,
    })
}

/// Evaluate each group of images separately; `groups[k]` is the key of `images[k]`.
pub fn evaluate_groups(images: &[ImageEval], groups: &[String], cfg: &EvalConfig) -> Result<BTreeMap<String, EvalReport>> {
    if images.len() != groups.len() {
        return Err(Error::ShapeMismatch {
            expected: images.len(),
            actual: groups.len(),
        });
    }
    let mut buckets: BTreeMap<&str, Vec<ImageEval>> = BTreeMap::new();
    for (img, key) in images.iter().zip(groups) {
        buckets.entry(key.as_str()).or_default().push(img.clone());
    }
    buckets
        .into_iter()
        .map(|(key, imgs)| evaluate(&imgs, cfg).map(|r| (key.to_string(), r)))
        .collect()
}
