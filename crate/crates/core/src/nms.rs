//! Gaussian soft non-maximum suppression.

use crate::types::{iou, Detection};

/// Gaussian soft-NMS over one set of boxes, class-agnostic.
///
/// Repeatedly keeps the highest-scoring remaining box and decays every other remaining
/// box by `exp(-iou² / sigma)`. Boxes whose score falls below `min_score` are dropped.
/// The result is ordered by final score, highest first; equal scores keep input order.
pub fn soft_nms(dets: &[Detection], sigma: f64, min_score: f64) -> Vec<Detection> {
    let mut remaining: Vec<(usize, Detection)> = dets
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, d)| d.score >= min_score)
        .collect();
    let mut kept: Vec<(usize, Detection)> = Vec::with_capacity(remaining.len());

    while !remaining.is_empty() {
        let mut best = 0;
        for (k, (idx, d)) in remaining.iter().enumerate() {
            let (best_idx, best_det) = &remaining[best];
            if d.score > best_det.score || (d.score == best_det.score && idx < best_idx) {
                best = k;
            }
        }
        let top = remaining.swap_remove(best);
        for (_, d) in remaining.iter_mut() {
            let overlap = iou(&top.1.bbox, &d.bbox);
            if overlap > 0.0 {
                d.score *= (-overlap * overlap / sigma).exp();
            }
        }
        remaining.retain(|(_, d)| d.score >= min_score);
        kept.push(top);
    }

    kept.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    kept.into_iter().map(|(_, d)| d).collect()
}

/// Soft-NMS applied independently within each class.
pub fn soft_nms_per_class(dets: &[Detection], sigma: f64, min_score: f64) -> Vec<Detection> {
    let num_classes = dets.iter().map(|d| d.class_id() + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(dets.len());
    for class_id in 0..num_classes {
        let class_dets: Vec<Detection> = dets.iter().filter(|d| d.class_id() == class_id).copied().collect();
        if !class_dets.is_empty() {
            out.extend(soft_nms(&class_dets, sigma, min_score));
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;

    fn det(cx: f64, score: f64) -> Detection {
        Detection::new(BBox::new(cx, 10.0, 10.0, 10.0, 0).unwrap(), score)
    }

    #[test]
    fn identical_boxes_decay() {
        let out = soft_nms(&[det(10.0, 0.9), det(10.0, 0.8)], 0.5, 0.001);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2.0f64).exp()).abs() < 1e-12);
        assert!((out[1].score - 0.108).abs() < 1e-3);
    }

    #[test]
    fn disjoint_boxes_unchanged() {
        let input = [det(10.0, 0.7), det(100.0, 0.9)];
        let out = soft_nms(&input, 0.5, 0.001);
        assert_eq!(out, vec![input[1], input[0]]);
    }

    #[test]
    fn single_detection_unchanged() {
        let input = [det(10.0, 0.3)];
        assert_eq!(soft_nms(&input, 0.5, 0.001), input.to_vec());
        assert!(soft_nms(&[], 0.5, 0.001).is_empty());
    }

    #[test]
    fn drops_below_floor() {
        let out = soft_nms(&[det(10.0, 0.9), det(10.0, 0.01)], 0.5, 0.005);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn small_sigma_is_hard_suppression() {
        let input: Vec<_> = (0..5).map(|k| det(10.0, 0.9 - 0.1 * k as f64)).collect();
        for sigma in [1e-2, 1e-3, 1e-4] {
            let out = soft_nms(&input, sigma, 1e-6);
            assert_eq!(out.len(), 1, "sigma {sigma}");
            assert_eq!(out[0].score, 0.9);
        }
    }

    #[test]
    fn per_class_does_not_cross_classes() {
        let a = det(10.0, 0.9);
        let b = Detection::new(BBox { class_id: 1, ..a.bbox }, 0.8);
        let out = soft_nms_per_class(&[a, b], 0.5, 0.001);
        assert_eq!(out, vec![a, b]);
    }
}
