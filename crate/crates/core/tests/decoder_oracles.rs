mod common;

use butterfly_core::decoder::{accumulate, collect_votes, decode, decode_with_map, extract_peaks, Vote, Votes};
use butterfly_core::encoder::{assign_cells, encode, EncodeMode};
use butterfly_core::synth::{generate_scene, SceneSpec, SizeRange};
use butterfly_core::types::{BBox, ChiMode, DecoderConfig, FieldCell, FieldGrid, Rho};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn vote_at(tx: f64, ty: f64, p: f64, chi: f64, sigma: f64) -> Vote {
    Vote {
        source: (0, 0),
        tx,
        ty,
        p,
        w_px: sigma * 10.0,
        h_px: sigma * 10.0,
        sigma_x: sigma,
        sigma_y: sigma,
        chi,
    }
}

fn one_class(votes: Vec<Vote>) -> Votes {
    Votes { per_class: vec![votes], skipped_nonfinite: 0 }
}

#[test]
fn accumulate_matches_naive_sum() {
    let mut r = rng(2024);
    let cfg = DecoderConfig::default();
    for _ in 0..4 {
        let (gh, gw) = (r.random_range(4..=24), r.random_range(4..=24));
        let stride = r.random_range(1..=4u32);
        let grid = random_grid(&mut r, 2, gh, gw, stride, 0.5);
        let votes = collect_votes(&grid, &cfg);
        let (w, h) = grid.image_size();
        let map = accumulate(&votes, &cfg, w, h);
        for c in 0..2 {
            let oracle = naive_map(&votes.per_class[c], w, h);
            let worst = map.plane(c).iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-6, "class {c} grid {gh}x{gw} stride {stride}: {worst:e}");
        }
    }
}

#[test]
fn accumulate_point_values() {
    let cfg = DecoderConfig::default();
    let v = vote_at(50.0, 50.0, 1.0, 16.0, 2.0);
    assert_eq!(v.density_at(50.0, 50.0), 0.0625);
    assert!((v.density_at(52.0, 50.0) - 0.0625 * (-0.5f64).exp()).abs() < 1e-15);

    // on the pixel grid the same vote sits at pixel (50, 50)'s center
    let map = accumulate(&one_class(vec![vote_at(50.5, 50.5, 1.0, 16.0, 2.0)]), &cfg, 100, 100);
    assert!((map.get(0, 50, 50) - 0.0625).abs() < 1e-15);
    assert!((map.get(0, 52, 50) - 0.0625 * (-0.5f64).exp()).abs() < 1e-15);
    assert!((0.0379 - map.get(0, 52, 50)).abs() < 1e-4);
}

#[test]
fn sixteen_identical_votes_sum_to_one() {
    let cfg = DecoderConfig::default();
    let votes = vec![vote_at(40.5, 30.5, 1.0, 16.0, 3.0); 16];
    let map = accumulate(&one_class(votes), &cfg, 80, 60);
    assert!((map.get(0, 40, 30) - 1.0).abs() < 1e-12);
}

#[test]
fn two_gaussians_give_two_peaks() {
    let cfg = DecoderConfig::default();
    let votes = vec![vote_at(30.5, 40.5, 1.0, 1.0, 2.0), vote_at(50.5, 40.5, 0.8, 1.0, 2.0)];
    let (w, h) = (96, 80);
    let map = accumulate(&one_class(votes.clone()), &cfg, w, h);
    let peaks: Vec<(usize, usize)> = extract_peaks(&map, &cfg).iter().map(|p| (p.px, p.py)).collect();
    let oracle = brute_force_peaks(&naive_map(&votes, w, h), w, h, cfg.select_threshold);
    assert_eq!(peaks, vec![(30, 40), (50, 40)]);
    assert_eq!(peaks, oracle);
}

#[test]
fn single_cell_vote() {
    let mut grid = FieldGrid::zeros(1, 4, 6, 4).unwrap();
    let l = 4.0f64.ln();
    grid.set_cell(0, 1, 2, &FieldCell { p: 0.9, w_log: l, h_log: l, ..Default::default() });
    let votes = collect_votes(&grid, &DecoderConfig::default());
    assert_eq!(votes.total(), 1);
    let v = votes.per_class[0][0];
    assert_eq!((v.tx, v.ty, v.source), (10.0, 6.0, (1, 2)));
    assert!((v.w_px - 16.0).abs() < 1e-12 && (v.h_px - 16.0).abs() < 1e-12);
    assert!(collect_votes(&FieldGrid::zeros(2, 5, 5, 4).unwrap(), &DecoderConfig::default()).per_class.iter().all(Vec::is_empty));
}

#[test]
fn encoded_box_votes_agree() {
    let b = BBox::new(47.3, 29.9, 22.0, 14.0, 0).unwrap();
    for mode in [EncodeMode::Center1, EncodeMode::Window(4), EncodeMode::FullBox] {
        let grid = encode(&[b], 96, 64, 1, 4, mode).unwrap();
        let votes = collect_votes(&grid, &DecoderConfig::default());
        assert_eq!(votes.total(), assign_cells(&b, 4, grid.grid_h(), grid.grid_w(), mode).len(), "{mode}");
        for v in &votes.per_class[0] {
            assert!((v.tx - b.cx).abs() < 1e-9 && (v.ty - b.cy).abs() < 1e-9);
        }
    }
}

#[test]
fn nonfinite_cells_are_counted() {
    let mut grid = FieldGrid::zeros(1, 4, 4, 4).unwrap();
    grid.set_cell(0, 0, 0, &FieldCell { p: 0.9, vx: f64::NAN, ..Default::default() });
    grid.set_cell(0, 1, 1, &FieldCell { p: 0.9, w_log: f64::INFINITY, ..Default::default() });
    grid.set_cell(0, 2, 2, &FieldCell { p: 0.9, ..Default::default() });
    let votes = collect_votes(&grid, &DecoderConfig::default());
    assert_eq!(votes.total(), 1);
    assert_eq!(votes.skipped_nonfinite, 2);
    let out = decode_with_map(&grid, &DecoderConfig::default()).unwrap();
    assert!(out.map.plane(0).iter().all(|v| v.is_finite()));
}

fn scene(seed: u64, count: usize) -> Vec<BBox> {
    generate_scene(&SceneSpec {
        seed,
        image_w: 320,
        image_h: 240,
        count_min: count,
        count_max: count,
        class_sizes: vec![SizeRange::square(12.0, 48.0), SizeRange { w_min: 20.0, w_max: 60.0, h_min: 10.0, h_max: 30.0 }],
        max_iou: 0.0,
        class_weights: vec![0.6, 0.4],
    })
    .unwrap()
}

#[test]
fn fifty_box_round_trip() {
    let cfg = DecoderConfig { rho: Rho::Uniform(10.0), chi_mode: ChiMode::Fixed(16.0), ..Default::default() };
    for seed in [1, 2, 3] {
        let boxes = scene(seed, 50);
        let grid = encode(&boxes, 320, 240, 2, 4, EncodeMode::Window(4)).unwrap();
        let dets = decode(&grid, &cfg).unwrap();
        let strong: Vec<_> = dets.iter().filter(|d| d.score > 0.5).cloned().collect();
        assert_eq!(strong.len(), 50, "seed {seed}");
        for (gt, m) in boxes.iter().zip(match_one_to_one(&boxes, &strong)) {
            let (d, iou) = m.expect("every box is detected");
            assert!(iou >= 0.95, "iou {iou}");
            assert!(center_error(gt, &strong[d].bbox) <= 0.1);
        }
    }
}

#[test]
fn decode_is_bit_identical() {
    let boxes = scene(9, 30);
    let grid = encode(&boxes, 320, 240, 2, 4, EncodeMode::FullBox).unwrap();
    let cfg = DecoderConfig { chi_mode: ChiMode::BoxArea, ..Default::default() };
    let a = decode(&grid, &cfg).unwrap();
    let b = decode(&grid, &cfg).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            [x.bbox.cx, x.bbox.cy, x.bbox.w, x.bbox.h, x.score].map(f64::to_bits),
            [y.bbox.cx, y.bbox.cy, y.bbox.w, y.bbox.h, y.score].map(f64::to_bits)
        );
    }
}

fn arb_votes() -> impl Strategy<Value = Vec<Vote>> {
    prop::collection::vec(
        (0.0..64.0f64, 0.0..48.0f64, 0.1..1.0f64, 1.0..20.0f64, 2.0..6.0f64)
            .prop_map(|(x, y, p, chi, s)| vote_at(x, y, p, chi, s)),
        1..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chi_normalization_is_exact(n in 1usize..40, x in 0usize..64, y in 0usize..48, s in 2.0..8.0f64) {
        let votes = vec![vote_at(x as f64 + 0.5, y as f64 + 0.5, 1.0, n as f64, s); n];
        let map = accumulate(&one_class(votes), &DecoderConfig::default(), 64, 48);
        prop_assert!((map.get(0, x, y) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn removing_a_vote_never_raises_the_map(votes in arb_votes(), drop in any::<prop::sample::Index>()) {
        let cfg = DecoderConfig::default();
        let full = accumulate(&one_class(votes.clone()), &cfg, 64, 48);
        let mut fewer = votes;
        fewer.remove(drop.index(fewer.len()));
        let less = accumulate(&one_class(fewer), &cfg, 64, 48);
        for (a, b) in less.plane(0).iter().zip(full.plane(0)) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn map_is_finite_and_nonnegative(votes in arb_votes()) {
        let map = accumulate(&one_class(votes.clone()), &DecoderConfig::default(), 64, 48);
        let oracle = naive_map(&votes, 64, 48);
        for (a, b) in map.plane(0).iter().zip(&oracle) {
            prop_assert!(a.is_finite() && *a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
