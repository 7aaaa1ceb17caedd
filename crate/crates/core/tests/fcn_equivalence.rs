use arm_core::inference::{
    artifact_map, check_equivalence, run_fcn, run_full_frame, run_sliding_window, run_tiled, sliding_patch_count,
    EQUIVALENCE_TOL,
};
use arm_core::netgraph::{
    build_color_detector, build_mini_inception, build_mini_inception_naive, count_flops, count_sliding_flops,
    random_fcn_graph, LayerKind, NAIVE_TILE_CELLS,
};
use arm_core::tensor::{Padding, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_fov(side: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(side, side, 3, |_, _, _| rng.random::<f32>())
}

#[test]
fn fcn_matches_sliding_window_over_seeds() {
    for seed in 0..20 {
        let g = build_mini_inception(seed);
        let fov = random_fov(62, 100 + seed);
        let fcn = run_fcn(&g, &fov).unwrap();
        let sw = run_sliding_window(&g, &fov, None).unwrap();
        assert_eq!((fcn.rows(), fcn.cols()), (9, 9));
        assert_eq!((sw.rows(), sw.cols()), (fcn.rows(), fcn.cols()));
        assert_eq!(fcn.geometry(), sw.geometry());
        let diff = fcn.to_tensor().max_abs_diff(&sw.to_tensor()).unwrap();
        assert!(diff <= EQUIVALENCE_TOL, "seed {seed}: {diff}");
    }
}

#[test]
fn dims_follow_grid_formula_on_unaligned_fov() {
    let g = build_mini_inception(3);
    let fov = random_fov(48, 1);
    let h = run_fcn(&g, &fov).unwrap();
    assert_eq!(h.rows(), (48 - 30) / 4 + 1);
    assert_eq!(run_sliding_window(&g, &fov, None).unwrap().rows(), h.rows());
    assert_eq!(sliding_patch_count(&g, 48, 4), Some(25));
    assert!(h.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn equivalence_report_for_canonical_patch_is_exact() {
    let g = build_mini_inception(0);
    let r = check_equivalence(&g, 30, 1, 5).unwrap();
    assert!(r.pass);
    assert_eq!(r.max_abs_diff, 0.0);
}

#[test]
fn translation_by_one_stride_shifts_one_cell() {
    let g = build_mini_inception(2);
    let big = {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Tensor::from_fn(66, 70, 3, |_, _, _| rng.random::<f32>())
    };
    let a = run_fcn(&g, &big.region(0, 0, 66, 66).unwrap()).unwrap();
    let b = run_fcn(&g, &big.region(0, 4, 66, 66).unwrap()).unwrap();
    for r in 0..a.rows() {
        for c in 0..a.cols() - 1 {
            assert_eq!(b.get(r, c), a.get(r, c + 1));
        }
    }
}

#[test]
fn deterministic_across_thread_counts() {
    let g = build_mini_inception(4);
    let fov = random_fov(50, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sliding_window(&g, &fov, None).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one.values(), run_fcn(&g, &fov).unwrap().values());
}

/// Whether cell `i` sits on a tile edge that is not also the frame edge.
fn on_inner_tile_edge(i: usize, n: usize, block: usize) -> bool {
    let phase = i % block;
    (phase == 0 && i != 0) || (phase == block - 1 && i != n - 1)
}

#[test]
fn single_same_conv_breaks_equivalence_on_tile_edges() {
    // Stem switched to same padding; trained on 72 px patches (12x12 cells).
    let g = build_mini_inception(0)
        .with_padding("stem", Padding::Same)
        .unwrap()
        .with_training_patch(Some(72));
    let fov = random_fov(216, 11);
    let map = artifact_map(&g, &fov).unwrap();
    let n = map.height();
    assert_eq!(n, 48);
    for r in 0..n {
        for c in 0..n {
            let v = map.get(r, c, 0);
            if on_inner_tile_edge(r, n, 12) || on_inner_tile_edge(c, n, 12) {
                assert!(v > 0.0, "expected artifact at ({r},{c})");
            } else {
                assert_eq!(v, 0.0, "unexpected difference at ({r},{c})");
            }
        }
    }
    let report = check_equivalence(&g, 216, 1, 0).unwrap();
    assert!(!report.pass);
}

/// Nonzero (row, col) phases inside one tile of the artifact map.
fn tile_phases(map: &Tensor, ty: usize, tx: usize, block: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for r in 0..block {
        for c in 0..block {
            if map.get(ty * block + r, tx * block + c, 0) > 0.0 {
                v.push((r, c));
            }
        }
    }
    v
}

#[test]
fn naive_network_shows_periodic_grid_artifacts() {
    let g = build_mini_inception_naive(0);
    let b = NAIVE_TILE_CELLS;
    assert_eq!(g.training_patch_px(), 64);
    let fov = random_fov(256, 11);
    let map = artifact_map(&g, &fov).unwrap();
    assert_eq!(map.height(), 4 * b);
    let max = map.data().iter().copied().fold(0.0f32, f32::max);
    assert!(max > 1e-2, "max diff {max}");

    let reference = tile_phases(&map, 1, 1, b);
    assert!(!reference.is_empty() && reference.len() < b * b);
    for (ty, tx) in [(1, 2), (2, 1), (2, 2)] {
        assert_eq!(tile_phases(&map, ty, tx, b), reference, "tile ({ty},{tx})");
    }
    assert!(!check_equivalence(&g, 256, 1, 0).unwrap().pass);
}

#[test]
fn artifact_persists_on_constant_input() {
    let g = build_mini_inception_naive(0);
    let map = artifact_map(&g, &Tensor::filled(256, 256, 3, 0.6)).unwrap();
    let max = map.data().iter().copied().fold(0.0f32, f32::max);
    assert!(max > EQUIVALENCE_TOL, "max diff {max}");
    // Cells whose window never reaches a tile edge are untouched.
    assert_eq!(map.get(NAIVE_TILE_CELLS / 2, NAIVE_TILE_CELLS / 2, 0), 0.0);
}

#[test]
fn safe_graph_has_empty_artifact_map() {
    let g = build_mini_inception(0);
    let map = artifact_map(&g, &random_fov(70, 2)).unwrap();
    assert!(map.data().iter().all(|&v| v <= EQUIVALENCE_TOL));
}

#[test]
fn tiled_at_canonical_patch_is_sliding_window() {
    let g = build_mini_inception(5);
    let fov = random_fov(58, 6);
    assert_eq!(run_tiled(&g, &fov, 30).unwrap(), run_sliding_window(&g, &fov, None).unwrap());
    assert_eq!(run_tiled(&g, &fov, 42).unwrap().values(), run_fcn(&g, &fov).unwrap().values());
}

#[test]
fn color_detector_fires_exactly_on_disk() {
    let magenta = [1.0f32, 0.0, 1.0];
    let g = build_color_detector(magenta, 0.3).unwrap();
    let inside = |y: usize, x: usize| {
        let (dy, dx) = (y as f32 - 31.5, x as f32 - 31.5);
        dy * dy + dx * dx <= 144.0
    };
    let fov = Tensor::from_fn(64, 64, 3, |y, x, c| if inside(y, x) { magenta[c] } else { 1.0 });
    let h = run_fcn(&g, &fov).unwrap();
    assert_eq!((h.rows(), h.cols()), (64, 64));
    for y in 0..64 {
        for x in 0..64 {
            let px = fov.pixel(y, x);
            let l1: f32 = px.iter().zip(magenta).map(|(a, b)| (a - b).abs()).sum();
            assert_eq!(h.get(y, x) >= 0.9, l1 <= 0.3, "pixel ({y},{x})");
            assert_eq!(h.get(y, x) >= 0.9, inside(y, x));
        }
    }
}

#[test]
fn fcn_needs_less_compute_than_overlapping_patches() {
    let g = build_mini_inception(0);
    let geo = g.geometry().unwrap();
    assert!(geo.receptive_field_px > geo.output_stride_px);
    for fov in [30 + 4 * 4, 128, 512] {
        let fcn = count_flops(&g, fov).unwrap();
        let sw = count_sliding_flops(&g, fov, geo.output_stride_px).unwrap();
        assert!(fcn < sw, "fov {fov}: {fcn} vs {sw}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, max_global_rejects: 4096, ..ProptestConfig::default() })]

    #[test]
    fn safety_verdict_matches_equivalence(seed in 0u64..5_000) {
        let g = random_fcn_graph(seed, 5);
        let geo = g.geometry().unwrap();
        let side = geo.canonical_patch_px + 3 * geo.output_stride_px;
        prop_assert!(g.validate_fcn_safe().is_empty());
        prop_assert!(check_equivalence(&g, side, 1, seed).unwrap().pass);

        // Zero-pad a wide conv with no crop after it; a later crop could
        // discard exactly the padded border and hide the difference.
        let layers = g.layers();
        let last_crop = layers.iter().rposition(|l| matches!(l.kind, LayerKind::Crop { .. }));
        let wide_conv = layers.iter().enumerate().find(|(i, l)| {
            matches!(l.kind, LayerKind::Conv { kernel, .. } if kernel >= 3) && last_crop.is_none_or(|c| c < *i)
        });
        prop_assume!(wide_conv.is_some());
        let unsafe_g = g.with_padding(&wide_conv.unwrap().1.name, Padding::Same).unwrap();
        prop_assert!(!unsafe_g.validate_fcn_safe().is_empty());
        let verdict = check_equivalence(&unsafe_g, side, 1, seed).map(|r| r.pass).unwrap_or(false);
        prop_assert!(!verdict);
    }

    #[test]
    fn fcn_equals_sliding_for_random_graphs(seed in 0u64..5_000, extra in 0usize..4) {
        let g = random_fcn_graph(seed, 4);
        let geo = g.geometry().unwrap();
        let side = geo.canonical_patch_px + extra * geo.output_stride_px + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fov = Tensor::from_fn(side, side, g.input_channels(), |_, _, _| rng.random::<f32>());
        let a = run_full_frame(&g, &fov).unwrap();
        let b = run_sliding_window(&g, &fov, None).unwrap();
        prop_assert!(a.to_tensor().max_abs_diff(&b.to_tensor()).unwrap() <= EQUIVALENCE_TOL);
    }
}
