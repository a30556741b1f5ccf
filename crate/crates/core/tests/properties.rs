mod common;

use common::*;
use lensless_core::eval::{depth_rmse, extract_depth_and_aif, ssim, DepthMap};
use lensless_core::forward::{CodedIllumination, SceneOperator, SceneVolume};
use lensless_core::optics::{predict_depth_shift, sample_mask_1d, CameraGeometry, DepthGrid};
use lensless_core::patterns::{
    mls_vector, random_sequence, shifting_dots_sequence, shifting_lines_sequence,
    IlluminationSequence, Pattern,
};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

/// The given patterns followed by a fully lit frame, so coverage always holds.
fn seq_from_bits(n: usize, bits: &[Vec<bool>]) -> IlluminationSequence {
    let mut patterns: Vec<Pattern> = bits
        .iter()
        .map(|b| Pattern::new(Array2::from_shape_fn((n, n), |(i, j)| b[i * n + j] as u8)).unwrap())
        .collect();
    patterns.push(Pattern::new(Array2::ones((n, n))).unwrap());
    IlluminationSequence::custom(patterns).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
                          baseline in 0.0f64..40.0, planes in 1usize..4) {
        let model = tiny_model(baseline, planes);
        let bits: Vec<Vec<bool>> = (0..3)
            .map(|f| (0..16).map(|i| (seed >> ((i + 5 * f) % 60)) & 1 == 1).collect())
            .collect();
        let seq = seq_from_bits(4, &bits);
        let op = CodedIllumination::new(&model, &seq).unwrap();
        let mut r = rng(seed);
        let x = random_volume(&mut r, op.volume_dim());
        let y = random_volume(&mut r, op.volume_dim());
        let combo = &x * alpha + &y * beta;
        let lhs = op.apply(combo.view()).unwrap();
        let rhs = op.apply(x.view()).unwrap() * alpha + op.apply(y.view()).unwrap() * beta;
        prop_assert!(rel_err(lhs.as_slice().unwrap(), rhs.as_slice().unwrap()) <= 1e-12
            || rhs.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lighting_more_pixels_never_darkens(bits in prop::collection::vec(any::<bool>(), 16),
                                          extra in prop::collection::vec(any::<bool>(), 16),
                                          seed in 0u64..1000) {
        let wider: Vec<bool> = bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let model = tiny_model(15.0, 2);
        let narrow_seq = seq_from_bits(4, &[bits]);
        let wide_seq = seq_from_bits(4, &[wider]);
        let narrow = CodedIllumination::new(&model, &narrow_seq).unwrap();
        let wide = CodedIllumination::new(&model, &wide_seq).unwrap();
        let x = random_volume(&mut rng(seed), narrow.volume_dim());
        let a = narrow.apply(x.view()).unwrap();
        let b = wide.apply(x.view()).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(p, q)| *p <= *q + 1e-12));
    }

    #[test]
    fn system_matrix_entries_are_transmittances(baseline in 0.0f64..60.0, planes in 1usize..4) {
        let model = tiny_model(baseline, planes);
        for m in model.left.iter().chain(model.right.iter()) {
            prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mask_sampling_is_linear_between_features(order in 2u32..10, idx in 0usize..500,
                                                 frac in 0.0f64..1.0) {
        let mask = mls_vector(order).unwrap();
        let len = mask.len();
        let i = idx % (len - 1);
        let pitch = 0.06;
        let centre = |k: f64| (k - (len as f64 - 1.0) / 2.0) * pitch;
        let a = sample_mask_1d(&mask, pitch, centre(i as f64));
        let b = sample_mask_1d(&mask, pitch, centre(i as f64 + 1.0));
        let mid = sample_mask_1d(&mask, pitch, centre(i as f64 + frac));
        prop_assert_eq!(a, f64::from(mask[i]));
        prop_assert!((mid - ((1.0 - frac) * a + frac * b)).abs() < 1e-9);
    }

    #[test]
    fn depth_shift_grows_with_separation(z1 in 100.0f64..1000.0, gap1 in 0.0f64..500.0,
                                         gap2 in 0.0f64..500.0, baseline in 0.0f64..100.0) {
        let g = CameraGeometry { baseline_mm: baseline, ..CameraGeometry::prototype() };
        let (near, far) = if gap1 <= gap2 { (gap1, gap2) } else { (gap2, gap1) };
        let s_near = predict_depth_shift(z1, z1 + near, &g).unwrap();
        let s_far = predict_depth_shift(z1, z1 + far, &g).unwrap();
        prop_assert!(s_near <= s_far + 1e-15);
        prop_assert!((predict_depth_shift(z1 + far, z1, &g).unwrap() - s_far).abs() < 1e-15);
    }

    #[test]
    fn dots_partition_the_grid(n in 1usize..=64, k in 1usize..=16) {
        prop_assume!(k <= n);
        let seq = shifting_dots_sequence(n, k).unwrap();
        prop_assert_eq!(seq.len(), k * k);
        prop_assert!(seq.sum().iter().all(|&c| c == 1));
    }

    #[test]
    fn lines_cover_every_pixel_once_per_direction(n in 1usize..=64, k in 1usize..=16) {
        prop_assume!(k <= n);
        let seq = shifting_lines_sequence(n, k).unwrap();
        prop_assert_eq!(seq.len(), 2 * k);
        let (horizontal, vertical) = seq.patterns.split_at(k);
        for half in [horizontal, vertical] {
            let mut count = Array2::<u32>::zeros((n, n));
            for p in half {
                count += &p.matrix().mapv(u32::from);
            }
            prop_assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn random_sequences_cover(n in 2usize..=32, seed in any::<u64>()) {
        let seq = random_sequence(n, 32, seed).unwrap();
        prop_assert!(seq.covers_all());
    }

    #[test]
    fn metrics_are_symmetric(seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_volume(&mut r, (1, 20, 20)).index_axis_move(ndarray::Axis(0), 0);
        let b = random_volume(&mut r, (1, 20, 20)).index_axis_move(ndarray::Axis(0), 0);
        let ab = ssim(a.view(), b.view(), 1.0).unwrap();
        let ba = ssim(b.view(), a.view(), 1.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let da = DepthMap::dense(a * 20.0 + 40.0);
        let db = DepthMap::dense(b * 20.0 + 40.0);
        prop_assert_eq!(depth_rmse(&da, &db).unwrap(), depth_rmse(&db, &da).unwrap());
    }

    #[test]
    fn depth_extraction_ignores_global_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let vol = random_volume(&mut rng(seed), (3, 6, 6));
        let grid = DepthGrid::new(vec![400.0, 500.0, 600.0]).unwrap();
        let base = SceneVolume::new(vol.clone(), grid.clone()).unwrap();
        let scaled = SceneVolume::new(vol * scale, grid).unwrap();
        let (d0, a0) = extract_depth_and_aif(&base);
        let (d1, a1) = extract_depth_and_aif(&scaled);
        prop_assert_eq!(d0, d1);
        prop_assert!(a0.iter().zip(a1.iter()).all(|(x, y)| (x * scale - y).abs() <= 1e-12 * y.abs().max(1.0)));
    }
}

#[test]
fn mls_balance_and_two_level_autocorrelation() {
    for order in 2..=12u32 {
        let seq = mls_vector(order).unwrap();
        let period = (1usize << order) - 1;
        assert_eq!(seq.len(), period);
        let ones = seq.iter().filter(|&&b| b == 1).count();
        assert_eq!(ones, 1 << (order - 1), "order {order}");
        let bipolar: Vec<i64> = seq.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
        for lag in 0..period {
            let c: i64 = (0..period).map(|i| bipolar[i] * bipolar[(i + lag) % period]).sum();
            let want = if lag == 0 { period as i64 } else { -1 };
            assert_eq!(c, want, "order {order} lag {lag}");
        }
    }
}

#[test]
fn zero_scene_gives_zero_frames() {
    let model = tiny_model(10.0, 2);
    let seq = shifting_lines_sequence(4, 2).unwrap();
    let op = CodedIllumination::new(&model, &seq).unwrap();
    let y = op.apply(Array3::zeros(op.volume_dim()).view()).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}
