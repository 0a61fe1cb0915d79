use proptest::prelude::*;

use sspsr::data::{
    bicubic_resize, decode_cube, encode_cube, extract_patches, patch_positions, Direction,
    PatchSpec,
};
use sspsr::grouping::{merge_overlap_average, plan_groups, split};
use sspsr::metrics::{psnr, rmse, sam, ssim, SsimParams};
use sspsr::params::ParamStore;
use sspsr::tensor::kernels::{conv2d, pixel_shuffle, pixel_unshuffle};
use sspsr::tensor::ConvAlgo;
use sspsr::train::{adam_step, lr_schedule, TrainConfig, TrainState};
use sspsr::{HsiCube, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

fn cube(c: usize, h: usize, w: usize, lo: f64) -> impl Strategy<Value = HsiCube> {
    prop::collection::vec(lo..1.0f64, c * h * w).prop_map(move |v| HsiCube::new(c, h, w, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..7, 1usize..7)
}

proptest! {
    #[test]
    fn groups_cover_every_band_with_the_planned_count(c in 1usize..200, p in 1usize..20, o in 0usize..19) {
        prop_assume!(o < p);
        let s = plan_groups(c, p, o).unwrap();
        let cov = s.coverage();
        prop_assert!(cov.iter().all(|&k| k >= 1));
        prop_assert_eq!(s.intervals().last().unwrap().end, c);
        let width = p.min(c);
        prop_assert!(s.intervals().iter().all(|r| r.len() == width));
        if p < c {
            prop_assert_eq!(s.len(), (c - o).div_ceil(p - o));
        } else {
            prop_assert_eq!(s.len(), 1);
        }
    }

    #[test]
    fn merge_inverts_split(
        (c, p, o) in (2usize..24).prop_flat_map(|c| (Just(c), 1..=c)).prop_flat_map(|(c, p)| (Just(c), Just(p), 0..p)),
        seed in any::<u64>(),
    ) {
        let s = plan_groups(c, p, o).unwrap();
        let x = Tensor::from_fn(&[2, c, 3, 2], |i| ((i as u64 ^ seed) % 97) as f64 / 97.0 - 0.5);
        let back = merge_overlap_average(&split(&x, &s).unwrap(), &s).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn pixel_shuffle_is_a_bijection(x in tensor(vec![2, 8, 3, 5]), r in prop::sample::select(vec![1usize, 2])) {
        let up = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(up.shape(), &[2, 8 / (r * r), 3 * r, 5 * r][..]);
        prop_assert_eq!(pixel_unshuffle(&up, r).unwrap(), x.clone());
        let mut a = x.data().to_vec();
        let mut b = up.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn convolution_is_linear_and_algorithms_agree(
        x in tensor(vec![2, 3, 5, 4]),
        y in tensor(vec![2, 3, 5, 4]),
        w in tensor(vec![4, 3, 3, 3]),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let zero = Tensor::zeros(&[4]);
        let conv = |t: &Tensor, algo| conv2d(t, &w, &zero, 1, algo).unwrap();
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = conv(&mix, ConvAlgo::Im2col);
        let rhs = conv(&x, ConvAlgo::Im2col)
            .zip_map(&conv(&y, ConvAlgo::Im2col), |p, q| a * p + b * q)
            .unwrap();
        let direct = conv(&mix, ConvAlgo::Direct);
        for ((l, r), d) in lhs.data().iter().zip(rhs.data()).zip(direct.data()) {
            prop_assert!((l - r).abs() < 1e-12);
            prop_assert!((l - d).abs() < 1e-12);
        }
    }

    #[test]
    fn patches_reassemble_the_cube(h in 4usize..20, w in 4usize..20, p in 1usize..5, o in 0usize..4, seed in any::<u32>()) {
        prop_assume!(o < p && p <= h.min(w));
        let spec = PatchSpec::new(p, o).unwrap();
        let data = (0..2 * h * w).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f64 / u32::MAX as f64).collect();
        let cube = HsiCube::new(2, h, w, data).unwrap();
        let rows = patch_positions(h, spec).unwrap();
        let cols = patch_positions(w, spec).unwrap();
        let patches = extract_patches(&cube, spec).unwrap();
        prop_assert_eq!(patches.len(), rows.len() * cols.len());
        let mut rebuilt = HsiCube::zeros(2, h, w);
        let mut seen = vec![false; h * w];
        for (k, patch) in patches.iter().enumerate() {
            let (y0, x0) = (rows[k / cols.len()], cols[k % cols.len()]);
            for b in 0..2 {
                for y in 0..p {
                    for x in 0..p {
                        rebuilt.band_mut(b)[(y0 + y) * w + x0 + x] = patch.get(b, y, x);
                        seen[(y0 + y) * w + x0 + x] = true;
                    }
                }
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert_eq!(rebuilt, cube);
    }

    #[test]
    fn sam_ignores_positive_rescaling(x in cube(4, 3, 3, 0.05), y in cube(4, 3, 3, 0.05), k in 0.01f64..100.0) {
        let scaled = HsiCube::new(4, 3, 3, y.data().iter().map(|v| k * v).collect()).unwrap();
        prop_assert!((sam(&x, &y).unwrap() - sam(&x, &scaled).unwrap()).abs() < 1e-9);
        prop_assert!(sam(&y, &scaled).unwrap() < 1e-5);
    }

    #[test]
    fn symmetric_metrics_are_symmetric(x in cube(2, 7, 8, 0.0), y in cube(2, 7, 8, 0.0)) {
        let win = SsimParams { window: 7, ..SsimParams::default() };
        prop_assert_eq!(rmse(&x, &y).unwrap(), rmse(&y, &x).unwrap());
        prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        prop_assert_eq!(ssim(&x, &y, &win).unwrap(), ssim(&y, &x, &win).unwrap());
        let s = ssim(&x, &y, &win).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn bicubic_keeps_constant_cubes(v in 0.0f64..1.0, (h, w) in (1usize..6, 1usize..6), d in prop::sample::select(vec![2usize, 4])) {
        let flat = HsiCube::new(2, h * d, w * d, vec![v; 2 * h * w * d * d]).unwrap();
        let down = bicubic_resize(&flat, d, Direction::Down).unwrap();
        let up = bicubic_resize(&down, d, Direction::Up).unwrap();
        prop_assert_eq!(down.dims(), (2, h, w));
        prop_assert!(down.data().iter().chain(up.data()).all(|u| (u - v).abs() < 1e-12));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters(g in tensor(vec![3, 2]), steps in 1usize..5) {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_fn(&[3, 2], |i| i as f64));
        let before = store.clone();
        let mut state = TrainState::new(&store);
        for _ in 0..steps {
            adam_step(&mut store, &[Some(g.clone())], &mut state, 0.0, &Default::default()).unwrap();
        }
        prop_assert_eq!(store, before);
    }

    #[test]
    fn schedule_has_one_step(epoch in 0usize..100) {
        let cfg = TrainConfig::default();
        let want = if epoch < 30 { cfg.lr0 } else { cfg.lr0 / 10.0 };
        prop_assert_eq!(lr_schedule(epoch, &cfg), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn hsic_round_trip_is_exact(
        (c, h, w) in dims(),
        seed in any::<u64>(),
    ) {
        let data = (0..c * h * w)
            .map(|i| (((i as u64 + 1).wrapping_mul(seed | 1) >> 11) as f64 / (1u64 << 53) as f64) as f32 as f64)
            .collect();
        let cube = HsiCube::new(c, h, w, data).unwrap();
        let bytes = encode_cube(&cube).unwrap();
        prop_assert_eq!(bytes.len(), 20 + 4 * c * h * w);
        prop_assert_eq!(decode_cube(&bytes).unwrap(), cube);
    }
}
