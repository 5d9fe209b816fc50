use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spin_road::nn::{ParamStore, Session};
use spin_road::spin::{Aggregation, PyramidResample, SpinBlock, SpinDims, SpinPyramid, SpinVariant};
use spin_road::tensor::gradcheck::{check_model_gradients, random_tensor, DEFAULT_STEP};
use spin_road::tensor::{NormMode, Tensor};

fn block(dims: SpinDims, variant: SpinVariant, seed: u64) -> (ParamStore<f64>, SpinBlock) {
    let mut store = ParamStore::new();
    let b = SpinBlock::new(&mut store, "spin", dims, variant, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, b)
}

fn permute_pixels(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let [b, c, h, w] = x.shape()[..] else { panic!() };
    let l = h * w;
    let mut out = vec![0.0; x.numel()];
    for plane in 0..b * c {
        for (i, &p) in perm.iter().enumerate() {
            out[plane * l + i] = x.data()[plane * l + p];
        }
    }
    Tensor::new(&[b, c, h, w], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn similarity_rows_are_stochastic(
        seed in any::<u64>(),
        h in 1usize..6,
        w in 1usize..6,
        magnitude in prop_oneof![Just(1.0), Just(30.0), Just(1000.0)],
    ) {
        let (store, b) = block(SpinDims::for_channels(6), SpinVariant::Spatial, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x = random_tensor(&[2, 6, h, w], &mut rng);
        let x = Tensor::new(x.shape(), x.data().iter().map(|v| v * magnitude).collect()).unwrap();
        let mut s = Session::new(&store, NormMode::Eval);
        let xv = s.tape.constant(x);
        let a = b.spatial_similarity(&mut s, xv).unwrap();
        let l = h * w;
        prop_assert_eq!(s.tape.shape(a), &[2, l, l]);
        for row in s.tape.data(a).chunks(l) {
            prop_assert!(row.iter().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn spin_block_is_permutation_equivariant() {
    let dims = SpinDims::for_channels(8);
    let (store, b) = block(dims, SpinVariant::Full, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[1, 8, 4, 4], &mut rng);
    let run = |x: &Tensor<f64>| {
        let mut s = Session::new(&store, NormMode::Eval);
        let xv = s.tape.constant(x.clone());
        let a = b.spatial_similarity(&mut s, xv).unwrap();
        let y = b.forward(&mut s, xv).unwrap();
        (s.tape.data(a).to_vec(), s.tape.value(y).clone())
    };
    let (a, y) = run(&x);
    let l = 16;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..l).collect();
        perm.shuffle(&mut rng);
        let (ap, yp) = run(&permute_pixels(&x, &perm));
        let expected = permute_pixels(&y, &perm);
        for (u, v) in yp.data().iter().zip(expected.data()) {
            assert!((u - v).abs() < 1e-10);
        }
        for i in 0..l {
            for j in 0..l {
                assert!((ap[i * l + j] - a[perm[i] * l + perm[j]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn spin_block_gradcheck() {
    let dims = SpinDims { channels: 4, m: 2, n: 2, s: 2 };
    for seed in [1, 2, 3] {
        for variant in [SpinVariant::Spatial, SpinVariant::Interaction, SpinVariant::Full] {
            let (store, b) = block(dims, variant, seed);
            let x = random_tensor(&[2, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(seed + 100));
            let rep = check_model_gradients("spin_block", &store, &[x], NormMode::Train, DEFAULT_STEP, 1e-4, None, |s, v| {
                b.forward(s, v[0])
            })
            .unwrap();
            assert!(rep.passed(), "{variant:?} seed {seed}: {rep:?}");
        }
    }
}

#[test]
fn spin_pyramid_gradcheck() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (aggregation, resample) in [
        (Aggregation::Mean, PyramidResample::Residual),
        (Aggregation::Sum, PyramidResample::Direct),
    ] {
        let p = SpinPyramid::new(
            &mut store,
            &format!("pyr.{aggregation:?}"),
            SpinDims::for_channels(4),
            SpinVariant::Full,
            aggregation,
            resample,
            &mut rng,
        )
        .unwrap();
        let x = random_tensor(&[1, 4, 8, 8], &mut rng);
        let rep = check_model_gradients("spin_pyramid", &store, &[x], NormMode::Train, DEFAULT_STEP, 1e-3, None, |s, v| {
            p.forward(s, v[0])
        })
        .unwrap();
        assert!(rep.passed(), "{aggregation:?}/{resample:?}: {rep:?}");
    }
}
