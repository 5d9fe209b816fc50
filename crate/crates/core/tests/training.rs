use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spin_road::data::{generate_synthetic, Sample, SynthOptions};
use spin_road::network::{Checkpoint, Model, NetworkConfig};
use spin_road::tensor::{Tape, Tensor};
use spin_road::train::{fit, orientation_loss, seg_loss, TrainConfig, LOG_FILE, LOG_HEADER};

fn toy() -> NetworkConfig {
    NetworkConfig {
        base_width: 8,
        hourglass_depth: 1,
        hourglasses: 1,
        input_size: 16,
        ..Default::default()
    }
}

fn data(n: usize) -> Vec<Sample> {
    generate_synthetic(11, n, 16, &SynthOptions::default()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

/// Reorders the leading batch axis of a flat buffer.
fn permute<V: Copy>(v: &[V], perm: &[usize]) -> Vec<V> {
    let per = v.len() / perm.len();
    perm.iter().flat_map(|&i| v[i * per..(i + 1) * per].iter().copied()).collect()
}

#[test]
fn losses_are_invariant_to_batch_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = 5;
    let sizes = [8usize, 4, 2];
    let seg: Vec<Tensor<f64>> = sizes.iter().map(|&s| random(&[b, 1, s, s], &mut rng)).collect();
    let ori: Vec<Tensor<f64>> = sizes.iter().map(|&s| random(&[b, 37, s, s], &mut rng)).collect();
    let masks: Vec<Vec<f32>> = sizes
        .iter()
        .map(|&s| (0..b * s * s).map(|_| f32::from(rng.random_bool(0.3))).collect())
        .collect();
    let classes: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&s| (0..b * s * s).map(|_| rng.random_range(0..37)).collect())
        .collect();

    let eval = |perm: &[usize]| -> (f64, f64) {
        let mut tape = Tape::<f64>::new();
        let p = |t: &Tensor<f64>| Tensor::new(t.shape(), permute(t.data(), perm)).unwrap();
        let s: [_; 3] = std::array::from_fn(|i| tape.constant(p(&seg[i])));
        let o: [_; 3] = std::array::from_fn(|i| tape.constant(p(&ori[i])));
        let m: [Vec<f32>; 3] = std::array::from_fn(|i| permute(&masks[i], perm));
        let c: [Vec<usize>; 3] = std::array::from_fn(|i| permute(&classes[i], perm));
        let (ls, _) = seg_loss(&mut tape, &s, &m).unwrap();
        let (lo, _) = orientation_loss(&mut tape, &o, &c, Some(&m)).unwrap();
        (tape.data(ls)[0], tape.data(lo)[0])
    };

    let base = eval(&[0, 1, 2, 3, 4]);
    for perm in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 2, 3, 4, 0]] {
        let (s, o) = eval(&perm);
        assert!((s - base.0).abs() < 1e-12, "{s} vs {}", base.0);
        assert!((o - base.1).abs() < 1e-12, "{o} vs {}", base.1);
    }
}

proptest! {
    #[test]
    fn soft_iou_grows_with_any_road_pixel(
        cells in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..40),
        pick in any::<prop::sample::Index>(),
        bump in 0.0f64..=1.0,
    ) {
        let (probs, gt): (Vec<f64>, Vec<f64>) = cells.iter().map(|&(p, g)| (p, f64::from(g))).unzip();
        let roads: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == 1.0).collect();
        prop_assume!(!roads.is_empty());
        let j = roads[pick.index(roads.len())];
        let iou = |p: Vec<f64>| {
            let mut tape = Tape::<f64>::new();
            let n = p.len();
            let v = tape.constant(Tensor::new(&[1, n], p).unwrap());
            let r = tape.soft_iou(v, &gt).unwrap();
            tape.data(r)[0]
        };
        let mut raised = probs.clone();
        raised[j] = probs[j] + (1.0 - probs[j]) * bump;
        prop_assert!(iou(raised) >= iou(probs) - 1e-15);
    }
}

#[test]
fn resumed_run_repeats_the_next_step_exactly() {
    let train = data(4);
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 2;
    cfg.schedule.lr = 0.05;
    cfg.schedule.steps = vec![1];

    let mut straight = Model::<f64>::new(&toy(), 3).unwrap();
    cfg.max_iters = Some(4);
    let full = fit(&mut straight, &train, &[], &cfg, 9, None, None).unwrap();

    let mut first = Model::<f64>::new(&toy(), 3).unwrap();
    cfg.max_iters = Some(3);
    let part = fit(&mut first, &train, &[], &cfg, 9, None, None).unwrap();
    let bytes = Checkpoint::from_model(&first, Some(part.state)).to_bytes().unwrap();
    let ck = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    let state = ck.train.clone();
    let mut resumed = ck.into_model().unwrap();
    cfg.max_iters = Some(4);
    let rest = fit(&mut resumed, &train, &[], &cfg, 9, None, state).unwrap();

    assert_eq!(rest.steps.len(), 1);
    assert_eq!(rest.steps[0], full.steps[3]);
    assert_eq!(resumed.params, straight.params);
}

#[test]
fn log_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let train = data(4);
    let val = data(2);
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 2;
    cfg.schedule.epochs = 2;
    let mut model = Model::<f32>::new(&toy(), 0).unwrap();
    fit(&mut model, &train, &val, &cfg, 0, Some(dir.path()), None).unwrap();

    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,iter,lr,L_seg,L_orient,L_final,val_F1,val_IoU");
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 3);
    for (e, line) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        assert_eq!(f[0].parse::<usize>().unwrap(), e);
        assert_eq!(f[1].parse::<u64>().unwrap(), 2 * (e as u64 + 1));
        let v: Vec<f64> = f[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[3] - (v[1] + v[2])).abs() < 1e-5 * v[3].max(1.0));
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
}

#[test]
fn loss_trends_down_early_in_an_overfit_run() {
    let train = data(8);
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 8;
    cfg.augment = false;
    cfg.weight_decay = 0.0;
    cfg.schedule.lr = 0.1;
    cfg.schedule.steps.clear();
    cfg.schedule.epochs = 1000;
    cfg.max_iters = Some(50);
    let mut model = Model::<f32>::new(&toy(), 0).unwrap();
    let log = fit(&mut model, &train, &[], &cfg, 0, None, None).unwrap();
    let losses: Vec<f64> = log.steps.iter().map(|r| r.l_final).collect();
    let ma: Vec<f64> = losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    assert!(ma.last().unwrap() < &(0.9 * ma[0]), "{ma:?}");
    // Least-squares slope of the smoothed curve.
    let n = ma.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ma.iter().sum::<f64>() / n;
    let slope: f64 = ma.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum::<f64>();
    assert!(slope < 0.0);
}
