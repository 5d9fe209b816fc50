//! Acceptance gate: twelve criteria, one result line each.
//!
//! Runs without the libtest harness so the summary always reaches stdout;
//! the process exits non-zero when any criterion fails.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spin_road::cli::{ablate, ablation_csv, curves_csv, params_csv};
use spin_road::config::RunConfig;
use spin_road::data::{generate_synthetic, stitch, tile, SynthOptions, TileSpec};
use spin_road::gradsuite;
use spin_road::metrics::{apls, evaluate, pixel_metrics, relaxed_iou, EvalOptions, RoadGraph};
use spin_road::network::{Checkpoint, Model, NetworkConfig};
use spin_road::nn::{ParamStore, Session};
use spin_road::spin::{pyramid_param_count, Aggregation, PyramidResample, SpinBlock, SpinDims, SpinPyramid, SpinVariant};
use spin_road::tensor::gradcheck::random_tensor;
use spin_road::tensor::{NormMode, Tape, Tensor, Var};
use spin_road::train::{fit, orientation_loss, seg_loss, Schedule, TrainConfig};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let reports = gradsuite::run(1).map_err(e2s)?;
    let elapsed = t.elapsed();
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| format!("{r:?}")).collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} checks pass, worst rel. error {worst:.1e}, {elapsed:.2?}", reports.len()))
}

fn full_block(seed: u64, c: usize) -> (ParamStore<f64>, SpinBlock) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = SpinBlock::new(&mut store, "spin", SpinDims::for_channels(c), SpinVariant::Full, &mut rng).unwrap();
    (store, b)
}

fn row_stochastic() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let (store, b) = full_block(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let h = rng.random_range(1..7);
        let w = rng.random_range(1..7);
        let scale = [0.1, 1.0, 10.0, 100.0][seed as usize % 4];
        let x = random_tensor(&[2, 8, h, w], &mut rng);
        let x = Tensor::new(x.shape(), x.data().iter().map(|v| v * scale).collect()).unwrap();
        let mut s = Session::new(&store, NormMode::Eval);
        let xv = s.tape.constant(x);
        let a = b.spatial_similarity(&mut s, xv).map_err(e2s)?;
        for row in s.tape.data(a).chunks(h * w) {
            ensure(row.iter().all(|&v| v >= 0.0), || format!("negative entry, seed {seed}"))?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst < 1e-6, || format!("row sum off by {worst:e}"))?;
    Ok(format!("100 inputs, max |row sum − 1| = {worst:.1e}"))
}

fn non_negative(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
}

fn identity_at_init() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = non_negative(&[2, 8, 8, 8], &mut rng);
    for variant in [SpinVariant::Spatial, SpinVariant::Interaction, SpinVariant::Full] {
        let mut store = ParamStore::new();
        let b = SpinBlock::new(&mut store, "b", SpinDims::for_channels(8), variant, &mut rng).unwrap();
        b.zero_output(&mut store);
        let mut s = Session::new(&store, NormMode::Eval);
        let xv = s.tape.constant(x.clone());
        let y = b.forward(&mut s, xv).map_err(e2s)?;
        ensure(s.tape.data(y) == x.data(), || format!("block {variant:?} changed its input"))?;
    }
    let mut store = ParamStore::new();
    let p = SpinPyramid::new(
        &mut store,
        "p",
        SpinDims::for_channels(8),
        SpinVariant::Full,
        Aggregation::Mean,
        PyramidResample::Residual,
        &mut rng,
    )
    .unwrap();
    p.zero_output(&mut store);
    let mut s = Session::new(&store, NormMode::Eval);
    let xv = s.tape.constant(x.clone());
    let y = p.forward(&mut s, xv).map_err(e2s)?;
    ensure(s.tape.data(y) == x.data(), || "mean pyramid changed its input".into())?;
    Ok("block (3 variants) and mean pyramid reproduce the input bitwise".into())
}

fn permute_pixels(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let [b, c, h, w] = x.shape()[..] else { unreachable!() };
    let l = h * w;
    let mut out = vec![0.0; x.numel()];
    for plane in 0..b * c {
        for (i, &p) in perm.iter().enumerate() {
            out[plane * l + i] = x.data()[plane * l + p];
        }
    }
    Tensor::new(&[b, c, h, w], out).unwrap()
}

fn permutation_equivariance() -> Verdict {
    let (store, b) = full_block(21, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_tensor(&[1, 8, 4, 4], &mut rng);
    let fwd = |x: &Tensor<f64>| {
        let mut s = Session::new(&store, NormMode::Eval);
        let xv = s.tape.constant(x.clone());
        let y = b.forward(&mut s, xv).unwrap();
        s.tape.value(y).clone()
    };
    let y = fwd(&x);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let yp = fwd(&permute_pixels(&x, &perm));
        let expect = permute_pixels(&y, &perm);
        for (u, v) in yp.data().iter().zip(expect.data()) {
            worst = worst.max((u - v).abs());
        }
    }
    ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 permutations at L = 16, max deviation {worst:.1e}"))
}

fn overfit_oracle() -> Verdict {
    let net = NetworkConfig {
        base_width: 64,
        input_size: 64,
        hourglasses: 2,
        spin: SpinVariant::Full,
        ..NetworkConfig::default()
    };
    let data = generate_synthetic(0, 8, 64, &SynthOptions::default()).map_err(e2s)?;
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 8;
    cfg.augment = false;
    cfg.weight_decay = 0.0;
    cfg.schedule.lr = 0.1;
    cfg.schedule.steps.clear();
    cfg.schedule.epochs = 500;
    cfg.max_iters = Some(500);
    let t = Instant::now();
    let mut model = Model::<f32>::new(&net, 0).map_err(e2s)?;
    let log = fit(&mut model, &data, &[], &cfg, 0, None, None).map_err(e2s)?;
    let report = evaluate(&model, &data, &EvalOptions::default()).map_err(e2s)?;
    let elapsed = t.elapsed();

    let losses: Vec<f64> = log.steps.iter().take(50).map(|r| r.l_final).collect();
    let ma: Vec<f64> = losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let n = ma.len() as f64;
    let mean = ma.iter().sum::<f64>() / n;
    let slope: f64 = ma.iter().enumerate().map(|(i, y)| (i as f64 - (n - 1.0) / 2.0) * (y - mean)).sum();
    ensure(slope < 0.0 && ma[ma.len() - 1] < ma[0], || {
        format!("10-step moving average of L_final did not fall: {ma:?}")
    })?;
    ensure(log.steps.len() == 500, || format!("{} iterations", log.steps.len()))?;
    ensure(report.f1 > 0.95, || format!("train F1 {:.4} after 500 iterations", report.f1))?;
    ensure(elapsed < Duration::from_secs(15 * 60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "train F1 {:.4} after 500 iterations, L_final MA {:.3} → {:.3} over the first 50, {elapsed:.0?}",
        report.f1,
        ma[0],
        ma[ma.len() - 1]
    ))
}

/// One shared run for the ablation and convergence criteria.
struct AblationRun {
    runs: Vec<spin_road::cli::VariantRun>,
    elapsed: Duration,
}

fn ablation_run() -> Result<AblationRun, String> {
    let mut cfg = RunConfig::default();
    cfg.seed = 17;
    cfg.synth.train_count = 64;
    cfg.synth.val_count = 16;
    cfg.synth.size = 64;
    cfg.network.base_width = 32;
    cfg.network.input_size = 64;
    cfg.ablate.epochs = 20;
    cfg.train.schedule.steps = vec![15];
    let t = Instant::now();
    let runs = ablate(&cfg, None).map_err(e2s)?;
    Ok(AblationRun { runs, elapsed: t.elapsed() })
}

fn ablation_harness(a: &AblationRun) -> Verdict {
    let csv = ablation_csv(&a.runs);
    let mut lines = csv.lines();
    ensure(lines.next() == Some("epoch,none,spatial,interaction,full"), || "bad header".into())?;
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    ensure(rows.len() == 20, || format!("{} epochs", rows.len()))?;
    ensure(rows.iter().all(|r| r.len() == 5 && r[1..].iter().all(|v| (0.0..=1.0).contains(v))), || {
        "malformed F1 row".into()
    })?;
    let params = params_csv(&a.runs);
    for (line, r) in params.lines().skip(1).zip(&a.runs) {
        let delta: i64 = line.rsplit(',').next().unwrap().parse().map_err(e2s)?;
        ensure(delta == r.spin_params as i64, || format!("{line}: delta differs from SPIN count"))?;
    }
    let f1 = |v: SpinVariant| a.runs.iter().find(|r| r.variant == v).unwrap().final_report.f1;
    let (base, full) = (f1(SpinVariant::None), f1(SpinVariant::Full));
    Ok(format!(
        "4 variants × 20 epochs in {:.0?}; final val F1 none {base:.4}, spatial {:.4}, interaction {:.4}, full {full:.4}; \
         directional claim (full ≥ none) {}",
        a.elapsed,
        f1(SpinVariant::Spatial),
        f1(SpinVariant::Interaction),
        if full >= base { "holds" } else { "does not hold at this scale" }
    ))
}

fn convergence_harness(a: &AblationRun) -> Verdict {
    let curves = curves_csv(&a.runs);
    let count = |name: &str| curves.lines().filter(|l| l.starts_with(&format!("{name},"))).count();
    ensure(count("none") >= 20 && count("full") >= 20, || "curves shorter than 20 epochs".into())?;
    let first_above = |v: SpinVariant, t: f64| {
        let r = a.runs.iter().find(|r| r.variant == v).unwrap();
        r.val_f1.iter().position(|&f| f >= t).map_or("never".into(), |e| e.to_string())
    };
    Ok(format!(
        "paired curves over 20 epochs, seed 17; first epoch with val F1 ≥ 0.5: none {}, full {}",
        first_above(SpinVariant::None, 0.5),
        first_above(SpinVariant::Full, 0.5)
    ))
}

/// Relaxed IoU of square masks by exhaustive neighbourhood search.
fn brute_relaxed(pred: &[u8], gt: &[u8], n: usize, b: usize) -> f64 {
    let near = |m: &[u8], r: usize, c: usize| {
        (0..n).any(|y| (0..n).any(|x| m[y * n + x] == 1 && y.abs_diff(r) <= b && x.abs_diff(c) <= b))
    };
    let (mut hits, mut total) = (0, 0);
    for r in 0..n {
        for c in 0..n {
            for (m, other) in [(pred, gt), (gt, pred)] {
                if m[r * n + c] == 1 {
                    total += 1;
                    hits += usize::from(near(other, r, c));
                }
            }
        }
    }
    hits as f64 / total as f64
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..100 {
        let probs: Vec<f32> = (0..1024).map(|_| rng.random()).collect();
        let gt: Vec<u8> = (0..1024).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let c = pixel_metrics(&probs, &gt, 0.5).map_err(e2s)?;
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (p, g) in probs.iter().zip(&gt) {
            match (*p >= 0.5, *g == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let prec = tp / (tp + fp);
        let rec = tp / (tp + fn_);
        let want = [prec, rec, 2.0 * prec * rec / (prec + rec), tp / (tp + fp + fn_)];
        let got = [c.precision(), c.recall(), c.f1(), c.iou()];
        ensure(got == want, || format!("pair {k}: {got:?} vs {want:?}"))?;
    }
    let line = |col: usize| -> Vec<u8> { (0..256).map(|i| u8::from(i % 16 == col)).collect() };
    for (shift, want) in [(3, 1.0), (8, 0.0)] {
        let (pred, gt) = (line(4 + shift), line(4));
        let got = relaxed_iou(&pred, &gt, 16, 16, 4).map_err(e2s)?;
        let brute = brute_relaxed(&pred, &gt, 16, 4);
        ensure(got == want && brute == want, || format!("shift {shift}: {got} (brute force {brute})"))?;
    }
    let g = RoadGraph {
        nodes: vec![(0, 0), (0, 10), (10, 10)],
        edges: vec![(0, 1, 10.0), (1, 2, 10.0)],
    };
    ensure(apls(&g, &g, 4.0).map_err(e2s)? == 1.0, || "apls(G, G) ≠ 1".into())?;
    ensure(apls(&g, &RoadGraph::default(), 4.0).map_err(e2s)? == 0.0, || "apls(G, ∅) ≠ 0".into())?;
    let gt = RoadGraph {
        nodes: vec![(0, 0), (0, 10)],
        edges: vec![(0, 1, 10.0)],
    };
    let prop = RoadGraph {
        edges: vec![(0, 1, 15.0)],
        ..gt.clone()
    };
    let v = apls(&gt, &prop, 4.0).map_err(e2s)?;
    let want = 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0);
    ensure((v - 0.5714).abs() < 1e-4 && (v - want).abs() < 1e-6, || format!("path example {v}"))?;
    Ok(format!("100 pairs exact, shifts 3/8 → 1/0, APLS path example {v:.6}"))
}

fn three<F: Fn(usize) -> Tensor<f64>>(tape: &mut Tape<f64>, f: F) -> [Var; 3] {
    std::array::from_fn(|i| tape.constant(f(i)))
}

fn loss_identities() -> Verdict {
    let sizes = [8usize, 4, 2];
    let masks: [Vec<f32>; 3] = std::array::from_fn(|i| (0..sizes[i] * sizes[i]).map(|p| f32::from(p % 3 == 0)).collect());
    let classes: [Vec<usize>; 3] = std::array::from_fn(|i| (0..sizes[i] * sizes[i]).map(|p| (p * 5) % 37).collect());

    let mut tape = Tape::<f64>::new();
    let perfect = three(&mut tape, |i| {
        let d = masks[i].iter().map(|&m| if m == 1.0 { 800.0 } else { -800.0 }).collect();
        Tensor::new(&[1, 1, sizes[i], sizes[i]], d).unwrap()
    });
    let (l_seg, _) = seg_loss(&mut tape, &perfect, &masks).map_err(e2s)?;
    let l_seg = tape.data(l_seg)[0];
    ensure(l_seg == 0.0, || format!("perfect L_seg = {l_seg:e}"))?;

    let confident = three(&mut tape, |i| {
        let n = sizes[i] * sizes[i];
        let mut d = vec![0.0; 37 * n];
        for (p, &c) in classes[i].iter().enumerate() {
            d[c * n + p] = 20.0;
        }
        Tensor::new(&[1, 37, sizes[i], sizes[i]], d).unwrap()
    });
    let (_, per) = orientation_loss(&mut tape, &confident, &classes, None).map_err(e2s)?;
    let worst = per.iter().map(|&v| tape.data(v)[0]).fold(0.0, f64::max);
    ensure(worst < 1e-3, || format!("confident orientation loss {worst:e}"))?;

    let uniform = three(&mut tape, |i| Tensor::full(&[1, 37, sizes[i], sizes[i]], 0.3));
    let (_, per) = orientation_loss(&mut tape, &uniform, &classes, None).map_err(e2s)?;
    let ln37 = 37f64.ln();
    let dev = per.iter().map(|&v| (tape.data(v)[0] - ln37).abs()).fold(0.0, f64::max);
    ensure(dev < 1e-6, || format!("uniform loss off ln 37 by {dev:e}"))?;
    Ok(format!("L_seg = 0, confident orientation ≤ {worst:.1e}, uniform within {dev:.1e} of ln 37"))
}

fn schedule() -> Verdict {
    let s = Schedule::default();
    let got = [0, 49, 50, 89, 90, 110, 119].map(|e| s.lr_at(e));
    let want = [0.01, 0.01, 0.001, 0.001, 1e-4, 1e-5, 1e-5];
    ensure(got == want, || format!("{got:?}"))?;
    Ok("0.01 / 0.001 / 1e-4 / 1e-5 at epochs 0 / 50 / 90 / 110".into())
}

fn spin_overhead(cfg: &NetworkConfig) -> Result<(usize, usize), String> {
    let with = Model::<f32>::new(cfg, 0).map_err(e2s)?.count_parameters();
    let without = Model::<f32>::new(&NetworkConfig { spin: SpinVariant::None, ..cfg.clone() }, 0)
        .map_err(e2s)?
        .count_parameters();
    Ok((with - without, pyramid_param_count(cfg.spin_dims(), cfg.spin)))
}

fn parameter_report() -> Verdict {
    let block = spin_road::spin::block_param_count(SpinDims { channels: 128, m: 64, n: 32, s: 64 }, SpinVariant::Full);
    let mut parts = vec![format!("block at C=128/M=64/N=32/S=64: {block}")];
    for width in [64, 128, 256] {
        let cfg = NetworkConfig { base_width: width, ..NetworkConfig::default() };
        let (counted, closed) = spin_overhead(&cfg)?;
        ensure(counted == closed, || format!("width {width}: counted {counted} vs closed form {closed}"))?;
        parts.push(format!("C={width}: {:.4} M", counted as f64 / 1e6));
    }
    Ok(format!(
        "counted = closed form; pyramid overhead {} (stated figure 0.03 M; reported, not asserted)",
        parts.join(", ")
    ))
}

fn round_trips() -> Verdict {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let model = Model::<f32>::new(&NetworkConfig { base_width: 16, ..NetworkConfig::default() }, 4).map_err(e2s)?;
    let ck = Checkpoint::from_model(&model, None);
    let path = dir.path().join("ck.bin");
    ck.save(&path).map_err(e2s)?;
    let back = Checkpoint::<f32>::load(&path).map_err(e2s)?;
    ensure(back == ck, || "checkpoint differs after reload".into())?;
    ensure(back.to_bytes().map_err(e2s)? == std::fs::read(&path).map_err(e2s)?, || "bytes differ".into())?;

    let (h, w) = (1500, 1400);
    let spec = TileSpec::new(512, 256).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let raster: Vec<f32> = (0..3 * h * w).map(|_| rng.random()).collect();
    let tiles = tile(&raster, 3, h, w, &spec).map_err(e2s)?;
    let stitched = stitch(&tiles, 3, h, w, &spec).map_err(e2s)?;
    ensure(stitched == raster, || "tile/stitch is not exact".into())?;

    let mut cfg = RunConfig::default();
    cfg.seed = 99;
    cfg.network.spin = SpinVariant::Spatial;
    cfg.train.schedule.lr = 0.1 + 0.2;
    cfg.eval.tile = Some(spec);
    let text = cfg.to_toml().map_err(e2s)?;
    let parsed = RunConfig::parse(&text).map_err(e2s)?;
    ensure(parsed == cfg && parsed.to_toml().map_err(e2s)? == text, || "config round trip differs".into())?;
    Ok(format!("checkpoint bit-exact, {} tiles stitch exactly, config parse/serialize identity", tiles.len()))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n: u32, name: &'static str, v: Verdict| {
        let status = if v.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &v {
            Ok(s) | Err(s) => s.clone(),
        };
        println!("criterion {n:>2} {status}  {name}: {detail}");
        results.push((n, name, v));
    };

    record(1, "gradient suite", gradient_suite());
    record(2, "row-stochastic similarity", row_stochastic());
    record(3, "identity at init", identity_at_init());
    record(4, "permutation equivariance", permutation_equivariance());
    record(5, "overfit oracle", overfit_oracle());
    match ablation_run() {
        Ok(a) => {
            record(6, "ablation harness", ablation_harness(&a));
            record(7, "convergence harness", convergence_harness(&a));
        }
        Err(e) => {
            record(6, "ablation harness", Err(e.clone()));
            record(7, "convergence harness", Err(e));
        }
    }
    record(8, "metrics oracle", metrics_oracle());
    record(9, "loss identities", loss_identities());
    record(10, "schedule", schedule());
    record(11, "parameter count", parameter_report());
    record(12, "round trips", round_trips());

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} of {} criteria pass ({:.0?})",
        results.len() - failed,
        results.len(),
        started.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
