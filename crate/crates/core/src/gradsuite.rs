//! The registered gradient checks: every differentiable primitive, the loss
//! functions, and the composed layers built from them.
//!
//! Primitives are held to [`OP_TOLERANCE`]; anything with a training-mode
//! batch norm or a resampling pyramid inside to [`COMPOSITE_TOLERANCE`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Hourglass, ParamStore, ResidualBlock};
use crate::spin::{Aggregation, PyramidResample, SpinBlock, SpinDims, SpinPyramid, SpinVariant};
use crate::tensor::gradcheck::{
    check_gradients, check_model_gradients, random_tensor, random_tensor_away_from_zero, GradCheckReport, DEFAULT_STEP,
};
use crate::tensor::{BatchNormStats, NormMode, Tensor};
use crate::train::{orientation_loss, seg_loss};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Runs every registered check with inputs drawn from `seed`.
pub fn run(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = primitives(seed)?;
    out.extend(losses(seed)?);
    out.extend(layers(seed)?);
    Ok(out)
}

fn primitives(seed: u64) -> Result<Vec<GradCheckReport>> {
    const TOL: f64 = OP_TOLERANCE;
    let h = DEFAULT_STEP;
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let ab = [random_tensor(&[3, 4], r), random_tensor(&[4, 2], r)];
    out.push(check_gradients("matmul", &ab, h, TOL, |t, v| t.matmul(v[0], v[1]))?);

    let ab = [random_tensor(&[3, 3], r), random_tensor(&[2, 4, 3], r)];
    out.push(check_gradients("bmm", &ab, h, TOL, |t, v| t.bmm(v[0], v[1], true, true))?);

    let conv = [random_tensor(&[1, 2, 5, 5], r), random_tensor(&[3, 2, 3, 3], r), random_tensor(&[3], r)];
    out.push(check_gradients("conv2d", &conv, h, TOL, |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1))?);
    out.push(check_gradients("conv2d/stride2", &conv[..2], h, TOL, |t, v| t.conv2d(v[0], v[1], None, 2, 1))?);
    let conv7 = [random_tensor(&[1, 1, 9, 9], r), random_tensor(&[2, 1, 7, 7], r)];
    out.push(check_gradients("conv2d/7x7", &conv7, h, TOL, |t, v| t.conv2d(v[0], v[1], None, 2, 3))?);

    for k in [2, 4] {
        let inputs = [random_tensor(&[2, 2, 3, 3], r), random_tensor(&[2, 3, k, k], r), random_tensor(&[3], r)];
        out.push(check_gradients(&format!("conv_transpose2d/k{k}"), &inputs, h, TOL, |t, v| {
            t.conv_transpose2d(v[0], v[1], Some(v[2]), 2)
        })?);
    }

    let x = [random_tensor(&[1, 2, 4, 4], r)];
    out.push(check_gradients("maxpool2d", &x, h, TOL, |t, v| t.maxpool2d(v[0], 2))?);
    out.push(check_gradients("global_avg_pool", &x, h, TOL, |t, v| t.global_avg_pool(v[0]))?);
    for scale in [0.5, 0.25, 2.0] {
        out.push(check_gradients(&format!("bilinear_resize/{scale}"), &x, h, TOL, |t, v| {
            t.bilinear_resize(v[0], scale)
        })?);
    }

    let x = [random_tensor_away_from_zero(&[3, 5], 0.05, r)];
    out.push(check_gradients("relu", &x, h, TOL, |t, v| Ok(t.relu(v[0])))?);
    out.push(check_gradients("softmax_rows", &x, h, TOL, |t, v| Ok(t.softmax_rows(v[0])))?);
    out.push(check_gradients("sigmoid", &x, h, TOL, |t, v| Ok(t.sigmoid(v[0])))?);

    let bn = [random_tensor(&[2, 3, 3, 3], r), random_tensor(&[3], r), random_tensor(&[3], r)];
    let stats = BatchNormStats::<f64>::new(3);
    for (mode, tol, name) in [
        (NormMode::Train, COMPOSITE_TOLERANCE, "batchnorm2d/train"),
        (NormMode::Eval, TOL, "batchnorm2d/eval"),
    ] {
        out.push(check_gradients(name, &bn, h, tol, |t, v| {
            Ok(t.batchnorm2d(v[0], v[1], v[2], &stats, mode)?.0)
        })?);
    }

    let ew = [
        random_tensor(&[2, 3, 4], r),
        random_tensor(&[2, 3], r),
        random_tensor(&[2, 3, 4], r),
        random_tensor(&[4], r),
    ];
    out.push(check_gradients("elementwise", &ew, h, TOL, |t, v| {
        let a = t.scale_rows(v[0], v[1])?;
        let b = t.mul(a, v[2])?;
        let c = t.sub(b, v[0])?;
        let d = t.add_bias(c, v[3], 2)?;
        let e = t.add(d, v[2])?;
        let f = t.scale(e, 0.7);
        Ok(t.mean(f))
    })?);
    Ok(out)
}

fn losses(seed: u64) -> Result<Vec<GradCheckReport>> {
    const TOL: f64 = OP_TOLERANCE;
    let h = DEFAULT_STEP;
    let r = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x10);
    let mut out = Vec::new();

    let logits = [random_tensor(&[2, 1, 3, 3], r)];
    let gt: Vec<f64> = (0..18).map(|i| f64::from((i * 7) % 3 == 0)).collect();
    out.push(check_gradients("soft_iou", &logits, h, TOL, |t, v| {
        let p = t.sigmoid(v[0]);
        t.soft_iou(p, &gt)
    })?);

    let logits = [random_tensor(&[2, 5, 2, 2], r)];
    let targets: Vec<usize> = (0..8).map(|i| (i * 3) % 5).collect();
    out.push(check_gradients("cross_entropy", &logits, h, TOL, |t, v| {
        t.cross_entropy(v[0], &targets, None)
    })?);

    let sizes = [4usize, 2, 1];
    let seg: Vec<Tensor<f64>> = sizes.iter().map(|&s| random_tensor(&[2, 1, s, s], r)).collect();
    let masks: [Vec<f32>; 3] =
        std::array::from_fn(|k| (0..2 * sizes[k] * sizes[k]).map(|i| f32::from(i % 3 == 0)).collect());
    out.push(check_gradients("seg_loss", &seg, h, TOL, |t, v| {
        Ok(seg_loss(t, &[v[0], v[1], v[2]], &masks)?.0)
    })?);

    let ori: Vec<Tensor<f64>> = sizes.iter().map(|&s| random_tensor(&[2, 37, s, s], r)).collect();
    let classes: [Vec<usize>; 3] =
        std::array::from_fn(|k| (0..2 * sizes[k] * sizes[k]).map(|i| (i * 11) % 37).collect());
    out.push(check_gradients("orientation_loss", &ori, h, TOL, |t, v| {
        Ok(orientation_loss(t, &[v[0], v[1], v[2]], &classes, Some(&masks))?.0)
    })?);
    Ok(out)
}

fn layers(seed: u64) -> Result<Vec<GradCheckReport>> {
    let h = DEFAULT_STEP;
    let r = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x20);
    let mut out = Vec::new();
    let train = NormMode::Train;

    let dims = SpinDims { channels: 4, m: 2, n: 2, s: 2 };
    for variant in [SpinVariant::Spatial, SpinVariant::Interaction, SpinVariant::Full] {
        let mut store = ParamStore::new();
        let b = SpinBlock::new(&mut store, "spin", dims, variant, r)?;
        let x = [random_tensor(&[2, 4, 4, 4], r)];
        let name = format!("spin_block/{}", variant.name());
        out.push(check_model_gradients(&name, &store, &x, train, h, OP_TOLERANCE, None, |s, v| {
            b.forward(s, v[0])
        })?);
    }

    let mut store = ParamStore::new();
    let p = SpinPyramid::new(
        &mut store,
        "pyr",
        SpinDims::for_channels(4),
        SpinVariant::Full,
        Aggregation::Mean,
        PyramidResample::Residual,
        r,
    )?;
    let x = [random_tensor(&[1, 4, 8, 8], r)];
    out.push(check_model_gradients("spin_pyramid", &store, &x, train, h, COMPOSITE_TOLERANCE, None, |s, v| {
        p.forward(s, v[0])
    })?);

    let mut store = ParamStore::new();
    let res = ResidualBlock::new(&mut store, "res", 2, 4, r);
    let x = [random_tensor(&[2, 2, 4, 4], r)];
    out.push(check_model_gradients("residual_block", &store, &x, train, h, COMPOSITE_TOLERANCE, Some(8), |s, v| {
        res.forward(s, v[0])
    })?);

    let mut store = ParamStore::new();
    let hg = Hourglass::new(&mut store, "hg", 4, 1, r)?;
    let x = [random_tensor(&[2, 4, 4, 4], r)];
    out.push(check_model_gradients("hourglass", &store, &x, train, h, COMPOSITE_TOLERANCE, Some(6), |s, v| {
        hg.forward(s, v[0])
    })?);

    Ok(out)
}
