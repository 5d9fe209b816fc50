use crate::data::Targets;
use crate::error::Result;
use crate::network::ModelOutput;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Loss values of one batch, per scale (finest first) and in total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub seg: [f64; 3],
    pub orient: [f64; 3],
    pub l_seg: f64,
    pub l_orient: f64,
    /// `l_seg + l_orient`.
    pub l_final: f64,
}

/// `Σ_s (1 − mean_b SoftIoU(σ(logits_s), gt_s))` over the three scales.
pub fn seg_loss<T: Scalar>(tape: &mut Tape<T>, logits: &[Var; 3], masks: &[Vec<f32>; 3]) -> Result<(Var, [Var; 3])> {
    let mut per = Vec::with_capacity(3);
    for (z, gt) in logits.iter().zip(masks) {
        let p = tape.sigmoid(*z);
        let gt: Vec<T> = gt.iter().map(|&v| T::lit(v as f64)).collect();
        let iou = tape.soft_iou(p, &gt)?;
        let mean = tape.mean(iou);
        let one = tape.constant(Tensor::scalar(T::one()));
        per.push(tape.sub(one, mean)?);
    }
    let per: [Var; 3] = per.try_into().expect("three scales");
    let total = sum3(tape, per)?;
    Ok((total, per))
}

/// `Σ_s CE(logits_s, classes_s)`, the per-pixel mean over every pixel, or
/// over road pixels only when `road_masks` is given.
pub fn orientation_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: &[Var; 3],
    classes: &[Vec<usize>; 3],
    road_masks: Option<&[Vec<f32>; 3]>,
) -> Result<(Var, [Var; 3])> {
    let mut per = Vec::with_capacity(3);
    for (s, (z, gt)) in logits.iter().zip(classes).enumerate() {
        let weights: Option<Vec<T>> = road_masks.map(|m| m[s].iter().map(|&v| T::lit(v as f64)).collect());
        per.push(tape.cross_entropy(*z, gt, weights.as_deref())?);
    }
    let per: [Var; 3] = per.try_into().expect("three scales");
    let total = sum3(tape, per)?;
    Ok((total, per))
}

fn sum3<T: Scalar>(tape: &mut Tape<T>, v: [Var; 3]) -> Result<Var> {
    let a = tape.add(v[0], v[1])?;
    tape.add(a, v[2])
}

/// `L_final = L_seg + L_orient` for a forward pass.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &ModelOutput,
    targets: &Targets,
    road_only_orientation: bool,
) -> Result<(Var, LossReport)> {
    let (l_seg, seg) = seg_loss(tape, &out.seg, &targets.masks)?;
    let road = road_only_orientation.then_some(&targets.masks);
    let (l_orient, orient) = orientation_loss(tape, &out.orient, &targets.orient, road)?;
    let l_final = tape.add(l_seg, l_orient)?;
    let val = |tape: &Tape<T>, v: Var| tape.data(v)[0].as_f64();
    let report = LossReport {
        seg: seg.map(|v| val(tape, v)),
        orient: orient.map(|v| val(tape, v)),
        l_seg: val(tape, l_seg),
        l_orient: val(tape, l_orient),
        l_final: val(tape, l_final),
    };
    Ok((l_final, report))
}
