//! The full road network: feature extractor, stacked hourglasses, and the
//! segmentation and orientation branches with multi-scale heads.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{NetworkConfig, ORIENTATION_CLASSES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{stitch, tile, Tile, TileSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, Hourglass, ParamStore, ResidualBlock, Session};
use crate::spin::SpinPyramid;
use crate::tensor::{NormMode, Scalar, Tensor, Var};
#[cfg(test)]
use crate::tensor::{OptimizerState, Sgd};

/// Output scales, finest first.
pub const OUTPUT_SCALES: [f64; 3] = [1.0, 0.5, 0.25];

/// Logit maps at every output scale, ordered as [`OUTPUT_SCALES`].
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `B×1×sH×sW` road logits.
    pub seg: [Var; 3],
    /// `B×37×sH×sW` orientation logits.
    pub orient: [Var; 3],
}

#[derive(Clone, Debug)]
struct UpBlock {
    deconv: ConvTranspose2d,
    norm: BatchNorm2d,
}

impl UpBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        UpBlock {
            deconv: ConvTranspose2d::new(store, &format!("{name}.deconv"), cin, cout, k, false, rng),
            norm: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.deconv.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}

/// Decoder producing logits at H/4, H/2 and H from the bottleneck features.
#[derive(Clone, Debug)]
pub struct Branch {
    trunk: ConvBnRelu,
    pub pyramid: Option<SpinPyramid>,
    ups: [UpBlock; 2],
    /// 1×1 classifiers, ordered as [`OUTPUT_SCALES`].
    pub heads: [Conv2d; 3],
}

impl Branch {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &NetworkConfig,
        classes: usize,
        with_spin: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c = cfg.base_width;
        let (c2, c4) = (c / 2, c / 4);
        let trunk = ConvBnRelu::new(store, &format!("{name}.trunk"), c, c, 3, 1, rng);
        let pyramid = if with_spin && cfg.spin != crate::spin::SpinVariant::None {
            Some(SpinPyramid::new(
                store,
                &format!("{name}.spin"),
                cfg.spin_dims(),
                cfg.spin,
                cfg.aggregation,
                cfg.resample,
                rng,
            )
            .map(|p| {
                if cfg.spin_quiet_init {
                    p.zero_interaction_output(store);
                }
                p
            })?)
        } else {
            None
        };
        let k = cfg.upsample_kernel;
        let ups = [
            UpBlock::new(store, &format!("{name}.up1"), c, c2, k, rng),
            UpBlock::new(store, &format!("{name}.up2"), c2, c4, k, rng),
        ];
        let heads = [
            Conv2d::same(store, &format!("{name}.head1"), c4, classes, 1, true, rng),
            Conv2d::same(store, &format!("{name}.head2"), c2, classes, 1, true, rng),
            Conv2d::same(store, &format!("{name}.head4"), c, classes, 1, true, rng),
        ];
        Ok(Branch {
            trunk,
            pyramid,
            ups,
            heads,
        })
    }

    fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<[Var; 3]> {
        let mut t = self.trunk.forward(s, x)?;
        if let Some(p) = &self.pyramid {
            t = p.forward(s, t)?;
        }
        let quarter = self.heads[2].forward(s, t)?;
        let u1 = self.ups[0].forward(s, t)?;
        let half = self.heads[1].forward(s, u1)?;
        let u2 = self.ups[1].forward(s, u1)?;
        let full = self.heads[0].forward(s, u2)?;
        Ok([full, half, quarter])
    }
}

/// Parameter handles of the whole network; the tensors live in a
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct RoadNet {
    pub config: NetworkConfig,
    stem: ConvBnRelu,
    res: [ResidualBlock; 3],
    hourglasses: Vec<Hourglass>,
    pub seg: Branch,
    pub orient: Branch,
}

impl RoadNet {
    pub fn new<T: Scalar>(config: &NetworkConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.base_width;
        let stem = ConvBnRelu::new(store, "stem", 3, c, 7, 2, rng);
        let res = [
            ResidualBlock::new(store, "res1", c, c, rng),
            ResidualBlock::new(store, "res2", c, c, rng),
            ResidualBlock::new(store, "res3", c, c, rng),
        ];
        let hourglasses = (0..config.hourglasses)
            .map(|i| Hourglass::new(store, &format!("hg{i}"), c, config.hourglass_depth, rng))
            .collect::<Result<_>>()?;
        let seg = Branch::new(store, "seg", config, 1, true, rng)?;
        let orient = Branch::new(store, "orient", config, ORIENTATION_CLASSES, false, rng)?;
        Ok(RoadNet {
            config: config.clone(),
            stem,
            res,
            hourglasses,
            seg,
            orient,
        })
    }

    /// Smallest spatial divisor an input must satisfy.
    pub fn input_divisor(&self) -> usize {
        self.config.input_divisor()
    }

    /// `B×3×H×W → B×C×H/4×W/4`.
    pub fn feature_extract<T: Scalar>(&self, s: &mut Session<T>, images: Var) -> Result<Var> {
        let shape = s.tape.shape(images).to_vec();
        let [_, 3, h, w] = shape[..] else {
            return Err(Error::shape("feature_extract", &shape, &[3]));
        };
        for extent in [h, w] {
            if extent % 4 != 0 {
                return Err(Error::Indivisible {
                    op: "feature_extract",
                    extent,
                    divisor: 4,
                });
            }
        }
        let x = self.stem.forward(s, images)?;
        let x = self.res[0].forward(s, x)?;
        let x = s.tape.maxpool2d(x, 2)?;
        let x = self.res[1].forward(s, x)?;
        self.res[2].forward(s, x)
    }

    pub fn bottleneck<T: Scalar>(&self, s: &mut Session<T>, features: Var) -> Result<Var> {
        let mut x = features;
        for hg in &self.hourglasses {
            x = hg.forward(s, x)?;
        }
        Ok(x)
    }

    pub fn segmentation_branch<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<[Var; 3]> {
        self.seg.forward(s, x)
    }

    pub fn orientation_branch<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<[Var; 3]> {
        self.orient.forward(s, x)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, images: Var) -> Result<ModelOutput> {
        let shape = s.tape.shape(images).to_vec();
        let div = self.input_divisor();
        for &extent in shape.get(2..).unwrap_or(&[]) {
            if extent % div != 0 {
                return Err(Error::Indivisible {
                    op: "forward",
                    extent,
                    divisor: div,
                });
            }
        }
        let f = self.feature_extract(s, images)?;
        let f = self.bottleneck(s, f)?;
        Ok(ModelOutput {
            seg: self.segmentation_branch(s, f)?,
            orient: self.orientation_branch(s, f)?,
        })
    }
}

fn crop<V: Copy>(v: &[V], stride: usize, height: usize, width: usize) -> Vec<V> {
    (0..height).flat_map(|r| v[r * stride..r * stride + width].iter().copied()).collect()
}

/// A network together with its parameter tensors.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: RoadNet,
    pub params: ParamStore<T>,
}

/// Inference result for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub height: usize,
    pub width: usize,
    /// Road probability per pixel at full resolution.
    pub road_prob: Vec<f32>,
    /// Orientation class (argmax over the 37 logits) per pixel.
    pub orientation: Vec<u8>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = RoadNet::new(config, &mut params, &mut rng)?;
        Ok(Model { net, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.net.config
    }

    /// Number of learnable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params.count_trainable()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    /// Eval-mode forward of a `B×3×H×W` batch.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<Prediction>> {
        let mut s = Session::new(&self.params, NormMode::Eval);
        let x = s.tape.constant(images.clone());
        let out = self.net.forward(&mut s, x)?;
        let seg = s.tape.value(out.seg[0]);
        let orient = s.tape.value(out.orient[0]);
        let [b, _, h, w] = seg.shape()[..] else { unreachable!() };
        let plane = h * w;
        let k = orient.shape()[1];
        Ok((0..b)
            .map(|n| {
                let road_prob = seg.data()[n * plane..(n + 1) * plane]
                    .iter()
                    .map(|&z| (1.0 / (1.0 + (-z.as_f64()).exp())) as f32)
                    .collect();
                let od = &orient.data()[n * k * plane..(n + 1) * k * plane];
                let orientation = (0..plane)
                    .map(|p| {
                        (0..k)
                            .max_by(|&a, &b| od[a * plane + p].partial_cmp(&od[b * plane + p]).expect("finite logits"))
                            .expect("at least one class") as u8
                    })
                    .collect();
                Prediction {
                    height: h,
                    width: w,
                    road_prob,
                    orientation,
                }
            })
            .collect())
    }

    /// Predicts one planar RGB image of any extent: the image is zero-padded
    /// to a multiple of the input divisor and the outputs cropped back.
    pub fn predict_image(&self, image: &[f32], height: usize, width: usize) -> Result<Prediction> {
        let div = self.net.input_divisor();
        let pad = |n: usize| n.div_ceil(div).max(1) * div;
        let (ph, pw) = (pad(height), pad(width));
        let padded = crate::data::pad_to(image, 3, height, width, ph, pw)?;
        let data = padded.into_iter().map(|v| T::lit(v as f64)).collect();
        let pred = self
            .predict(&Tensor::new(&[1, 3, ph, pw], data)?)?
            .pop()
            .expect("batch of one");
        Ok(Prediction {
            height,
            width,
            road_prob: crop(&pred.road_prob, pw, height, width),
            orientation: crop(&pred.orientation, pw, height, width),
        })
    }

    /// Predicts a large image patch by patch and stitches the results with
    /// crop-centre ownership.
    pub fn predict_tiled(&self, image: &[f32], height: usize, width: usize, spec: &TileSpec) -> Result<Prediction> {
        let tiles = tile(image, 3, height, width, spec)?;
        let mut probs = Vec::with_capacity(tiles.len());
        let mut orients = Vec::with_capacity(tiles.len());
        for t in tiles {
            let p = self.predict_image(&t.data, spec.patch, spec.patch)?;
            probs.push(Tile { y: t.y, x: t.x, data: p.road_prob });
            orients.push(Tile { y: t.y, x: t.x, data: p.orientation });
        }
        Ok(Prediction {
            height,
            width,
            road_prob: stitch(&probs, 1, height, width, spec)?,
            orientation: stitch(&orients, 1, height, width, spec)?,
        })
    }
}
