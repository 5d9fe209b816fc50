use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamId, ParamKind, ParamStore, Session};
use crate::error::Result;
use crate::tensor::{BatchNormStats, NormMode, Scalar, Tensor, Var};

/// He-normal initialisation, `σ = sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("positive extents")
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng),
            ParamKind::Trainable,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable));
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// `kernel×kernel` convolution with "same" padding.
    pub fn same<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(store, name, cin, cout, kernel, 1, kernel / 2, bias, rng)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.tape.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for id in std::iter::once(self.weight).chain(self.bias) {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[cin, cout, kernel, kernel], cin * kernel * kernel / 4, rng),
            ParamKind::Trainable,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable));
        ConvTranspose2d { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.tape.conv_transpose2d(x, w, b, 2)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                ParamKind::Buffer,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let stats = BatchNormStats {
            mean: s.buffer(self.running_mean).data().to_vec(),
            var: s.buffer(self.running_var).data().to_vec(),
        };
        let mode = s.mode();
        let (y, updated) = s.tape.batchnorm2d(x, gamma, beta, &stats, mode)?;
        if let (NormMode::Train, Some(u)) = (mode, updated) {
            s.record_update(self.running_mean, u.mean);
            s.record_update(self.running_var, u.var);
        }
        Ok(y)
    }
}

/// Convolution → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub norm: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, kernel / 2, false, rng),
            norm: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.norm.forward(s, y)?;
        Ok(s.tape.relu(y))
    }
}
