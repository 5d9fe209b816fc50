use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SpinVariant;
use crate::error::{Error, Result};
use crate::nn::{he_normal, Conv2d, ParamId, ParamKind, ParamStore, Session};
use crate::tensor::{Scalar, Tensor, Var};

/// Widths of one block: `C` channels, `M` spatial embedding, `N` interaction
/// nodes, `S` interaction states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinDims {
    pub channels: usize,
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

impl SpinDims {
    /// Default widths `M = C/2`, `N = C/4`, `S = C/2` (each at least 1).
    pub fn for_channels(channels: usize) -> Self {
        Self::with_divisors(channels, 2, 4, 2)
    }

    pub fn with_divisors(channels: usize, m_div: usize, n_div: usize, s_div: usize) -> Self {
        SpinDims {
            channels,
            m: (channels / m_div.max(1)).max(1),
            n: (channels / n_div.max(1)).max(1),
            s: (channels / s_div.max(1)).max(1),
        }
    }
}

#[derive(Clone, Debug)]
struct SpatialParams {
    phi: Conv2d,
    lambda: Conv2d,
    weight: Conv2d,
}

#[derive(Clone, Debug)]
struct InteractionParams {
    theta: Conv2d,
    phi: Conv2d,
    adjacency: ParamId,
    state_weight: ParamId,
    state_bias: ParamId,
    phi_out: Conv2d,
}

/// One SPIN block with its learnable transforms.
#[derive(Clone, Debug)]
pub struct SpinBlock {
    pub dims: SpinDims,
    pub variant: SpinVariant,
    spatial: Option<SpatialParams>,
    interaction: Option<InteractionParams>,
}

impl SpinBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: SpinDims,
        variant: SpinVariant,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if variant == SpinVariant::None {
            return Err(Error::invalid("a SPIN block needs at least one reasoning path"));
        }
        let SpinDims { channels: c, m, n, s } = dims;
        let spatial = variant.has_spatial().then(|| SpatialParams {
            phi: Conv2d::same(store, &format!("{name}.phi_s"), c, m, 1, true, rng),
            lambda: Conv2d::same(store, &format!("{name}.lambda"), c, m, 1, true, rng),
            weight: Conv2d::same(store, &format!("{name}.w_s"), c, c, 1, true, rng),
        });
        let interaction = if variant.has_interaction() {
            let theta = Conv2d::same(store, &format!("{name}.theta_i"), c, n, 1, true, rng);
            let phi = Conv2d::same(store, &format!("{name}.phi_i"), c, s, 1, true, rng);
            let dist = Normal::new(0.0, 1.0 / n as f64).expect("finite std");
            let a: Vec<T> = (0..n * n).map(|_| T::lit(dist.sample(rng))).collect();
            let adjacency = store.add(format!("{name}.a_i"), Tensor::new(&[n, n], a)?, ParamKind::Trainable);
            let state_weight = store.add(format!("{name}.w_i.weight"), he_normal(&[s, s], s, rng), ParamKind::Trainable);
            let state_bias = store.add(format!("{name}.w_i.bias"), Tensor::zeros(&[s]), ParamKind::Trainable);
            let phi_out = Conv2d::same(store, &format!("{name}.phi_out"), s, c, 1, true, rng);
            Some(InteractionParams {
                theta,
                phi,
                adjacency,
                state_weight,
                state_bias,
                phi_out,
            })
        } else {
            None
        };
        Ok(SpinBlock {
            dims,
            variant,
            spatial,
            interaction,
        })
    }

    /// Zeroes `W_S` and `φ'_I` (weights and biases): the block then maps any
    /// non-negative input to itself.
    pub fn zero_output<T: Scalar>(&self, store: &mut ParamStore<T>) {
        if let Some(sp) = &self.spatial {
            sp.weight.zero(store);
        }
        if let Some(ip) = &self.interaction {
            ip.phi_out.zero(store);
        }
    }

    /// Zeroes only `φ'_I`, silencing the interaction path while keeping the
    /// spatial path trainable.
    pub fn zero_interaction_output<T: Scalar>(&self, store: &mut ParamStore<T>) {
        if let Some(ip) = &self.interaction {
            ip.phi_out.zero(store);
        }
    }

    /// Parameter handle of the learnable node adjacency `A_I`.
    pub fn adjacency(&self) -> Option<ParamId> {
        self.interaction.as_ref().map(|i| i.adjacency)
    }

    /// Parameter handles `(weight, bias)` of the state update `W_I`.
    pub fn state_update(&self) -> Option<(ParamId, ParamId)> {
        self.interaction.as_ref().map(|i| (i.state_weight, i.state_bias))
    }

    /// Parameter handles of the `(φ_S, Λ, W_S)` convolutions.
    pub fn spatial_convs(&self) -> Option<(&Conv2d, &Conv2d, &Conv2d)> {
        self.spatial.as_ref().map(|p| (&p.phi, &p.lambda, &p.weight))
    }

    /// Parameter handles of the `(θ_I, φ_I, φ'_I)` convolutions.
    pub fn interaction_convs(&self) -> Option<(&Conv2d, &Conv2d, &Conv2d)> {
        self.interaction.as_ref().map(|p| (&p.theta, &p.phi, &p.phi_out))
    }

    fn check_input<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<(usize, usize, usize)> {
        match *s.tape.shape(x) {
            [b, c, h, w] if c == self.dims.channels => Ok((b, h, w)),
            ref other => Err(Error::shape("spin", other, &[self.dims.channels])),
        }
    }

    fn spatial_params(&self) -> Result<&SpatialParams> {
        self.spatial
            .as_ref()
            .ok_or_else(|| Error::invalid("this SPIN block has no spatial path"))
    }

    fn interaction_params(&self) -> Result<&InteractionParams> {
        self.interaction
            .as_ref()
            .ok_or_else(|| Error::invalid("this SPIN block has no interaction path"))
    }

    /// Row-stochastic `B×L×L` pixel similarity.
    pub fn spatial_similarity<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (b, h, w) = self.check_input(s, x)?;
        let p = self.spatial_params()?;
        let m = self.dims.m;
        let phi = p.phi.forward(s, x)?;
        let phi = s.tape.relu(phi);
        let phi = s.tape.reshape(phi, &[b, m, h * w])?;
        let pooled = s.tape.global_avg_pool(x)?;
        let pooled = s.tape.reshape(pooled, &[b, self.dims.channels, 1, 1])?;
        let diag = p.lambda.forward(s, pooled)?;
        let diag = s.tape.reshape(diag, &[b, m])?;
        let scaled = s.tape.scale_rows(phi, diag)?;
        let logits = s.tape.bmm(phi, scaled, true, false)?;
        Ok(s.tape.softmax_rows(logits))
    }

    /// `ReLU(W_S(A_S · X))` for a given `B×L×L` similarity.
    pub fn spatial_reason<T: Scalar>(&self, s: &mut Session<T>, x: Var, similarity: Var) -> Result<Var> {
        let (b, h, w) = self.check_input(s, x)?;
        let l = h * w;
        if s.tape.shape(similarity) != [b, l, l] {
            return Err(Error::shape("spatial_reason", s.tape.shape(similarity), &[b, l, l]));
        }
        let p = self.spatial_params()?;
        let c = self.dims.channels;
        let flat = s.tape.reshape(x, &[b, c, l])?;
        let mixed = s.tape.bmm(flat, similarity, false, true)?;
        let mixed = s.tape.reshape(mixed, &[b, c, h, w])?;
        let y = p.weight.forward(s, mixed)?;
        Ok(s.tape.relu(y))
    }

    /// Projection onto the interaction space. Returns `(θ(X), V)` with
    /// `θ(X)` as `B×N×L` and `V = θ(X)ᵀ φ_I(X) / L` as `B×N×S`; averaging
    /// over pixels keeps `V` independent of the feature-map size.
    pub fn project_interaction<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<(Var, Var)> {
        let (b, h, w) = self.check_input(s, x)?;
        let p = self.interaction_params()?;
        let SpinDims { n, s: st, .. } = self.dims;
        let theta = p.theta.forward(s, x)?;
        let theta = s.tape.reshape(theta, &[b, n, h * w])?;
        let phi = p.phi.forward(s, x)?;
        let phi = s.tape.reshape(phi, &[b, st, h * w])?;
        let v = s.tape.bmm(theta, phi, false, true)?;
        let v = s.tape.scale(v, T::lit(1.0 / (h * w) as f64));
        Ok((theta, v))
    }

    /// `Z = ((I − A_I) V) W_I` on `B×N×S` node states.
    pub fn interaction_reason<T: Scalar>(&self, s: &mut Session<T>, v: Var) -> Result<Var> {
        let p = self.interaction_params()?;
        let SpinDims { n, s: st, .. } = self.dims;
        match *s.tape.shape(v) {
            [_, nn, ss] if nn == n && ss == st => {}
            ref other => return Err(Error::shape("interaction_reason", other, &[n, st])),
        }
        let a = s.param(p.adjacency);
        let av = s.tape.bmm(a, v, false, false)?;
        let u = s.tape.sub(v, av)?;
        let wi = s.param(p.state_weight);
        let z = s.tape.bmm(u, wi, false, true)?;
        let bias = s.param(p.state_bias);
        s.tape.add_bias(z, bias, 2)
    }

    /// `X_I = φ'_I(θ(X) · Z)`, reusing the projection `θ(X)` (`B×N×L`).
    pub fn reverse_project<T: Scalar>(&self, s: &mut Session<T>, z: Var, theta: Var, h: usize, w: usize) -> Result<Var> {
        let p = self.interaction_params()?;
        let b = s.tape.shape(z)[0];
        if s.tape.shape(theta) != [b, self.dims.n, h * w] {
            return Err(Error::shape("reverse_project", s.tape.shape(theta), &[b, self.dims.n, h * w]));
        }
        let y = s.tape.bmm(z, theta, true, false)?;
        let y = s.tape.reshape(y, &[b, self.dims.s, h, w])?;
        p.phi_out.forward(s, y)
    }

    /// `ReLU(X_S + X + X_I)` (paths absent from the variant contribute nothing).
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (_, h, w) = self.check_input(s, x)?;
        let mut acc = x;
        if self.spatial.is_some() {
            let a = self.spatial_similarity(s, x)?;
            let xs = self.spatial_reason(s, x, a)?;
            acc = s.tape.add(xs, acc)?;
        }
        if self.interaction.is_some() {
            let (theta, v) = self.project_interaction(s, x)?;
            let z = self.interaction_reason(s, v)?;
            let xi = self.reverse_project(s, z, theta, h, w)?;
            acc = s.tape.add(acc, xi)?;
        }
        Ok(s.tape.relu(acc))
    }
}
