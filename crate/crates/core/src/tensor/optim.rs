use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// SGD hyperparameters; defaults are the full-scale training recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Momentum buffers, one per parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub hyper: Sgd,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new<'a>(hyper: Sgd, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        OptimizerState {
            hyper,
            velocity: params.into_iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// `v ← μ·v + g + λ·θ ; θ ← θ − lr·v` for every `(name, param)` pair.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>) -> Result<()> {
        let Sgd {
            lr,
            momentum,
            weight_decay,
        } = self.hyper;
        let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
        let mut count = 0;
        for (i, (name, p)) in params.into_iter().enumerate() {
            count += 1;
            let v = self
                .velocity
                .get_mut(i)
                .ok_or_else(|| Error::invalid(format!("optimizer has no buffer for `{name}`")))?;
            let g = p.grad.as_ref().ok_or_else(|| Error::MissingGrad(name.to_string()))?;
            if v.len() != g.len() {
                return Err(Error::shape("sgd_step", &[v.len()], &[g.len()]));
            }
            let g = g.clone();
            for ((v, gv), w) in v.iter_mut().zip(g).zip(p.data_mut().iter_mut()) {
                *v = mu * *v + gv + wd * *w;
                *w -= lr * *v;
            }
        }
        if count != self.velocity.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, step received {count}",
                self.velocity.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::full(&[2], v).with_grad();
        t.grad = Some(vec![g; 2]);
        t
    }

    #[test]
    fn plain_step_subtracts_gradient() {
        let mut p = param(1.0, 0.25);
        let hyper = Sgd {
            lr: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut st = OptimizerState::new(hyper, [&p]);
        st.step([("p", &mut p)]).unwrap();
        assert_eq!(p.data(), &[0.75, 0.75]);
    }

    #[test]
    fn defaults_follow_recipe() {
        let s = Sgd::default();
        assert_eq!((s.lr, s.momentum, s.weight_decay), (0.01, 0.9, 0.0005));
    }

    #[test]
    fn two_momentum_steps_closed_form() {
        let g = 0.3;
        let mut p = param(2.0, g);
        let hyper = Sgd {
            lr: 1.0,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut st = OptimizerState::new(hyper, [&p]);
        st.step([("p", &mut p)]).unwrap();
        st.step([("p", &mut p)]).unwrap();
        let expect = 2.0 - (g + 1.9 * g);
        assert!((p.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut p = Tensor::<f64>::zeros(&[1]).with_grad();
        let mut st = OptimizerState::new(Sgd::default(), [&p]);
        let err = st.step([("layer.weight", &mut p)]).unwrap_err();
        assert!(err.to_string().contains("layer.weight"));
    }
}
