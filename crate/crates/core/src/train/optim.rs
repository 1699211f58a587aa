use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use crate::vit::{decays, VitWeights};

/// `p <- p - lr * (g + weight_decay * p)` over one flat buffer.
pub fn sgd_update<T: Float>(p: &mut [T], g: &[T], lr: f64, weight_decay: f64) {
    let (lr, wd) = (T::of(lr), T::of(weight_decay));
    for (p, &g) in p.iter_mut().zip(g) {
        *p -= lr * (g + wd * *p);
    }
}

/// Plain SGD step over every parameter. Biases and layer-norm affines are
/// not decayed.
pub fn sgd_step<T: Float>(
    params: &mut VitWeights<Tensor<T>>,
    grads: &VitWeights<Option<Tensor<T>>>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grads = grads.named();
    for ((p, name), (_, g)) in params.slots_mut().into_iter().zip(&names).zip(grads) {
        let g = checked(name, p, g.as_ref())?;
        let wd = if decays(name) { weight_decay } else { 0.0 };
        sgd_update(p.data_mut(), g.data(), lr, wd);
    }
    Ok(())
}

fn checked<'a, T: Float>(name: &str, p: &Tensor<T>, g: Option<&'a Tensor<T>>) -> Result<&'a Tensor<T>> {
    let g = g.ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
    if g.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            lhs: p.shape().to_vec(),
            rhs: g.shape().to_vec(),
        });
    }
    Ok(g)
}

/// SGD with optional heavy-ball momentum:
/// `v <- mu v + g + wd p; p <- p - lr v`. With `mu = 0` this is [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Sgd<T: Float> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<VitWeights<Tensor<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(
        &mut self,
        params: &mut VitWeights<Tensor<T>>,
        grads: &VitWeights<Option<Tensor<T>>>,
        lr: f64,
    ) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, lr, self.weight_decay);
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| params.map(|_, p| Tensor::zeros(p.shape().to_vec()).expect("shape")));
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let (mu, lr_t) = (T::of(self.momentum), T::of(lr));
        let grads = grads.named();
        for (((p, v), name), (_, g)) in params
            .slots_mut()
            .into_iter()
            .zip(velocity.slots_mut())
            .zip(&names)
            .zip(grads)
        {
            let g = checked(name, p, g.as_ref())?;
            let wd = T::of(if decays(name) { self.weight_decay } else { 0.0 });
            for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v + g + wd * *p;
                *p -= lr_t * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{ViTConfig, ViTParams};

    #[test]
    fn update_examples() {
        let mut p = [1.0f64];
        sgd_update(&mut p, &[1.0], 0.1, 0.0);
        assert!((p[0] - 0.9).abs() < 1e-15);
        let mut p = [2.0f64];
        sgd_update(&mut p, &[0.0], 0.1, 0.5);
        assert!((p[0] - 1.9).abs() < 1e-15);
        let mut p = [3.0f64, -1.0];
        sgd_update(&mut p, &[5.0, 7.0], 0.0, 0.5);
        assert_eq!(p, [3.0, -1.0]);
    }

    fn cfg() -> ViTConfig {
        let mut c = ViTConfig::profile("tiny-4").unwrap();
        c.image_size = 8;
        c.layers = 1;
        c.hidden_size = 8;
        c.mlp_size = 8;
        c.heads = 2;
        c.num_classes = 3;
        c
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = ViTParams::<f64>::init(&cfg(), 0).unwrap();
        let mut grads = p.map(|_, t| Some(t.clone()));
        grads.head_bias = None;
        let err = sgd_step(&mut p, &grads, 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("head.bias"), "{err}");
    }

    #[test]
    fn decay_skips_biases_and_norms() {
        let mut p = ViTParams::<f64>::init(&cfg(), 0).unwrap();
        p.head_bias = Tensor::full([3], 1.0).unwrap();
        let zero = p.map(|_, t| Some(Tensor::zeros(t.shape().to_vec()).unwrap()));
        let before = p.clone();
        sgd_step(&mut p, &zero, 0.1, 0.5).unwrap();
        assert_eq!(p.head_bias, before.head_bias);
        assert_eq!(p.norm_gamma, before.norm_gamma);
        for ((_, a), (_, b)) in p.named().into_iter().zip(before.named()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!(x.abs() <= y.abs());
            }
        }
    }

    #[test]
    fn zero_momentum_matches_plain_sgd() {
        let p0 = ViTParams::<f64>::init(&cfg(), 1).unwrap();
        let g = p0.map(|_, t| Some(t.map(|v| v * 3.0 + 0.1)));
        let mut a = p0.clone();
        let mut b = p0.clone();
        sgd_step(&mut a, &g, 0.05, 1e-3).unwrap();
        Sgd::new(0.0, 1e-3).step(&mut b, &g, 0.05).unwrap();
        assert_eq!(a, b);
    }
}
