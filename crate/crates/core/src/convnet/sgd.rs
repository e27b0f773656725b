use super::{Gradients, Network, Scalar};
use crate::error::{Error, Result};

/// One update of a parameter tensor:
/// `v ← momentum·v + grad + weight_decay·param`, `param ← param − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let (lr, momentum, weight_decay) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Stochastic gradient descent with momentum over a whole network.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &Network<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: net.params().iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let mut params = net.params_mut();
        if params.len() != grads.params.len() || params.len() != self.velocity.len() {
            return Err(Error::Shape("gradient list does not match the network".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(&grads.params).zip(&mut self.velocity) {
            if p.len() != g.len() {
                return Err(Error::Shape("gradient tensor does not match its parameter".into()));
            }
            sgd_step(p, g, v, self.lr, self.momentum, self.weight_decay);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut p = [1.0, -2.0];
        let mut v = [0.0, 0.0];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, [1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [0.7f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.5, 0.9, 0.0);
        assert_eq!(p, [0.7]);
    }

    #[test]
    fn momentum_on_a_quadratic() {
        // f(x) = x², grad 2x, lr 0.1, momentum 0.9, from x = 1:
        // v1 = 2,            x1 = 1 - 0.2 = 0.8
        // v2 = 1.8 + 1.6 = 3.4, x2 = 0.8 - 0.34 = 0.46
        let mut x = [1.0f64];
        let mut v = [0.0];
        for _ in 0..2 {
            let g = [2.0 * x[0]];
            sgd_step(&mut x, &g, &mut v, 0.1, 0.9, 0.0);
        }
        assert!((v[0] - 3.4).abs() < 1e-12);
        assert!((x[0] - 0.46).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_the_velocity() {
        let mut p = [2.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.5, 0.0, 0.1);
        assert!((p[0] - 1.9).abs() < 1e-15);
    }
}
