use crate::arch::Network;
use crate::tensor::Scalar;

/// `v = momentum·v + g + wd·w; w -= lr·v`, elementwise.
pub fn sgd_update<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], lr: T, momentum: T, weight_decay: T) {
    for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v + g + weight_decay * *w;
        *w = *w - lr * *v;
    }
}

/// Momentum SGD with one velocity buffer per trainable parameter.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    pub fn step(&mut self, net: &mut Network<T>, lr: f64, momentum: f64, weight_decay: f64) {
        let (lr, mu, wd) = (T::from_f64(lr), T::from_f64(momentum), T::from_f64(weight_decay));
        let mut i = 0;
        let velocity = &mut self.velocity;
        net.visit_params(&mut |_, p| {
            if !p.trainable {
                return;
            }
            if velocity.len() == i {
                velocity.push(vec![T::zero(); p.len()]);
            }
            sgd_update(&mut p.value, &mut velocity[i], &p.grad, lr, mu, wd);
            i += 1;
        });
    }
}
