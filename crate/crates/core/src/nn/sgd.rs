//! SGD with per-group weight decay and optional momentum.
//!
//! The θ group (all dense weights and biases) and the catalyst group (D, D̄)
//! carry separate decay coefficients. Momentum defaults off; the dynamics
//! results assume plain gradient descent.

use ndarray::{Array, Dimension, Zip};

use super::{Model, ModelGrads, SubmoduleSlot};

/// One decoupled-from-nothing SGD update: `p ← p − lr·(g + decay·p)`.
pub fn sgd_update<D: Dimension>(param: &mut Array<f64, D>, grad: &Array<f64, D>, lr: f64, decay: f64) {
    Zip::from(param).and(grad).for_each(|p, &g| {
        *p -= lr * (g + decay * *p);
    });
}

/// Momentum variant: `v ← μ·v + g + decay·p; p ← p − lr·v`.
pub fn sgd_update_momentum<D: Dimension>(
    param: &mut Array<f64, D>,
    grad: &Array<f64, D>,
    velocity: &mut Array<f64, D>,
    lr: f64,
    decay: f64,
    momentum: f64,
) {
    Zip::from(param)
        .and(grad)
        .and(velocity)
        .for_each(|p, &g, v| {
            *v = momentum * *v + g + decay * *p;
            *p -= lr * *v;
        });
}

/// Optimizer state for a whole [`Model`]. Velocity buffers are allocated on
/// first use and dropped whenever the model shape changes (after a prune).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Option<ModelGrads>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: None,
        }
    }

    /// Clears momentum state; call after structural changes to the model.
    pub fn reset(&mut self) {
        self.velocity = None;
    }

    /// Applies one step to every parameter. θ parameters decay with
    /// `decay_theta`, catalyst diagonals with `decay_d`.
    pub fn step(&mut self, model: &mut Model, grads: &ModelGrads, lr: f64, decay_theta: f64, decay_d: f64) {
        if self.momentum == 0.0 {
            for (layer, (gw, gb)) in model.pre.iter_mut().zip(&grads.pre) {
                sgd_update(&mut layer.weight, gw, lr, decay_theta);
                sgd_update(&mut layer.bias, gb, lr, decay_theta);
            }
            {
                let sub = model.slot.submodule_mut();
                sgd_update(&mut sub.w, &grads.w, lr, decay_theta);
                sgd_update(&mut sub.b_w, &grads.b_w, lr, decay_theta);
                sgd_update(&mut sub.a, &grads.a, lr, decay_theta);
                sgd_update(&mut sub.b_a, &grads.b_a, lr, decay_theta);
            }
            if let SubmoduleSlot::Extended(ext) = &mut model.slot {
                if let (Some(gd), Some(gdbar)) = (&grads.d, &grads.dbar) {
                    sgd_update(&mut ext.d.delta, gd, lr, decay_d);
                    sgd_update(&mut ext.dbar.delta, gdbar, lr, decay_d);
                }
            }
            for (layer, (gw, gb)) in model.post.iter_mut().zip(&grads.post) {
                sgd_update(&mut layer.weight, gw, lr, decay_theta);
                sgd_update(&mut layer.bias, gb, lr, decay_theta);
            }
            return;
        }

        if self
            .velocity
            .as_ref()
            .map(|v| v.to_vec().len() != grads.to_vec().len())
            .unwrap_or(true)
        {
            self.velocity = Some(ModelGrads::zeros_like(model));
        }
        let vel = self.velocity.as_mut().expect("velocity initialized above");
        let mu = self.momentum;

        for ((layer, (gw, gb)), (vw, vb)) in model.pre.iter_mut().zip(&grads.pre).zip(&mut vel.pre)
        {
            sgd_update_momentum(&mut layer.weight, gw, vw, lr, decay_theta, mu);
            sgd_update_momentum(&mut layer.bias, gb, vb, lr, decay_theta, mu);
        }
        {
            let sub = model.slot.submodule_mut();
            sgd_update_momentum(&mut sub.w, &grads.w, &mut vel.w, lr, decay_theta, mu);
            sgd_update_momentum(&mut sub.b_w, &grads.b_w, &mut vel.b_w, lr, decay_theta, mu);
            sgd_update_momentum(&mut sub.a, &grads.a, &mut vel.a, lr, decay_theta, mu);
            sgd_update_momentum(&mut sub.b_a, &grads.b_a, &mut vel.b_a, lr, decay_theta, mu);
        }
        if let SubmoduleSlot::Extended(ext) = &mut model.slot {
            if let (Some(gd), Some(gdbar), Some(vd), Some(vdbar)) = (
                &grads.d,
                &grads.dbar,
                vel.d.as_mut(),
                vel.dbar.as_mut(),
            ) {
                sgd_update_momentum(&mut ext.d.delta, gd, vd, lr, decay_d, mu);
                sgd_update_momentum(&mut ext.dbar.delta, gdbar, vdbar, lr, decay_d, mu);
            }
        }
        for ((layer, (gw, gb)), (vw, vb)) in
            model.post.iter_mut().zip(&grads.post).zip(&mut vel.post)
        {
            sgd_update_momentum(&mut layer.weight, gw, vw, lr, decay_theta, mu);
            sgd_update_momentum(&mut layer.bias, gb, vb, lr, decay_theta, mu);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = array![1.0, -2.0, 3.0];
        let g = array![0.0, 0.0, 0.0];
        sgd_update(&mut p, &g, 0.1, 0.0);
        assert_eq!(p, array![1.0, -2.0, 3.0]);
    }

    #[test]
    fn plain_step_scalar() {
        let mut p = array![1.0];
        sgd_update(&mut p, &array![1.0], 0.1, 0.0);
        assert_abs_diff_eq!(p[0], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn decay_matches_closed_form() {
        let (p0, g, lr, alpha) = (0.7, 0.3, 0.05, 0.01);
        let mut p = array![p0];
        sgd_update(&mut p, &array![g], lr, alpha);
        assert_abs_diff_eq!(p[0], (1.0 - lr * alpha) * p0 - lr * g, epsilon = 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = array![0.0];
        let mut v = array![0.0];
        let g = array![1.0];
        sgd_update_momentum(&mut p, &g, &mut v, 0.1, 0.0, 0.9);
        assert_abs_diff_eq!(p[0], -0.1, epsilon = 1e-15);
        sgd_update_momentum(&mut p, &g, &mut v, 0.1, 0.0, 0.9);
        // v = 0.9*1 + 1 = 1.9, p = -0.1 - 0.19
        assert_abs_diff_eq!(p[0], -0.29, epsilon = 1e-15);
    }
}
