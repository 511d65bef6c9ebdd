use crate::tensor::Tensor;

/// SGD with classical momentum and optional L2 weight decay.
///
/// Update: `v = momentum * v + (g + wd * theta); theta -= lr * v`.
pub struct SgdMomentum {
    velocity: Vec<Tensor<f32>>,
    momentum: f32,
    weight_decay: f32,
}

impl SgdMomentum {
    pub fn new(shapes: &[Vec<usize>], momentum: f32, weight_decay: f32) -> Self {
        SgdMomentum {
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Tensor<f32>], lr: f32) {
        assert_eq!(params.len(), self.velocity.len(), "optimizer bound to other params");
        assert_eq!(grads.len(), self.velocity.len(), "gradient tensor count");
        for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()) {
            for ((pv, &gv), vv) in
                p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice())
            {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= lr * *vv;
            }
        }
    }
}

/// Adam with bias correction.
pub struct Adam {
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
    t: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(shapes: &[Vec<usize>], beta1: f32, beta2: f32, eps: f32) -> Self {
        Adam {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Tensor<f32>], lr: f32) {
        assert_eq!(params.len(), self.m.len(), "optimizer bound to other params");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in
            params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    fn scalar_grad(v: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut p = scalar_param(1.0);
        let mut opt = SgdMomentum::new(&[vec![1]], 0.0, 0.0);
        opt.step(&mut p, &scalar_grad(0.25), 1.0);
        assert_eq!(p[0].as_slice()[0], 0.75);
    }

    #[test]
    fn sgd_momentum_matches_hand_trace() {
        // lr 0.1, momentum 0.5, constant gradient 1: theta 1 -> 0.9 -> 0.75 -> 0.575.
        let mut p = scalar_param(1.0);
        let mut opt = SgdMomentum::new(&[vec![1]], 0.5, 0.0);
        let expected = [0.9f32, 0.75, 0.575];
        for want in expected {
            opt.step(&mut p, &scalar_grad(1.0), 0.1);
            assert!((p[0].as_slice()[0] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn sgd_zero_grads_from_rest_leave_params_fixed() {
        let mut p = scalar_param(0.3);
        let mut opt = SgdMomentum::new(&[vec![1]], 0.9, 0.0);
        for _ in 0..5 {
            opt.step(&mut p, &scalar_grad(0.0), 0.1);
        }
        assert_eq!(p[0].as_slice()[0], 0.3);
    }

    #[test]
    fn sgd_two_half_steps_equal_one_full_step_without_momentum() {
        let mut a = scalar_param(2.0);
        let mut opt_a = SgdMomentum::new(&[vec![1]], 0.0, 0.0);
        opt_a.step(&mut a, &scalar_grad(1.0), 0.05);
        opt_a.step(&mut a, &scalar_grad(1.0), 0.05);
        let mut b = scalar_param(2.0);
        let mut opt_b = SgdMomentum::new(&[vec![1]], 0.0, 0.0);
        opt_b.step(&mut b, &scalar_grad(1.0), 0.1);
        assert!((a[0].as_slice()[0] - b[0].as_slice()[0]).abs() < 1e-6);
    }

    #[test]
    fn sgd_weight_decay_shrinks_params() {
        // wd 0.1, lr 0.1, zero gradient: theta multiplies by 0.99 each step.
        let mut p = scalar_param(1.0);
        let mut opt = SgdMomentum::new(&[vec![1]], 0.0, 0.1);
        opt.step(&mut p, &scalar_grad(0.0), 0.1);
        assert!((p[0].as_slice()[0] - 0.99).abs() < 1e-7);
        opt.step(&mut p, &scalar_grad(0.0), 0.1);
        assert!((p[0].as_slice()[0] - 0.9801).abs() < 1e-7);
    }

    #[test]
    fn adam_matches_hand_trace() {
        // lr 0.1, defaults, theta0 0.5, gradients 1, -0.5, 0.25.
        let mut p = scalar_param(0.5);
        let mut opt = Adam::new(&[vec![1]], 0.9, 0.999, 1e-8);
        let grads = [1.0f32, -0.5, 0.25];
        let expected = [0.400000001f32, 0.37336629737090316, 0.3393233830648465];
        for (g, want) in grads.iter().zip(expected.iter()) {
            opt.step(&mut p, &scalar_grad(*g), 0.1);
            let got = p[0].as_slice()[0];
            assert!((got - want).abs() < 1e-5, "got {got}, want {want}");
        }
    }
}
