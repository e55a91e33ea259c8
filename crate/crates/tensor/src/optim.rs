use crate::tensor::{shape_err, Tensor, TensorError};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return shape_err(format!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err(format!("param {:?} vs grad {:?}", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut opt = Adam::new(&p, 0.1);
        opt.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_a_unit_update() {
        let mut p = vec![Tensor::scalar(3.0)];
        let mut opt = Adam::new(&p, 0.1);
        opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].item() - 2.9).abs() < 1e-6, "{}", p[0].item());
    }

    #[test]
    fn quadratic_loss_decreases_strictly() {
        // loss = sum (x - c)^2 with per-coordinate targets
        let c = [1.0, -3.0, 0.25, 7.0];
        let mut p = vec![Tensor::zeros(&[4])];
        let mut opt = Adam::new(&p, 0.05);
        let loss = |x: &Tensor| x.data().iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut prev = loss(&p[0]);
        for _ in 0..50 {
            let g: Vec<f64> = p[0].data().iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            opt.step(&mut p, &[Tensor::new(&[4], g).unwrap()]).unwrap();
            let now = loss(&p[0]);
            assert!(now < prev, "{now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut opt = Adam::new(&p, 0.1);
        assert!(matches!(opt.step(&mut p, &[Tensor::zeros(&[3])]), Err(TensorError::Shape(_))));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 0.0]).unwrap(), Tensor::new(&[1], vec![4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let after: f64 = g.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        let mut small = vec![Tensor::new(&[1], vec![0.5]).unwrap()];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.5);
    }
}
