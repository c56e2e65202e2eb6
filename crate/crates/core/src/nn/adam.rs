use super::{Grads, Params, Scalar};

/// Adam with bias correction (Kingma & Ba), state kept per parameter block.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .blocks()
            .iter()
            .map(|b| vec![T::zero(); b.data.len()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable block.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Grads<T>) {
        assert_eq!(grads.blocks.len(), params.len(), "adam: gradient layout mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::of(self.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let eps = T::of(self.eps);
        for i in 0..params.len() {
            if !params.block(i).trainable {
                continue;
            }
            let g = &grads.blocks[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (((p, &g), m), v) in params.data_mut(i).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let denom = v.sqrt() * inv_sqrt_bc2 + eps;
                *p -= step_size * *m / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut p = Params::<f64>::new();
        p.push("w", &[3], vec![1.0, -2.0, 0.5], true);
        p.push("running", &[1], vec![7.0], false);
        let mut adam = Adam::new(&p, 0.1);
        let g = Grads {
            blocks: vec![vec![4.0, -0.001, 0.0], vec![3.0]],
        };
        adam.step(&mut p, &g);
        // With bias correction the first step is lr * g / (|g| + eps').
        assert!((p.data(0)[0] - 0.9).abs() < 1e-6);
        assert!((p.data(0)[1] - (-1.9)).abs() < 1e-4);
        assert_eq!(p.data(0)[2], 0.5);
        assert_eq!(p.data(1)[0], 7.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Params::<f64>::new();
        p.push("x", &[2], vec![3.0, -4.0], true);
        let mut adam = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let g = Grads {
                blocks: vec![p.data(0).iter().map(|x| 2.0 * x).collect()],
            };
            adam.step(&mut p, &g);
        }
        assert!(p.data(0).iter().all(|x| x.abs() < 1e-3));
    }
}
