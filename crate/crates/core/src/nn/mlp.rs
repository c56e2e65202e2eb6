use rand::Rng;

use super::{gemm, Grads, Layout, Params, Scalar};

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Fully connected network with ReLU between layers and a linear output.
///
/// Activations are feature-major: a batch of `B` vectors of width `d` is a
/// `d x B` row-major matrix.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    params: Params<T>,
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    batch: usize,
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> MlpTrace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("trace has an output")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists layer widths from input to output, e.g. `[8, 256, 256, 14]`.
    pub fn new<R: Rng + ?Sized>(prefix: &str, sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let mut params = Params::new();
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = params.push_uniform(format!("{prefix}.l{i}.weight"), &[fan_out, fan_in], bound, rng);
            let b = params.push_uniform(format!("{prefix}.l{i}.bias"), &[fan_out], bound, rng);
            layers.push(Dense {
                w,
                b,
                fan_in,
                fan_out,
            });
        }
        Mlp { params, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    /// Replaces the parameters; the layout must match.
    pub fn with_params(mut self, params: Params<T>) -> crate::Result<Self> {
        self.params.copy_from(&params)?;
        Ok(self)
    }

    fn dense(&self, layer: &Dense, x: &[T], batch: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(layer.fan_out * batch);
        for &bias in self.params.data(layer.b) {
            y.extend(std::iter::repeat(bias).take(batch));
        }
        gemm(
            T::one(),
            self.params.data(layer.w),
            Layout::row_major(layer.fan_out, layer.fan_in),
            x,
            Layout::row_major(layer.fan_in, batch),
            T::one(),
            &mut y,
            Layout::row_major(layer.fan_out, batch),
        );
        y
    }

    pub fn forward(&self, x: &[T], batch: usize) -> MlpTrace<T> {
        assert_eq!(x.len(), self.input_dim() * batch, "mlp input shape");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = self.dense(layer, acts.last().unwrap(), batch);
            if i + 1 < self.layers.len() {
                for v in &mut y {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            acts.push(y);
        }
        MlpTrace { batch, acts }
    }

    /// Forward pass keeping only the output.
    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), self.input_dim() * batch, "mlp input shape");
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = self.dense(layer, &cur, batch);
            if i + 1 < self.layers.len() {
                for v in &mut y {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            cur = y;
        }
        cur
    }

    /// Backpropagates `dout` (same shape as the output).
    ///
    /// Returns parameter gradients when `want_params` is set, and the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace<T>, dout: &[T], want_params: bool) -> (Option<Grads<T>>, Vec<T>) {
        let batch = trace.batch;
        assert_eq!(dout.len(), self.output_dim() * batch, "mlp dout shape");
        let mut grads = want_params.then(|| self.params.zero_grads());
        let mut delta = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            if let Some(g) = grads.as_mut() {
                gemm(
                    T::one(),
                    &delta,
                    Layout::row_major(layer.fan_out, batch),
                    input,
                    Layout::row_major(layer.fan_in, batch).t(),
                    T::zero(),
                    &mut g.blocks[layer.w],
                    Layout::row_major(layer.fan_out, layer.fan_in),
                );
                for (o, gb) in g.blocks[layer.b].iter_mut().enumerate() {
                    *gb = delta[o * batch..(o + 1) * batch]
                        .iter()
                        .fold(T::zero(), |acc, &d| acc + d);
                }
            }
            let mut dx = vec![T::zero(); layer.fan_in * batch];
            gemm(
                T::one(),
                self.params.data(layer.w),
                Layout::row_major(layer.fan_out, layer.fan_in).t(),
                &delta,
                Layout::row_major(layer.fan_out, batch),
                T::zero(),
                &mut dx,
                Layout::row_major(layer.fan_in, batch),
            );
            if i > 0 {
                // Input of layer i is relu(pre-activation); mask by its sign.
                for (d, &a) in dx.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = dx;
        }
        (grads, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infer_matches_forward_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f64>::new("q", &[4, 16, 16, 2], &mut rng);
        let x: Vec<f64> = (0..4 * 5).map(|i| (i as f64).sin()).collect();
        let t = net.forward(&x, 5);
        assert_eq!(t.output().len(), 10);
        assert_eq!(t.output(), net.infer(&x, 5).as_slice());
        assert_eq!(net.params().trainable_count(), 4 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::<f64>::new("q", &[3, 8, 2], &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..3 * batch).map(|i| ((i * 7) as f64 * 0.3).cos()).collect();
        let weights: Vec<f64> = (0..2 * batch).map(|i| 0.5 + i as f64 * 0.1).collect();
        let loss = |n: &Mlp<f64>, x: &[f64]| -> f64 {
            n.infer(x, batch).iter().zip(&weights).map(|(y, w)| w * y * y).sum()
        };
        let trace = net.forward(&x, batch);
        let dout: Vec<f64> = trace.output().iter().zip(&weights).map(|(y, w)| 2.0 * w * y).collect();
        let (g, dx) = net.backward(&trace, &dout, true);
        let g = g.unwrap();
        let h = 1e-6;
        for bi in 0..net.params().len() {
            for j in 0..net.params().data(bi).len() {
                let mut p = net.clone();
                p.params_mut().data_mut(bi)[j] += h;
                let mut m = net.clone();
                m.params_mut().data_mut(bi)[j] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - g.blocks[bi][j]).abs() < 1e-6, "block {bi} idx {j}");
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-6);
        }
    }
}
