use rand::Rng;

use super::Scalar;
use crate::error::{Error, Result};

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored alongside weights but never optimized.
    pub trainable: bool,
}

/// Ordered collection of named parameter blocks owned by a network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T> {
    blocks: Vec<Block<T>>,
}

/// Gradients laid out block-for-block like the [`Params`] they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params { blocks: Vec::new() }
    }

    /// Appends a block and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>, trainable: bool) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "block shape/data mismatch");
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            data,
            trainable,
        });
        self.blocks.len() - 1
    }

    /// Appends a block drawn from `U(-bound, bound)`.
    pub fn push_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> usize {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        self.push(name, shape, data, true)
    }

    pub fn push_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64, trainable: bool) -> usize {
        let len = shape.iter().product();
        self.push(name, shape, vec![T::of(value); len], trainable)
    }

    /// Replaces a leading `from` in every block name with `to`.
    pub fn rename_prefix(&mut self, from: &str, to: &str) {
        for b in &mut self.blocks {
            if let Some(rest) = b.name.strip_prefix(from) {
                b.name = format!("{to}{rest}");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block<T> {
        &self.blocks[i]
    }

    #[inline]
    pub fn data(&self, i: usize) -> &[T] {
        &self.blocks[i].data
    }

    #[inline]
    pub fn data_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.blocks[i].data
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.trainable)
            .map(|b| b.data.len())
            .sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            blocks: self
                .blocks
                .iter()
                .map(|b| vec![T::zero(); b.data.len()])
                .collect(),
        }
    }

    pub fn same_layout<U>(&self, other: &Params<U>) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    data: b.data.iter().map(|&x| U::of(x.as_f64())).collect(),
                    trainable: b.trainable,
                })
                .collect(),
        }
    }

    /// Overwrites all values from `other`, which must share the layout.
    pub fn copy_from(&mut self, other: &Params<T>) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::domain("parameter layout mismatch"));
        }
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// Polyak averaging: `self <- tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &Params<T>, tau: f64) -> Result<()> {
        if !self.same_layout(online) {
            return Err(Error::domain("polyak update between mismatched networks"));
        }
        let tau_t = T::of(tau);
        let keep = T::of(1.0 - tau);
        for (dst, src) in self.blocks.iter_mut().zip(&online.blocks) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d = tau_t * s + keep * *d;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.data.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Params<T>) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(&x, &y)| (x - y).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (Params<f64>, Params<f64>) {
        let mut target = Params::new();
        target.push_filled("w", &[2, 2], 0.0, true);
        let mut online = Params::new();
        online.push_filled("w", &[2, 2], 1.0, true);
        (target, online)
    }

    #[test]
    fn polyak_endpoints_and_small_tau() {
        let (mut t, o) = pair();
        t.polyak_from(&o, 0.0).unwrap();
        assert!(t.data(0).iter().all(|&x| x == 0.0));
        t.polyak_from(&o, 0.005).unwrap();
        assert!(t.data(0).iter().all(|&x| x == 0.005));
        t.polyak_from(&o, 1.0).unwrap();
        assert_eq!(t, o);
    }

    #[test]
    fn polyak_rejects_mismatched_layout() {
        let (mut t, _) = pair();
        let mut other = Params::<f64>::new();
        other.push_filled("w", &[4], 1.0, true);
        assert!(matches!(t.polyak_from(&other, 0.5), Err(Error::Domain(_))));
    }
}
