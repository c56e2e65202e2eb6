#![allow(dead_code)]

use nbvlab_core::classify::{Classifier, ClassifierConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - n| / max(|a|, |n|, floor)`: relative error with an absolute floor
/// for gradients that are zero up to rounding.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between backprop and central differences over
/// every trainable classifier parameter, plus the parameter count.
pub fn classifier_grad_check(config: &ClassifierConfig, seed: u64, batch: usize, h: f64) -> (f64, usize) {
    let mut model = Classifier::<f64>::new(config.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let s = config.input;
    let x: Vec<f64> = (0..batch * s * s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % config.n_classes).collect();
    let g = model.loss_and_gradients_encoded(&x, &labels).unwrap();
    let mut worst = 0.0f64;
    let mut count = 0;
    for bi in 0..model.params().len() {
        if !model.params().block(bi).trainable {
            continue;
        }
        for k in 0..model.params().data(bi).len() {
            let orig = model.params().data(bi)[k];
            model.params_mut().data_mut(bi)[k] = orig + h;
            let up = model.loss_and_gradients_encoded(&x, &labels).unwrap().loss;
            model.params_mut().data_mut(bi)[k] = orig - h;
            let down = model.loss_and_gradients_encoded(&x, &labels).unwrap().loss;
            model.params_mut().data_mut(bi)[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(g.grads.blocks[bi][k], numeric, 1e-6));
            count += 1;
        }
    }
    (worst, count)
}

/// Random small unit stacks (at most 5k parameters) for gradient checks.
pub fn random_small_config(seed: u64) -> ClassifierConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_groups = rng.random_range(2..=3usize);
    let groups: Vec<usize> = (0..n_groups).map(|_| rng.random_range(1..=2)).collect();
    let widths: Vec<usize> = (0..n_groups).map(|g| 2 + 2 * g + rng.random_range(0..3usize)).collect();
    ClassifierConfig {
        groups,
        widths,
        n_classes: rng.random_range(2..=4),
        input: 8,
        ..ClassifierConfig::default()
    }
}
