//! Conv-BN-ReLU unit stack classifier, its training loop and the
//! confidence-difference metric.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::conv::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, conv3x3_backward, conv3x3_forward, global_avg_pool,
    global_avg_pool_backward, maxpool2_backward, maxpool2_forward, relu_backward_inplace, relu_inplace, BnCache,
};
use crate::nn::{gemm, Adam, Checkpoint, Grads, Layout, Params, Scalar};
use crate::render::{Image, ImageSet, Split};

/// Per-class probabilities, summing to one.
pub type ConfidenceVector = Vec<f64>;

pub const CHECKPOINT_KIND: &str = "classifier";

/// `C(target) - max_{other} C(other)`; positive iff the target is the unique
/// top prediction.
pub fn confidence_difference(conf: &[f64], target: usize) -> Result<f64> {
    if conf.len() < 2 {
        return Err(Error::domain("confidence difference needs at least two classes"));
    }
    if target >= conf.len() {
        return Err(Error::domain(format!("target {target} outside {} classes", conf.len())));
    }
    let best_other = conf
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &c)| c)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(conf[target] - best_other)
}

/// Index of the largest entry, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax in double precision.
pub fn softmax(logits: &[f64]) -> ConfidenceVector {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Anything mapping an image to class confidences.
pub trait ConfidenceModel: Sync {
    fn n_classes(&self) -> usize;
    fn confidences(&self, image: &Image) -> Result<ConfidenceVector>;

    fn confidences_batch(&self, images: &[&Image]) -> Result<Vec<ConfidenceVector>> {
        images.iter().map(|im| self.confidences(im)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    /// Units per group; a 2x2 max-pool follows every group but the last.
    pub groups: Vec<usize>,
    /// Output channels of every unit in each group.
    pub widths: Vec<usize>,
    pub n_classes: usize,
    /// Input height and width (pixels).
    pub input: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            groups: vec![3, 3, 4, 4],
            widths: vec![16, 32, 64, 128],
            n_classes: 6,
            input: 64,
            lr: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ClassifierConfig {
    /// Structural consistency of any instance, including the small ones used
    /// for gradient checks.
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.groups.len() != self.widths.len() {
            return Err(Error::domain("groups and widths must be non-empty and of equal length"));
        }
        if self.groups.iter().chain(&self.widths).any(|&v| v == 0) {
            return Err(Error::domain("group sizes and widths must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::domain("a classifier needs at least two classes"));
        }
        let pools = self.groups.len() - 1;
        if self.input == 0 || self.input % (1 << pools) != 0 {
            return Err(Error::domain(format!("input size {} not divisible by 2^{pools}", self.input)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::domain("learning rate and batch size must be positive"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::domain("invalid batch-norm settings"));
        }
        Ok(())
    }

    /// The full architecture: 14 units and a 128-wide head.
    pub fn validate_full(&self) -> Result<()> {
        self.validate()?;
        if self.groups.iter().sum::<usize>() != 14 {
            return Err(Error::domain("group sizes must sum to 14"));
        }
        if self.widths.last() != Some(&128) {
            return Err(Error::domain("final channel width must be 128"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("validated config")
    }
}

#[derive(Clone, Copy, Debug)]
struct Unit {
    c_in: usize,
    c_out: usize,
    size: usize,
    pool_after: bool,
    conv: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// The classifier network; `T` is the compute precision.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    config: ClassifierConfig,
    params: Params<T>,
    units: Vec<Unit>,
    fc_w: usize,
    fc_b: usize,
}

struct UnitTrace<T> {
    input: Vec<T>,
    out: Vec<T>,
    bn: BnCache<T>,
    pool: Option<Vec<u32>>,
}

/// Result of a training-mode pass over one batch.
pub struct BatchGradients<T> {
    pub loss: f64,
    pub grads: Grads<T>,
    /// Per-unit batch mean and biased variance, for the running statistics.
    pub batch_stats: Vec<(Vec<T>, Vec<T>)>,
    /// Rows of class probabilities, one per sample.
    pub probs: Vec<ConfidenceVector>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut units = Vec::new();
        let mut c_in = 1;
        let mut size = config.input;
        for (g, (&count, &width)) in config.groups.iter().zip(&config.widths).enumerate() {
            for u in 0..count {
                let name = format!("g{g}.u{u}");
                let fan_in = c_in * 9;
                // He initialisation suits ReLU stacks.
                let std = (2.0 / fan_in as f64).sqrt();
                let w: Vec<T> = (0..width * fan_in)
                    .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let conv = params.push(format!("{name}.conv"), &[width, c_in, 3, 3], w, true);
                let gamma = params.push_filled(format!("{name}.bn.gamma"), &[width], 1.0, true);
                let beta = params.push_filled(format!("{name}.bn.beta"), &[width], 0.0, true);
                let mean = params.push_filled(format!("{name}.bn.running_mean"), &[width], 0.0, false);
                let var = params.push_filled(format!("{name}.bn.running_var"), &[width], 1.0, false);
                units.push(Unit {
                    c_in,
                    c_out: width,
                    size,
                    pool_after: u + 1 == count && g + 1 < config.groups.len(),
                    conv,
                    gamma,
                    beta,
                    mean,
                    var,
                });
                c_in = width;
            }
            if g + 1 < config.groups.len() {
                size /= 2;
            }
        }
        let bound = 1.0 / (c_in as f64).sqrt();
        let fc_w = params.push_uniform("fc.weight", &[config.n_classes, c_in], bound, &mut rng);
        let fc_b = params.push_uniform("fc.bias", &[config.n_classes], bound, &mut rng);
        Ok(Classifier {
            config,
            params,
            units,
            fc_w,
            fc_b,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Network input for a batch: `1 - intensity`, so the white background
    /// encodes as zero. Layout `[1][B][H][W]`.
    pub fn encode(&self, images: &[&Image]) -> Result<Vec<T>> {
        let s = self.config.input;
        let mut out = Vec::with_capacity(images.len() * s * s);
        for im in images {
            if im.width != s || im.height != s {
                return Err(Error::domain(format!(
                    "image is {}x{}, classifier expects {s}x{s}",
                    im.width, im.height
                )));
            }
            out.extend(im.pixels.iter().map(|&p| T::of(1.0 - p as f64 / 255.0)));
        }
        Ok(out)
    }

    fn head(&self, feat: &[T], b: usize) -> Vec<T> {
        let n = self.config.n_classes;
        let c = self.config.feature_dim();
        let mut logits = Vec::with_capacity(n * b);
        for &bias in self.params.data(self.fc_b) {
            logits.extend(std::iter::repeat(bias).take(b));
        }
        gemm(
            T::one(),
            self.params.data(self.fc_w),
            Layout::row_major(n, c),
            feat,
            Layout::row_major(c, b),
            T::one(),
            &mut logits,
            Layout::row_major(n, b),
        );
        logits
    }

    /// Inference-mode features `[C][B]` (global-average-pool output).
    fn features_encoded(&self, x: &[T], b: usize) -> Vec<T> {
        let mut x = x.to_vec();
        for u in &self.units {
            let mut y = conv3x3_forward(&x, u.c_in, b, u.size, u.size, self.params.data(u.conv), u.c_out);
            batchnorm_infer(
                &mut y,
                u.c_out,
                self.params.data(u.gamma),
                self.params.data(u.beta),
                self.params.data(u.mean),
                self.params.data(u.var),
                self.config.bn_eps,
            );
            relu_inplace(&mut y);
            x = if u.pool_after {
                maxpool2_forward(&y, u.c_out, b, u.size, u.size).0
            } else {
                y
            };
        }
        let last = self.units.last().expect("at least one unit");
        global_avg_pool(&x, last.c_out, b, last.size * last.size)
    }

    /// Inference-mode class probabilities for encoded inputs.
    pub fn predict_encoded(&self, x: &[T], b: usize) -> Vec<ConfidenceVector> {
        let feat = self.features_encoded(x, b);
        let logits = self.head(&feat, b);
        (0..b)
            .map(|i| {
                let z: Vec<f64> = (0..self.config.n_classes).map(|k| logits[k * b + i].as_f64()).collect();
                softmax(&z)
            })
            .collect()
    }

    pub fn forward(&self, image: &Image) -> Result<ConfidenceVector> {
        let x = self.encode(&[image])?;
        Ok(self.predict_encoded(&x, 1).remove(0))
    }

    pub fn predict(&self, images: &[&Image]) -> Result<Vec<ConfidenceVector>> {
        let x = self.encode(images)?;
        Ok(self.predict_encoded(&x, images.len()))
    }

    /// Penultimate activations of one image.
    pub fn extract_features(&self, image: &Image) -> Result<Vec<f64>> {
        let x = self.encode(&[image])?;
        Ok(self.features_encoded(&x, 1).iter().map(|v| v.as_f64()).collect())
    }

    /// Training-mode mean cross-entropy and gradients for encoded inputs.
    pub fn loss_and_gradients_encoded(&self, x: &[T], labels: &[usize]) -> Result<BatchGradients<T>> {
        let b = labels.len();
        let s = self.config.input;
        if b == 0 {
            return Err(Error::domain("empty batch"));
        }
        if x.len() != b * s * s {
            return Err(Error::domain("input does not match batch size and resolution"));
        }
        let n = self.config.n_classes;
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::domain(format!("label {bad} outside {n} classes")));
        }
        let mut traces: Vec<UnitTrace<T>> = Vec::with_capacity(self.units.len());
        let mut cur = x.to_vec();
        for u in &self.units {
            let y = conv3x3_forward(&cur, u.c_in, b, u.size, u.size, self.params.data(u.conv), u.c_out);
            let (mut z, bn) = batchnorm_train(&y, u.c_out, self.params.data(u.gamma), self.params.data(u.beta), self.config.bn_eps);
            relu_inplace(&mut z);
            let (next, pool) = if u.pool_after {
                let (p, arg) = maxpool2_forward(&z, u.c_out, b, u.size, u.size);
                (p, Some(arg))
            } else {
                (z.clone(), None)
            };
            traces.push(UnitTrace {
                input: std::mem::replace(&mut cur, next),
                out: z,
                bn,
                pool,
            });
        }
        let last = *self.units.last().expect("at least one unit");
        let hw = last.size * last.size;
        let c = last.c_out;
        let feat = global_avg_pool(&cur, c, b, hw);
        let logits = self.head(&feat, b);

        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(b);
        let mut dlogits = vec![T::zero(); n * b];
        for (i, &label) in labels.iter().enumerate() {
            let z: Vec<f64> = (0..n).map(|k| logits[k * b + i].as_f64()).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[label];
            let p = softmax(&z);
            for k in 0..n {
                let g = (p[k] - if k == label { 1.0 } else { 0.0 }) / b as f64;
                dlogits[k * b + i] = T::of(g);
            }
            probs.push(p);
        }
        loss /= b as f64;

        let mut grads = self.params.zero_grads();
        gemm(
            T::one(),
            &dlogits,
            Layout::row_major(n, b),
            &feat,
            Layout::row_major(c, b).t(),
            T::zero(),
            &mut grads.blocks[self.fc_w],
            Layout::row_major(n, c),
        );
        for (k, g) in grads.blocks[self.fc_b].iter_mut().enumerate() {
            *g = dlogits[k * b..(k + 1) * b].iter().fold(T::zero(), |a, &v| a + v);
        }
        let mut dfeat = vec![T::zero(); c * b];
        gemm(
            T::one(),
            self.params.data(self.fc_w),
            Layout::row_major(n, c).t(),
            &dlogits,
            Layout::row_major(n, b),
            T::zero(),
            &mut dfeat,
            Layout::row_major(c, b),
        );
        let mut dx = global_avg_pool_backward(&dfeat, hw);
        for (ui, (u, tr)) in self.units.iter().zip(&traces).enumerate().rev() {
            let mut dz = match &tr.pool {
                Some(arg) => maxpool2_backward(&dx, arg, tr.out.len()),
                None => dx,
            };
            relu_backward_inplace(&mut dz, &tr.out);
            let (dy, dgamma, dbeta) = batchnorm_backward(&dz, &tr.bn, self.params.data(u.gamma));
            let (dw, dinput) = conv3x3_backward(
                &tr.input,
                &dy,
                u.c_in,
                b,
                u.size,
                u.size,
                self.params.data(u.conv),
                u.c_out,
                ui > 0,
            );
            grads.blocks[u.conv] = dw;
            grads.blocks[u.gamma] = dgamma;
            grads.blocks[u.beta] = dbeta;
            dx = dinput.unwrap_or_default();
        }
        let batch_stats = traces.into_iter().map(|t| (t.bn.mean, t.bn.var)).collect();
        Ok(BatchGradients {
            loss,
            grads,
            batch_stats,
            probs,
        })
    }

    pub fn loss_and_gradients(&self, images: &[&Image], labels: &[usize]) -> Result<BatchGradients<T>> {
        let x = self.encode(images)?;
        self.loss_and_gradients_encoded(&x, labels)
    }

    /// Folds batch statistics into the running estimates (unbiased variance,
    /// exponential averaging with the configured momentum).
    pub fn update_running_stats(&mut self, stats: &[(Vec<T>, Vec<T>)], batch_elems_per_channel: &[usize]) {
        let m = T::of(self.config.bn_momentum);
        let one = T::one();
        for ((u, (mean, var)), &n) in self.units.clone().iter().zip(stats).zip(batch_elems_per_channel) {
            let unbias = if n > 1 { T::of(n as f64 / (n - 1) as f64) } else { one };
            for (r, &v) in self.params.data_mut(u.mean).iter_mut().zip(mean) {
                *r = (one - m) * *r + m * v;
            }
            for (r, &v) in self.params.data_mut(u.var).iter_mut().zip(var) {
                *r = (one - m) * *r + m * v * unbias;
            }
        }
    }

    /// Elements per channel seen by each unit's batch norm for a batch of `b`.
    pub fn bn_counts(&self, b: usize) -> Vec<usize> {
        self.units.iter().map(|u| b * u.size * u.size).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND);
        let c = &self.config;
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        ck.set_meta("groups", join(&c.groups));
        ck.set_meta("widths", join(&c.widths));
        ck.set_meta("n_classes", c.n_classes);
        ck.set_meta("input", c.input);
        ck.set_meta("bn_eps", c.bn_eps);
        ck.set_meta("bn_momentum", c.bn_momentum);
        ck.add_params(&self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::domain(format!("checkpoint kind `{}` is not a classifier", ck.kind)));
        }
        let list = |key: &str| -> Result<Vec<usize>> {
            ck.meta(key)
                .ok_or_else(|| Error::domain(format!("checkpoint metadata `{key}` missing")))?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::domain(format!("bad `{key}` entry `{s}`"))))
                .collect()
        };
        let config = ClassifierConfig {
            groups: list("groups")?,
            widths: list("widths")?,
            n_classes: ck.meta_parse("n_classes")?,
            input: ck.meta_parse("input")?,
            bn_eps: ck.meta_parse("bn_eps")?,
            bn_momentum: ck.meta_parse("bn_momentum")?,
            ..ClassifierConfig::default()
        };
        let mut model = Classifier::new(config, 0)?;
        ck.fill_params(&mut model.params)?;
        Ok(model)
    }

    /// Same weights at another precision.
    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            params: self.params.cast(),
            units: self.units.clone(),
            fc_w: self.fc_w,
            fc_b: self.fc_b,
        }
    }

    /// Copies the training hyper-parameters of `config` (architecture must
    /// match).
    pub fn with_training(mut self, config: &ClassifierConfig) -> Result<Self> {
        let same = config.groups == self.config.groups
            && config.widths == self.config.widths
            && config.n_classes == self.config.n_classes
            && config.input == self.config.input;
        if !same {
            return Err(Error::domain("initial model architecture differs from the configuration"));
        }
        self.config = config.clone();
        Ok(self)
    }
}

impl<T: Scalar> ConfidenceModel for Classifier<T> {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn confidences(&self, image: &Image) -> Result<ConfidenceVector> {
        self.forward(image)
    }

    fn confidences_batch(&self, images: &[&Image]) -> Result<Vec<ConfidenceVector>> {
        self.predict(images)
    }
}

/// Accuracy and row-normalized confusion matrix (`[true][predicted]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<f64>>,
    pub samples: usize,
}

impl Evaluation {
    /// Builds from `(true, predicted)` pairs; empty rows stay all-zero.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut counts = vec![vec![0usize; n]; n];
        for &(t, p) in pairs {
            counts[t][p] += 1;
        }
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        let confusion = counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect();
        Evaluation {
            accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
            confusion,
            samples: pairs.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, labels: &[u32]) -> std::io::Result<()> {
        let head: Vec<String> = labels.iter().map(|l| format!("pred_{l}")).collect();
        writeln!(w, "true,{}", head.join(","))?;
        for (l, row) in labels.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{l},{}", cells.join(","))?;
        }
        Ok(())
    }
}

const EVAL_CHUNK: usize = 64;

/// Predictions for the given records of an image set, in order.
pub fn predict_indices<M: ConfidenceModel + ?Sized>(model: &M, set: &ImageSet, indices: &[usize]) -> Result<Vec<ConfidenceVector>> {
    let chunks: Vec<Vec<ConfidenceVector>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let imgs: Vec<&Image> = chunk.iter().map(|&i| &set.images[i]).collect();
            model.confidences_batch(&imgs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn evaluate_classifier<M: ConfidenceModel + ?Sized>(model: &M, set: &ImageSet, split: Split) -> Result<Evaluation> {
    let idx = set.manifest.indices(split);
    if idx.is_empty() {
        return Err(Error::domain(format!("split `{split}` is empty")));
    }
    let n = model.n_classes();
    if set.manifest.objects.len() != n {
        return Err(Error::domain("image set roster size differs from the class count"));
    }
    let probs = predict_indices(model, set, &idx)?;
    let pairs: Vec<(usize, usize)> = idx.iter().zip(&probs).map(|(&i, p)| (set.label(i), argmax(p))).collect();
    Ok(Evaluation::from_pairs(n, &pairs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub fn write_training_log<W: Write>(w: &mut W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_acc")?;
    for e in log {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_acc)?;
    }
    Ok(())
}

/// Adam on mean cross-entropy over the train split; returns the epoch with
/// the best validation accuracy (earliest on ties) and the per-epoch log.
///
/// With `init`, training starts from its weights; with zero epochs the
/// returned model is `init` (or the fresh initialisation) unchanged.
pub fn train_classifier<T: Scalar>(
    config: &ClassifierConfig,
    set: &ImageSet,
    init: Option<&Classifier<T>>,
) -> Result<(Classifier<T>, Vec<EpochLog>)> {
    config.validate()?;
    if set.manifest.objects.len() != config.n_classes {
        return Err(Error::domain(format!(
            "image set has {} objects, classifier {} classes",
            set.manifest.objects.len(),
            config.n_classes
        )));
    }
    let mut model = match init {
        Some(m) => m.clone().with_training(config)?,
        None => Classifier::new(config.clone(), config.seed)?,
    };
    let train_idx = set.manifest.indices(Split::Train);
    let val_idx = set.manifest.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::domain("training needs non-empty train and val splits"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7ea1_c1a5);
    let mut adam = Adam::new(model.params(), config.lr);
    let mut best: Option<(f64, Classifier<T>)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let imgs: Vec<&Image> = chunk.iter().map(|&i| &set.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| set.label(i)).collect();
            let g = model.loss_and_gradients(&imgs, &labels)?;
            if !g.loss.is_finite() || !g.grads.all_finite() {
                return Err(Error::domain(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            loss_sum += g.loss * chunk.len() as f64;
            adam.step(model.params_mut(), &g.grads);
            let counts = model.bn_counts(chunk.len());
            model.update_running_stats(&g.batch_stats, &counts);
        }
        let probs = predict_indices(&model, set, &val_idx)?;
        let correct = val_idx
            .iter()
            .zip(&probs)
            .filter(|(&i, p)| argmax(p) == set.label(i))
            .count();
        let val_acc = correct as f64 / val_idx.len() as f64;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_acc,
        });
        if best.as_ref().map_or(true, |(b, _)| val_acc > *b) {
            best = Some((val_acc, model.clone()));
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{DatasetManifest, ManifestRecord};
    use crate::scene::{Mode, Pose};

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            groups: vec![1, 1],
            widths: vec![4, 6],
            n_classes: 3,
            input: 8,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn confidence_difference_examples() {
        assert!((confidence_difference(&[0.51, 0.49], 0).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(confidence_difference(&[0.25; 4], 2).unwrap(), 0.0);
        assert_eq!(confidence_difference(&[0.0, 1.0, 0.0], 1).unwrap(), 1.0);
        assert!(confidence_difference(&[1.0], 0).is_err());
        assert!(confidence_difference(&[0.5, 0.5], 2).is_err());
        assert!(confidence_difference(&[0.2, 0.5, 0.3], 0).unwrap() < 0.0);
    }

    #[test]
    fn zero_weights_give_uniform_output_and_zero_features() {
        let mut m = Classifier::<f64>::new(tiny_config(), 1).unwrap();
        for i in 0..m.params().len() {
            if m.params().block(i).trainable {
                m.params_mut().data_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let img = Image::filled(8, 8, 100);
        let p = m.forward(&img).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(m.extract_features(&img).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_normalized_deterministic_and_shape_checked() {
        let m = Classifier::<f64>::new(tiny_config(), 2).unwrap();
        let mut img = Image::filled(8, 8, 255);
        img.pixels[10] = 0;
        img.pixels[40] = 90;
        let a = m.forward(&img).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a, m.forward(&img).unwrap());
        assert!(m.forward(&Image::filled(4, 4, 0)).is_err());
        assert_eq!(m.extract_features(&img).unwrap().len(), 6);
    }

    #[test]
    fn default_architecture_shape() {
        let c = ClassifierConfig::default();
        c.validate_full().unwrap();
        let m = Classifier::<f32>::new(c, 0).unwrap();
        let convs = m.params().blocks().iter().filter(|b| b.name.ends_with(".conv")).count();
        let bns = m.params().blocks().iter().filter(|b| b.name.ends_with(".bn.gamma")).count();
        assert_eq!((convs, bns), (14, 14));
        assert_eq!(m.params().block(m.fc_w).shape, vec![6, 128]);
        let bad = ClassifierConfig {
            groups: vec![3, 3, 4, 3],
            ..ClassifierConfig::default()
        };
        assert!(bad.validate_full().is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_of_uniform_prediction_is_ln_n() {
        let mut m = Classifier::<f64>::new(tiny_config(), 1).unwrap();
        let fc_w = m.fc_w;
        let fc_b = m.fc_b;
        m.params_mut().data_mut(fc_w).iter_mut().for_each(|v| *v = 0.0);
        m.params_mut().data_mut(fc_b).iter_mut().for_each(|v| *v = 0.0);
        let imgs = [Image::filled(8, 8, 3), Image::filled(8, 8, 200)];
        let refs: Vec<&Image> = imgs.iter().collect();
        let g = m.loss_and_gradients(&refs, &[0, 2]).unwrap();
        assert!((g.loss - 3f64.ln()).abs() < 1e-12);
        // Huge logit on the label drives the loss to zero.
        m.params_mut().data_mut(fc_b).copy_from_slice(&[800.0, 0.0, 0.0]);
        let g = m.loss_and_gradients(&refs[..1], &[0]).unwrap();
        assert!(g.loss.abs() < 1e-9);
    }

    #[test]
    fn evaluation_from_pairs() {
        let e = Evaluation::from_pairs(2, &[(0, 0), (0, 1), (1, 1), (1, 1)]);
        assert_eq!(e.accuracy, 0.75);
        assert_eq!(e.confusion, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    /// Bright square top-left for class 0, bottom-right for class 1.
    fn separable_set(n_poses: usize) -> ImageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut records = Vec::new();
        let mut images = Vec::new();
        let (tr, va, _) = crate::render::split_counts(n_poses);
        for (cls, id) in [1u32, 2].iter().enumerate() {
            for p in 0..n_poses {
                let mut img = Image::filled(8, 8, 255);
                let off = if cls == 0 { 0 } else { 4 };
                for y in 0..4 {
                    for x in 0..4 {
                        img.pixels[(y + off) * 8 + x + off] = rng.random_range(0..120);
                    }
                }
                images.push(img);
                records.push(ManifestRecord {
                    object_id: *id,
                    pose_index: p,
                    pose: Pose::identity(),
                    split: if p < tr {
                        Split::Train
                    } else if p < tr + va {
                        Split::Val
                    } else {
                        Split::Test
                    },
                    path: String::new(),
                });
            }
        }
        ImageSet {
            manifest: DatasetManifest {
                mode: Mode::Objects,
                seed: 0,
                n_poses,
                objects: vec![1, 2],
                records,
            },
            images,
        }
    }

    #[test]
    fn learns_a_separable_toy_set_and_is_deterministic() {
        let set = separable_set(40);
        let cfg = ClassifierConfig {
            groups: vec![1, 1],
            widths: vec![4, 8],
            n_classes: 2,
            input: 8,
            epochs: 5,
            batch_size: 8,
            lr: 1e-2,
            ..ClassifierConfig::default()
        };
        let (m, log) = train_classifier::<f64>(&cfg, &set, None).unwrap();
        assert_eq!(log.len(), 5);
        assert_eq!(evaluate_classifier(&m, &set, Split::Val).unwrap().accuracy, 1.0);
        let (m2, log2) = train_classifier::<f64>(&cfg, &set, None).unwrap();
        assert_eq!(log, log2);
        assert_eq!(m.to_checkpoint().to_bytes(), m2.to_checkpoint().to_bytes());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let set = separable_set(10);
        let cfg = ClassifierConfig {
            groups: vec![1, 1],
            widths: vec![4, 8],
            n_classes: 2,
            input: 8,
            epochs: 0,
            ..ClassifierConfig::default()
        };
        let init = Classifier::<f64>::new(cfg.clone(), 77).unwrap();
        let (m, log) = train_classifier(&cfg, &set, Some(&init)).unwrap();
        assert!(log.is_empty());
        assert_eq!(m.params().max_abs_diff(init.params()), 0.0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = Classifier::<f32>::new(tiny_config(), 5).unwrap();
        let ck = m.to_checkpoint();
        let back = Classifier::<f32>::from_checkpoint(&Checkpoint::read_from(&mut ck.to_bytes().as_slice()).unwrap()).unwrap();
        assert_eq!(back.params().max_abs_diff(m.params()), 0.0);
        assert_eq!(back.config().groups, m.config().groups);
    }
}
