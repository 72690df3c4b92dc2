//! SGD with momentum, the classification loss, and the training loop.
//!
//! Structural sparsity is preserved two ways: gradients at masked positions
//! are zeroed before the momentum update, and every masked tensor is
//! re-masked after the step.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model, Param};
use crate::sc_kernels::apply_mask_in_place;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// `(epoch, lr)` step changes; from `epoch` onward the rate is `lr`.
    pub schedule: Vec<(usize, f64)>,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            schedule: Vec::new(),
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be non-negative",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "weight decay must be non-negative".into(),
            ));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidConfig(
                "schedule epochs must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|(e, _)| *e <= epoch)
            .map_or(self.lr, |&(_, lr)| lr)
    }

    /// Start at `lr`, divide by 10 at 50% and 75% of `epochs` (CIFAR ResNet/DenseNet recipe).
    pub fn cifar_step(lr: f64, epochs: usize) -> Self {
        // Short runs collapse the drops; the later, smaller rate wins.
        let mut schedule: Vec<(usize, f64)> = Vec::new();
        for (e, r) in [(epochs / 2, lr / 10.0), (epochs * 3 / 4, lr / 100.0)] {
            match schedule.last_mut() {
                _ if e == 0 => {}
                Some(last) if last.0 == e => last.1 = r,
                _ => schedule.push((e, r)),
            }
        }
        Self {
            lr,
            momentum: 0.9,
            schedule,
            weight_decay: 0.0,
        }
    }

    /// Full-scale presets: 100 epochs, drops at 30/60/90 (VGG-16 at 0.01,
    /// ResNet-34 at 0.1) and AlexNet's 90 epochs with drops every 20.
    pub fn imagenet_vgg16() -> Self {
        Self::drops(0.01, &[30, 60, 90])
    }

    pub fn imagenet_resnet34() -> Self {
        Self::drops(0.1, &[30, 60, 90])
    }

    pub fn imagenet_alexnet() -> Self {
        Self::drops(0.01, &[20, 40, 60, 80])
    }

    fn drops(lr: f64, at: &[usize]) -> Self {
        let mut cur = lr;
        Self {
            lr,
            momentum: 0.9,
            schedule: at
                .iter()
                .map(|&e| {
                    cur /= 10.0;
                    (e, cur)
                })
                .collect(),
            weight_decay: 0.0,
        }
    }
}

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct SgdState<T> {
    velocity: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        Self {
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, i: usize) -> Option<&Tensor4<T>> {
        self.velocity.get(i).and_then(Option::as_ref)
    }
}

/// One momentum step: `v = momentum*v + g + wd*p; p -= lr*v`, then re-mask.
/// Non-trainable parameters and those without a gradient are skipped. A
/// non-finite gradient aborts before any parameter changes; a non-finite
/// result aborts after (the model is then unusable).
pub fn sgd_step<T: Scalar>(
    params: &mut [Param<T>],
    grads: &[Option<Tensor4<T>>],
    state: &mut SgdState<T>,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    expected: p.value.shape(),
                    found: g.shape(),
                });
            }
            if p.trainable && !g.all_finite() {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
    }
    state.velocity.resize(params.len(), None);
    let (mu, wd, lr) = (T::lit(cfg.momentum), T::lit(cfg.weight_decay), T::lit(lr));

    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        let (Some(g), true) = (g, p.trainable) else {
            continue;
        };
        let mut g = g.clone();
        let grid = p.mask.map(|m| m.grid()).transpose()?;
        if let Some(grid) = &grid {
            apply_mask_in_place(&mut g, grid)?;
        }
        let v = v.get_or_insert_with(|| Tensor4::zeros(g.shape()).expect("gradient shape"));
        for ((vi, &gi), &pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.value.data()) {
            *vi = mu * *vi + gi + wd * pi;
        }
        for (pi, &vi) in p.value.data_mut().iter_mut().zip(v.data()) {
            *pi -= lr * vi;
        }
        if let Some(grid) = &grid {
            apply_mask_in_place(&mut p.value, grid)?;
            apply_mask_in_place(v, grid)?;
        }
        if !p.value.all_finite() {
            return Err(Error::NonFinite(p.name.clone()));
        }
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / n`. `logits` is `(n, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor4<T>,
    labels: &[usize],
) -> Result<(T, Tensor4<T>)> {
    let s = logits.shape();
    let classes = s.c * s.plane();
    if labels.len() != s.n {
        return Err(Error::InvalidConfig(format!(
            "{} labels for batch of {}",
            labels.len(),
            s.n
        )));
    }
    let inv_n = T::one() / T::lit(s.n as f64);
    let mut grad = Tensor4::zeros(s)?;
    let mut loss = T::zero();
    for (i, (row, &label)) in logits.data().chunks(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + sum.ln();
        loss += lse - row[label];
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (j, (gj, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            *gj = (p - if j == label { T::one() } else { T::zero() }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Images `(n, c, h, w)` with one label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor4<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Self::new(self.images.gather_batch(&idx)?, self.labels[..n].to_vec())
    }

    /// Per-channel mean and population standard deviation over all pixels.
    pub fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let s = self.images.shape();
        let mut mean = vec![0.0f64; s.c];
        let mut sq = vec![0.0f64; s.c];
        for (i, p) in self.images.data().chunks(s.plane()).enumerate() {
            let c = i % s.c;
            for &v in p {
                mean[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
        let count = (s.n * s.plane()) as f64;
        let mut std = vec![0.0f32; s.c];
        let mut m32 = vec![0.0f32; s.c];
        for c in 0..s.c {
            let m = mean[c] / count;
            let var = (sq[c] / count - m * m).max(0.0);
            m32[c] = m as f32;
            std[c] = (var.sqrt() as f32).max(1e-6);
        }
        (m32, std)
    }
}

/// Pad by `pad` zeros on every side, crop a random window of the original
/// size, and mirror horizontally with probability 1/2.
pub fn augment_sample(
    img: &Tensor4<f32>,
    pad: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor4<f32>> {
    let s = img.shape();
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    let flip = rng.random_bool(0.5);
    Tensor4::from_fn(s, |n, c, h, w| {
        let sw = if flip { s.w - 1 - w } else { w };
        let (y, x) = (h + dy, sw + dx);
        if y < pad || x < pad || y - pad >= s.h || x - pad >= s.w {
            0.0
        } else {
            img.get(n, c, y - pad, x - pad)
        }
    })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Pad-crop-flip augmentation (pad 4).
    pub augment: bool,
    /// Set the model's input normalization from training-set channel statistics.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            epochs: 1,
            batch_size: 32,
            seed: 0,
            augment: true,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,eval_acc\n");
        for e in &self.epochs {
            let eval = e.eval_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(
                s,
                "{},{},{:.6},{:.6},{}",
                e.epoch, e.lr, e.train_loss, e.train_acc, eval
            )
            .unwrap();
        }
        s
    }

    pub fn final_eval_acc(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.eval_acc)
    }
}

/// Batch loss, correct count, and one gradient slot per parameter.
pub type BatchResult<T> = (T, usize, Vec<Option<Tensor4<T>>>);

/// One forward/backward pass on a batch.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    images: &Tensor4<T>,
    labels: &[usize],
) -> Result<BatchResult<T>> {
    let mut tape = Tape::new();
    let out = model.record(&mut tape, images)?;
    let logits = tape.value(out);
    let correct = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let (loss, seed) = softmax_cross_entropy(logits, labels)?;
    let grads = tape.backward(out, seed)?;
    Ok((loss, correct, grads.into_param_grads(model.params().len())))
}

/// Top-1 accuracy and correct count, evaluated in batches of `batch`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch: usize) -> Result<(f64, usize)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    if let Some(&label) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let x = data.images.gather_batch(chunk)?;
        let pred = model.predict(&x)?;
        correct += pred
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == data.labels[i])
            .count();
    }
    Ok((correct as f64 / data.len() as f64, correct))
}

/// Mini-batch training. Deterministic given `cfg.seed`: the epoch's sample
/// order depends on `(seed, epoch)` and each sample's augmentation on
/// `(seed, epoch, sample index)`.
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.sgd.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (c, h, w) = model.spec().input;
    let s = data.images.shape();
    if (s.c, s.h, s.w) != (c, h, w) {
        return Err(Error::ShapeMismatch {
            op: "train dataset",
            expected: Shape4::new(s.n, c, h, w),
            found: s,
        });
    }
    let classes = model.num_classes();
    if let Some(&label) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if cfg.normalize {
        let (mean, std) = data.channel_stats();
        model.set_normalization(&mean, &std)?;
    }

    let mut state = SgdState::new();
    let mut log = TrainLog::default();
    let bs = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let lr = cfg.sgd.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(
            cfg.seed,
            epoch as u64,
            u64::MAX,
        )));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(bs) {
            let mut x = data.images.gather_batch(chunk)?;
            if cfg.augment {
                let per = c * h * w;
                for (j, &i) in chunk.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, i as u64));
                    let one = x.gather_batch(&[j])?;
                    let aug = augment_sample(&one, 4, &mut rng)?;
                    x.data_mut()[j * per..(j + 1) * per].copy_from_slice(aug.data());
                }
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, ok, grads) = batch_gradients(model, &x, &labels)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += ok;
            sgd_step(model.params_mut(), &grads, &mut state, &cfg.sgd, lr)?;
        }
        let eval_acc = match eval {
            Some(e) => Some(evaluate(model, e, 100)?.0),
            None => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            eval_acc,
        });
    }
    Ok(log)
}
