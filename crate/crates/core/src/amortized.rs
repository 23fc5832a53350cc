//! Amortized counterfactual generation: train the class-conditional generator
//! against a frozen classifier (and optionally a frozen autoencoder that
//! anchors outputs to the data manifold), then explain instances with a
//! single forward pass.
//!
//! The generator loss is
//!
//! ```text
//! alpha * sq(x, x_cf) + beta * cce(D(x_cf), y_cf) + gamma * sq(x_cf, DAAE(x_cf))
//! ```
//!
//! where `sq` sums squared error over pixels and averages over the batch,
//! matching the cross-entropy term's batch averaging. `gamma = 0` removes the
//! last term entirely (not just its weight), so runs with and without the
//! anchor autoencoder are bit-identical at `gamma = 0`.

use std::time::Instant;

use cfx_tensor::{adam_step, AdamConfig, Graph, NodeId, Rng, Tensor};

use crate::data::{one_hot, BatchIterator, Dataset, NUM_CLASSES};
use crate::error::{CoreError, Result};
use crate::models::{row_argmax, Autoencoder, Discriminator, Generator, TrainReport};
use crate::record::{CounterfactualResult, Method};

#[derive(Clone)]
pub struct AmortizedTrainConfig {
    /// Weight of the proximity term; must be positive.
    pub alpha: f32,
    /// Weight of the classification term; must be positive.
    pub beta: f32,
    /// Weight of the manifold-anchor term; zero disables it.
    pub gamma: f32,
    pub epochs: usize,
    /// Mini-batch size before pair expansion (each sample yields 9 pairs).
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for AmortizedTrainConfig {
    fn default() -> Self {
        AmortizedTrainConfig {
            alpha: 10.0,
            beta: 1.0,
            gamma: 10.0,
            epochs: 15,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl AmortizedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(CoreError::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(CoreError::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config(
                "epochs and batch_size must be positive".to_string(),
            ));
        }
        self.adam.validate().map_err(CoreError::from)
    }
}

/// Pair every sample with each of the 9 classes other than its own.
///
/// Returns the replicated images `[9B,28,28,1]`, one-hot targets `[9B,10]`,
/// and the target class per pair, interleaved per instance (all pairs of
/// sample 0, then sample 1, ...), targets in ascending class order.
pub fn expand_pairs(
    images: &Tensor<f32>,
    labels: &[u8],
) -> Result<(Tensor<f32>, Tensor<f32>, Vec<u8>)> {
    let shape = images.shape();
    if shape.len() != 4 || shape[0] != labels.len() {
        return Err(CoreError::Contract(format!(
            "expand_pairs: image shape {:?} does not match {} labels",
            shape,
            labels.len()
        )));
    }
    let per = NUM_CLASSES - 1;
    let n = labels.len();
    let pixels: usize = shape[1..].iter().product();
    let mut rep = Vec::with_capacity(n * per * pixels);
    let mut onehot = vec![0.0f32; n * per * NUM_CLASSES];
    let mut targets = Vec::with_capacity(n * per);
    for (i, &label) in labels.iter().enumerate() {
        let img = &images.data()[i * pixels..(i + 1) * pixels];
        let mut row = 0usize;
        for class in 0..NUM_CLASSES as u8 {
            if class == label {
                continue;
            }
            rep.extend_from_slice(img);
            onehot[(i * per + row) * NUM_CLASSES + class as usize] = 1.0;
            targets.push(class);
            row += 1;
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = n * per;
    Ok((
        Tensor::new(out_shape, rep)?,
        Tensor::new(vec![n * per, NUM_CLASSES], onehot)?,
        targets,
    ))
}

/// The generator loss and its individually retrievable terms.
pub struct AmortizedLoss {
    pub total: NodeId,
    /// Squared pixel distance between input and counterfactual, batch mean.
    pub proximity: NodeId,
    /// Cross-entropy between the classifier's output and the target class.
    pub class: NodeId,
    /// Squared autoencoder reconstruction error of the counterfactual, batch
    /// mean; absent when `gamma = 0`.
    pub manifold: Option<NodeId>,
}

/// Build the counterfactual training loss on `g`.
///
/// `x` are the originals, `x_cf` the generator outputs, `onehot` the target
/// classes. The classifier (and the anchor autoencoder, when `gamma > 0`)
/// must be fully frozen: they are spliced into the graph without gradients,
/// and an unfrozen parameter set is rejected as a contract violation.
pub fn dadgcex_loss(
    g: &mut Graph<f32>,
    x: NodeId,
    x_cf: NodeId,
    onehot: NodeId,
    disc: &Discriminator,
    daae: Option<&Autoencoder>,
    cfg: &AmortizedTrainConfig,
) -> Result<AmortizedLoss> {
    cfg.validate()?;
    if !disc.is_frozen() {
        return Err(CoreError::Contract(
            "the classifier must be frozen before it is embedded in the generator loss"
                .to_string(),
        ));
    }
    let batch = g.value(x).shape()[0];
    let norm = 1.0 / batch as f32;

    let sq = g.l2_sq(x, x_cf)?;
    let proximity = g.scale(sq, norm);

    let disc_lv = disc.leaves(g, false);
    let mut eval_rng = Rng::from_seed(0); // dropout inactive in eval mode
    let probs = disc.probs(g, &disc_lv, x_cf, false, &mut eval_rng)?;
    let class = g.cce(probs, onehot)?;

    let mut total = {
        let a = g.scale(proximity, cfg.alpha);
        let b = g.scale(class, cfg.beta);
        g.add(a, b)?
    };

    let manifold = if cfg.gamma > 0.0 {
        let ae = daae.ok_or_else(|| {
            CoreError::Prerequisite(
                "gamma > 0 requires the anchor autoencoder checkpoint".to_string(),
            )
        })?;
        if !ae.is_frozen() {
            return Err(CoreError::Contract(
                "the anchor autoencoder must be frozen before it is embedded in the generator loss"
                    .to_string(),
            ));
        }
        let ae_lv = ae.leaves(g, false);
        let recon = ae.forward(g, &ae_lv, x_cf)?;
        let sq = g.l2_sq(x_cf, recon)?;
        let manifold = g.scale(sq, norm);
        let c = g.scale(manifold, cfg.gamma);
        total = g.add(total, c)?;
        Some(manifold)
    } else {
        None
    };

    Ok(AmortizedLoss {
        total,
        proximity,
        class,
        manifold,
    })
}

/// Train the generator against the frozen classifier (and, when `gamma > 0`,
/// the frozen anchor autoencoder). Only the generator's parameters change.
///
/// `final_metric` in the report is the last epoch's mean loss; validity is a
/// separate measurement, see [`validity_rate`].
pub fn train_amortized(
    gen: &mut Generator,
    disc: &Discriminator,
    daae: Option<&Autoencoder>,
    train: &Dataset,
    cfg: &AmortizedTrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let shuffle = Rng::from_label(cfg.seed, &format!("gen.shuffle.{epoch}")).next_u64();
        let mut sum = 0.0f64;
        let mut steps = 0usize;
        for (step, batch) in
            BatchIterator::new(train, cfg.batch_size, Some(shuffle), false)?.enumerate()
        {
            let (x_rep, onehot, _) = expand_pairs(&batch.images, &batch.labels)?;
            let mut g = Graph::new();
            let x = g.constant(x_rep);
            let t = g.constant(onehot);
            let lv = gen.leaves(&mut g, true);
            let x_cf = gen.forward(&mut g, &lv, x, t)?;
            let loss = dadgcex_loss(&mut g, x, x_cf, t, disc, daae, cfg)?;
            let loss_val = g.value(loss.total).item() as f64;
            if !loss_val.is_finite() {
                return Err(CoreError::Training {
                    what: format!("generator loss became {loss_val}"),
                    epoch,
                    step,
                });
            }
            g.backward(loss.total)?;
            for (leaf, p) in lv.ordered().iter().zip(gen.params_mut()) {
                adam_step(p, g.grad(*leaf), &cfg.adam)?;
            }
            sum += loss_val;
            steps += 1;
        }
        epoch_losses.push(sum / steps.max(1) as f64);
    }
    let final_metric = *epoch_losses.last().unwrap_or(&f64::NAN);
    Ok(TrainReport {
        epoch_losses,
        final_metric,
        seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

/// Fraction of expanded (x, y_cf) pairs over `data` for which the classifier
/// assigns the generated counterfactual its requested class.
pub fn validity_rate(
    gen: &Generator,
    disc: &Discriminator,
    data: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for batch in BatchIterator::new(data, batch_size, None, false)? {
        let (x_rep, onehot, targets) = expand_pairs(&batch.images, &batch.labels)?;
        let x_cf = gen.generate(&x_rep, &onehot)?;
        let pred = disc.predict(&x_cf)?;
        hits += pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
        total += targets.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Mean squared pixel distance between inputs and their generated
/// counterfactuals over all expanded pairs of `data`.
pub fn mean_proximity(gen: &Generator, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut pairs = 0usize;
    for batch in BatchIterator::new(data, batch_size, None, false)? {
        let (x_rep, onehot, targets) = expand_pairs(&batch.images, &batch.labels)?;
        let x_cf = gen.generate(&x_rep, &onehot)?;
        sum += x_rep
            .data()
            .iter()
            .zip(x_cf.data())
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>();
        pairs += targets.len();
    }
    Ok(sum / pairs.max(1) as f64)
}

/// Explain one instance with a single generator pass.
///
/// `x` is one image `[1,28,28,1]`. The requested class must differ from the
/// classifier's current prediction; the prediction for the counterfactual is
/// recorded honestly whether or not it hits the target.
pub fn explain_amortized(
    gen: &Generator,
    disc: &Discriminator,
    x: &Tensor<f32>,
    y_cf: u8,
    method: Method,
) -> Result<CounterfactualResult> {
    if x.shape().first() != Some(&1) || x.shape().len() != 4 {
        return Err(CoreError::Contract(format!(
            "explain_amortized takes a single image [1,H,W,1], got {:?}",
            x.shape()
        )));
    }
    let y = row_argmax(disc.predict_probs(x)?.data()) as u8;
    if y == y_cf {
        return Err(CoreError::Config(format!(
            "requested class {y_cf} is already the classifier's prediction for this instance"
        )));
    }
    let start = Instant::now();
    let target = one_hot(y_cf as usize, NUM_CLASSES)?.reshaped(&[1, NUM_CLASSES])?;
    let x_cf = gen.generate(x, &target)?;
    let y_pred_cf = row_argmax(disc.predict_probs(&x_cf)?.data()) as u8;
    let seconds = start.elapsed().as_secs_f64();
    CounterfactualResult::new(x.clone(), x_cf, y, y_cf, y_pred_cf, method, seconds)
}
