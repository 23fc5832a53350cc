//! Network definitions: the digit classifier, the convolutional autoencoder,
//! and the class-conditional generator, plus their training loops.
//!
//! Every forward pass is built on a fresh [`Graph`]; the persistent state of a
//! model is just its [`Parameter`] set. Methods that take a `Graph` splice the
//! model into a caller-owned graph (so losses can span several models); the
//! `predict`/`reconstruct`/`generate` wrappers build a private graph and run
//! in evaluation mode (dropout disabled), which makes them deterministic.

use std::path::Path;
use std::time::Instant;

use cfx_tensor::{adam_step, AdamConfig, Graph, NodeId, Padding, Parameter, Rng, Tensor};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use crate::data::{BatchIterator, Dataset, NUM_CLASSES};
use crate::error::{CoreError, Result};

/// Latent width of the autoencoder bottleneck.
pub const LATENT_DIM: usize = 16;
/// Width of the generator's decoder input: latent code plus one-hot class.
pub const GEN_DECODER_IN: usize = LATENT_DIM + NUM_CLASSES;
/// Flattened size after two stride-2 convolutions: 7 * 7 * 64.
const FLAT: usize = 7 * 7 * 64;

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<f32> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

fn param(t: Tensor<f32>) -> Parameter<f32> {
    Parameter::new(t)
}

fn zero_param(shape: &[usize]) -> Parameter<f32> {
    Parameter::new(Tensor::zeros(shape))
}

/// Index of the largest entry in a probability row, first on ties.
pub fn row_argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// Digit classifier: two conv+pool stages, two dense layers, softmax output.
///
/// conv 2x2x32 (same, stride 1) + relu, pool 2x2,
/// conv 2x2x64 (same, stride 1) + relu, pool 2x2,
/// dropout 0.3, dense 3136->256 + relu, dropout 0.5, dense 256->10 + softmax.
pub struct Discriminator {
    pub conv1_w: Parameter<f32>,
    pub conv1_b: Parameter<f32>,
    pub conv2_w: Parameter<f32>,
    pub conv2_b: Parameter<f32>,
    pub fc1_w: Parameter<f32>,
    pub fc1_b: Parameter<f32>,
    pub out_w: Parameter<f32>,
    pub out_b: Parameter<f32>,
}

pub struct DiscriminatorLeaves {
    ids: [NodeId; 8],
}

pub const DISCRIMINATOR_ARCH: &str = "discriminator-v1";
const DISCRIMINATOR_LAYERS: [&str; 8] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "out_w", "out_b",
];

impl Discriminator {
    pub fn init(seed: u64) -> Self {
        let r = |label: &str| Rng::from_label(seed, label);
        Discriminator {
            conv1_w: param(he_uniform(&[2, 2, 1, 32], 4, &mut r("disc.conv1_w"))),
            conv1_b: zero_param(&[32]),
            conv2_w: param(he_uniform(&[2, 2, 32, 64], 128, &mut r("disc.conv2_w"))),
            conv2_b: zero_param(&[64]),
            fc1_w: param(he_uniform(&[FLAT, 256], FLAT, &mut r("disc.fc1_w"))),
            fc1_b: zero_param(&[256]),
            out_w: param(glorot_uniform(&[256, 10], 256, 10, &mut r("disc.out_w"))),
            out_b: zero_param(&[10]),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Parameter<f32>)> {
        vec![
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Mark every parameter frozen: optimizer steps become no-ops and graphs
    /// never accumulate gradients for them.
    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            p.frozen = true;
        }
    }

    /// True when every parameter is frozen.
    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|(_, p)| p.frozen)
    }

    /// Insert the weights as graph leaves. `trainable` controls whether
    /// gradients will be accumulated for them.
    pub fn leaves(&self, g: &mut Graph<f32>, trainable: bool) -> DiscriminatorLeaves {
        let ids = self
            .params()
            .iter()
            .map(|(_, p)| g.leaf(p.value.clone(), trainable && !p.frozen))
            .collect::<Vec<_>>();
        DiscriminatorLeaves {
            ids: ids.try_into().expect("eight parameters"),
        }
    }

    /// Class probabilities for `x` ([B,28,28,1]). With `training` set, both
    /// dropout layers draw masks from `rng`; otherwise they pass through.
    pub fn probs(
        &self,
        g: &mut Graph<f32>,
        lv: &DiscriminatorLeaves,
        x: NodeId,
        training: bool,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let [c1w, c1b, c2w, c2b, f1w, f1b, ow, ob] = lv.ids;
        let h = g.conv2d(x, c1w, c1b, 1, Padding::Same)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h)?;
        let h = g.conv2d(h, c2w, c2b, 1, Padding::Same)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h)?;
        let h = g.dropout(h, 0.3, training, rng)?;
        let batch = g.value(h).shape()[0];
        let h = g.reshape(h, &[batch, FLAT])?;
        let h = g.dense(h, f1w, f1b)?;
        let h = g.relu(h);
        let h = g.dropout(h, 0.5, training, rng)?;
        let h = g.dense(h, ow, ob)?;
        Ok(g.softmax(h)?)
    }

    /// Evaluation-mode class probabilities, [B,10].
    pub fn predict_probs(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let lv = self.leaves(&mut g, false);
        let mut rng = Rng::from_seed(0); // untouched: dropout is inactive
        let probs = self.probs(&mut g, &lv, x, false, &mut rng)?;
        Ok(g.value(probs).clone())
    }

    /// Predicted class per image.
    pub fn predict(&self, images: &Tensor<f32>) -> Result<Vec<u8>> {
        let probs = self.predict_probs(images)?;
        Ok(probs
            .data()
            .chunks_exact(NUM_CLASSES)
            .map(|row| row_argmax(row) as u8)
            .collect())
    }

    /// Fraction of `data` classified correctly, evaluated in batches.
    pub fn accuracy(&self, data: &Dataset, batch_size: usize) -> Result<f64> {
        let mut correct = 0usize;
        for batch in BatchIterator::new(data, batch_size, None, false)? {
            let pred = self.predict(&batch.images)?;
            correct += pred
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path, seed: u64, meta: &[(String, String)]) -> Result<()> {
        let layers: Vec<(&str, &Tensor<f32>)> = self
            .params()
            .iter()
            .map(|(n, p)| (*n, &p.value))
            .collect();
        save_checkpoint(path, DISCRIMINATOR_ARCH, seed, meta, &layers)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, tensors) = load_checkpoint(path)?;
        check_arch(path, &header, DISCRIMINATOR_ARCH, &DISCRIMINATOR_LAYERS)?;
        let mut model = Discriminator::init(header.seed);
        for (p, t) in model.params_mut().into_iter().zip(&tensors) {
            p.set_data(t.data())?;
        }
        Ok((model, header))
    }
}

fn check_arch(
    path: &Path,
    header: &CheckpointHeader,
    arch: &str,
    expected: &[&str],
) -> Result<()> {
    if header.arch != arch {
        return Err(CoreError::Prerequisite(format!(
            "{} holds architecture {:?}, expected {:?}",
            path.display(),
            header.arch,
            arch
        )));
    }
    let names: Vec<&str> = header.layers.iter().map(|(n, _)| n.as_str()).collect();
    if names != expected {
        return Err(CoreError::parse(
            path,
            0,
            format!("layer names {names:?} do not match {expected:?}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared encoder / decoder blocks
// ---------------------------------------------------------------------------

/// conv 2x2x32 stride 2 + relu, conv 2x2x64 stride 2 + relu, dense to latent.
pub struct Encoder {
    pub c1_w: Parameter<f32>,
    pub c1_b: Parameter<f32>,
    pub c2_w: Parameter<f32>,
    pub c2_b: Parameter<f32>,
    pub fc_w: Parameter<f32>,
    pub fc_b: Parameter<f32>,
}

/// dense to 7*7*64, three transposed convolutions back to 28x28x1 + sigmoid.
pub struct Decoder {
    pub fc_w: Parameter<f32>,
    pub fc_b: Parameter<f32>,
    pub t1_w: Parameter<f32>,
    pub t1_b: Parameter<f32>,
    pub t2_w: Parameter<f32>,
    pub t2_b: Parameter<f32>,
    pub t3_w: Parameter<f32>,
    pub t3_b: Parameter<f32>,
}

impl Encoder {
    fn init(seed: u64, prefix: &str) -> Self {
        let r = |label: &str| Rng::from_label(seed, &format!("{prefix}.{label}"));
        Encoder {
            c1_w: param(he_uniform(&[2, 2, 1, 32], 4, &mut r("enc.c1_w"))),
            c1_b: zero_param(&[32]),
            c2_w: param(he_uniform(&[2, 2, 32, 64], 128, &mut r("enc.c2_w"))),
            c2_b: zero_param(&[64]),
            fc_w: param(glorot_uniform(
                &[FLAT, LATENT_DIM],
                FLAT,
                LATENT_DIM,
                &mut r("enc.fc_w"),
            )),
            fc_b: zero_param(&[LATENT_DIM]),
        }
    }

    fn forward(&self, g: &mut Graph<f32>, ids: &[NodeId; 6], x: NodeId) -> Result<NodeId> {
        let [c1w, c1b, c2w, c2b, fw, fb] = *ids;
        let h = g.conv2d(x, c1w, c1b, 2, Padding::Same)?;
        let h = g.relu(h);
        let h = g.conv2d(h, c2w, c2b, 2, Padding::Same)?;
        let h = g.relu(h);
        let batch = g.value(h).shape()[0];
        let h = g.reshape(h, &[batch, FLAT])?;
        Ok(g.dense(h, fw, fb)?)
    }
}

impl Decoder {
    /// `input_dim` is the width of the decoder input: the latent code alone
    /// for the autoencoder, latent plus one-hot class for the generator.
    fn init(seed: u64, prefix: &str, input_dim: usize) -> Self {
        let r = |label: &str| Rng::from_label(seed, &format!("{prefix}.{label}"));
        Decoder {
            fc_w: param(glorot_uniform(
                &[input_dim, FLAT],
                input_dim,
                FLAT,
                &mut r("dec.fc_w"),
            )),
            fc_b: zero_param(&[FLAT]),
            t1_w: param(he_uniform(&[64, 2, 2, 64], 256, &mut r("dec.t1_w"))),
            t1_b: zero_param(&[64]),
            t2_w: param(he_uniform(&[64, 2, 2, 32], 256, &mut r("dec.t2_w"))),
            t2_b: zero_param(&[32]),
            t3_w: param(glorot_uniform(&[32, 2, 2, 1], 128, 4, &mut r("dec.t3_w"))),
            t3_b: zero_param(&[1]),
        }
    }

    fn forward(&self, g: &mut Graph<f32>, ids: &[NodeId; 8], z: NodeId) -> Result<NodeId> {
        let [fw, fb, t1w, t1b, t2w, t2b, t3w, t3b] = *ids;
        let h = g.dense(z, fw, fb)?;
        let batch = g.value(h).shape()[0];
        let h = g.reshape(h, &[batch, 7, 7, 64])?;
        let h = g.conv_transpose2d(h, t1w, t1b, 2)?;
        let h = g.relu(h);
        let h = g.conv_transpose2d(h, t2w, t2b, 2)?;
        let h = g.relu(h);
        let h = g.conv_transpose2d(h, t3w, t3b, 1)?;
        Ok(g.sigmoid(h))
    }
}

fn block_params<'a>(
    enc: &'a Encoder,
    dec: &'a Decoder,
) -> Vec<(&'static str, &'a Parameter<f32>)> {
    vec![
        ("enc.c1_w", &enc.c1_w),
        ("enc.c1_b", &enc.c1_b),
        ("enc.c2_w", &enc.c2_w),
        ("enc.c2_b", &enc.c2_b),
        ("enc.fc_w", &enc.fc_w),
        ("enc.fc_b", &enc.fc_b),
        ("dec.fc_w", &dec.fc_w),
        ("dec.fc_b", &dec.fc_b),
        ("dec.t1_w", &dec.t1_w),
        ("dec.t1_b", &dec.t1_b),
        ("dec.t2_w", &dec.t2_w),
        ("dec.t2_b", &dec.t2_b),
        ("dec.t3_w", &dec.t3_w),
        ("dec.t3_b", &dec.t3_b),
    ]
}

fn block_params_mut<'a>(enc: &'a mut Encoder, dec: &'a mut Decoder) -> Vec<&'a mut Parameter<f32>> {
    vec![
        &mut enc.c1_w,
        &mut enc.c1_b,
        &mut enc.c2_w,
        &mut enc.c2_b,
        &mut enc.fc_w,
        &mut enc.fc_b,
        &mut dec.fc_w,
        &mut dec.fc_b,
        &mut dec.t1_w,
        &mut dec.t1_b,
        &mut dec.t2_w,
        &mut dec.t2_b,
        &mut dec.t3_w,
        &mut dec.t3_b,
    ]
}

const BLOCK_LAYERS: [&str; 14] = [
    "enc.c1_w", "enc.c1_b", "enc.c2_w", "enc.c2_b", "enc.fc_w", "enc.fc_b", "dec.fc_w",
    "dec.fc_b", "dec.t1_w", "dec.t1_b", "dec.t2_w", "dec.t2_b", "dec.t3_w", "dec.t3_b",
];

pub struct BlockLeaves {
    enc: [NodeId; 6],
    dec: [NodeId; 8],
}

impl BlockLeaves {
    /// Leaf ids in the same order as `params()` / `params_mut()`.
    pub fn ordered(&self) -> Vec<NodeId> {
        self.enc.iter().chain(self.dec.iter()).copied().collect()
    }
}

fn block_leaves(
    g: &mut Graph<f32>,
    params: &[(&'static str, &Parameter<f32>)],
    trainable: bool,
) -> BlockLeaves {
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(_, p)| g.leaf(p.value.clone(), trainable && !p.frozen))
        .collect();
    BlockLeaves {
        enc: ids[..6].try_into().expect("six encoder parameters"),
        dec: ids[6..].try_into().expect("eight decoder parameters"),
    }
}

// ---------------------------------------------------------------------------
// Autoencoder
// ---------------------------------------------------------------------------

/// Convolutional autoencoder with a 16-wide bottleneck.
pub struct Autoencoder {
    pub enc: Encoder,
    pub dec: Decoder,
}

pub const AUTOENCODER_ARCH: &str = "autoencoder-v1";

impl Autoencoder {
    pub fn init(seed: u64) -> Self {
        Autoencoder {
            enc: Encoder::init(seed, "ae"),
            dec: Decoder::init(seed, "ae", LATENT_DIM),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Parameter<f32>)> {
        block_params(&self.enc, &self.dec)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        block_params_mut(&mut self.enc, &mut self.dec)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Mark every parameter frozen: optimizer steps become no-ops and graphs
    /// never accumulate gradients for them.
    pub fn freeze(&mut self) {
        for p in self.params_mut() {
            p.frozen = true;
        }
    }

    /// True when every parameter is frozen.
    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|(_, p)| p.frozen)
    }

    pub fn leaves(&self, g: &mut Graph<f32>, trainable: bool) -> BlockLeaves {
        block_leaves(g, &self.params(), trainable)
    }

    /// Latent code for `x`, [B,16].
    pub fn encode(&self, g: &mut Graph<f32>, lv: &BlockLeaves, x: NodeId) -> Result<NodeId> {
        self.enc.forward(g, &lv.enc, x)
    }

    /// Reconstruction from a latent code, [B,28,28,1].
    pub fn decode(&self, g: &mut Graph<f32>, lv: &BlockLeaves, z: NodeId) -> Result<NodeId> {
        self.dec.forward(g, &lv.dec, z)
    }

    /// Full pass: decode(encode(x)).
    pub fn forward(&self, g: &mut Graph<f32>, lv: &BlockLeaves, x: NodeId) -> Result<NodeId> {
        let z = self.encode(g, lv, x)?;
        self.decode(g, lv, z)
    }

    /// Evaluation-mode reconstruction of a batch.
    pub fn reconstruct(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let lv = self.leaves(&mut g, false);
        let y = self.forward(&mut g, &lv, x)?;
        Ok(g.value(y).clone())
    }

    /// Evaluation-mode latent codes of a batch, [B,16].
    pub fn latent(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let lv = self.leaves(&mut g, false);
        let z = self.encode(&mut g, &lv, x)?;
        Ok(g.value(z).clone())
    }

    pub fn save(&self, path: &Path, seed: u64, meta: &[(String, String)]) -> Result<()> {
        let layers: Vec<(&str, &Tensor<f32>)> = self
            .params()
            .iter()
            .map(|(n, p)| (*n, &p.value))
            .collect();
        save_checkpoint(path, AUTOENCODER_ARCH, seed, meta, &layers)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, tensors) = load_checkpoint(path)?;
        check_arch(path, &header, AUTOENCODER_ARCH, &BLOCK_LAYERS)?;
        let mut model = Autoencoder::init(header.seed);
        for (p, t) in model.params_mut().into_iter().zip(&tensors) {
            p.set_data(t.data())?;
        }
        Ok((model, header))
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Class-conditional generator: the autoencoder topology, except the decoder
/// reads the latent code concatenated with a one-hot target class.
pub struct Generator {
    pub enc: Encoder,
    pub dec: Decoder,
}

pub const GENERATOR_ARCH: &str = "generator-v1";

impl Generator {
    pub fn init(seed: u64) -> Self {
        Generator {
            enc: Encoder::init(seed, "gen"),
            dec: Decoder::init(seed, "gen", GEN_DECODER_IN),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Parameter<f32>)> {
        block_params(&self.enc, &self.dec)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        block_params_mut(&mut self.enc, &mut self.dec)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn leaves(&self, g: &mut Graph<f32>, trainable: bool) -> BlockLeaves {
        block_leaves(g, &self.params(), trainable)
    }

    /// Counterfactual images for `x` steered towards the classes in `onehot`
    /// ([B,10], one row per image).
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        lv: &BlockLeaves,
        x: NodeId,
        onehot: NodeId,
    ) -> Result<NodeId> {
        let z = self.enc.forward(g, &lv.enc, x)?;
        let zy = g.concat(z, onehot)?;
        self.dec.forward(g, &lv.dec, zy)
    }

    /// Evaluation-mode generation for a batch of images and target rows.
    pub fn generate(&self, images: &Tensor<f32>, onehot: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let y = g.constant(onehot.clone());
        let lv = self.leaves(&mut g, false);
        let out = self.forward(&mut g, &lv, x, y)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, path: &Path, seed: u64, meta: &[(String, String)]) -> Result<()> {
        let layers: Vec<(&str, &Tensor<f32>)> = self
            .params()
            .iter()
            .map(|(n, p)| (*n, &p.value))
            .collect();
        save_checkpoint(path, GENERATOR_ARCH, seed, meta, &layers)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, tensors) = load_checkpoint(path)?;
        check_arch(path, &header, GENERATOR_ARCH, &BLOCK_LAYERS)?;
        let mut model = Generator::init(header.seed);
        for (p, t) in model.params_mut().into_iter().zip(&tensors) {
            p.set_data(t.data())?;
        }
        Ok((model, header))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

/// Summary of one training run. `seconds` is wall-clock and therefore the only
/// non-deterministic field; everything else is reproducible from the seed.
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Test accuracy for the classifier, mean per-image squared reconstruction
    /// error for autoencoders.
    pub final_metric: f64,
    pub seconds: f64,
    pub seed: u64,
}

fn check_finite_loss(loss: f64, what: &str, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Training {
            what: format!("{what} loss became {loss}"),
            epoch,
            step,
        })
    }
}

/// Train the classifier with cross-entropy. Returns per-epoch mean losses and
/// final test accuracy.
pub fn train_discriminator(
    model: &mut Discriminator,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    let mut dropout_rng = Rng::from_label(cfg.seed, "disc.dropout");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let shuffle = Rng::from_label(cfg.seed, &format!("disc.shuffle.{epoch}")).next_u64();
        let mut sum = 0.0f64;
        let mut steps = 0usize;
        for (step, batch) in
            BatchIterator::new(train, cfg.batch_size, Some(shuffle), false)?.enumerate()
        {
            let mut g = Graph::new();
            let x = g.constant(batch.images);
            let t = g.constant(batch.one_hot);
            let lv = model.leaves(&mut g, true);
            let probs = model.probs(&mut g, &lv, x, true, &mut dropout_rng)?;
            let loss = g.cce(probs, t)?;
            let loss_val = g.value(loss).item() as f64;
            check_finite_loss(loss_val, "classifier", epoch, step)?;
            g.backward(loss)?;
            for (leaf, p) in lv.ids.iter().zip(model.params_mut()) {
                adam_step(p, g.grad(*leaf), &cfg.adam)?;
            }
            sum += loss_val;
            steps += 1;
        }
        epoch_losses.push(sum / steps.max(1) as f64);
    }
    let final_metric = model.accuracy(test, 256)?;
    Ok(TrainReport {
        epoch_losses,
        final_metric,
        seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}

/// Mean per-image squared reconstruction error over a dataset.
pub fn reconstruction_error(model: &Autoencoder, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut total = 0.0f64;
    for batch in BatchIterator::new(data, batch_size, None, false)? {
        let recon = model.reconstruct(&batch.images)?;
        total += recon
            .data()
            .iter()
            .zip(batch.images.data())
            .map(|(r, x)| {
                let d = (r - x) as f64;
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Train an autoencoder with summed squared error, averaged over the batch.
/// Returns per-epoch mean losses and final test reconstruction error.
pub fn train_autoencoder(
    model: &mut Autoencoder,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let shuffle = Rng::from_label(cfg.seed, &format!("ae.shuffle.{epoch}")).next_u64();
        let mut sum = 0.0f64;
        let mut steps = 0usize;
        for (step, batch) in
            BatchIterator::new(train, cfg.batch_size, Some(shuffle), false)?.enumerate()
        {
            let batch_len = batch.labels.len();
            let mut g = Graph::new();
            let x = g.constant(batch.images);
            let lv = model.leaves(&mut g, true);
            let recon = model.forward(&mut g, &lv, x)?;
            let sq = g.l2_sq(recon, x)?;
            let loss = g.scale(sq, 1.0 / batch_len as f32);
            let loss_val = g.value(loss).item() as f64;
            check_finite_loss(loss_val, "autoencoder", epoch, step)?;
            g.backward(loss)?;
            for (leaf, p) in lv.ordered().iter().zip(model.params_mut()) {
                adam_step(p, g.grad(*leaf), &cfg.adam)?;
            }
            sum += loss_val;
            steps += 1;
        }
        epoch_losses.push(sum / steps.max(1) as f64);
    }
    let final_metric = reconstruction_error(model, test, 256)?;
    Ok(TrainReport {
        epoch_losses,
        final_metric,
        seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    })
}
