//! Per-instance counterfactual search guided by class prototypes.
//!
//! For a query `x` with class `y`, the method optimizes a perturbation `delta`
//! so that `x_cf = x + delta` is classified differently, stays close to `x`
//! (elastic net on `delta`), stays on the data manifold (autoencoder
//! reconstruction term), and moves towards the latent prototype of a target
//! class (mean encoding of the K nearest same-class training latents).
//!
//! The non-smooth L1 part of the objective is handled with proximal
//! shrinkage-thresholding after each gradient step, followed by projection of
//! `x + delta` onto the pixel box `[0,1]`. The trade-off weight `c` on the
//! hinge term is searched multiplicatively over a fixed number of rounds:
//! divided by `c_multiplier` after a round that found a valid counterfactual,
//! multiplied by it otherwise.

use std::time::Instant;

use cfx_tensor::{Graph, Tensor};

use crate::data::{BatchIterator, Dataset, NUM_CLASSES};
use crate::error::{CoreError, Result};
use crate::models::{row_argmax, Autoencoder, Discriminator, LATENT_DIM};
use crate::record::{CounterfactualResult, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct CFProtoConfig {
    /// L1 weight of the elastic-net distance.
    pub beta: f32,
    /// Weight of the autoencoder reconstruction term.
    pub gamma: f32,
    /// Weight of the prototype-distance term.
    pub theta: f32,
    /// Initial weight of the class-change hinge.
    pub c_init: f32,
    /// Hinge slack: the margin by which the original class may keep losing.
    pub kappa: f32,
    /// Number of nearest latents averaged into each class prototype.
    pub k: usize,
    /// Rounds of the multiplicative c-search.
    pub c_steps: usize,
    /// Gradient iterations per round.
    pub inner_steps: usize,
    pub step_size: f32,
    /// Factor applied to c between rounds; must exceed 1.
    pub c_multiplier: f64,
}

impl Default for CFProtoConfig {
    fn default() -> Self {
        CFProtoConfig {
            beta: 0.1,
            gamma: 100.0,
            theta: 100.0,
            c_init: 1.0,
            kappa: 0.0,
            k: 5,
            c_steps: 4,
            inner_steps: 500,
            step_size: 1e-2,
            c_multiplier: 10.0,
        }
    }
}

impl CFProtoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(CoreError::Config(what));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be non-negative, got {}", self.theta));
        }
        if !(self.c_init > 0.0 && self.c_init.is_finite()) {
            return bad(format!("c_init must be positive, got {}", self.c_init));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if self.k == 0 || self.c_steps == 0 || self.inner_steps == 0 {
            return bad("k, c_steps, and inner_steps must be positive".to_string());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.c_multiplier > 1.0 && self.c_multiplier.is_finite()) {
            return bad(format!(
                "c_multiplier must exceed 1, got {}",
                self.c_multiplier
            ));
        }
        Ok(())
    }
}

/// Hinge on the original class's lead over its strongest rival:
/// `max(probs[y] - max_{i != y} probs[i], -kappa)`. Minimizing it pushes the
/// prediction away from `y`, and the clamp stops rewarding margins beyond
/// `kappa`.
pub fn fkappa_loss(probs: &[f32], y: usize, kappa: f32) -> Result<f32> {
    if y >= probs.len() {
        return Err(CoreError::Contract(format!(
            "class {y} out of range for {} probabilities",
            probs.len()
        )));
    }
    let rival = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(_, p)| *p)
        .fold(f32::NEG_INFINITY, f32::max);
    Ok((probs[y] - rival).max(-kappa))
}

/// Per-class latent codes of a training set, computed once and reused for
/// every query.
pub struct LatentIndex {
    /// `per_class[c]` holds the latent vector of every class-c instance.
    per_class: Vec<Vec<[f32; LATENT_DIM]>>,
}

impl LatentIndex {
    pub fn build(ae: &Autoencoder, data: &Dataset, batch_size: usize) -> Result<LatentIndex> {
        let mut per_class: Vec<Vec<[f32; LATENT_DIM]>> = vec![Vec::new(); NUM_CLASSES];
        for batch in BatchIterator::new(data, batch_size, None, false)? {
            let z = ae.latent(&batch.images)?;
            for (row, &label) in z.data().chunks_exact(LATENT_DIM).zip(&batch.labels) {
                per_class[label as usize].push(row.try_into().expect("latent width"));
            }
        }
        Ok(LatentIndex { per_class })
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.per_class[class].len()
    }
}

/// Latent prototypes of every class for one query, and the chosen target.
pub struct PrototypeSet {
    /// `protos[c]` is the mean of the K class-c latents nearest to the query.
    pub protos: Vec<[f32; LATENT_DIM]>,
    /// Target class: the non-`y` class whose prototype is nearest in latent
    /// space (or the caller's override).
    pub target: u8,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Build per-class prototypes around the query latent `z` and choose the
/// target class. `y` is the query's class; `forced_target`, when given,
/// overrides the nearest-prototype choice.
pub fn compute_prototypes(
    index: &LatentIndex,
    z: &[f32],
    y: u8,
    k: usize,
    forced_target: Option<u8>,
) -> Result<PrototypeSet> {
    let mut protos = Vec::with_capacity(NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let members = &index.per_class[class];
        if members.len() < k {
            return Err(CoreError::Prerequisite(format!(
                "class {class} has {} training latents, fewer than K={k}",
                members.len()
            )));
        }
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| {
            sq_dist(&members[a], z)
                .total_cmp(&sq_dist(&members[b], z))
                .then(a.cmp(&b))
        });
        let mut proto = [0.0f32; LATENT_DIM];
        for &m in order.iter().take(k) {
            for (p, v) in proto.iter_mut().zip(&members[m]) {
                *p += v;
            }
        }
        for p in proto.iter_mut() {
            *p /= k as f32;
        }
        protos.push(proto);
    }
    let target = match forced_target {
        Some(t) => {
            if t as usize >= NUM_CLASSES {
                return Err(CoreError::Config(format!("target class {t} out of range")));
            }
            if t == y {
                return Err(CoreError::Config(format!(
                    "target class {t} equals the query's class"
                )));
            }
            t
        }
        None => {
            let mut best: Option<(usize, f64)> = None;
            for (class, proto) in protos.iter().enumerate() {
                if class == y as usize {
                    continue;
                }
                let d = sq_dist(proto, z);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((class, d));
                }
            }
            best.expect("at least one non-query class").0 as u8
        }
    };
    Ok(PrototypeSet { protos, target })
}

/// Everything the hinge round needs about one evaluation of `delta`.
struct Probe {
    grad: Vec<f32>,
    probs: Vec<f32>,
    fk: f64,
    recon_sq: f64,
    proto_sq: f64,
    delta_l1: f64,
    delta_l2_sq: f64,
}

/// Build the smooth part of the objective on a graph, backprop to `delta`,
/// and report every term's value.
fn probe(
    x: &Tensor<f32>,
    delta: &[f32],
    y: usize,
    disc: &Discriminator,
    ae: &Autoencoder,
    proto_j: &[f32; LATENT_DIM],
    cfg: &CFProtoConfig,
    c: f64,
) -> Result<Probe> {
    let mut g: Graph<f32> = Graph::new();
    let xn = g.constant(x.clone());
    let dn = g.leaf(Tensor::new(x.shape().to_vec(), delta.to_vec())?, true);
    let xc = g.add(xn, dn)?;

    let disc_lv = disc.leaves(&mut g, false);
    let mut eval_rng = cfx_tensor::Rng::from_seed(0); // dropout inactive
    let probs = disc.probs(&mut g, &disc_lv, xc, false, &mut eval_rng)?;
    let fk = g.fkappa(probs, y, cfg.kappa)?;
    let mut total = g.scale(fk, c as f32);

    let zeros = g.constant(Tensor::zeros(x.shape()));
    let d_l2 = g.l2_sq(dn, zeros)?;
    total = g.add(total, d_l2)?;

    let mut recon_sq = 0.0f64;
    let mut proto_sq = 0.0f64;
    if cfg.gamma > 0.0 || cfg.theta > 0.0 {
        let ae_lv = ae.leaves(&mut g, false);
        let z = ae.encode(&mut g, &ae_lv, xc)?;
        if cfg.gamma > 0.0 {
            let recon = ae.decode(&mut g, &ae_lv, z)?;
            let r = g.l2_sq(xc, recon)?;
            recon_sq = g.value(r).item() as f64;
            let r = g.scale(r, cfg.gamma);
            total = g.add(total, r)?;
        }
        if cfg.theta > 0.0 {
            let proto = g.constant(Tensor::new(vec![1, LATENT_DIM], proto_j.to_vec())?);
            let p = g.l2_sq(z, proto)?;
            proto_sq = g.value(p).item() as f64;
            let p = g.scale(p, cfg.theta);
            total = g.add(total, p)?;
        }
    }

    let fk_val = g.value(fk).item() as f64;
    let probs_val = g.value(probs).data().to_vec();
    let d_l2_val = g.value(d_l2).item() as f64;
    g.backward(total)?;
    let grad = g.grad_ref(dn)?.to_vec();

    Ok(Probe {
        grad,
        probs: probs_val,
        fk: fk_val,
        recon_sq,
        proto_sq,
        delta_l1: delta.iter().map(|d| d.abs() as f64).sum(),
        delta_l2_sq: d_l2_val,
    })
}

impl Probe {
    fn objective(&self, cfg: &CFProtoConfig, c: f64) -> f64 {
        c * self.fk
            + cfg.beta as f64 * self.delta_l1
            + self.delta_l2_sq
            + cfg.gamma as f64 * self.recon_sq
            + cfg.theta as f64 * self.proto_sq
    }

    fn elastic_net(&self, cfg: &CFProtoConfig) -> f64 {
        cfg.beta as f64 * self.delta_l1 + self.delta_l2_sq
    }
}

/// Full objective value at a given perturbation, using `c` as the hinge
/// weight. Exposed for term-isolation checks and trace verification.
pub fn cfproto_objective(
    x: &Tensor<f32>,
    delta: &Tensor<f32>,
    y: usize,
    disc: &Discriminator,
    ae: &Autoencoder,
    protos: &PrototypeSet,
    cfg: &CFProtoConfig,
    c: f64,
) -> Result<f64> {
    if x.shape() != delta.shape() {
        return Err(CoreError::Contract(format!(
            "delta shape {:?} does not match x shape {:?}",
            delta.shape(),
            x.shape()
        )));
    }
    let p = probe(
        x,
        delta.data(),
        y,
        disc,
        ae,
        &protos.protos[protos.target as usize],
        cfg,
        c,
    )?;
    Ok(p.objective(cfg, c))
}

/// One round of the c-search, as recorded in the trace.
pub struct RoundTrace {
    /// Hinge weight used throughout the round.
    pub c: f64,
    /// Whether any iterate of this round met the class-change condition.
    pub found: bool,
    /// Full objective value at every inner step.
    pub objectives: Vec<f64>,
}

pub struct CFProtoTrace {
    pub rounds: Vec<RoundTrace>,
    /// True when at least one round produced a valid counterfactual.
    pub converged: bool,
    /// Prototype target class used for the search.
    pub target: u8,
}

/// Explain one instance by optimizing a perturbation.
///
/// `y` is the instance's class (the evaluation pipeline passes the
/// classifier's prediction). Success means the perturbed image is classified
/// differently from `y`, or exactly as `y_cf` when one is supplied; among all
/// successful iterates the one with the smallest elastic-net distance wins.
/// When no round succeeds, the result carries the attempt with the smallest
/// objective and `converged` is false (such a result is never valid).
pub fn cfproto_explain(
    x: &Tensor<f32>,
    y: u8,
    disc: &Discriminator,
    ae: &Autoencoder,
    index: &LatentIndex,
    cfg: &CFProtoConfig,
    y_cf: Option<u8>,
) -> Result<(CounterfactualResult, CFProtoTrace)> {
    cfg.validate()?;
    if x.shape().first() != Some(&1) || x.shape().len() != 4 {
        return Err(CoreError::Contract(format!(
            "cfproto_explain takes a single image [1,H,W,1], got {:?}",
            x.shape()
        )));
    }
    if y as usize >= NUM_CLASSES {
        return Err(CoreError::Contract(format!("class {y} out of range")));
    }
    let start = Instant::now();

    let z = ae.latent(x)?;
    let protos = compute_prototypes(index, z.data(), y, cfg.k, y_cf)?;
    let proto_j = protos.protos[protos.target as usize];
    let succeeded = |probs: &[f32]| -> bool {
        let pred = row_argmax(probs) as u8;
        match y_cf {
            Some(t) => pred == t,
            None => pred != y,
        }
    };

    let n = x.len();
    let mut delta = vec![0.0f32; n];
    let mut c = cfg.c_init as f64;
    let mut rounds = Vec::with_capacity(cfg.c_steps);
    // Best valid iterate by elastic net, and best iterate overall by objective
    // (the fallback when nothing validates).
    let mut best_valid: Option<(f64, Vec<f32>)> = None;
    let mut best_any: Option<(f64, Vec<f32>)> = None;

    for _ in 0..cfg.c_steps {
        let mut found = false;
        let mut objectives = Vec::with_capacity(cfg.inner_steps);
        for _ in 0..cfg.inner_steps {
            let p = probe(x, &delta, y as usize, disc, ae, &proto_j, cfg, c)?;
            let obj = p.objective(cfg, c);
            objectives.push(obj);
            if succeeded(&p.probs) {
                found = true;
                let en = p.elastic_net(cfg);
                if best_valid.as_ref().map_or(true, |(b, _)| en < *b) {
                    best_valid = Some((en, delta.clone()));
                }
            }
            if best_any.as_ref().map_or(true, |(b, _)| obj < *b) {
                best_any = Some((obj, delta.clone()));
            }

            // Gradient step on the smooth terms, shrink for the L1 term,
            // project back into the pixel box.
            let shrink = cfg.step_size * cfg.beta;
            for i in 0..n {
                let mut d = delta[i] - cfg.step_size * p.grad[i];
                d = if d > shrink {
                    d - shrink
                } else if d < -shrink {
                    d + shrink
                } else {
                    0.0
                };
                let pixel = (x.data()[i] + d).clamp(0.0, 1.0);
                delta[i] = pixel - x.data()[i];
            }
        }
        // The last iterate of the round still deserves bookkeeping.
        let p = probe(x, &delta, y as usize, disc, ae, &proto_j, cfg, c)?;
        let obj = p.objective(cfg, c);
        if succeeded(&p.probs) {
            found = true;
            let en = p.elastic_net(cfg);
            if best_valid.as_ref().map_or(true, |(b, _)| en < *b) {
                best_valid = Some((en, delta.clone()));
            }
        }
        if best_any.as_ref().map_or(true, |(b, _)| obj < *b) {
            best_any = Some((obj, delta.clone()));
        }

        rounds.push(RoundTrace {
            c,
            found,
            objectives,
        });
        if found {
            c /= cfg.c_multiplier;
        } else {
            c *= cfg.c_multiplier;
        }
    }

    let converged = best_valid.is_some();
    let chosen = best_valid
        .map(|(_, d)| d)
        .or_else(|| best_any.map(|(_, d)| d))
        .expect("at least one iterate was probed");
    let x_cf = Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(&chosen)
            .map(|(xv, dv)| (xv + dv).clamp(0.0, 1.0))
            .collect(),
    )?;
    let y_pred_cf = row_argmax(disc.predict_probs(&x_cf)?.data()) as u8;
    let seconds = start.elapsed().as_secs_f64();

    let result = CounterfactualResult::new(
        x.clone(),
        x_cf,
        y,
        y_cf.unwrap_or(protos.target),
        y_pred_cf,
        Method::CfProto,
        seconds,
    )?;
    let trace = CFProtoTrace {
        rounds,
        converged,
        target: protos.target,
    };
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IMAGE_PIXELS, IMAGE_SIDE};
    use cfx_tensor::Rng;

    fn tiny_dataset(per_class: usize, seed: u64) -> Dataset {
        let mut rng = Rng::from_seed(seed);
        let n = per_class * NUM_CLASSES;
        let mut data = vec![0.0f32; n * IMAGE_PIXELS];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % NUM_CLASSES) as u8;
            labels.push(label);
            for p in 0..IMAGE_PIXELS {
                data[i * IMAGE_PIXELS + p] = if p % NUM_CLASSES == label as usize {
                    0.9
                } else {
                    rng.uniform() as f32 * 0.05
                };
            }
        }
        let images = Tensor::new(vec![n, IMAGE_SIDE, IMAGE_SIDE, 1], data).unwrap();
        Dataset::new(images, labels).unwrap()
    }

    fn small_cfg() -> CFProtoConfig {
        CFProtoConfig {
            k: 2,
            c_steps: 2,
            inner_steps: 10,
            ..CFProtoConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(CFProtoConfig::default().validate().is_ok());
        for bad in [
            CFProtoConfig {
                beta: -0.1,
                ..CFProtoConfig::default()
            },
            CFProtoConfig {
                c_init: 0.0,
                ..CFProtoConfig::default()
            },
            CFProtoConfig {
                kappa: -1.0,
                ..CFProtoConfig::default()
            },
            CFProtoConfig {
                c_multiplier: 1.0,
                ..CFProtoConfig::default()
            },
            CFProtoConfig {
                inner_steps: 0,
                ..CFProtoConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn fkappa_hand_examples() {
        assert_eq!(fkappa_loss(&[0.7, 0.2, 0.1], 0, 0.0).unwrap(), 0.5);
        let uniform = [0.1f32; 10];
        assert_eq!(fkappa_loss(&uniform, 3, 0.0).unwrap(), 0.0);
        // Original class loses by 0.8 > kappa: clamp.
        assert_eq!(fkappa_loss(&[0.1, 0.9], 0, 0.3).unwrap(), -0.3);
        assert!(fkappa_loss(&[0.5, 0.5], 2, 0.0).is_err());
    }

    #[test]
    fn prototypes_with_k_equal_to_class_size_are_class_means() {
        let ae = Autoencoder::init(1);
        let data = tiny_dataset(3, 2);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let query = ae.latent(&data.image_tensor(0)).unwrap();
        let set = compute_prototypes(&index, query.data(), 0, 3, None).unwrap();

        // Independent class mean for class 1.
        let members = data.class_subset(1).unwrap();
        let z = ae.latent(members.images()).unwrap();
        let mut mean = [0.0f32; LATENT_DIM];
        for row in z.data().chunks_exact(LATENT_DIM) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= 3.0;
        }
        for (a, b) in set.protos[1].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_ne!(set.target, 0, "target never equals the query class");
    }

    #[test]
    fn k1_prototype_is_the_nearest_latent() {
        let ae = Autoencoder::init(1);
        let data = tiny_dataset(2, 3);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        // Query with a class-7 member itself: its own latent is at distance 0,
        // so with K=1 the class-7 prototype must be exactly that latent.
        let member_idx = data
            .labels()
            .iter()
            .position(|&l| l == 7)
            .expect("class 7 present");
        let z = ae.latent(&data.image_tensor(member_idx)).unwrap();
        let set = compute_prototypes(&index, z.data(), 7, 1, None).unwrap();
        for (a, b) in set.protos[7].iter().zip(z.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn undersized_class_is_rejected() {
        let ae = Autoencoder::init(1);
        let data = tiny_dataset(2, 4);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let z = ae.latent(&data.image_tensor(0)).unwrap();
        assert!(matches!(
            compute_prototypes(&index, z.data(), 0, 3, None),
            Err(CoreError::Prerequisite(_))
        ));
    }

    #[test]
    fn objective_reduces_to_weighted_hinge_at_zero_delta() {
        let disc = Discriminator::init(5);
        let ae = Autoencoder::init(6);
        let data = tiny_dataset(2, 7);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let x = data.image_tensor(0);
        let z = ae.latent(&x).unwrap();
        let cfg = CFProtoConfig {
            gamma: 0.0,
            theta: 0.0,
            ..small_cfg()
        };
        let protos = compute_prototypes(&index, z.data(), 0, 2, None).unwrap();
        let delta = Tensor::zeros(x.shape());
        let obj = cfproto_objective(&x, &delta, 0, &disc, &ae, &protos, &cfg, 1.0).unwrap();

        let probs = disc.predict_probs(&x).unwrap();
        let expected = fkappa_loss(probs.data(), 0, cfg.kappa).unwrap() as f64;
        assert!(
            (obj - expected).abs() < 1e-9,
            "objective {obj} should equal the bare hinge {expected}"
        );
    }

    #[test]
    fn theta_doubling_isolates_the_prototype_term() {
        let disc = Discriminator::init(5);
        let ae = Autoencoder::init(6);
        let data = tiny_dataset(2, 8);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let x = data.image_tensor(1);
        let z = ae.latent(&x).unwrap();
        let y = 1u8;
        let protos = compute_prototypes(&index, z.data(), y, 2, None).unwrap();
        let delta = Tensor::filled(x.shape(), 0.01);

        let base = CFProtoConfig {
            theta: 100.0,
            ..small_cfg()
        };
        let doubled = CFProtoConfig {
            theta: 200.0,
            ..small_cfg()
        };
        let o1 = cfproto_objective(&x, &delta, y as usize, &disc, &ae, &protos, &base, 1.0).unwrap();
        let o2 =
            cfproto_objective(&x, &delta, y as usize, &disc, &ae, &protos, &doubled, 1.0).unwrap();

        // Independent recomputation of ||ENC(x_cf) - proto_j||^2.
        let x_cf = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let z_cf = ae.latent(&x_cf).unwrap();
        let proto = &protos.protos[protos.target as usize];
        let dist: f64 = z_cf
            .data()
            .iter()
            .zip(proto)
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        assert!(
            ((o2 - o1) - 100.0 * dist).abs() < 1e-3 * (100.0 * dist).max(1.0),
            "theta isolation: {} vs {}",
            o2 - o1,
            100.0 * dist
        );
    }

    #[test]
    fn degenerate_query_returns_the_input_unchanged() {
        // The classifier already assigns the requested class: the hinge is
        // clamped, its gradient vanishes, and delta stays exactly zero.
        let disc = Discriminator::init(5);
        let ae = Autoencoder::init(6);
        let data = tiny_dataset(2, 9);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let x = data.image_tensor(0);
        let pred = disc.predict(&x).unwrap()[0];
        let y = (pred + 1) % 10; // pretend the instance belongs elsewhere
        let cfg = CFProtoConfig {
            gamma: 0.0,
            theta: 0.0,
            kappa: 0.0,
            c_steps: 1,
            inner_steps: 3,
            k: 2,
            ..CFProtoConfig::default()
        };
        let (r, trace) = cfproto_explain(&x, y, &disc, &ae, &index, &cfg, Some(pred)).unwrap();
        assert!(trace.converged);
        assert!(r.is_valid());
        assert_eq!(r.x_cf.data(), x.data(), "delta must stay exactly zero");
    }

    #[test]
    fn c_trace_follows_the_multiplicative_rule() {
        let disc = Discriminator::init(5);
        let ae = Autoencoder::init(6);
        let data = tiny_dataset(2, 10);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let x = data.image_tensor(3);
        let y = disc.predict(&x).unwrap()[0];
        let cfg = CFProtoConfig {
            c_steps: 3,
            inner_steps: 5,
            k: 2,
            ..CFProtoConfig::default()
        };
        let (r, trace) = cfproto_explain(&x, y, &disc, &ae, &index, &cfg, None).unwrap();
        assert_eq!(trace.rounds.len(), 3);
        assert_eq!(trace.rounds[0].c, 1.0);
        for w in trace.rounds.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            if prev.found {
                assert_eq!(next.c, prev.c / cfg.c_multiplier);
            } else {
                assert_eq!(next.c, prev.c * cfg.c_multiplier);
            }
            assert_eq!(prev.objectives.len(), 5);
        }
        // Box constraint on the returned image.
        assert!(r.x_cf.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // Honest validity flag.
        assert_eq!(r.is_valid(), r.y_pred_cf == r.y_cf);
    }

    #[test]
    fn unconverged_search_is_flagged() {
        let disc = Discriminator::init(5);
        let ae = Autoencoder::init(6);
        let data = tiny_dataset(2, 11);
        let index = LatentIndex::build(&ae, &data, 16).unwrap();
        let x = data.image_tensor(0);
        let pred = disc.predict(&x).unwrap()[0];
        // Demand a specific class with a microscopic step budget: the search
        // cannot reach it, and must say so.
        let target = (pred + 1) % 10;
        let cfg = CFProtoConfig {
            c_steps: 1,
            inner_steps: 1,
            step_size: 1e-9,
            k: 2,
            ..CFProtoConfig::default()
        };
        let y = pred;
        let (r, trace) = cfproto_explain(&x, y, &disc, &ae, &index, &cfg, Some(target)).unwrap();
        assert!(!trace.converged);
        assert!(!r.is_valid());
        assert_eq!(r.y_cf, target);
    }
}
