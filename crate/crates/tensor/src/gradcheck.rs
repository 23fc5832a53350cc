//! Central finite differences as the ground truth for every backward pass.
//!
//! Each case rebuilds the same graph from scratch around perturbed leaf
//! values (the f64 instantiation, step h = 1e-3) and compares the two-sided
//! difference quotient against the autodiff gradient, element by element,
//! across [`SEEDS`] random seeds per case. Relative error must stay below
//! 1e-3 with the denominator floored at 1e-4 so near-zero pairs are judged
//! absolutely. A violation panics with the case, seed, and element.
//!
//! Ops with kinks (relu, max-pool, l1, the hinge) are only checked at points
//! a safe margin away from the kink — either by construction of the sample
//! or by a guard that skips the seed — because a difference quotient
//! straddling a kink measures nothing.
//!
//! The cases live in the library (rather than in a test file) so that both
//! the crate's own test suite and downstream acceptance gates can run the
//! identical sweep; see [`run_all`].

use crate::graph::{Graph, NodeId};
use crate::{Padding, Rng, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
/// Seeds checked per case.
pub const SEEDS: usize = 100;
const ROOT: u64 = 0x00da_7a5e_ed00_cafe;

type Guard = Box<dyn Fn(&Graph<f64>) -> bool>;

struct Built {
    loss: NodeId,
    /// (index into the sampled value list, leaf id) for every gradient to check.
    check: Vec<(usize, NodeId)>,
    /// All guards must pass at the center point or the seed is skipped.
    guards: Vec<Guard>,
}

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-4)
}

/// Drive one case: sample leaf values per seed, compare autodiff to central
/// differences for every element of every checked leaf. Returns the number
/// of seeds that were actually checked (always [`SEEDS`]; guarded-out seeds
/// are replaced, not skipped).
fn run_case<S, B>(name: &str, sample: S, build: B) -> usize
where
    S: Fn(&mut Rng) -> Vec<Tensor<f64>>,
    B: Fn(&mut Graph<f64>, Vec<Tensor<f64>>, &mut Rng) -> Built,
{
    let mut done = 0usize;
    let mut seed = 0u64;
    while done < SEEDS {
        assert!(
            seed < 20 * SEEDS as u64,
            "{name}: guard rejected too many seeds"
        );
        let label = format!("{name}-{seed}");
        seed += 1;
        let mut vrng = Rng::from_label(ROOT, &label);
        let values = sample(&mut vrng);

        let eval = |vals: &[Tensor<f64>]| {
            let mut g = Graph::new();
            // The mask stream is a pure function of the label, so dropout
            // masks are identical across the rebuilds of one seed.
            let mut mrng = Rng::from_label(ROOT ^ 0x5a5a, &label);
            let built = build(&mut g, vals.to_vec(), &mut mrng);
            (g, built)
        };

        let (mut g, built) = eval(&values);
        if !built.guards.iter().all(|ok| ok(&g)) {
            continue;
        }
        g.backward(built.loss).unwrap();

        for &(vi, leaf) in &built.check {
            let ad = g.grad(leaf).expect("checked leaf has gradient").to_vec();
            for e in 0..values[vi].len() {
                let mut vp = values.clone();
                vp[vi].data_mut()[e] += H;
                let (gp, bp) = eval(&vp);
                let fp = gp.value(bp.loss).item();

                let mut vm = values.clone();
                vm[vi].data_mut()[e] -= H;
                let (gm, bm) = eval(&vm);
                let fm = gm.value(bm.loss).item();

                let fd = (fp - fm) / (2.0 * H);
                let rel = rel_err(ad[e], fd);
                assert!(
                    rel < TOL,
                    "{name} seed {} value {vi} elem {e}: autodiff {} vs fd {} (rel {rel:.2e})",
                    seed - 1,
                    ad[e],
                    fd
                );
            }
        }
        done += 1;
    }
    done
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Values in ±[0.1, 1]: bounded away from the relu/l1 kink at zero.
fn uniform_off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.uniform_range(0.1, 1.0);
            if rng.uniform() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random one-hot rows for cross-entropy targets.
fn one_hot_rows(rng: &mut Rng, rows: usize, k: usize) -> Tensor<f64> {
    let mut data = vec![0.0; rows * k];
    for r in 0..rows {
        data[r * k + rng.below(k)] = 1.0;
    }
    Tensor::new(vec![rows, k], data).unwrap()
}

/// Guard: every element of `node` at least `margin` from zero.
fn away_from_zero(node: NodeId, margin: f64) -> Guard {
    Box::new(move |g| g.value(node).data().iter().all(|v| v.abs() > margin))
}

/// Guard: in every disjoint 2×2 window (per channel) whose maximum is alive
/// (positive after an upstream relu), the top two values are separated by
/// more than `margin`, so the pooling argmax is FD-stable. Windows whose max
/// is zero are all dead — gradient and difference quotient both vanish — so
/// exact ties there are harmless.
fn pool_gap(node: NodeId, margin: f64) -> Guard {
    Box::new(move |g| {
        let t = g.value(node);
        let s = t.shape();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let d = t.data();
        for bi in 0..b {
            for oh in 0..h / 2 {
                for ow in 0..w / 2 {
                    for ch in 0..c {
                        let base = ((bi * h + oh * 2) * w + ow * 2) * c + ch;
                        let mut vals = [d[base], d[base + c], d[base + w * c], d[base + w * c + c]];
                        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if vals[0] > 0.0 && vals[0] - vals[1] <= margin {
                            return false;
                        }
                    }
                }
            }
        }
        true
    })
}

// ---- isolated op cases -------------------------------------------------------

/// dense → sigmoid → dense against an l2 target.
pub fn case_dense() -> usize {
    run_case(
        "dense",
        |rng| {
            vec![
                uniform(rng, &[3, 4], -1.0, 1.0),
                uniform(rng, &[4, 6], -1.0, 1.0),
                uniform(rng, &[6], -0.5, 0.5),
                uniform(rng, &[6, 2], -1.0, 1.0),
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[3, 2], -1.0, 1.0),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < 5))
                .collect();
            let h = g.dense(ids[0], ids[1], ids[2]).unwrap();
            let h = g.sigmoid(h);
            let y = g.dense(h, ids[3], ids[4]).unwrap();
            let loss = g.l2_sq(y, ids[5]).unwrap();
            Built {
                loss,
                check: (0..5).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

fn conv_case(name: &'static str, stride: usize, padding: Padding, xs: [usize; 4], ws: [usize; 4]) -> usize {
    run_case(
        name,
        move |rng| {
            let out_shape = {
                // Probe the output shape once with zeros.
                let mut g = Graph::<f64>::new();
                let x = g.constant(Tensor::zeros(&xs));
                let w = g.constant(Tensor::zeros(&ws));
                let b = g.constant(Tensor::zeros(&[ws[3]]));
                let y = g.conv2d(x, w, b, stride, padding).unwrap();
                g.value(y).shape().to_vec()
            };
            vec![
                uniform(rng, &xs, -1.0, 1.0),
                uniform(rng, &ws, -1.0, 1.0),
                uniform(rng, &[ws[3]], -0.5, 0.5),
                uniform(rng, &out_shape, -1.0, 1.0),
            ]
        },
        move |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < 3))
                .collect();
            let y = g.conv2d(ids[0], ids[1], ids[2], stride, padding).unwrap();
            let loss = g.l2_sq(y, ids[3]).unwrap();
            Built {
                loss,
                check: (0..3).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

pub fn case_conv2d_same_stride1() -> usize {
    conv_case("conv-s1-same", 1, Padding::Same, [2, 5, 5, 2], [2, 2, 2, 3])
}

pub fn case_conv2d_same_stride2() -> usize {
    conv_case("conv-s2-same", 2, Padding::Same, [1, 6, 6, 2], [2, 2, 2, 3])
}

pub fn case_conv2d_valid_3x3() -> usize {
    conv_case("conv-s1-valid", 1, Padding::Valid, [1, 5, 5, 1], [3, 3, 1, 2])
}

fn convt_case(name: &'static str, stride: usize, xs: [usize; 4], ws: [usize; 4]) -> usize {
    run_case(
        name,
        move |rng| {
            let out = [xs[0], xs[1] * stride, xs[2] * stride, ws[3]];
            vec![
                uniform(rng, &xs, -1.0, 1.0),
                uniform(rng, &ws, -1.0, 1.0),
                uniform(rng, &[ws[3]], -0.5, 0.5),
                uniform(rng, &out, -1.0, 1.0),
            ]
        },
        move |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < 3))
                .collect();
            let y = g.conv_transpose2d(ids[0], ids[1], ids[2], stride).unwrap();
            let loss = g.l2_sq(y, ids[3]).unwrap();
            Built {
                loss,
                check: (0..3).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

pub fn case_conv_transpose_stride2() -> usize {
    convt_case("convt-s2", 2, [1, 3, 3, 4], [4, 2, 2, 3])
}

pub fn case_conv_transpose_stride1() -> usize {
    convt_case("convt-s1", 1, [1, 4, 4, 2], [2, 2, 2, 1])
}

pub fn case_maxpool() -> usize {
    run_case(
        "maxpool",
        |rng| {
            // Off-zero values plus a deterministic fix-up that widens any
            // within-window near-tie, keeping the argmax FD-stable.
            let mut x = uniform_off_zero(rng, &[1, 4, 4, 3]);
            let (h, w, c) = (4, 4, 3);
            let d = x.data_mut();
            for oh in 0..h / 2 {
                for ow in 0..w / 2 {
                    for ch in 0..c {
                        let base = (oh * 2 * w + ow * 2) * c + ch;
                        let idx = [base, base + c, base + w * c, base + w * c + c];
                        let mut best = idx[0];
                        for &k in &idx[1..] {
                            if d[k] > d[best] {
                                best = k;
                            }
                        }
                        let second = idx
                            .iter()
                            .filter(|&&k| k != best)
                            .map(|&k| d[k])
                            .fold(f64::NEG_INFINITY, f64::max);
                        if d[best] - second < 0.05 {
                            d[best] += 0.1;
                        }
                    }
                }
            }
            vec![x, uniform(rng, &[1, 2, 2, 3], -1.0, 1.0)]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let y = g.maxpool2d(ids[0]).unwrap();
            let loss = g.l2_sq(y, ids[1]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![],
            }
        },
    )
}

pub fn case_relu() -> usize {
    run_case(
        "relu",
        |rng| {
            vec![
                uniform_off_zero(rng, &[4, 7]),
                uniform(rng, &[4, 7], -1.0, 1.0),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let y = g.relu(ids[0]);
            let loss = g.l2_sq(y, ids[1]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![],
            }
        },
    )
}

pub fn case_sigmoid() -> usize {
    run_case(
        "sigmoid",
        |rng| {
            vec![
                uniform(rng, &[4, 7], -3.0, 3.0),
                uniform(rng, &[4, 7], -1.0, 1.0),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let y = g.sigmoid(ids[0]);
            let loss = g.l2_sq(y, ids[1]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![],
            }
        },
    )
}

pub fn case_softmax_cce() -> usize {
    run_case(
        "softmax-cce",
        |rng| {
            vec![
                uniform(rng, &[4, 6], -2.0, 2.0),
                one_hot_rows(rng, 4, 6),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let p = g.softmax(ids[0]).unwrap();
            let loss = g.cce(p, ids[1]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![],
            }
        },
    )
}

pub fn case_dropout() -> usize {
    run_case(
        "dropout",
        |rng| {
            vec![
                uniform(rng, &[6, 10], -1.0, 1.0),
                uniform(rng, &[6, 10], -1.0, 1.0),
            ]
        },
        |g, vals, mrng| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let y = g.dropout(ids[0], 0.3, true, mrng).unwrap();
            let loss = g.l2_sq(y, ids[1]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![],
            }
        },
    )
}

pub fn case_concat() -> usize {
    run_case(
        "concat",
        |rng| {
            vec![
                uniform(rng, &[3, 5], -1.0, 1.0),
                uniform(rng, &[3, 4], -1.0, 1.0),
                uniform(rng, &[3, 9], -1.0, 1.0),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < 2))
                .collect();
            let c = g.concat(ids[0], ids[1]).unwrap();
            let y = g.sigmoid(c);
            let loss = g.l2_sq(y, ids[2]).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0]), (1, ids[1])],
                guards: vec![],
            }
        },
    )
}

pub fn case_add_scale_reshape_l1() -> usize {
    run_case(
        "add-scale-reshape-l1",
        |rng| {
            vec![
                uniform_off_zero(rng, &[2, 6]),
                uniform_off_zero(rng, &[2, 6]),
                uniform(rng, &[3, 4], -1.0, 1.0),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < 2))
                .collect();
            let sb = g.scale(ids[1], 1.7);
            let s = g.add(ids[0], sb).unwrap();
            let r = g.reshape(s, &[3, 4]).unwrap();
            let l1 = g.l1(r);
            let l1 = g.scale(l1, 0.5);
            let l2 = g.l2_sq(r, ids[2]).unwrap();
            let loss = g.add(l1, l2).unwrap();
            Built {
                loss,
                check: vec![(0, ids[0]), (1, ids[1])],
                // The l1 kink sits at r = a + 1.7b = 0.
                guards: vec![away_from_zero(r, 0.02)],
            }
        },
    )
}

pub fn case_fkappa_through_softmax() -> usize {
    run_case(
        "fkappa",
        |rng| vec![uniform(rng, &[1, 10], -2.0, 2.0)],
        |g, vals, _| {
            let x = {
                let mut it = vals.into_iter();
                g.leaf(it.next().unwrap(), true)
            };
            let p = g.softmax(x).unwrap();
            let fk = g.fkappa(p, 3, 0.15).unwrap();
            let loss = g.scale(fk, 2.0);
            let guard: Guard = Box::new(move |g: &Graph<f64>| {
                let d = g.value(p).data();
                let py = d[3];
                let mut others: Vec<f64> =
                    d.iter().enumerate().filter(|&(i, _)| i != 3).map(|(_, &v)| v).collect();
                others.sort_by(|a, b| b.partial_cmp(a).unwrap());
                // Stay away from both the hinge and a tie in the competing max.
                (py - others[0] + 0.15).abs() > 0.02 && others[0] - others[1] > 0.02
            });
            Built {
                loss,
                check: vec![(0, x)],
                guards: vec![guard],
            }
        },
    )
}

// ---- layer compositions --------------------------------------------------------

/// conv → sigmoid → strided conv → flatten → dense → softmax → cce,
/// gradients checked for the input and every parameter.
pub fn case_composite_classifier_smooth() -> usize {
    run_case(
        "composite-smooth",
        |rng| {
            vec![
                uniform(rng, &[1, 6, 6, 1], -1.0, 1.0),
                uniform(rng, &[2, 2, 1, 3], -1.0, 1.0),
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[2, 2, 3, 4], -1.0, 1.0),
                uniform(rng, &[4], -0.5, 0.5),
                uniform(rng, &[36, 3], -0.7, 0.7),
                uniform(rng, &[3], -0.5, 0.5),
                one_hot_rows(rng, 1, 3),
            ]
        },
        |g, vals, _| {
            let n = vals.len();
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < n - 1))
                .collect();
            let h = g.conv2d(ids[0], ids[1], ids[2], 1, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.conv2d(h, ids[3], ids[4], 2, Padding::Same).unwrap();
            let h = g.reshape(h, &[1, 36]).unwrap();
            let h = g.dense(h, ids[5], ids[6]).unwrap();
            let p = g.softmax(h).unwrap();
            let loss = g.cce(p, ids[7]).unwrap();
            Built {
                loss,
                check: (0..7).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

/// conv → relu → maxpool → flatten → dense → softmax → cce. Seeds whose
/// pre-activations sit near the relu kink or whose pool windows nearly tie
/// are skipped; h=1e-3 moves pre-activations by ≲3e-3 here.
pub fn case_composite_classifier_relu_pool() -> usize {
    run_case(
        "composite-relu-pool",
        |rng| {
            vec![
                uniform(rng, &[1, 6, 6, 2], -1.0, 1.0),
                uniform(rng, &[2, 2, 2, 3], -1.0, 1.0),
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[27, 4], -0.7, 0.7),
                uniform(rng, &[4], -0.5, 0.5),
                one_hot_rows(rng, 1, 4),
            ]
        },
        |g, vals, _| {
            let n = vals.len();
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i < n - 1))
                .collect();
            let pre = g.conv2d(ids[0], ids[1], ids[2], 1, Padding::Same).unwrap();
            let h = g.relu(pre);
            let pooled = g.maxpool2d(h).unwrap();
            let flat = g.reshape(pooled, &[1, 27]).unwrap();
            let logits = g.dense(flat, ids[3], ids[4]).unwrap();
            let p = g.softmax(logits).unwrap();
            let loss = g.cce(p, ids[5]).unwrap();
            Built {
                loss,
                check: (0..5).map(|i| (i, ids[i])).collect(),
                guards: vec![away_from_zero(pre, 0.005), pool_gap(h, 0.02)],
            }
        },
    )
}

/// Strided conv encoder into a linear bottleneck, dense + transposed-conv
/// decoder, reconstruction loss against the *same* input leaf — both the
/// network path and the target path contribute to the input's gradient.
pub fn case_composite_autoencoder() -> usize {
    run_case(
        "composite-ae",
        |rng| {
            vec![
                uniform(rng, &[1, 4, 4, 1], 0.1, 0.9),
                uniform(rng, &[2, 2, 1, 3], -1.0, 1.0),
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[12, 4], -0.7, 0.7),
                uniform(rng, &[4], -0.5, 0.5),
                uniform(rng, &[4, 12], -0.7, 0.7),
                uniform(rng, &[12], -0.5, 0.5),
                uniform(rng, &[3, 2, 2, 1], -1.0, 1.0),
                uniform(rng, &[1], -0.5, 0.5),
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals.into_iter().map(|v| g.leaf(v, true)).collect();
            let h = g.conv2d(ids[0], ids[1], ids[2], 2, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 12]).unwrap();
            let z = g.dense(h, ids[3], ids[4]).unwrap();
            let h = g.dense(z, ids[5], ids[6]).unwrap();
            let h = g.reshape(h, &[1, 2, 2, 3]).unwrap();
            let h = g.conv_transpose2d(h, ids[7], ids[8], 2).unwrap();
            let out = g.sigmoid(h);
            let loss = g.l2_sq(ids[0], out).unwrap();
            Built {
                loss,
                check: (0..9).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

// ---- full objective compositions ---------------------------------------------------
//
// The two end-to-end objectives the engine optimizes, rebuilt here as small
// f64 miniatures: every loss term is present with a distinct weight, and the
// terms share subgraphs exactly as in the real models (the perturbed image
// feeds classifier, reconstruction, and latent terms; the encoder output
// feeds both the decoder and the prototype distance).

/// c·hinge(D(x+δ)) + β·‖δ‖₁ + ‖δ‖₂² + γ·‖x_cf − AE(x_cf)‖₂² + θ·‖z − proto‖₂²,
/// differentiated with respect to the perturbation δ. The classifier and
/// autoencoder weights are fixed leaves, as they are during the search.
pub fn case_composite_perturbation_objective() -> usize {
    run_case(
        "composite-perturbation",
        |rng| {
            vec![
                uniform_off_zero(rng, &[1, 4, 4, 1]), // δ, off the l1 kink
                uniform(rng, &[1, 4, 4, 1], 0.1, 0.9), // x
                uniform(rng, &[2, 2, 1, 2], -1.0, 1.0), // D conv
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[32, 3], -0.7, 0.7), // D dense
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[2, 2, 1, 2], -1.0, 1.0), // AE encoder conv
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[8, 4], -0.7, 0.7), // AE bottleneck
                uniform(rng, &[4], -0.5, 0.5),
                uniform(rng, &[4, 16], -0.7, 0.7), // AE decoder dense
                uniform(rng, &[16], -0.5, 0.5),
                uniform(rng, &[4, 2, 2, 1], -1.0, 1.0), // AE decoder transpose
                uniform(rng, &[1], -0.5, 0.5),
                uniform(rng, &[1, 4], -1.0, 1.0), // latent prototype
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, i == 0))
                .collect();
            let x_cf = g.add(ids[1], ids[0]).unwrap();

            let h = g.conv2d(x_cf, ids[2], ids[3], 1, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 32]).unwrap();
            let logits = g.dense(h, ids[4], ids[5]).unwrap();
            let p = g.softmax(logits).unwrap();
            let fk = g.fkappa(p, 0, 0.15).unwrap();
            let mut loss = g.scale(fk, 1.3);

            let l1 = g.l1(ids[0]);
            let l1 = g.scale(l1, 0.1);
            loss = g.add(loss, l1).unwrap();
            let zeros = g.constant(Tensor::zeros(&[1, 4, 4, 1]));
            let d_l2 = g.l2_sq(ids[0], zeros).unwrap();
            loss = g.add(loss, d_l2).unwrap();

            let h = g.conv2d(x_cf, ids[6], ids[7], 2, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 8]).unwrap();
            let z = g.dense(h, ids[8], ids[9]).unwrap();
            let h = g.dense(z, ids[10], ids[11]).unwrap();
            let h = g.reshape(h, &[1, 2, 2, 4]).unwrap();
            let h = g.conv_transpose2d(h, ids[12], ids[13], 2).unwrap();
            let recon = g.sigmoid(h);
            let r = g.l2_sq(x_cf, recon).unwrap();
            let r = g.scale(r, 0.7);
            loss = g.add(loss, r).unwrap();
            let pt = g.l2_sq(z, ids[14]).unwrap();
            let pt = g.scale(pt, 0.9);
            loss = g.add(loss, pt).unwrap();

            let guard: Guard = Box::new(move |g: &Graph<f64>| {
                let d = g.value(p).data();
                let py = d[0];
                let mut others: Vec<f64> = d[1..].to_vec();
                others.sort_by(|a, b| b.partial_cmp(a).unwrap());
                (py - others[0] + 0.15).abs() > 0.02 && others[0] - others[1] > 0.02
            });
            Built {
                loss,
                check: vec![(0, ids[0])],
                guards: vec![guard],
            }
        },
    )
}

/// α·‖x − x_cf‖₂² + CE(D(x_cf), target) + γ·‖x_cf − AE(x_cf)‖₂² where
/// x_cf = G(x, target) and the class one-hot is concatenated into the
/// generator bottleneck. Gradients are checked for every generator
/// parameter while classifier and autoencoder stay fixed. With the γ term's
/// weight at zero the same graph is the plain amortized objective; the γ > 0
/// form checked here strictly contains it.
pub fn case_composite_generator_objective() -> usize {
    run_case(
        "composite-generator",
        |rng| {
            vec![
                uniform(rng, &[1, 4, 4, 1], 0.1, 0.9), // x
                uniform(rng, &[2, 2, 1, 2], -1.0, 1.0), // G encoder conv
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[8, 3], -0.7, 0.7), // G bottleneck
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[6, 16], -0.7, 0.7), // G decoder dense (z ⊕ one-hot)
                uniform(rng, &[16], -0.5, 0.5),
                uniform(rng, &[4, 2, 2, 1], -1.0, 1.0), // G decoder transpose
                uniform(rng, &[1], -0.5, 0.5),
                uniform(rng, &[2, 2, 1, 2], -1.0, 1.0), // D conv
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[32, 3], -0.7, 0.7), // D dense
                uniform(rng, &[3], -0.5, 0.5),
                uniform(rng, &[2, 2, 1, 2], -1.0, 1.0), // AE encoder conv
                uniform(rng, &[2], -0.5, 0.5),
                uniform(rng, &[8, 4], -0.7, 0.7), // AE bottleneck
                uniform(rng, &[4], -0.5, 0.5),
                uniform(rng, &[4, 16], -0.7, 0.7), // AE decoder dense
                uniform(rng, &[16], -0.5, 0.5),
                uniform(rng, &[4, 2, 2, 1], -1.0, 1.0), // AE decoder transpose
                uniform(rng, &[1], -0.5, 0.5),
                one_hot_rows(rng, 1, 3), // requested class
            ]
        },
        |g, vals, _| {
            let ids: Vec<NodeId> = vals
                .into_iter()
                .enumerate()
                .map(|(i, v)| g.leaf(v, (1..=8).contains(&i)))
                .collect();

            let h = g.conv2d(ids[0], ids[1], ids[2], 2, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 8]).unwrap();
            let z = g.dense(h, ids[3], ids[4]).unwrap();
            let zt = g.concat(z, ids[21]).unwrap();
            let h = g.dense(zt, ids[5], ids[6]).unwrap();
            let h = g.reshape(h, &[1, 2, 2, 4]).unwrap();
            let h = g.conv_transpose2d(h, ids[7], ids[8], 2).unwrap();
            let x_cf = g.sigmoid(h);

            let prox = g.l2_sq(ids[0], x_cf).unwrap();
            let mut loss = g.scale(prox, 10.0);

            let h = g.conv2d(x_cf, ids[9], ids[10], 1, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 32]).unwrap();
            let logits = g.dense(h, ids[11], ids[12]).unwrap();
            let probs = g.softmax(logits).unwrap();
            let ce = g.cce(probs, ids[21]).unwrap();
            loss = g.add(loss, ce).unwrap();

            let h = g.conv2d(x_cf, ids[13], ids[14], 2, Padding::Same).unwrap();
            let h = g.sigmoid(h);
            let h = g.reshape(h, &[1, 8]).unwrap();
            let za = g.dense(h, ids[15], ids[16]).unwrap();
            let h = g.dense(za, ids[17], ids[18]).unwrap();
            let h = g.reshape(h, &[1, 2, 2, 4]).unwrap();
            let h = g.conv_transpose2d(h, ids[19], ids[20], 2).unwrap();
            let recon = g.sigmoid(h);
            let m = g.l2_sq(x_cf, recon).unwrap();
            let m = g.scale(m, 10.0);
            loss = g.add(loss, m).unwrap();

            Built {
                loss,
                check: (1..=8).map(|i| (i, ids[i])).collect(),
                guards: vec![],
            }
        },
    )
}

/// Every case in the sweep: each layer in isolation, the layer compositions,
/// and the full optimization objectives.
pub const CASES: &[(&str, fn() -> usize)] = &[
    ("dense", case_dense),
    ("conv2d-same-stride1", case_conv2d_same_stride1),
    ("conv2d-same-stride2", case_conv2d_same_stride2),
    ("conv2d-valid-3x3", case_conv2d_valid_3x3),
    ("conv-transpose-stride2", case_conv_transpose_stride2),
    ("conv-transpose-stride1", case_conv_transpose_stride1),
    ("maxpool", case_maxpool),
    ("relu", case_relu),
    ("sigmoid", case_sigmoid),
    ("softmax-cce", case_softmax_cce),
    ("dropout", case_dropout),
    ("concat", case_concat),
    ("add-scale-reshape-l1", case_add_scale_reshape_l1),
    ("fkappa", case_fkappa_through_softmax),
    ("composite-classifier-smooth", case_composite_classifier_smooth),
    ("composite-classifier-relu-pool", case_composite_classifier_relu_pool),
    ("composite-autoencoder", case_composite_autoencoder),
    ("composite-perturbation-objective", case_composite_perturbation_objective),
    ("composite-generator-objective", case_composite_generator_objective),
];

/// Run the whole sweep, returning (case name, seeds checked) per case.
/// Panics on the first gradient that disagrees with the difference quotient.
pub fn run_all() -> Vec<(&'static str, usize)> {
    CASES.iter().map(|&(name, case)| (name, case())).collect()
}
