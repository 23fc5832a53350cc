//! Interpretability metrics and report aggregation for counterfactual runs.
//!
//! Two per-instance metrics judge a counterfactual `x_cf` against three
//! autoencoders: one trained on the target class (`ae_ycf`), one on the
//! original class (`ae_y`), and one on all classes (`ae_all`).
//!
//! * `im1` — ratio of reconstruction errors under the target-class and
//!   original-class autoencoders; lower means `x_cf` sits closer to the
//!   target class's manifold than to the original's.
//! * `im2` — disagreement between the target-class and all-class
//!   reconstructions, normalized by the L1 norm of `x_cf`; lower means the
//!   counterfactual is drawn from a region both models describe the same
//!   way, i.e. it looks like real data.
//!
//! Aggregation reports per-method means with interquartile ranges, pairwise
//! lower-probability matrices, and fixed-bin histograms, all rendered
//! deterministically so identical inputs produce byte-identical reports.

use std::collections::BTreeMap;

use cfx_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::models::Autoencoder;
use crate::record::Method;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    /// Denominator guard of both metric ratios.
    pub epsilon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { epsilon: 1e-8 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CoreError::Config(format!(
                "epsilon must be a positive real, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One evaluated counterfactual: identity, metric values, and latency.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub instance_id: usize,
    pub method: Method,
    pub y: u8,
    pub y_cf: u8,
    pub im1: f64,
    pub im2: f64,
    pub seconds: f64,
}

impl EvalRecord {
    pub fn new(
        instance_id: usize,
        method: Method,
        y: u8,
        y_cf: u8,
        im1: f64,
        im2: f64,
        seconds: f64,
    ) -> Result<EvalRecord> {
        for (name, v) in [("im1", im1), ("im2", im2), ("seconds", seconds)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Contract(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(EvalRecord {
            instance_id,
            method,
            y,
            y_cf,
            im1,
            im2,
            seconds,
        })
    }
}

fn sq_err(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            // Widen before subtracting: the f64 difference of two f32 values
            // is exact, while the f32 difference would round first.
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

fn l1_norm(a: &[f32]) -> f64 {
    a.iter().map(|v| v.abs() as f64).sum()
}

/// `im1` on raw pixel vectors: reconstruction-error ratio
/// `‖x_cf − r_ycf‖₂² / (‖x_cf − r_y‖₂² + ε)`.
pub fn im1_from_reconstructions(
    x_cf: &[f32],
    recon_ycf: &[f32],
    recon_y: &[f32],
    cfg: &MetricsConfig,
) -> Result<f64> {
    cfg.validate()?;
    if x_cf.len() != recon_ycf.len() || x_cf.len() != recon_y.len() {
        return Err(CoreError::Contract(format!(
            "im1 length mismatch: x_cf {}, recon_ycf {}, recon_y {}",
            x_cf.len(),
            recon_ycf.len(),
            recon_y.len()
        )));
    }
    Ok(sq_err(x_cf, recon_ycf) / (sq_err(x_cf, recon_y) + cfg.epsilon))
}

/// `im2` on raw pixel vectors: reconstruction disagreement
/// `‖r_ycf − r_all‖₂² / (‖x_cf‖₁ + ε)`.
pub fn im2_from_reconstructions(
    x_cf: &[f32],
    recon_ycf: &[f32],
    recon_all: &[f32],
    cfg: &MetricsConfig,
) -> Result<f64> {
    cfg.validate()?;
    if x_cf.len() != recon_ycf.len() || x_cf.len() != recon_all.len() {
        return Err(CoreError::Contract(format!(
            "im2 length mismatch: x_cf {}, recon_ycf {}, recon_all {}",
            x_cf.len(),
            recon_ycf.len(),
            recon_all.len()
        )));
    }
    Ok(sq_err(recon_ycf, recon_all) / (l1_norm(x_cf) + cfg.epsilon))
}

/// `im1` through real autoencoders (target-class and original-class).
pub fn im1(
    ae_ycf: &Autoencoder,
    ae_y: &Autoencoder,
    x_cf: &Tensor<f32>,
    cfg: &MetricsConfig,
) -> Result<f64> {
    let r_ycf = ae_ycf.reconstruct(x_cf)?;
    let r_y = ae_y.reconstruct(x_cf)?;
    im1_from_reconstructions(x_cf.data(), r_ycf.data(), r_y.data(), cfg)
}

/// `im2` through real autoencoders (target-class and all-class).
pub fn im2(
    ae_ycf: &Autoencoder,
    ae_all: &Autoencoder,
    x_cf: &Tensor<f32>,
    cfg: &MetricsConfig,
) -> Result<f64> {
    let r_ycf = ae_ycf.reconstruct(x_cf)?;
    let r_all = ae_all.reconstruct(x_cf)?;
    im2_from_reconstructions(x_cf.data(), r_ycf.data(), r_all.data(), cfg)
}

/// Quantile of a sorted slice under linear interpolation: at fractional
/// position `q·(n−1)`, interpolate between the two neighboring order
/// statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 || i + 1 == n {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Interquartile range Q3 − Q1 under linear-interpolation quantiles.
pub fn iqr(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::Contract(
            "iqr of an empty value list".to_string(),
        ));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::Contract(format!(
            "iqr input contains a non-finite value {bad}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Probability that method A scores strictly lower than method B on the same
/// instances, counting ties as half. Inputs are `(instance_id, value)` pairs
/// and must list identical ids in identical order.
///
/// Antisymmetry `P(A,B) + P(B,A) == 1` holds exactly: the side with more
/// wins performs the division, the other side is its complement, which is
/// exact for values in [1/2, 1].
pub fn paired_lower_prob(a: &[(usize, f64)], b: &[(usize, f64)]) -> Result<f64> {
    if a.is_empty() {
        return Err(CoreError::Contract(
            "paired comparison of empty value lists".to_string(),
        ));
    }
    if a.len() != b.len() {
        return Err(CoreError::Contract(format!(
            "paired comparison over {} vs {} instances",
            a.len(),
            b.len()
        )));
    }
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut losses = 0u64;
    for (&(ia, va), &(ib, vb)) in a.iter().zip(b) {
        if ia != ib {
            return Err(CoreError::Contract(format!(
                "paired comparison misaligned: instance {ia} vs {ib}"
            )));
        }
        if va < vb {
            wins += 1;
        } else if va > vb {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n2 = 2 * (wins + ties + losses);
    Ok(if wins >= losses {
        (2 * wins + ties) as f64 / n2 as f64
    } else {
        1.0 - (2 * losses + ties) as f64 / n2 as f64
    })
}

/// Per-method aggregates; `im2` values are stored raw and scaled by ten only
/// when a table is rendered.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    pub mean_im1: f64,
    pub iqr_im1: f64,
    pub mean_im2: f64,
    pub iqr_im2: f64,
    pub mean_seconds: f64,
    pub iqr_seconds: f64,
}

/// Matrix of `P(row-method metric < column-method metric)`; `None` on the
/// diagonal.
#[derive(Debug, Clone)]
pub struct PairwiseTable {
    pub methods: Vec<Method>,
    pub probs: Vec<Vec<Option<f64>>>,
}

impl PairwiseTable {
    pub fn get(&self, row: Method, col: Method) -> Option<f64> {
        let r = self.methods.iter().position(|&m| m == row)?;
        let c = self.methods.iter().position(|&m| m == col)?;
        self.probs[r][c]
    }

    /// Aligned plain-text matrix with `-` on the diagonal.
    pub fn text(&self, title: &str) -> String {
        let mut out = String::new();
        out.push_str(title);
        out.push('\n');
        out.push_str(&format!("{:<10}", ""));
        for m in &self.methods {
            out.push_str(&format!("{:>10}", m.name()));
        }
        out.push('\n');
        for (r, row) in self.probs.iter().enumerate() {
            out.push_str(&format!("{:<10}", self.methods[r].name()));
            for cell in row {
                match cell {
                    Some(p) => out.push_str(&format!("{:>10.4}", p)),
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }

    /// CSV with header row/column of method names and `-` on the diagonal.
    pub fn csv(&self) -> String {
        let mut out = String::from("method");
        for m in &self.methods {
            out.push(',');
            out.push_str(m.name());
        }
        out.push('\n');
        for (r, row) in self.probs.iter().enumerate() {
            out.push_str(self.methods[r].name());
            for cell in row {
                out.push(',');
                match cell {
                    Some(p) => out.push_str(&format!("{p:.4}")),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub rows: Vec<MethodSummary>,
    pub pairwise_im1: PairwiseTable,
    pub pairwise_im2: PairwiseTable,
}

/// Group records per method in canonical order, with instance ids sorted and
/// unique within each method.
fn group_by_method(records: &[EvalRecord]) -> Result<Vec<(Method, Vec<&EvalRecord>)>> {
    if records.is_empty() {
        return Err(CoreError::Contract(
            "summary of an empty record list".to_string(),
        ));
    }
    let mut groups = Vec::new();
    for method in Method::all() {
        let mut by_id: BTreeMap<usize, &EvalRecord> = BTreeMap::new();
        for r in records.iter().filter(|r| r.method == method) {
            if by_id.insert(r.instance_id, r).is_some() {
                return Err(CoreError::Contract(format!(
                    "method {method} evaluated instance {} twice",
                    r.instance_id
                )));
            }
        }
        if !by_id.is_empty() {
            groups.push((method, by_id.into_values().collect()));
        }
    }
    Ok(groups)
}

fn pairwise_table(
    groups: &[(Method, Vec<&EvalRecord>)],
    value: impl Fn(&EvalRecord) -> f64,
) -> Result<PairwiseTable> {
    let methods: Vec<Method> = groups.iter().map(|(m, _)| *m).collect();
    let columns: Vec<Vec<(usize, f64)>> = groups
        .iter()
        .map(|(_, rs)| rs.iter().map(|r| (r.instance_id, value(r))).collect())
        .collect();
    let mut probs = vec![vec![None; methods.len()]; methods.len()];
    for r in 0..methods.len() {
        for c in 0..methods.len() {
            if r != c {
                probs[r][c] = Some(paired_lower_prob(&columns[r], &columns[c])?);
            }
        }
    }
    Ok(PairwiseTable { methods, probs })
}

/// Aggregate evaluated records into per-method statistics and pairwise
/// lower-probability matrices. Every method present must cover the same
/// instance ids.
pub fn summarize(records: &[EvalRecord]) -> Result<Summary> {
    let groups = group_by_method(records)?;
    let mut rows = Vec::with_capacity(groups.len());
    for (method, rs) in &groups {
        let im1s: Vec<f64> = rs.iter().map(|r| r.im1).collect();
        let im2s: Vec<f64> = rs.iter().map(|r| r.im2).collect();
        let secs: Vec<f64> = rs.iter().map(|r| r.seconds).collect();
        rows.push(MethodSummary {
            method: *method,
            count: rs.len(),
            mean_im1: mean(&im1s),
            iqr_im1: iqr(&im1s)?,
            mean_im2: mean(&im2s),
            iqr_im2: iqr(&im2s)?,
            mean_seconds: mean(&secs),
            iqr_seconds: iqr(&secs)?,
        });
    }
    Ok(Summary {
        rows,
        pairwise_im1: pairwise_table(&groups, |r| r.im1)?,
        pairwise_im2: pairwise_table(&groups, |r| r.im2)?,
    })
}

impl Summary {
    /// Aligned plain-text table; the IM2 column is rendered as raw × 10.
    pub fn table_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10}{:>7}{:>10}{:>10}{:>13}{:>12}{:>12}{:>12}\n",
            "method", "n", "IM1", "IM1 IQR", "IM2 (x10)", "IM2 IQR", "s/it", "s/it IQR"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10}{:>7}{:>10.4}{:>10.4}{:>13.4}{:>12.4}{:>12.4}{:>12.4}\n",
                r.method.name(),
                r.count,
                r.mean_im1,
                r.iqr_im1,
                r.mean_im2 * 10.0,
                r.iqr_im2 * 10.0,
                r.mean_seconds,
                r.iqr_seconds
            ));
        }
        out
    }

    /// CSV twin of [`Summary::table_text`], same column semantics.
    pub fn table_csv(&self) -> String {
        let mut out =
            String::from("method,n,im1_mean,im1_iqr,im2x10_mean,im2x10_iqr,seconds_mean,seconds_iqr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.method.name(),
                r.count,
                r.mean_im1,
                r.iqr_im1,
                r.mean_im2 * 10.0,
                r.iqr_im2 * 10.0,
                r.mean_seconds,
                r.iqr_seconds
            ));
        }
        out
    }

    /// Full human-readable report: summary table plus both matrices.
    pub fn report_text(&self) -> String {
        let mut out = self.table_text();
        out.push('\n');
        out.push_str(&self.pairwise_im1.text("P(row IM1 < column IM1)"));
        out.push('\n');
        out.push_str(&self.pairwise_im2.text("P(row IM2 < column IM2)"));
        out
    }
}

/// Per-record CSV, rows sorted by method (canonical order) then instance id.
pub fn records_csv(records: &[EvalRecord]) -> Result<String> {
    let groups = group_by_method(records)?;
    let mut out = String::from("instance_id,method,y,y_cf,im1,im2,seconds\n");
    for (method, rs) in groups {
        for r in rs {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{:.9},{:.6}\n",
                r.instance_id, method, r.y, r.y_cf, r.im1, r.im2, r.seconds
            ));
        }
    }
    Ok(out)
}

/// Parse a CSV produced by [`records_csv`] back into records.
pub fn parse_records_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == "instance_id,method,y,y_cf,im1,im2,seconds" => {}
        other => {
            return Err(CoreError::Contract(format!(
                "unexpected metrics CSV header {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let bad = |what: &str| {
            CoreError::Contract(format!("metrics CSV line {lineno}: {what} in {line:?}"))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        records.push(EvalRecord::new(
            fields[0].parse().map_err(|_| bad("bad instance id"))?,
            Method::parse(fields[1])?,
            fields[2].parse().map_err(|_| bad("bad y"))?,
            fields[3].parse().map_err(|_| bad("bad y_cf"))?,
            fields[4].parse().map_err(|_| bad("bad im1"))?,
            fields[5].parse().map_err(|_| bad("bad im2"))?,
            fields[6].parse().map_err(|_| bad("bad seconds"))?,
        )?);
    }
    Ok(records)
}

pub const HISTOGRAM_BINS: usize = 64;

/// Histogram CSV: for each metric, 64 uniform bins over the pooled range of
/// all methods (so distributions are directly comparable), one row per
/// method and bin: `method,metric,bin_left,bin_right,count`. A degenerate
/// pooled range collapses every bin to the single value, all counts in bin 0.
pub fn histogram_csv(records: &[EvalRecord]) -> Result<String> {
    let groups = group_by_method(records)?;
    let mut out = String::from("method,metric,bin_left,bin_right,count\n");
    let metrics: [(&str, fn(&EvalRecord) -> f64); 3] = [
        ("im1", |r| r.im1),
        ("im2", |r| r.im2),
        ("seconds", |r| r.seconds),
    ];
    for (metric, value) in metrics {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, rs) in &groups {
            for r in rs {
                lo = lo.min(value(r));
                hi = hi.max(value(r));
            }
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for (method, rs) in &groups {
            let mut counts = [0usize; HISTOGRAM_BINS];
            for r in rs {
                let idx = if width > 0.0 {
                    (((value(r) - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
                } else {
                    0
                };
                counts[idx] += 1;
            }
            for (b, count) in counts.iter().enumerate() {
                let (left, right) = if width > 0.0 {
                    (lo + b as f64 * width, lo + (b + 1) as f64 * width)
                } else {
                    (lo, hi)
                };
                out.push_str(&format!(
                    "{},{},{:.9},{:.9},{}\n",
                    method.name(),
                    metric,
                    left,
                    right,
                    count
                ));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cfx_tensor::Rng;
    use proptest::prelude::*;

    fn cfg() -> MetricsConfig {
        MetricsConfig::default()
    }

    #[test]
    fn im1_hand_arithmetic() {
        // Numerator error 0.5, denominator error 1.0.
        let x = [0.0f32, 0.0];
        let r_ycf = [0.5f32, 0.5]; // sq err 0.25 + 0.25 = 0.5
        let r_y = [1.0f32, 0.0]; // sq err 1.0
        let v = im1_from_reconstructions(&x, &r_ycf, &r_y, &cfg()).unwrap();
        assert!((v - 0.5).abs() < 1e-7, "{v}");
    }

    #[test]
    fn im1_identical_autoencoders_score_one_and_perfect_reconstruction_zero() {
        let ae = Autoencoder::init(3);
        let mut rng = Rng::from_seed(4);
        let x = Tensor::uniform(&[1, 28, 28, 1], 0.0, 1.0, &mut rng);
        let v = im1(&ae, &ae, &x, &cfg()).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "same checkpoint on both sides: {v}");

        let x = [0.3f32, 0.7];
        let v = im1_from_reconstructions(&x, &x, &[0.0, 0.0], &cfg()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn im2_hand_arithmetic_and_identity() {
        // Reconstructions differing by 0.1 on 784 pixels over ‖x‖₁ = 100.
        let n = 784;
        let x = vec![100.0f32 / n as f32; n];
        let r_ycf = vec![0.2f32; n];
        let r_all = vec![0.1f32; n];
        let v = im2_from_reconstructions(&x, &r_ycf, &r_all, &cfg()).unwrap();
        assert!((v - 0.0784).abs() < 1e-6, "{v}");

        let same = im2_from_reconstructions(&x, &r_ycf, &r_ycf, &cfg()).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn im2_decreases_as_the_input_norm_grows() {
        let r_ycf = [0.5f32, 0.1];
        let r_all = [0.1f32, 0.4];
        let small = im2_from_reconstructions(&[0.1, 0.1], &r_ycf, &r_all, &cfg()).unwrap();
        let large = im2_from_reconstructions(&[0.9, 0.9], &r_ycf, &r_all, &cfg()).unwrap();
        assert!(large < small);
    }

    #[test]
    fn iqr_pinned_quantile_convention() {
        assert_eq!(iqr(&[5.0; 9]).unwrap(), 0.0);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.5);
        assert_eq!(iqr(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 1.5, "order-free");
        assert!(iqr(&[]).is_err());
        assert!(iqr(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn paired_lower_prob_examples() {
        let ids = |vals: &[f64]| -> Vec<(usize, f64)> {
            vals.iter().copied().enumerate().collect()
        };
        let a = ids(&[1.0, 1.0]);
        let b = ids(&[2.0, 2.0]);
        assert_eq!(paired_lower_prob(&a, &b).unwrap(), 1.0);
        assert_eq!(paired_lower_prob(&b, &a).unwrap(), 0.0);
        assert_eq!(paired_lower_prob(&a, &a).unwrap(), 0.5);

        let misaligned = vec![(7usize, 1.0), (9, 2.0)];
        assert!(paired_lower_prob(&a, &misaligned).is_err());
        assert!(paired_lower_prob(&a, &ids(&[1.0])).is_err());
        assert!(paired_lower_prob(&[], &[]).is_err());
    }

    #[test]
    fn summary_of_single_records_is_exact() {
        let records = vec![
            EvalRecord::new(3, Method::CfProto, 1, 2, 0.9, 0.12, 10.0).unwrap(),
            EvalRecord::new(3, Method::Dgcex, 1, 2, 0.8, 0.11, 0.01).unwrap(),
        ];
        let s = summarize(&records).unwrap();
        assert_eq!(s.rows.len(), 2);
        let cf = &s.rows[0];
        assert_eq!(cf.method, Method::CfProto);
        assert_eq!((cf.count, cf.mean_im1, cf.iqr_im1), (1, 0.9, 0.0));
        assert_eq!(s.pairwise_im1.get(Method::Dgcex, Method::CfProto), Some(1.0));
        assert_eq!(s.pairwise_im1.get(Method::CfProto, Method::CfProto), None);

        // IM2 column rendered as raw × 10.
        assert!(s.table_text().contains("1.2000"), "{}", s.table_text());
        assert!(s.table_csv().contains("1.200000"));
        // Diagonal rendered as "-".
        assert!(s.pairwise_im1.text("t").contains('-'));
        assert!(s.pairwise_im1.csv().contains(",-"));
    }

    #[test]
    fn reports_are_deterministic_and_order_free() {
        let mut rng = Rng::from_seed(9);
        let mut records = Vec::new();
        for method in Method::all() {
            for id in 0..20usize {
                records.push(
                    EvalRecord::new(
                        id,
                        method,
                        3,
                        5,
                        rng.uniform(),
                        rng.uniform(),
                        rng.uniform(),
                    )
                    .unwrap(),
                );
            }
        }
        let mut shuffled = records.clone();
        // Reverse is a permutation: outputs must not depend on record order.
        shuffled.reverse();
        assert_eq!(
            summarize(&records).unwrap().report_text(),
            summarize(&shuffled).unwrap().report_text()
        );
        assert_eq!(
            records_csv(&records).unwrap(),
            records_csv(&shuffled).unwrap()
        );
        assert_eq!(
            histogram_csv(&records).unwrap(),
            histogram_csv(&shuffled).unwrap()
        );
    }

    #[test]
    fn metrics_csv_round_trips_within_precision() {
        let records = vec![
            EvalRecord::new(4, Method::CfProto, 1, 2, 0.912345678, 0.0123456789, 11.5).unwrap(),
            EvalRecord::new(9, Method::DaDgcex, 3, 5, 1.25, 0.5, 0.004).unwrap(),
        ];
        let csv = records_csv(&records).unwrap();
        let parsed = parse_records_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 2);
        for (p, r) in parsed.iter().zip(&records) {
            assert_eq!((p.instance_id, p.method, p.y, p.y_cf), (r.instance_id, r.method, r.y, r.y_cf));
            assert!((p.im1 - r.im1).abs() < 1e-9);
            assert!((p.im2 - r.im2).abs() < 1e-9);
            assert!((p.seconds - r.seconds).abs() < 1e-6);
        }

        assert!(parse_records_csv("wrong header\n").is_err());
        assert!(parse_records_csv(
            "instance_id,method,y,y_cf,im1,im2,seconds\n1,cfproto,0,1,0.5\n"
        )
        .is_err());
    }

    #[test]
    fn histogram_counts_cover_every_record() {
        let mut rng = Rng::from_seed(10);
        let mut records = Vec::new();
        for id in 0..50usize {
            records.push(
                EvalRecord::new(id, Method::Dgcex, 0, 1, rng.uniform(), 0.5, 0.25).unwrap(),
            );
        }
        let csv = histogram_csv(&records).unwrap();
        for metric in ["im1", "im2", "seconds"] {
            let total: usize = csv
                .lines()
                .skip(1)
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    if f[1] == metric {
                        f[4].parse::<usize>().unwrap()
                    } else {
                        0
                    }
                })
                .sum();
            assert_eq!(total, 50, "{metric} histogram must count every record");
        }
        // im2 and seconds are constant: degenerate range, all mass in bin 0.
        let rows: Vec<&str> = csv.lines().filter(|l| l.contains(",im2,")).collect();
        assert_eq!(rows.len(), HISTOGRAM_BINS);
        assert!(rows[0].ends_with(",50"));
    }

    #[test]
    fn protocol_violations_are_rejected() {
        let r = EvalRecord::new(0, Method::Dgcex, 0, 1, 0.5, 0.5, 0.1).unwrap();
        let twice = vec![r.clone(), r.clone()];
        assert!(summarize(&twice).is_err(), "duplicate instance id");

        let disjoint = vec![
            r.clone(),
            EvalRecord::new(1, Method::DaDgcex, 0, 1, 0.5, 0.5, 0.1).unwrap(),
        ];
        assert!(summarize(&disjoint).is_err(), "misaligned instance sets");

        assert!(EvalRecord::new(0, Method::Dgcex, 0, 1, -0.1, 0.5, 0.1).is_err());
        assert!(EvalRecord::new(0, Method::Dgcex, 0, 1, 0.5, f64::NAN, 0.1).is_err());
        assert!(summarize(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        /// Antisymmetry is exact, including ties (values drawn from a coarse
        /// grid to force them).
        #[test]
        fn paired_lower_prob_antisymmetry_is_exact(
            pairs in prop::collection::vec((0u8..4, 0u8..4), 1..40)
        ) {
            let a: Vec<(usize, f64)> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(x, _))| (i, x as f64))
                .collect();
            let b: Vec<(usize, f64)> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(_, y))| (i, y as f64))
                .collect();
            let p = paired_lower_prob(&a, &b).unwrap();
            let q = paired_lower_prob(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p + q, 1.0);
        }

        /// IQR is translation-invariant and non-negative.
        #[test]
        fn iqr_translation_invariance(
            values in prop::collection::vec(-100.0f64..100.0, 1..50),
            shift in -50.0f64..50.0,
        ) {
            let base = iqr(&values).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let moved = iqr(&shifted).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - moved).abs() < 1e-9, "{} vs {}", base, moved);
        }

        /// Both metrics stay non-negative and finite on arbitrary inputs.
        #[test]
        fn metrics_are_nonnegative_and_finite(
            x in prop::collection::vec(-10.0f32..10.0, 4),
            r1 in prop::collection::vec(-10.0f32..10.0, 4),
            r2 in prop::collection::vec(-10.0f32..10.0, 4),
        ) {
            let m1 = im1_from_reconstructions(&x, &r1, &r2, &cfg()).unwrap();
            let m2 = im2_from_reconstructions(&x, &r1, &r2, &cfg()).unwrap();
            prop_assert!(m1 >= 0.0 && m1.is_finite());
            prop_assert!(m2 >= 0.0 && m2.is_finite());
        }
    }
}
