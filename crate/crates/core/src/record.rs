//! Counterfactual result records and the line-delimited result log.
//!
//! An explanation run produces one [`CounterfactualResult`] per instance. The
//! pixel data is saved to image files by the pipeline; the log keeps one line
//! per record with indices, classes, latency, and the image file references,
//! so later stages can re-read everything without re-running models.

use std::fmt;
use std::path::Path;

use cfx_tensor::Tensor;

use crate::checkpoint::atomic_write;
use crate::error::{CoreError, Result};

/// Which explainer produced a counterfactual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    CfProto,
    Dgcex,
    DaDgcex,
}

impl Method {
    /// Stable lowercase identifier used in logs, CSV files, and file names.
    pub fn name(self) -> &'static str {
        match self {
            Method::CfProto => "cfproto",
            Method::Dgcex => "dgcex",
            Method::DaDgcex => "dadgcex",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "cfproto" => Ok(Method::CfProto),
            "dgcex" => Ok(Method::Dgcex),
            "dadgcex" => Ok(Method::DaDgcex),
            other => Err(CoreError::Config(format!(
                "unknown method {other:?}; expected cfproto, dgcex, or dadgcex"
            ))),
        }
    }

    /// All methods, in the order they appear in reports.
    pub fn all() -> [Method; 3] {
        [Method::CfProto, Method::Dgcex, Method::DaDgcex]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One explained instance, with full pixel data.
pub struct CounterfactualResult {
    pub x: Tensor<f32>,
    pub x_cf: Tensor<f32>,
    /// Class of `x` as predicted by the classifier.
    pub y: u8,
    /// Requested counterfactual class.
    pub y_cf: u8,
    /// Class the classifier actually assigns to `x_cf`.
    pub y_pred_cf: u8,
    pub method: Method,
    pub seconds: f64,
}

impl CounterfactualResult {
    pub fn new(
        x: Tensor<f32>,
        x_cf: Tensor<f32>,
        y: u8,
        y_cf: u8,
        y_pred_cf: u8,
        method: Method,
        seconds: f64,
    ) -> Result<Self> {
        if x.shape() != x_cf.shape() {
            return Err(CoreError::Contract(format!(
                "counterfactual shape {:?} differs from input shape {:?}",
                x_cf.shape(),
                x.shape()
            )));
        }
        if y == y_cf {
            return Err(CoreError::Contract(format!(
                "counterfactual class {y_cf} must differ from the original class"
            )));
        }
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(CoreError::Contract(format!("bad latency {seconds}")));
        }
        Ok(CounterfactualResult {
            x,
            x_cf,
            y,
            y_cf,
            y_pred_cf,
            method,
            seconds,
        })
    }

    /// A counterfactual counts as valid when the classifier assigns it the
    /// requested class.
    pub fn is_valid(&self) -> bool {
        self.y_pred_cf == self.y_cf
    }
}

/// The log-line form of a result: everything except pixels, which live in the
/// referenced image files.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub instance_id: usize,
    pub method: Method,
    pub y: u8,
    pub y_cf: u8,
    pub y_pred_cf: u8,
    pub seconds: f64,
    /// Path of the saved original image, relative to the log file.
    pub x_ref: String,
    /// Path of the saved counterfactual image, relative to the log file.
    pub x_cf_ref: String,
}

impl ResultRecord {
    pub fn is_valid(&self) -> bool {
        self.y_pred_cf == self.y_cf
    }

    fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {:.6} {} {}",
            self.instance_id,
            self.method.name(),
            self.y,
            self.y_cf,
            self.y_pred_cf,
            self.seconds,
            self.x_ref,
            self.x_cf_ref
        )
    }
}

const LOG_HEADER: &str = "# instance_id method y y_cf y_pred_cf seconds x_ref x_cf_ref";

/// Write a result log atomically, one record per line plus a header comment.
pub fn write_result_log(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// Read a result log written by [`write_result_log`].
pub fn read_result_log(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            CoreError::Prerequisite(format!("result log {} does not exist", path.display()))
        }
        _ => CoreError::io(path, e),
    })?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let bad = |what: &str| CoreError::parse(path, lineno as u64 + 1, format!("{what}: {line:?}"));
        if fields.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        records.push(ResultRecord {
            instance_id: fields[0].parse().map_err(|_| bad("bad instance_id"))?,
            method: Method::parse(fields[1])?,
            y: fields[2].parse().map_err(|_| bad("bad y"))?,
            y_cf: fields[3].parse().map_err(|_| bad("bad y_cf"))?,
            y_pred_cf: fields[4].parse().map_err(|_| bad("bad y_pred_cf"))?,
            seconds: fields[5].parse().map_err(|_| bad("bad seconds"))?,
            x_ref: fields[6].to_string(),
            x_cf_ref: fields[7].to_string(),
        });
    }
    Ok(records)
}
