//! Model checkpoint container and atomic file writes.
//!
//! Layout, version 1:
//!
//! ```text
//! cfx-checkpoint v1\n
//! arch <id>\n
//! seed <u64>\n
//! meta <key> <value>\n          (zero or more; deterministic fields only)
//! layer <name> <d0>x<d1>x...\n  (one per parameter tensor, in load order)
//! blob <total f32 count>\n
//! <count × 4 bytes of little-endian f32>
//! <8 bytes little-endian FNV-1a 64 of everything above>
//! ```
//!
//! The checksum covers header and blob, so any flipped byte fails loudly.
//! Wall-clock values never go into a checkpoint: identical seeds must yield
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use cfx_tensor::rng::fnv1a64;
use cfx_tensor::Tensor;

use crate::error::{CoreError, Result};

const MAGIC_LINE: &str = "cfx-checkpoint v1";

#[derive(Debug)]
pub struct CheckpointHeader {
    pub arch: String,
    pub seed: u64,
    pub meta: Vec<(String, String)>,
    pub layers: Vec<(String, Vec<usize>)>,
}

/// Write `bytes` to `path` atomically: temp file in the same directory,
/// fsync, then rename over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Serialize named parameter tensors (in their declared order) with metadata.
pub fn save_checkpoint(
    path: &Path,
    arch: &str,
    seed: u64,
    meta: &[(String, String)],
    layers: &[(&str, &Tensor<f32>)],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_LINE.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("arch {arch}\n").as_bytes());
    out.extend_from_slice(format!("seed {seed}\n").as_bytes());
    for (k, v) in meta {
        out.extend_from_slice(format!("meta {k} {v}\n").as_bytes());
    }
    let mut total = 0usize;
    for (name, t) in layers {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.extend_from_slice(format!("layer {name} {}\n", dims.join("x")).as_bytes());
        total += t.len();
    }
    out.extend_from_slice(format!("blob {total}\n").as_bytes());
    for (_, t) in layers {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    atomic_write(path, &out)
}

/// Read a checkpoint, validating checksum, declared shapes, and blob length.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor<f32>>)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            CoreError::Prerequisite(format!("checkpoint {} does not exist", path.display()))
        }
        _ => CoreError::io(path, e),
    })?;
    if bytes.len() < 8 {
        return Err(CoreError::parse(path, 0, "file shorter than its checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(CoreError::parse(
            path,
            body.len() as u64,
            format!("checksum mismatch: stored {stored:016x}, computed {computed:016x}"),
        ));
    }

    let mut header = CheckpointHeader {
        arch: String::new(),
        seed: 0,
        meta: Vec::new(),
        layers: Vec::new(),
    };
    fn next_line<'a>(body: &'a [u8], path: &Path, offset: &mut usize) -> Result<(u64, &'a str)> {
        let nl = body[*offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CoreError::parse(path, *offset as u64, "unterminated header line"))?;
        let line = std::str::from_utf8(&body[*offset..*offset + nl])
            .map_err(|_| CoreError::parse(path, *offset as u64, "non-UTF8 header line"))?;
        let start = *offset as u64;
        *offset += nl + 1;
        Ok((start, line))
    }

    let mut offset = 0usize;
    let mut expect_total: Option<usize> = None;

    let (start, first) = next_line(body, path, &mut offset)?;
    if first != MAGIC_LINE {
        return Err(CoreError::parse(
            path,
            start,
            format!("not a checkpoint (first line {first:?})"),
        ));
    }

    // Remaining header is newline-delimited ASCII up to the `blob` line.
    while offset < body.len() {
        let (line_start, line) = next_line(body, path, &mut offset)?;
        let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
        match tag {
            "arch" => header.arch = rest.to_string(),
            "seed" => {
                header.seed = rest.parse().map_err(|_| {
                    CoreError::parse(path, line_start, format!("bad seed {rest:?}"))
                })?;
            }
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                header.meta.push((k.to_string(), v.to_string()));
            }
            "layer" => {
                let (name, dims) = rest.split_once(' ').ok_or_else(|| {
                    CoreError::parse(path, line_start, "layer line missing shape")
                })?;
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        CoreError::parse(path, line_start, format!("bad layer shape {dims:?}"))
                    })?;
                header.layers.push((name.to_string(), shape));
            }
            "blob" => {
                expect_total = Some(rest.parse().map_err(|_| {
                    CoreError::parse(path, line_start, format!("bad blob count {rest:?}"))
                })?);
                break;
            }
            other => {
                return Err(CoreError::parse(
                    path,
                    line_start,
                    format!("unknown header tag {other:?}"),
                ));
            }
        }
    }

    let total = expect_total
        .ok_or_else(|| CoreError::parse(path, offset as u64, "missing blob line"))?;
    let declared: usize = header.layers.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if declared != total {
        return Err(CoreError::parse(
            path,
            offset as u64,
            format!("layer shapes declare {declared} values but blob says {total}"),
        ));
    }
    let blob = &body[offset..];
    if blob.len() != total * 4 {
        return Err(CoreError::parse(
            path,
            offset as u64,
            format!("blob holds {} bytes, expected {}", blob.len(), total * 4),
        ));
    }

    let mut tensors = Vec::with_capacity(header.layers.len());
    let mut pos = 0usize;
    for (_, shape) in &header.layers {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = blob[pos * 4..(pos + n) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += n;
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    Ok((header, tensors))
}
