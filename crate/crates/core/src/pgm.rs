//! Binary portable graymap (P5) images and side-by-side comparison grids.
//!
//! Pixels live in `[0,1]` in memory and are quantized to `maxval 255` bytes
//! on disk; a file read back and rewritten is byte-identical. Grids place
//! each instance on one row — the original image in the first column, one
//! counterfactual per method in a fixed column order — separated by
//! two-pixel white gutters.

use std::path::Path;

use cfx_tensor::Tensor;

use crate::checkpoint::atomic_write;
use crate::data::IMAGE_SIDE;
use crate::error::{CoreError, Result};

pub const GUTTER: usize = 2;

/// Write a `[height, width]` image as a binary graymap, clamping pixels to
/// `[0,1]` and scaling so 1.0 becomes byte 255.
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        other => {
            return Err(CoreError::Contract(format!(
                "graymap images are [height, width], got {other:?}"
            )))
        }
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    atomic_write(path, &bytes)
}

/// Read a binary graymap written by [`write_pgm`] back into `[0,1]` pixels.
pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut offset = 0usize;
    let mut next_line = |what: &str| -> Result<String> {
        let rest = &bytes[offset.min(bytes.len())..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CoreError::parse(path, offset as u64, format!("missing {what} line")))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| CoreError::parse(path, offset as u64, format!("{what} is not UTF-8")))?
            .to_string();
        offset += end + 1;
        Ok(line)
    };

    if next_line("magic")? != "P5" {
        return Err(CoreError::parse(path, 0, "expected magic P5"));
    }
    let dims = next_line("dimensions")?;
    let mut parts = dims.split_whitespace();
    let (w, h) = match (parts.next(), parts.next(), parts.next()) {
        (Some(w), Some(h), None) => (
            w.parse::<usize>()
                .map_err(|_| CoreError::parse(path, 3, format!("bad width {w:?}")))?,
            h.parse::<usize>()
                .map_err(|_| CoreError::parse(path, 3, format!("bad height {h:?}")))?,
        ),
        _ => return Err(CoreError::parse(path, 3, format!("bad dimensions {dims:?}"))),
    };
    let maxval = next_line("maxval")?;
    if maxval != "255" {
        return Err(CoreError::parse(
            path,
            offset as u64,
            format!("unsupported maxval {maxval:?}"),
        ));
    }
    let pixels = &bytes[offset..];
    if pixels.len() != w * h {
        return Err(CoreError::parse(
            path,
            offset as u64,
            format!("expected {} pixel bytes, found {}", w * h, pixels.len()),
        ));
    }
    Tensor::new(
        vec![h, w],
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
    )
    .map_err(CoreError::from)
}

/// Compose instance rows into one grid image with white gutters. Every image
/// must hold exactly one 28×28 grayscale plane (any shape whose element
/// count is 784), and every row must have the same number of columns.
pub fn image_grid(rows: &[Vec<Tensor<f32>>]) -> Result<Tensor<f32>> {
    let cols = match rows.first() {
        Some(first) => first.len(),
        None => return Err(CoreError::Contract("empty image grid".to_string())),
    };
    if cols == 0 {
        return Err(CoreError::Contract("image grid row without columns".to_string()));
    }
    let side = IMAGE_SIDE;
    for row in rows {
        if row.len() != cols {
            return Err(CoreError::Contract(format!(
                "ragged image grid: expected {cols} columns, found {}",
                row.len()
            )));
        }
        for img in row {
            if img.len() != side * side {
                return Err(CoreError::Contract(format!(
                    "grid images must be {side}x{side}, got shape {:?}",
                    img.shape()
                )));
            }
        }
    }

    let width = cols * side + (cols - 1) * GUTTER;
    let height = rows.len() * side + (rows.len() - 1) * GUTTER;
    let mut data = vec![1.0f32; width * height];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let top = r * (side + GUTTER);
            let left = c * (side + GUTTER);
            for y in 0..side {
                for x in 0..side {
                    data[(top + y) * width + (left + x)] = img.data()[y * side + x];
                }
            }
        }
    }
    Tensor::new(vec![height, width], data).map_err(CoreError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cfx_tensor::Rng;

    #[test]
    fn grid_layout_arithmetic() {
        let img = Tensor::filled(&[1, 28, 28, 1], 0.5);
        let grid = image_grid(&[vec![img.clone(), img.clone()]]).unwrap();
        assert_eq!(grid.shape(), &[28, 58]);
        // Gutter column between the two images is white.
        for y in 0..28 {
            assert_eq!(grid.data()[y * 58 + 28], 1.0);
            assert_eq!(grid.data()[y * 58 + 29], 1.0);
        }
        assert_eq!(grid.data()[0], 0.5);

        let two = image_grid(&[
            vec![img.clone(), img.clone(), img.clone()],
            vec![img.clone(), img.clone(), img.clone()],
        ])
        .unwrap();
        assert_eq!(two.shape(), &[58, 88]);
    }

    #[test]
    fn mixed_shapes_and_ragged_rows_are_rejected() {
        let ok = Tensor::filled(&[28, 28], 0.1);
        let bad = Tensor::filled(&[27, 28], 0.1);
        assert!(image_grid(&[vec![ok.clone(), bad]]).is_err());
        assert!(image_grid(&[vec![ok.clone(), ok.clone()], vec![ok.clone()]]).is_err());
        assert!(image_grid(&[]).is_err());
    }

    #[test]
    fn full_intensity_maps_to_byte_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.pgm");
        let img = Tensor::filled(&[2, 3], 1.0);
        write_pgm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 255));
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.pgm");
        let second = dir.path().join("b.pgm");
        let mut rng = Rng::from_seed(11);
        let img = Tensor::uniform(&[28, 58], 0.0, 1.0, &mut rng);
        write_pgm(&first, &img).unwrap();
        let read_back = read_pgm(&first).unwrap();
        write_pgm(&second, &read_back).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn malformed_files_name_the_defect() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");

        std::fs::write(&path, b"P6\n2 2\n255\n0000").unwrap();
        assert!(matches!(read_pgm(&path), Err(CoreError::Parse { .. })));

        std::fs::write(&path, b"P5\n2 2\n255\n00").unwrap();
        let err = read_pgm(&path).unwrap_err();
        assert!(err.to_string().contains("4 pixel bytes"), "{err}");

        assert!(matches!(
            read_pgm(&dir.path().join("absent.pgm")),
            Err(CoreError::Io { .. })
        ));
    }
}
