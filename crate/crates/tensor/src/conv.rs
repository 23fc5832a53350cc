//! im2col / col2im plumbing for `[B,H,W,C]` tensors.
//!
//! Padding convention, pinned for bit-exact reproducibility:
//! `same` output is `ceil(in/stride)` per axis and the total padding
//! `(out-1)*stride + k - in` is split with the smaller half on top/left —
//! even kernels therefore pad bottom/right first. `valid` applies no padding.
//! Transposed convolution is the exact adjoint: it scatters through the same
//! index map the matching `same` convolution gathers through, so an input of
//! `[B,H,W,C]` maps to `[B,H*stride,W*stride,C']`.

use crate::error::{Result, TensorError};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Geometry of one conv application, shared by forward and backward.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        h_in: usize,
        w_in: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::Config("conv stride must be positive".into()));
        }
        let (h_out, w_out, pad_top, pad_left) = match padding {
            Padding::Same => {
                let h_out = h_in.div_ceil(stride);
                let w_out = w_in.div_ceil(stride);
                let pad_h = ((h_out - 1) * stride + kh).saturating_sub(h_in);
                let pad_w = ((w_out - 1) * stride + kw).saturating_sub(w_in);
                (h_out, w_out, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if kh > h_in || kw > w_in {
                    return Err(TensorError::dim(
                        "conv2d",
                        format!("kernel {}x{} within input", kh, kw),
                        format!("input {}x{}", h_in, w_in),
                    ));
                }
                ((h_in - kh) / stride + 1, (w_in - kw) / stride + 1, 0, 0)
            }
        };
        if kh > h_in + 2 * pad_top + 1 || kw > w_in + 2 * pad_left + 1 {
            return Err(TensorError::dim(
                "conv2d",
                "kernel within padded input".to_string(),
                format!("kernel {}x{}, input {}x{}", kh, kw, h_in, w_in),
            ));
        }
        Ok(ConvGeom {
            h_in,
            w_in,
            h_out,
            w_out,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Geometry for a transposed conv producing `h_in*stride` from `h_in`:
    /// the geometry of the `same` conv whose adjoint it is.
    pub fn for_transpose(h_in: usize, w_in: usize, kh: usize, kw: usize, stride: usize) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(TensorError::Config(format!(
                "conv_transpose2d: unsupported stride {} (expected 1 or 2)",
                stride
            )));
        }
        ConvGeom::new(h_in * stride, w_in * stride, kh, kw, stride, Padding::Same)
    }

    pub fn patch_len(&self, c_in: usize) -> usize {
        self.kh * self.kw * c_in
    }

    pub fn rows(&self, batch: usize) -> usize {
        batch * self.h_out * self.w_out
    }
}

/// Gather patches: cols[b*OH*OW + o, (p*kw + q)*C + c] = x[b, oh*s+p-pt, ow*s+q-pl, c].
/// Out-of-range source positions contribute zero.
pub fn im2col<T: Real>(x: &[T], batch: usize, c_in: usize, g: &ConvGeom, cols: &mut [T]) {
    let patch = g.patch_len(c_in);
    debug_assert_eq!(cols.len(), g.rows(batch) * patch);
    debug_assert_eq!(x.len(), batch * g.h_in * g.w_in * c_in);
    let row_stride = g.w_in * c_in;
    for b in 0..batch {
        let xb = &x[b * g.h_in * row_stride..(b + 1) * g.h_in * row_stride];
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let r = ((b * g.h_out + oh) * g.w_out + ow) * patch;
                let col_row = &mut cols[r..r + patch];
                for p in 0..g.kh {
                    let ih = (oh * g.stride + p) as isize - g.pad_top as isize;
                    for q in 0..g.kw {
                        let iw = (ow * g.stride + q) as isize - g.pad_left as isize;
                        let dst = &mut col_row[(p * g.kw + q) * c_in..(p * g.kw + q + 1) * c_in];
                        if ih >= 0 && (ih as usize) < g.h_in && iw >= 0 && (iw as usize) < g.w_in {
                            let src = ih as usize * row_stride + iw as usize * c_in;
                            dst.copy_from_slice(&xb[src..src + c_in]);
                        } else {
                            dst.fill(T::ZERO);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add: the exact adjoint of `im2col` over the same geometry.
pub fn col2im<T: Real>(cols: &[T], batch: usize, c_in: usize, g: &ConvGeom, x: &mut [T]) {
    let patch = g.patch_len(c_in);
    debug_assert_eq!(cols.len(), g.rows(batch) * patch);
    debug_assert_eq!(x.len(), batch * g.h_in * g.w_in * c_in);
    let row_stride = g.w_in * c_in;
    for b in 0..batch {
        let xb = &mut x[b * g.h_in * row_stride..(b + 1) * g.h_in * row_stride];
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let r = ((b * g.h_out + oh) * g.w_out + ow) * patch;
                let col_row = &cols[r..r + patch];
                for p in 0..g.kh {
                    let ih = (oh * g.stride + p) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.h_in {
                        continue;
                    }
                    for q in 0..g.kw {
                        let iw = (ow * g.stride + q) as isize - g.pad_left as isize;
                        if iw < 0 || iw as usize >= g.w_in {
                            continue;
                        }
                        let src = &col_row[(p * g.kw + q) * c_in..(p * g.kw + q + 1) * c_in];
                        let dst_off = ih as usize * row_stride + iw as usize * c_in;
                        let dst = &mut xb[dst_off..dst_off + c_in];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}
