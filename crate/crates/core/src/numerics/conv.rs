//! Direct 2-D cross-correlation kernels (im2col + GEMM) shared by the graph.

use super::tensor::Scalar;

/// Stride, zero padding and dilation of a 2-D convolution, as `[rows, cols]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: [1, 1], padding: [0, 0], dilation: [1, 1] }
    }
}

impl Conv2dSpec {
    /// Size-preserving spec for an odd `kernel` at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        Self { stride: [1, 1], padding: [pad, pad], dilation: [dilation, dilation] }
    }

    /// Like [`Conv2dSpec::same`] but halving the spatial size.
    pub fn down(kernel: usize) -> Self {
        let pad = (kernel - 1) / 2;
        Self { stride: [2, 2], padding: [pad, pad], dilation: [1, 1] }
    }

    /// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or `None` if the kernel
    /// does not fit.
    pub fn output_size(&self, size: usize, kernel: usize, axis: usize) -> Option<usize> {
        let span = self.dilation[axis] * (kernel - 1) + 1;
        let padded = size + 2 * self.padding[axis];
        if padded < span || self.stride[axis] == 0 {
            return None;
        }
        Some((padded - span) / self.stride[axis] + 1)
    }
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: [usize; 2],
    pub out_height: usize,
    pub out_width: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel[0] * self.kernel[1]
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn in_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Valid output range `[lo, hi)` along one axis for kernel offset `tap`.
    fn valid(&self, tap: usize, axis: usize) -> (usize, usize) {
        let (size, out) = if axis == 0 {
            (self.height, self.out_height)
        } else {
            (self.width, self.out_width)
        };
        let stride = self.spec.stride[axis] as isize;
        let offset = (tap * self.spec.dilation[axis]) as isize - self.spec.padding[axis] as isize;
        // smallest o with o*stride + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + stride - 1) / stride };
        // largest o with o*stride + offset <= size-1
        let last = size as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { last / stride + 1 };
        let lo = (lo as usize).min(out);
        let hi = (hi as usize).min(out).max(lo);
        (lo, hi)
    }
}

/// Unfolds one sample (`C × H × W`) into a `patch_len × out_pixels` matrix.
pub(crate) fn im2col<S: Scalar>(geom: &ConvGeometry, input: &[S], cols: &mut [S]) {
    let [kh, kw] = geom.kernel;
    let [sh, sw] = geom.spec.stride;
    let [dh, dw] = geom.spec.dilation;
    let [ph, pw] = geom.spec.padding;
    let (ow, op) = (geom.out_width, geom.out_pixels());
    let (w, hw) = (geom.width, geom.in_pixels());
    for ci in 0..geom.in_channels {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ki in 0..kh {
            let (ylo, yhi) = geom.valid(ki, 0);
            for kj in 0..kw {
                let (xlo, xhi) = geom.valid(kj, 1);
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * op..(row + 1) * op];
                dst.fill(S::zero());
                for oy in ylo..yhi {
                    let iy = oy * sh + ki * dh - ph;
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if xlo >= xhi {
                        continue;
                    }
                    if sw == 1 {
                        let ix0 = xlo + kj * dw - pw;
                        out_row[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out_row[ox] = src_row[ox * sw + kj * dw - pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back onto one sample.
pub(crate) fn col2im<S: Scalar>(geom: &ConvGeometry, cols: &[S], out: &mut [S]) {
    let [kh, kw] = geom.kernel;
    let [sh, sw] = geom.spec.stride;
    let [dh, dw] = geom.spec.dilation;
    let [ph, pw] = geom.spec.padding;
    let (ow, op) = (geom.out_width, geom.out_pixels());
    let (w, hw) = (geom.width, geom.in_pixels());
    for ci in 0..geom.in_channels {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ki in 0..kh {
            let (ylo, yhi) = geom.valid(ki, 0);
            for kj in 0..kw {
                let (xlo, xhi) = geom.valid(kj, 1);
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * op..(row + 1) * op];
                for oy in ylo..yhi {
                    let iy = oy * sh + ki * dh - ph;
                    let dst_row = &mut plane[iy * w..(iy + 1) * w];
                    let col_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in xlo..xhi {
                        dst_row[ox * sw + kj * dw - pw] += col_row[ox];
                    }
                }
            }
        }
    }
}
