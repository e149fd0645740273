//! Patch extraction for 2-D convolutions on `(channels, height, width)` images
//! stored row-major in flat slices.

use ndarray::Array2;

/// Geometry of a 2-D convolution mapping `(channels, in_h, in_w)` inputs to
/// `(out_channels, out_h, out_w)` outputs with a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }

    /// Rows of the patch matrix: one per (input channel, kernel offset).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output size of the transposed convolution with the same kernel,
    /// stride and padding applied to an `(in_h, in_w)` input.
    pub fn transposed_out(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> (usize, usize) {
        (
            (in_h - 1) * stride + kernel - 2 * pad,
            (in_w - 1) * stride + kernel - 2 * pad,
        )
    }
}

/// Unfold `img` into a `(C*k*k, out_h*out_w)` patch matrix.
pub fn im2col(img: &[f64], g: &ConvGeom) -> Array2<f64> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let mut cols = Array2::<f64>::zeros((g.patch_len(), oh * ow));
    for c in 0..g.in_channels {
        let plane = &img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let mut out_row = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        out_row[oy * ow + ox] = plane[iy as usize * g.in_w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into an image.
pub fn col2im(cols: &Array2<f64>, g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    debug_assert_eq!(cols.dim(), (g.patch_len(), oh * ow));
    for c in 0..g.in_channels {
        let base = c * g.in_h * g.in_w;
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let col_row = cols.row(row);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        img[base + iy as usize * g.in_w + ix as usize] += col_row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        let g = ConvGeom {
            in_channels: 1,
            out_channels: 4,
            in_h: 16,
            in_w: 16,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (8, 8));
        assert_eq!(ConvGeom::transposed_out(8, 8, 4, 2, 1), (16, 16));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 1,
            in_h: 5,
            in_w: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..g.in_len())
            .map(|i| ((i * 7 % 11) as f64) - 5.0)
            .collect();
        let cols = im2col(&x, &g);
        let y = Array2::from_shape_fn(cols.dim(), |(i, j)| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let lhs: f64 = (&cols * &y).sum();
        let mut back = vec![0.0; g.in_len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
