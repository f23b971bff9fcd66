//! im2col / col2im lowering of strided, padded 2D convolution to matrix
//! products. `col2im` is the exact adjoint of `im2col`, which is all the
//! transposed convolution needs.

use super::Scalar;

/// Convolution over a `channels × height × width` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1
    }

    /// Rows of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    /// Columns of the column matrix.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn valid(&self) -> bool {
        self.height + 2 * self.pad.0 >= self.kernel.0
            && self.width + 2 * self.pad.1 >= self.kernel.1
            && self.stride.0 > 0
            && self.stride.1 > 0
    }

    /// For each kernel offset along one axis, the output positions whose tap
    /// lands inside the image, as a half-open range.
    fn valid_range(k: usize, stride: usize, pad: usize, size: usize, out: usize) -> (usize, usize) {
        // o*stride + k - pad in [0, size)
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        let hi = if size + pad > k { ((size + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// `cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*sh + i - ph][ox*sw + j - pw]`
/// (zero outside the image).
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    debug_assert_eq!(x.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.patch_len() * oh * ow);
    for c in 0..g.channels {
        let img = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..kh {
            let (y0, y1) = ConvGeometry::valid_range(i, sh, ph, g.height, oh);
            for j in 0..kw {
                let (x0, x1) = ConvGeometry::valid_range(j, sw, pw, g.width, ow);
                let row = ((c * kh + i) * kw + j) * oh * ow;
                let dst = &mut cols[row..row + oh * ow];
                dst.fill(T::zero());
                for oy in y0..y1 {
                    let iy = oy * sh + i - ph;
                    let src = &img[iy * g.width..(iy + 1) * g.width];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        let ix0 = x0 + j - pw;
                        out[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            out[ox] = src[ox * sw + j - pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds the column matrix back into `x`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    debug_assert_eq!(x.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.patch_len() * oh * ow);
    for c in 0..g.channels {
        let img = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..kh {
            let (y0, y1) = ConvGeometry::valid_range(i, sh, ph, g.height, oh);
            for j in 0..kw {
                let (x0, x1) = ConvGeometry::valid_range(j, sw, pw, g.width, ow);
                let row = ((c * kh + i) * kw + j) * oh * ow;
                let src = &cols[row..row + oh * ow];
                for oy in y0..y1 {
                    let iy = oy * sh + i - ph;
                    let dst = &mut img[iy * g.width..(iy + 1) * g.width];
                    let s = &src[oy * ow..(oy + 1) * ow];
                    for ox in x0..x1 {
                        dst[ox * sw + j - pw] += s[ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; g.patch_len() * oh * ow];
        for c in 0..g.channels {
            for i in 0..g.kernel.0 {
                for j in 0..g.kernel.1 {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * g.stride.0 + i) as isize - g.pad.0 as isize;
                            let ix = (ox * g.stride.1 + j) as isize - g.pad.1 as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                out[((c * g.kernel.0 + i) * g.kernel.1 + j) * oh * ow + oy * ow + ox] =
                                    x[(c * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn geometries() -> Vec<ConvGeometry> {
        let mut v = Vec::new();
        for (h, w) in [(1, 1), (2, 8), (5, 7), (4, 16)] {
            for (k, s, p) in [((3, 3), (1, 1), (1, 1)), ((4, 4), (2, 2), (1, 1)), ((3, 4), (1, 2), (1, 1)), ((4, 3), (2, 1), (1, 1))] {
                let g = ConvGeometry { channels: 2, height: h, width: w, kernel: k, stride: s, pad: p };
                if g.valid() {
                    v.push(g);
                }
            }
        }
        v
    }

    #[test]
    fn im2col_matches_naive() {
        for g in geometries() {
            let x: Vec<f64> = (0..g.channels * g.height * g.width).map(|v| v as f64 + 1.0).collect();
            let mut cols = vec![f64::NAN; g.patch_len() * g.positions()];
            im2col(&x, &g, &mut cols);
            assert_eq!(cols, naive_im2col(&x, &g), "{g:?}");
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        for g in geometries() {
            let n_in = g.channels * g.height * g.width;
            let n_cols = g.patch_len() * g.positions();
            let x: Vec<f64> = (0..n_in).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
            let y: Vec<f64> = (0..n_cols).map(|v| ((v * 5) % 13) as f64 - 6.0).collect();
            let mut cols = vec![0.0; n_cols];
            im2col(&x, &g, &mut cols);
            let mut back = vec![0.0; n_in];
            col2im(&y, &g, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert_eq!(lhs, rhs, "{g:?}");
        }
    }

    #[test]
    fn halving_and_identity_geometries() {
        let g = ConvGeometry { channels: 1, height: 40, width: 256, kernel: (4, 4), stride: (2, 2), pad: (1, 1) };
        assert_eq!((g.out_height(), g.out_width()), (20, 128));
        let g = ConvGeometry { channels: 1, height: 5, width: 16, kernel: (3, 4), stride: (1, 2), pad: (1, 1) };
        assert_eq!((g.out_height(), g.out_width()), (5, 8));
    }
}
