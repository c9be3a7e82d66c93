use super::Element;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn deconv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * pad).filter(|&v| v > 0)
}

/// Row-major `c = a·b + beta·c`, where `a` is `m×k` (or `k×m` when
/// `trans_a`) and `b` is `k×n` (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    T::gemm_raw(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// Geometry of a 2D sliding window over a `channels×height×width` image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output columns `lo..hi` whose input column `ox·s − p + kj` lies in
/// `0..wd`.
fn valid_cols(out_w: usize, s: isize, p: isize, kj: isize, wd: isize) -> (usize, usize) {
    let ceil_div = |a: isize, b: isize| if a <= 0 { 0 } else { (a + b - 1) / b };
    let lo = ceil_div(p - kj, s).min(out_w as isize) as usize;
    let hi = ceil_div(wd + p - kj, s).min(out_w as isize) as usize;
    (lo, hi.max(lo))
}

/// Unfolds one image into a `(C·k·k)×(out_h·out_w)` column matrix.
pub(crate) fn im2col<T: Element>(img: &[T], w: &Window, cols: &mut [T]) {
    let ncols = w.cols();
    let (k, s, p) = (w.kernel as isize, w.stride as isize, w.pad as isize);
    let (h, wd) = (w.height as isize, w.width as isize);
    for c in 0..w.channels {
        let plane = &img[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * w.kernel * w.kernel) + (ki * k + kj) as usize;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..w.out_h {
                    let iy = oy as isize * s - p + ki;
                    let line = &mut dst[oy * w.out_w..(oy + 1) * w.out_w];
                    if iy < 0 || iy >= h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[(iy * wd) as usize..((iy + 1) * wd) as usize];
                    let (lo, hi) = valid_cols(w.out_w, s, p, kj, wd);
                    line[..lo].iter_mut().for_each(|v| *v = T::zero());
                    line[hi..].iter_mut().for_each(|v| *v = T::zero());
                    let start = lo as isize * s - p + kj;
                    for (i, v) in line[lo..hi].iter_mut().enumerate() {
                        *v = src[(start + i as isize * s) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into the image, accumulating.
pub(crate) fn col2im<T: Element>(cols: &[T], w: &Window, img: &mut [T]) {
    let ncols = w.cols();
    let (k, s, p) = (w.kernel as isize, w.stride as isize, w.pad as isize);
    let (h, wd) = (w.height as isize, w.width as isize);
    for c in 0..w.channels {
        let plane = &mut img[c * w.height * w.width..(c + 1) * w.height * w.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * w.kernel * w.kernel) + (ki * k + kj) as usize;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..w.out_h {
                    let iy = oy as isize * s - p + ki;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let line = &src[oy * w.out_w..(oy + 1) * w.out_w];
                    let dst = &mut plane[(iy * wd) as usize..((iy + 1) * wd) as usize];
                    let (lo, hi) = valid_cols(w.out_w, s, p, kj, wd);
                    let start = lo as isize * s - p + kj;
                    for (i, &v) in line[lo..hi].iter().enumerate() {
                        let ix = (start + i as isize * s) as usize;
                        dst[ix] = dst[ix] + v;
                    }
                }
            }
        }
    }
}
