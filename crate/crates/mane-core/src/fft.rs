//! Radix-2 complex FFT and spectral derivatives of real periodic grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{cos, sin, TAU};

/// In-place complex FFT, length must be a power of two.
/// `inverse` applies the conjugate transform and the `1/n` factor.
pub fn fft_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n <= 1 {
        return;
    }
    // bit reversal
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * TAU / len as f64;
        let (wr, wi) = (cos(ang), sin(ang));
        let mut start = 0;
        while start < n {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
    if inverse {
        let inv = 1.0 / n as f64;
        for i in 0..n {
            re[i] *= inv;
            im[i] *= inv;
        }
    }
}

/// Multi-dimensional real scalar field on a uniform periodic grid,
/// row-major with the last axis fastest.
#[derive(Clone, Debug)]
pub struct GridShape {
    pub dims: Vec<usize>,
}

impl GridShape {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty());
        for &d in &dims {
            assert!(d.is_power_of_two() && d >= 2, "grid axes must be powers of two");
        }
        GridShape { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    /// Flat index of the multi-index `idx`.
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (k, &i) in idx.iter().enumerate() {
            f = f * self.dims[k] + i;
        }
        f
    }

    /// Multi-index of the flat index.
    pub fn unflat(&self, mut f: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = f % self.dims[k];
            f /= self.dims[k];
        }
        idx
    }
}

/// Spectral partial derivative of a real field along `axis`, period `period`.
/// The Nyquist mode is dropped (its derivative is not representable).
pub fn spectral_derivative(shape: &GridShape, field: &[f64], axis: usize, period: f64) -> Vec<f64> {
    assert_eq!(field.len(), shape.len());
    let n = shape.dims[axis];
    let stride = shape.stride(axis);
    let lines = shape.len() / n;
    let mut out = vec![0.0; field.len()];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for line in 0..lines {
        // base offset of this 1-d line through the grid
        let block = line / stride;
        let within = line % stride;
        let base = block * n * stride + within;
        for k in 0..n {
            re[k] = field[base + k * stride];
            im[k] = 0.0;
        }
        fft_inplace(&mut re, &mut im, false);
        for k in 0..n {
            let freq = if k <= n / 2 { k as isize } else { k as isize - n as isize };
            let w = if k == n / 2 { 0.0 } else { TAU * freq as f64 / period };
            let (r, i) = (re[k], im[k]);
            re[k] = -w * i;
            im[k] = w * r;
        }
        fft_inplace(&mut re, &mut im, true);
        for k in 0..n {
            out[base + k * stride] = re[k];
        }
    }
    out
}

/// Trigonometric interpolation of a real field onto the doubled grid along
/// one axis, by zero-padding the spectrum.
pub fn spectral_refine_axis(shape: &GridShape, field: &[f64], axis: usize) -> (GridShape, Vec<f64>) {
    let n = shape.dims[axis];
    let stride = shape.stride(axis);
    let lines = shape.len() / n;
    let mut new_dims = shape.dims.clone();
    new_dims[axis] = 2 * n;
    let new_shape = GridShape::new(new_dims);
    let new_stride = new_shape.stride(axis);
    let mut out = vec![0.0; new_shape.len()];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for line in 0..lines {
        let block = line / stride;
        let within = line % stride;
        let base = block * n * stride + within;
        let new_base = block * 2 * n * new_stride + within * (new_stride / stride);
        for k in 0..n {
            re[k] = field[base + k * stride];
            im[k] = 0.0;
        }
        fft_inplace(&mut re, &mut im, false);
        let mut re2 = vec![0.0; 2 * n];
        let mut im2 = vec![0.0; 2 * n];
        for k in 0..n {
            let freq = if k <= n / 2 { k } else { k + n };
            // split the Nyquist bin evenly between +n/2 and -n/2
            if k == n / 2 {
                re2[n / 2] = re[k] / 2.0;
                im2[n / 2] = im[k] / 2.0;
                re2[2 * n - n / 2] = re[k] / 2.0;
                im2[2 * n - n / 2] = im[k] / 2.0;
            } else {
                re2[freq] = re[k];
                im2[freq] = im[k];
            }
        }
        for v in re2.iter_mut().chain(im2.iter_mut()) {
            *v *= 2.0;
        }
        fft_inplace(&mut re2, &mut im2, true);
        for k in 0..2 * n {
            out[new_base + k * new_stride] = re2[k];
        }
    }
    (new_shape, out)
}

#[allow(dead_code)]
fn naive_dft_derivative(field: &[f64], period: f64) -> Vec<f64> {
    // reference implementation used by the tests
    let n = field.len();
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 1..n {
            let freq = if k <= n / 2 { k as isize } else { k as isize - n as isize };
            if k == n / 2 {
                continue;
            }
            let w = TAU * freq as f64 / period;
            let mut cr = 0.0;
            let mut ci = 0.0;
            for (m, &f) in field.iter().enumerate() {
                let ang = -TAU * (k * m) as f64 / n as f64;
                cr += f * cos(ang);
                ci += f * sin(ang);
            }
            let ang = TAU * (k * j) as f64 / n as f64;
            // i w * c * e^{i ang}, real part
            acc += (-w * ci * cos(ang) - w * cr * sin(ang)) / n as f64;
        }
        *o = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn fft_roundtrip() {
        let mut re: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut im = vec![0.0; 64];
        let orig = re.clone();
        fft_inplace(&mut re, &mut im, false);
        fft_inplace(&mut re, &mut im, true);
        for i in 0..64 {
            assert!((re[i] - orig[i]).abs() < 1e-12);
            assert!(im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_trig_polynomial() {
        let shape = GridShape::new(vec![32]);
        let field: Vec<f64> = (0..32)
            .map(|i| {
                let x = i as f64 / 32.0;
                (TAU * x).sin() + 0.5 * (2.0 * TAU * x).cos()
            })
            .collect();
        let d = spectral_derivative(&shape, &field, 0, 1.0);
        for i in 0..32 {
            let x = i as f64 / 32.0;
            let exact = TAU * (TAU * x).cos() - TAU * (2.0 * TAU * x).sin();
            assert!((d[i] - exact).abs() < 1e-10, "i={i}: {} vs {exact}", d[i]);
        }
    }

    #[test]
    fn spectral_derivative_2d_matches_naive() {
        let shape = GridShape::new(vec![8, 16]);
        let mut field = vec![0.0; shape.len()];
        for i in 0..8 {
            for j in 0..16 {
                let x = i as f64 / 8.0;
                let y = j as f64 / 16.0;
                field[i * 16 + j] = (TAU * x).cos() * (TAU * y).sin() + (TAU * (x + 2.0 * y)).sin();
            }
        }
        let dy = spectral_derivative(&shape, &field, 1, 1.0);
        // check one line against the 1-d naive transform
        for i in [0usize, 3, 7] {
            let line: Vec<f64> = (0..16).map(|j| field[i * 16 + j]).collect();
            let dl = naive_dft_derivative(&line, 1.0);
            for j in 0..16 {
                assert!((dy[i * 16 + j] - dl[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn refine_interpolates_band_limited_field() {
        let shape = GridShape::new(vec![16]);
        let f = |x: f64| (TAU * x).sin() + 0.3 * (3.0 * TAU * x).cos();
        let field: Vec<f64> = (0..16).map(|i| f(i as f64 / 16.0)).collect();
        let (shape2, fine) = spectral_refine_axis(&shape, &field, 0);
        assert_eq!(shape2.dims, vec![32]);
        for i in 0..32 {
            assert!((fine[i] - f(i as f64 / 32.0)).abs() < 1e-11);
        }
    }
}
