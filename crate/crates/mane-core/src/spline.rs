//! Cubic spline interpolation on a uniform grid.

use alloc::vec;
use alloc::vec::Vec;

/// Natural cubic spline through uniformly spaced samples.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    ys: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    /// Build from samples `ys[i] = f(x0 + i h)`. Needs at least 3 samples.
    pub fn from_uniform(x0: f64, h: f64, ys: Vec<f64>) -> Self {
        let n = ys.len();
        assert!(n >= 3, "spline needs at least 3 samples");
        assert!(h > 0.0);
        // tridiagonal system for natural end conditions (Thomas algorithm)
        let mut m = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = 6.0 * (ys[i + 1] - 2.0 * ys[i] + ys[i - 1]) / (h * h);
        }
        // diag = 4, off = 1 in units of h-scaled system
        c[1] = 1.0 / 4.0;
        d[1] /= 4.0;
        for i in 2..n - 1 {
            let w = 4.0 - c[i - 1];
            c[i] = 1.0 / w;
            d[i] = (d[i] - d[i - 1]) / w;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        CubicSpline { x0, h, ys, m }
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.ys.len();
        let t = (x - self.x0) / self.h;
        let mut i = crate::math::floor(t) as isize;
        if i < 0 {
            i = 0;
        }
        if i as usize >= n - 1 {
            i = (n - 2) as isize;
        }
        (i as usize, x - (self.x0 + i as f64 * self.h))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, dx) = self.locate(x);
        let h = self.h;
        let (ya, yb) = (self.ys[i], self.ys[i + 1]);
        let (ma, mb) = (self.m[i], self.m[i + 1]);
        let a = (yb - ya) / h - h * (2.0 * ma + mb) / 6.0;
        ya + dx * (a + dx * (ma / 2.0 + dx * (mb - ma) / (6.0 * h)))
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (i, dx) = self.locate(x);
        let h = self.h;
        let (ya, yb) = (self.ys[i], self.ys[i + 1]);
        let (ma, mb) = (self.m[i], self.m[i + 1]);
        let a = (yb - ya) / h - h * (2.0 * ma + mb) / 6.0;
        a + dx * (ma + dx * (mb - ma) / (2.0 * h))
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.h * (self.ys.len() - 1) as f64
    }
}
