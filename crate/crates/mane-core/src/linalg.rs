//! Small dense linear algebra on plain slices.
//!
//! Everything here operates on problems of dimension at most ~10 (fiber
//! dimensions, shooting systems), so simple partial-pivot elimination and
//! cyclic Jacobi are entirely adequate.

use alloc::vec;
use alloc::vec::Vec;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    crate::math::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is row-major `n x n`. Returns `None` when the pivot collapses.
pub fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for j in row + 1..n {
            s -= a[row * n + j] * x[j];
        }
        x[row] = s / a[row * n + row];
    }
    Some(x)
}

/// Least-squares step `min |J d - r|` via damped normal equations
/// `(J^T J + mu I) d = J^T r`. `j` is row-major `rows x cols`.
pub fn least_squares_damped(j: &[f64], r: &[f64], rows: usize, cols: usize, mu: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(j.len(), rows * cols);
    debug_assert_eq!(r.len(), rows);
    let mut jtj = vec![0.0; cols * cols];
    let mut jtr = vec![0.0; cols];
    for i in 0..rows {
        for a in 0..cols {
            let ja = j[i * cols + a];
            jtr[a] += ja * r[i];
            for b in a..cols {
                jtj[a * cols + b] += ja * j[i * cols + b];
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            jtj[a * cols + b] = jtj[b * cols + a];
        }
        jtj[a * cols + a] += mu;
    }
    solve(&mut jtj, &mut jtr, cols)
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(m.len(), n * n);
    let mut a = m.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * crate::math::atan2(2.0 * apq, aqq - app);
                let (s, c) = (crate::math::sin(theta), crate::math::cos(theta));
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}
