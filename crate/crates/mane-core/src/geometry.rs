//! Charts, lattices and point reduction for the torus `T^n` and the Sol
//! 3-manifold, plus Monte-Carlo sampling of energy level sets.
//!
//! The Sol group has multiplication
//! `(x,y,z) * (x',y',z') = (x + e^z x', y + e^{-z} y', z + z')` and the
//! cocompact lattice is generated by the translations `(x,y) -> (x,y) + P(m,n)`
//! and the deck map `(x,y,z) -> (lambda x, y/lambda, z + log lambda)`, where
//! `P A P^{-1} = diag(lambda, 1/lambda)` for an integer gluing matrix `A`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::hamiltonian::TonelliHamiltonian;
use crate::math::{floor, ln, rem_euclid, round, sqrt};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryError {
    DimensionMismatch { expected: usize, got: usize },
    /// The fiberwise minimum of H already exceeds the requested level, so the
    /// level set misses this fiber (or touches it in a single point).
    LevelEmpty { level: f64, fiber_min: f64 },
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            GeometryError::LevelEmpty { level, fiber_min } => {
                write!(f, "level {level} does not cut the fiber (min H = {fiber_min})")
            }
        }
    }
}

impl core::error::Error for GeometryError {}

/// Position coordinates on a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ChartPoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A point of the cotangent bundle in chart coordinates `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p must have matching dimension");
        PhasePoint { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }

    /// Flat layout `[q..., p...]` used by integrators and tangent vectors.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.p);
        v
    }

    pub fn from_flat(state: &[f64]) -> Self {
        let n = state.len() / 2;
        PhasePoint::new(state[..n].to_vec(), state[n..].to_vec())
    }
}

/// Flat torus `R^n / (period_1 Z x ... x period_n Z)`.
#[derive(Clone, Debug)]
pub struct TorusChart {
    pub periods: Vec<f64>,
}

impl TorusChart {
    pub fn unit(dim: usize) -> Self {
        assert!(dim >= 1);
        TorusChart {
            periods: alloc::vec![1.0; dim],
        }
    }

    pub fn with_periods(periods: Vec<f64>) -> Self {
        assert!(!periods.is_empty() && periods.iter().all(|p| *p > 0.0));
        TorusChart { periods }
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }
}

/// Componentwise reduction into the fundamental domain `[0, period_i)`.
pub fn wrap_torus(q: &ChartPoint, chart: &TorusChart) -> Result<ChartPoint, GeometryError> {
    if q.dim() != chart.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: chart.dim(),
            got: q.dim(),
        });
    }
    Ok(ChartPoint::new(
        q.coords
            .iter()
            .zip(&chart.periods)
            .map(|(&x, &per)| rem_euclid(x, per))
            .collect(),
    ))
}

/// Cocompact lattice data for the Sol manifold: an integer Anosov matrix `A`
/// with `det A = 1`, `tr A > 2`, and the diagonalizing matrix `P`.
#[derive(Clone, Debug)]
pub struct SolLattice {
    pub a: [[i64; 2]; 2],
    pub p: [[f64; 2]; 2],
    pub p_inv: [[f64; 2]; 2],
    pub lambda: f64,
    pub log_lambda: f64,
}

fn mat2_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn mat2_apply(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

impl SolLattice {
    /// The smallest standard Anosov gluing map `A = [[2,1],[1,1]]`.
    pub fn standard() -> Self {
        SolLattice::new([[2, 1], [1, 1]]).expect("standard lattice is valid")
    }

    pub fn new(a: [[i64; 2]; 2]) -> Result<Self, GeometryError> {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let tr = a[0][0] + a[1][1];
        assert!(det == 1, "gluing matrix must have determinant 1");
        assert!(tr > 2, "gluing matrix must be hyperbolic (trace > 2)");
        let trf = tr as f64;
        let lambda = 0.5 * (trf + sqrt(trf * trf - 4.0));
        // rows of P are the normalized left eigenvectors of A
        let row = |ev: f64| -> [f64; 2] {
            // w^T (A - ev I) = 0  =>  w ~ (a21, ev - a11)
            let w = [a[1][0] as f64, ev - a[0][0] as f64];
            let n = sqrt(w[0] * w[0] + w[1] * w[1]);
            [w[0] / n, w[1] / n]
        };
        let r0 = row(lambda);
        let r1 = row(1.0 / lambda);
        let p = [r0, r1];
        let detp = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let p_inv = [
            [p[1][1] / detp, -p[0][1] / detp],
            [-p[1][0] / detp, p[0][0] / detp],
        ];
        let lat = SolLattice {
            a,
            p,
            p_inv,
            lambda,
            log_lambda: ln(lambda),
        };
        // conjugation check: P A P^{-1} = diag(lambda, 1/lambda)
        let af = [
            [a[0][0] as f64, a[0][1] as f64],
            [a[1][0] as f64, a[1][1] as f64],
        ];
        let d = mat2_mul(&mat2_mul(&lat.p, &af), &lat.p_inv);
        let resid = (d[0][0] - lambda).abs().max((d[1][1] - 1.0 / lambda).abs());
        let resid = resid.max(d[0][1].abs()).max(d[1][0].abs());
        assert!(resid <= 1e-12, "eigendecomposition residual {resid}");
        Ok(lat)
    }

    /// Image of the integer lattice point `(m, n)` in the `(x, y)` plane.
    pub fn translation(&self, m: i64, n: i64) -> [f64; 2] {
        mat2_apply(&self.p, [m as f64, n as f64])
    }
}

/// Reduce a Sol phase point into the fundamental domain: first the deck map
/// for the z-shift, then nearest-lattice-point translation in `(x, y)`.
/// Momenta transform by the inverse transpose of the base differential, which
/// leaves `M_x = e^z p_x`, `M_y = e^{-z} p_y`, `M_z = p_z` (and hence `H`)
/// unchanged.
pub fn reduce_sol(pt: &PhasePoint, lat: &SolLattice) -> PhasePoint {
    assert_eq!(pt.dim(), 3, "Sol phase points have 3 base coordinates");
    let (x, y, z) = (pt.q[0], pt.q[1], pt.q[2]);
    let (px, py, pz) = (pt.p[0], pt.p[1], pt.p[2]);
    let l = floor(z / lat.log_lambda);
    // deck map gamma^{-l}: (x,y,z) -> (lambda^{-l} x, lambda^{l} y, z - l log lambda)
    let s = crate::math::powf(lat.lambda, -l);
    let (x, y, z) = (x * s, y / s, z - l * lat.log_lambda);
    let (px, py) = (px / s, py * s);
    // nearest lattice point in (m, n) coordinates
    let mn = mat2_apply(&lat.p_inv, [x, y]);
    let (m, n) = (round(mn[0]), round(mn[1]));
    let t = mat2_apply(&lat.p, [m, n]);
    PhasePoint::new(alloc::vec![x - t[0], y - t[1], z], alloc::vec![px, py, pz])
}

/// Chart descriptor attached to every Hamiltonian.
#[derive(Clone, Debug)]
pub enum Chart {
    Torus(TorusChart),
    Sol(SolLattice),
    /// Product with an extra circle coordinate `t` of period 1 (suspension).
    Suspension { base: Box<Chart> },
}

impl Chart {
    pub fn base_dim(&self) -> usize {
        match self {
            Chart::Torus(t) => t.dim(),
            Chart::Sol(_) => 3,
            Chart::Suspension { base } => base.base_dim() + 1,
        }
    }

    /// Uniform sample of the base fundamental domain.
    pub fn sample_base(&self, rng: &mut CounterRng) -> Vec<f64> {
        match self {
            Chart::Torus(t) => t.periods.iter().map(|&p| rng.uniform_in(0.0, p)).collect(),
            Chart::Sol(lat) => {
                let m = rng.uniform();
                let n = rng.uniform();
                let xy = mat2_apply(&lat.p, [m, n]);
                let z = rng.uniform_in(0.0, lat.log_lambda);
                alloc::vec![xy[0], xy[1], z]
            }
            Chart::Suspension { base } => {
                let mut q = base.sample_base(rng);
                q.push(rng.uniform());
                q
            }
        }
    }

    /// Distance between phase points with the base reduced by the chart
    /// identifications; momenta compare directly (up to Sol deck maps).
    pub fn phase_distance(&self, a: &PhasePoint, b: &PhasePoint) -> f64 {
        match self {
            Chart::Torus(t) => {
                let mut s = 0.0;
                for i in 0..t.dim() {
                    let mut d = rem_euclid(a.q[i] - b.q[i], t.periods[i]);
                    if d > 0.5 * t.periods[i] {
                        d = t.periods[i] - d;
                    }
                    s += d * d;
                }
                for i in 0..a.p.len() {
                    let d = a.p[i] - b.p[i];
                    s += d * d;
                }
                sqrt(s)
            }
            Chart::Sol(lat) => {
                let ra = reduce_sol(a, lat);
                let rb = reduce_sol(b, lat);
                let mut s = 0.0;
                for i in 0..3 {
                    let d = ra.q[i] - rb.q[i];
                    s += d * d;
                    let d = ra.p[i] - rb.p[i];
                    s += d * d;
                }
                sqrt(s)
            }
            Chart::Suspension { base } => {
                let n = a.dim() - 1;
                let ab = PhasePoint::new(a.q[..n].to_vec(), a.p[..n].to_vec());
                let bb = PhasePoint::new(b.q[..n].to_vec(), b.p[..n].to_vec());
                let db = base.phase_distance(&ab, &bb);
                let mut dt = rem_euclid(a.q[n] - b.q[n], 1.0);
                if dt > 0.5 {
                    dt = 1.0 - dt;
                }
                let dpt = a.p[n] - b.p[n];
                sqrt(db * db + dt * dt + dpt * dpt)
            }
        }
    }

    /// Reduce the base part of a phase point to the fundamental domain.
    pub fn reduce(&self, pt: &PhasePoint) -> PhasePoint {
        match self {
            Chart::Torus(t) => {
                let q = pt
                    .q
                    .iter()
                    .zip(&t.periods)
                    .map(|(&x, &per)| rem_euclid(x, per))
                    .collect();
                PhasePoint::new(q, pt.p.clone())
            }
            Chart::Sol(lat) => reduce_sol(pt, lat),
            Chart::Suspension { base } => {
                let n = pt.dim() - 1;
                let b = base.reduce(&PhasePoint::new(pt.q[..n].to_vec(), pt.p[..n].to_vec()));
                let mut q = b.q;
                q.push(rem_euclid(pt.q[n], 1.0));
                let mut p = b.p;
                p.push(pt.p[n]);
                PhasePoint::new(q, p)
            }
        }
    }
}

/// Draw `n` points of the level set `H = k` with base points uniform on the
/// fundamental domain. The momentum is found on a random ray from the
/// fiberwise minimizer by bisection (fiberwise convexity gives a unique root
/// per ray), then polished by one Newton step. Deterministic in `seed`.
pub fn sample_level_set(
    h: &dyn TonelliHamiltonian,
    k: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<PhasePoint>, GeometryError> {
    let rng = CounterRng::new(seed);
    let chart = h.chart();
    let dim = chart.base_dim();
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.split(i as u64);
        let q = chart.sample_base(&mut r);
        let p0 = h.fiber_minimizer(&q);
        let hmin = h.eval(&PhasePoint::new(q.clone(), p0.clone()));
        if hmin >= k - 1e-12 {
            return Err(GeometryError::LevelEmpty {
                level: k,
                fiber_min: hmin,
            });
        }
        let dir = r.unit_vector(dim);
        let eval_t = |t: f64| {
            let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            h.eval(&PhasePoint::new(q.clone(), p))
        };
        let mut t_hi = 1.0;
        let mut guard = 0;
        while eval_t(t_hi) < k {
            t_hi *= 2.0;
            guard += 1;
            assert!(guard < 600, "superlinearity probe failed to bracket the level");
        }
        let mut lo = 0.0;
        let mut hi = t_hi;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eval_t(mid) < k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let mut t = 0.5 * (lo + hi);
        // Newton polish on the ray
        for _ in 0..3 {
            let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let pt = PhasePoint::new(q.clone(), p);
            let f = h.eval(&pt) - k;
            let df = crate::linalg::dot(&h.grad_p(&pt), &dir);
            if df.abs() < 1e-300 {
                break;
            }
            t -= f / df;
        }
        let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
        pts.push(PhasePoint::new(q, p));
    }
    Ok(pts)
}
