//! Estimation of the strict critical value
//! `c0(H) = inf_theta max_x H(x, theta_x)` over closed 1-forms, the
//! fiber-covering value `e = sup_x min_p H(x, p)`, and action lower bounds
//! from zero-homology orbit measures.
//!
//! A closed 1-form is parametrized as harmonic part plus exact part:
//! `theta = sum_i a_i dx_i + du` on tori (spectral gradient of a grid
//! potential) and `theta = a dz + du` on the Sol bundle, where `dz` generates
//! `H^1` and `u` lives on a grid with A-twisted periodicity in the circle
//! direction. The min-max is smoothed by a log-sum-exp of inverse temperature
//! `beta` and minimized by gradient descent with Armijo backtracking while
//! `beta` increases on a schedule. The reported `value` is the exact
//! (unsmoothed) grid maximum at the final form, so smoothing can never
//! over-claim: it is a certified upper bound for the grid-discretized
//! problem.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::fft::{spectral_derivative, GridShape};
use crate::flow::{homology_integral, FlowError, Trajectory};
use crate::geometry::{Chart, PhasePoint, SolLattice};
use crate::hamiltonian::{lagrangian_eval, suspend, HamiltonianError, TonelliHamiltonian};
use crate::math::{exp, ln};

#[derive(Clone, Debug, PartialEq)]
pub enum CriticalError {
    /// The smoothed objective increased across a schedule stage (or became
    /// non-finite).
    Diverged { stage: usize },
    /// A weighted orbit family fails the zero-homology precondition.
    NonZeroHomology { axis: usize, integral: f64 },
    GridTooCoarse { axis: usize, resolution: usize },
    UnsupportedChart,
    Hamiltonian(HamiltonianError),
    Flow(FlowError),
}

impl core::fmt::Display for CriticalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CriticalError::Diverged { stage } => write!(f, "objective diverged in stage {stage}"),
            CriticalError::NonZeroHomology { axis, integral } => {
                write!(f, "weighted homology against basis form {axis} is {integral}, not zero")
            }
            CriticalError::GridTooCoarse { axis, resolution } => {
                write!(f, "grid axis {axis} has resolution {resolution} < 16")
            }
            CriticalError::UnsupportedChart => write!(f, "no closed-form parametrization for this chart"),
            CriticalError::Hamiltonian(e) => write!(f, "{e}"),
            CriticalError::Flow(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CriticalError {}

impl From<HamiltonianError> for CriticalError {
    fn from(e: HamiltonianError) -> Self {
        CriticalError::Hamiltonian(e)
    }
}

impl From<FlowError> for CriticalError {
    fn from(e: FlowError) -> Self {
        CriticalError::Flow(e)
    }
}

// ---------------------------------------------------------------------------
// closed 1-form parametrization
// ---------------------------------------------------------------------------

/// Grid carrying the potential `u` of the exact part of the form.
#[derive(Clone, Debug)]
pub enum FormGrid {
    Torus {
        shape: GridShape,
        periods: Vec<f64>,
    },
    /// `(m, n, s)` lattice coordinates on the Sol bundle; `u` is twisted-
    /// periodic in `s` through the gluing matrix.
    Sol {
        shape: GridShape,
        lattice: SolLattice,
    },
}

impl FormGrid {
    /// Build the grid matching a chart. `res` gives the per-axis resolution
    /// (suspension axes are appended after the base axes).
    pub fn for_chart(chart: &Chart, res: &[usize]) -> Result<FormGrid, CriticalError> {
        for (axis, &r) in res.iter().enumerate() {
            if r < 16 {
                return Err(CriticalError::GridTooCoarse { axis, resolution: r });
            }
        }
        fn torus_periods(chart: &Chart) -> Option<Vec<f64>> {
            match chart {
                Chart::Torus(t) => Some(t.periods.clone()),
                Chart::Suspension { base } => {
                    let mut p = torus_periods(base)?;
                    p.push(1.0);
                    Some(p)
                }
                Chart::Sol(_) => None,
            }
        }
        match chart {
            Chart::Sol(lat) => {
                assert_eq!(res.len(), 3, "Sol grids take three resolutions");
                Ok(FormGrid::Sol {
                    shape: GridShape::new(res.to_vec()),
                    lattice: lat.clone(),
                })
            }
            _ => {
                let periods = torus_periods(chart).ok_or(CriticalError::UnsupportedChart)?;
                assert_eq!(res.len(), periods.len(), "one resolution per axis");
                Ok(FormGrid::Torus {
                    shape: GridShape::new(res.to_vec()),
                    periods,
                })
            }
        }
    }

    pub fn shape(&self) -> &GridShape {
        match self {
            FormGrid::Torus { shape, .. } => shape,
            FormGrid::Sol { shape, .. } => shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape().dims.len()
    }

    /// Number of harmonic coefficients: one per axis on tori, one (`dz`) on
    /// the Sol bundle.
    pub fn harmonic_dim(&self) -> usize {
        match self {
            FormGrid::Torus { shape, .. } => shape.dims.len(),
            FormGrid::Sol { .. } => 1,
        }
    }

    /// Base coordinates of every grid point, in chart coordinates.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            FormGrid::Torus { shape, periods } => {
                let mut pts = Vec::with_capacity(shape.len());
                for f in 0..shape.len() {
                    let idx = shape.unflat(f);
                    pts.push(
                        idx.iter()
                            .zip(periods)
                            .zip(&shape.dims)
                            .map(|((&i, &per), &n)| per * i as f64 / n as f64)
                            .collect(),
                    );
                }
                pts
            }
            FormGrid::Sol { shape, lattice } => {
                let mut pts = Vec::with_capacity(shape.len());
                for f in 0..shape.len() {
                    let idx = shape.unflat(f);
                    let m = idx[0] as f64 / shape.dims[0] as f64;
                    let n = idx[1] as f64 / shape.dims[1] as f64;
                    let s = idx[2] as f64 / shape.dims[2] as f64;
                    let x = lattice.p[0][0] * m + lattice.p[0][1] * n;
                    let y = lattice.p[1][0] * m + lattice.p[1][1] * n;
                    pts.push(vec![x, y, s * lattice.log_lambda]);
                }
                pts
            }
        }
    }

    /// Centered difference along an axis of the Sol lattice grid, with the
    /// A-twisted wrap in the circle direction. The grid spacing is in the
    /// unit lattice coordinates `(m, n, s)`.
    fn sol_axis_derivative(shape: &GridShape, lattice: &SolLattice, field: &[f64], axis: usize) -> Vec<f64> {
        let dims = &shape.dims;
        let n0 = dims[0] as i64;
        let n1 = dims[1] as i64;
        let n2 = dims[2] as i64;
        let a = &lattice.a;
        // A and A^{-1} act on the (m, n) index plane at the s wrap
        let fwd = |i: i64, j: i64| -> (i64, i64) {
            (
                (a[0][0] * i + a[0][1] * j).rem_euclid(n0),
                (a[1][0] * i + a[1][1] * j).rem_euclid(n1),
            )
        };
        let inv = |i: i64, j: i64| -> (i64, i64) {
            (
                (a[1][1] * i - a[0][1] * j).rem_euclid(n0),
                (-a[1][0] * i + a[0][0] * j).rem_euclid(n1),
            )
        };
        let at = |i: i64, j: i64, k: i64| -> f64 {
            field[(i as usize * dims[1] + j as usize) * dims[2] + k as usize]
        };
        let h = 1.0 / dims[axis] as f64;
        let mut out = vec![0.0; field.len()];
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    let (up, down) = match axis {
                        0 => (at((i + 1).rem_euclid(n0), j, k), at((i - 1).rem_euclid(n0), j, k)),
                        1 => (at(i, (j + 1).rem_euclid(n1), k), at(i, (j - 1).rem_euclid(n1), k)),
                        _ => {
                            let up = if k + 1 < n2 {
                                at(i, j, k + 1)
                            } else {
                                let (ii, jj) = inv(i, j);
                                at(ii, jj, 0)
                            };
                            let down = if k > 0 {
                                at(i, j, k - 1)
                            } else {
                                let (ii, jj) = fwd(i, j);
                                at(ii, jj, n2 - 1)
                            };
                            (up, down)
                        }
                    };
                    out[(i as usize * dims[1] + j as usize) * dims[2] + k as usize] =
                        (up - down) / (2.0 * h);
                }
            }
        }
        out
    }

    /// Covector components of `du` at every grid point, in chart coordinates,
    /// as a flat row-major buffer (`dim` entries per point).
    pub fn du_flat(&self, potential: &[f64]) -> Vec<f64> {
        match self {
            FormGrid::Torus { shape, periods } => {
                let n = shape.dims.len();
                let mut out = vec![0.0; shape.len() * n];
                for axis in 0..n {
                    let d = spectral_derivative(shape, potential, axis, periods[axis]);
                    for (f, v) in d.into_iter().enumerate() {
                        out[f * n + axis] = v;
                    }
                }
                out
            }
            FormGrid::Sol { shape, lattice } => {
                let dm = Self::sol_axis_derivative(shape, lattice, potential, 0);
                let dn = Self::sol_axis_derivative(shape, lattice, potential, 1);
                let ds = Self::sol_axis_derivative(shape, lattice, potential, 2);
                let pi = &lattice.p_inv;
                let mut out = vec![0.0; shape.len() * 3];
                for f in 0..shape.len() {
                    // grad_(x,y) = P^{-T} grad_(m,n); grad_z = grad_s / log lambda
                    out[f * 3] = pi[0][0] * dm[f] + pi[1][0] * dn[f];
                    out[f * 3 + 1] = pi[0][1] * dm[f] + pi[1][1] * dn[f];
                    out[f * 3 + 2] = ds[f] / lattice.log_lambda;
                }
                out
            }
        }
    }

    /// Covector components of `du` at every grid point.
    pub fn du(&self, potential: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim();
        self.du_flat(potential)
            .chunks(n)
            .map(|c| c.to_vec())
            .collect()
    }

    /// Adjoint of the map `u -> du` applied to a flat covector field:
    /// returns `sum_axes D_axis^T (B^T v)_axis`; every centered or spectral
    /// derivative here is skew-adjoint, so `D^T = -D`.
    fn du_adjoint(&self, field: &[f64]) -> Vec<f64> {
        match self {
            FormGrid::Torus { shape, periods } => {
                let n = shape.dims.len();
                let mut grad = vec![0.0; shape.len()];
                let mut comp = vec![0.0; shape.len()];
                for axis in 0..n {
                    for (f, c) in comp.iter_mut().enumerate() {
                        *c = field[f * n + axis];
                    }
                    let d = spectral_derivative(shape, &comp, axis, periods[axis]);
                    for (g, dv) in grad.iter_mut().zip(&d) {
                        *g -= dv;
                    }
                }
                grad
            }
            FormGrid::Sol { shape, lattice } => {
                let pi = &lattice.p_inv;
                let len = shape.len();
                let mut grad = vec![0.0; len];
                // (B^T v) with B = blockdiag(P^{-T}, 1/log lambda)
                let mut w = vec![0.0; len];
                for axis in 0..3usize {
                    for (f, wv) in w.iter_mut().enumerate() {
                        let v = &field[f * 3..f * 3 + 3];
                        *wv = match axis {
                            0 => pi[0][0] * v[0] + pi[0][1] * v[1],
                            1 => pi[1][0] * v[0] + pi[1][1] * v[1],
                            _ => v[2] / lattice.log_lambda,
                        };
                    }
                    let d = Self::sol_axis_derivative(shape, lattice, &w, axis);
                    for (g, dv) in grad.iter_mut().zip(&d) {
                        *g -= dv;
                    }
                }
                grad
            }
        }
    }

    /// Covector of the harmonic part with coefficients `a`.
    fn harmonic_covector(&self, a: &[f64]) -> Vec<f64> {
        match self {
            FormGrid::Torus { .. } => a.to_vec(),
            FormGrid::Sol { .. } => vec![0.0, 0.0, a[0]],
        }
    }

    /// Pairing of the fiber gradient with the harmonic basis forms.
    fn harmonic_pairing(&self, g: &[f64]) -> Vec<f64> {
        match self {
            FormGrid::Torus { .. } => g.to_vec(),
            FormGrid::Sol { .. } => vec![g[2]],
        }
    }
}

/// A closed 1-form `theta = harmonic + du` on the grid.
#[derive(Clone, Debug)]
pub struct ClosedOneFormParam {
    pub grid: FormGrid,
    pub harmonic: Vec<f64>,
    /// grid values of the potential `u`, zero-mean (gauge fixed)
    pub potential: Vec<f64>,
}

impl ClosedOneFormParam {
    pub fn zero(grid: FormGrid) -> Self {
        let harmonic = vec![0.0; grid.harmonic_dim()];
        let potential = vec![0.0; grid.shape().len()];
        ClosedOneFormParam {
            grid,
            harmonic,
            potential,
        }
    }

    /// Covector `theta(x)` at every grid point, flat row-major.
    pub fn covectors_flat(&self) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut thetas = self.grid.du_flat(&self.potential);
        let h = self.grid.harmonic_covector(&self.harmonic);
        for row in thetas.chunks_mut(dim) {
            for (t, a) in row.iter_mut().zip(&h) {
                *t += a;
            }
        }
        thetas
    }

    /// Covector `theta(x)` at every grid point.
    pub fn covectors(&self) -> Vec<Vec<f64>> {
        let dim = self.grid.dim();
        self.covectors_flat()
            .chunks(dim)
            .map(|c| c.to_vec())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// the min-max optimizer
// ---------------------------------------------------------------------------

/// Inverse-temperature schedule for the log-sum-exp smoothing.
#[derive(Clone, Debug)]
pub struct SmoothingSchedule {
    pub betas: Vec<f64>,
    pub iters_per_stage: usize,
    /// stage exit when the sup-norm of the gradient falls below this
    pub grad_tol: f64,
    /// stage exit when three consecutive accepted steps decrease the
    /// objective by less than `progress_tol * (1 + |F|)`
    pub progress_tol: f64,
}

impl Default for SmoothingSchedule {
    fn default() -> Self {
        SmoothingSchedule {
            betas: vec![10.0, 100.0, 1000.0, 10000.0],
            iters_per_stage: 500,
            grad_tol: 1e-9,
            progress_tol: 1e-13,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalEstimate {
    /// exact grid max of `H(x, theta_x)` at the returned form; certified
    /// upper bound of the grid-discretized inf-max
    pub value: f64,
    pub upper_bound: f64,
    /// action lower bound when a zero-homology measure was supplied
    pub lower_bound: Option<f64>,
    pub minimizing_form: ClosedOneFormParam,
    pub grid_dims: Vec<usize>,
    pub iterations: usize,
    /// smoothed objective per accepted iteration (non-increasing per stage)
    pub history: Vec<f64>,
}

/// Softmax weights below `exp(-46)` cannot contribute at f64 precision.
const EXP_CUTOFF: f64 = -46.0;

struct Objective<'a> {
    h: &'a dyn TonelliHamiltonian,
    grid: &'a FormGrid,
    /// flat row-major base coordinates of the grid points
    points: Vec<f64>,
    dim: usize,
}

impl<'a> Objective<'a> {
    fn new(h: &'a dyn TonelliHamiltonian, grid: &'a FormGrid) -> Self {
        let dim = grid.dim();
        let mut points = Vec::with_capacity(grid.shape().len() * dim);
        for q in grid.points() {
            points.extend_from_slice(&q);
        }
        Objective { h, grid, points, dim }
    }

    fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    /// `H(x, theta_x)` over the grid, written into `out`; scratch phase point
    /// reused to keep the hot loop allocation-free.
    fn h_values_into(&self, thetas: &[f64], scratch: &mut PhasePoint, out: &mut [f64]) {
        let d = self.dim;
        for i in 0..self.n_points() {
            scratch.q.copy_from_slice(&self.points[i * d..(i + 1) * d]);
            scratch.p.copy_from_slice(&thetas[i * d..(i + 1) * d]);
            out[i] = self.h.eval(scratch);
        }
    }

    fn scratch(&self) -> PhasePoint {
        PhasePoint::new(vec![0.0; self.dim], vec![0.0; self.dim])
    }

    fn exact_max(&self, form: &ClosedOneFormParam) -> f64 {
        let thetas = form.covectors_flat();
        let mut scratch = self.scratch();
        let mut hv = vec![0.0; self.n_points()];
        self.h_values_into(&thetas, &mut scratch, &mut hv);
        hv.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean log-sum-exp smoothing of the grid max,
    /// `F = C + ln( (1/N) sum exp(beta (H - C)) ) / beta`, `C = max H`.
    fn smoothed(&self, form: &ClosedOneFormParam, beta: f64) -> f64 {
        let thetas = form.covectors_flat();
        let mut scratch = self.scratch();
        let mut hv = vec![0.0; self.n_points()];
        self.h_values_into(&thetas, &mut scratch, &mut hv);
        let c = hv.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let s: f64 = hv
            .iter()
            .map(|&v| {
                let arg = beta * (v - c);
                if arg < EXP_CUTOFF {
                    0.0
                } else {
                    exp(arg)
                }
            })
            .sum();
        c + ln(s / hv.len() as f64) / beta
    }

    /// Smoothed objective with the gradient in `(harmonic, potential)`.
    fn smoothed_with_grad(
        &self,
        form: &ClosedOneFormParam,
        beta: f64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let n_pts = self.n_points();
        let thetas = form.covectors_flat();
        let mut scratch = self.scratch();
        let mut hv = vec![0.0; n_pts];
        self.h_values_into(&thetas, &mut scratch, &mut hv);
        let c = hv.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut w = vec![0.0; n_pts];
        let mut s = 0.0;
        for (wi, &v) in w.iter_mut().zip(&hv) {
            let arg = beta * (v - c);
            *wi = if arg < EXP_CUTOFF { 0.0 } else { exp(arg) };
            s += *wi;
        }
        let f = c + ln(s / n_pts as f64) / beta;
        // softmax weights times the fiber gradient, flat over the grid
        let mut weighted = vec![0.0; n_pts * d];
        let mut grad_a = vec![0.0; self.grid.harmonic_dim()];
        for i in 0..n_pts {
            if w[i] == 0.0 {
                continue;
            }
            scratch.q.copy_from_slice(&self.points[i * d..(i + 1) * d]);
            scratch.p.copy_from_slice(&thetas[i * d..(i + 1) * d]);
            let g = self.h.grad_p(&scratch);
            let wi = w[i] / s;
            for k in 0..d {
                weighted[i * d + k] = wi * g[k];
            }
            let pair = self.grid.harmonic_pairing(&g);
            for (ga, p) in grad_a.iter_mut().zip(&pair) {
                *ga += wi * p;
            }
        }
        let mut grad_u = self.grid.du_adjoint(&weighted);
        // gauge: du ignores constants, keep the gradient mean-free
        let mean: f64 = grad_u.iter().sum::<f64>() / grad_u.len() as f64;
        for g in grad_u.iter_mut() {
            *g -= mean;
        }
        (f, grad_a, grad_u)
    }
}

/// Smallest `k` whose level set meets every fiber over the grid:
/// `e = max over grid base points of min_p H(x, p)`.
pub fn estimate_e(h: &dyn TonelliHamiltonian, grid: &FormGrid) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for q in grid.points() {
        let p = h.fiber_minimizer(&q);
        worst = worst.max(h.eval(&PhasePoint::new(q, p)));
    }
    worst
}

/// Minimize `max_x H(x, theta_x)` over closed grid 1-forms.
pub fn estimate_c0(
    h: &dyn TonelliHamiltonian,
    grid: FormGrid,
    schedule: &SmoothingSchedule,
) -> Result<CriticalEstimate, CriticalError> {
    let obj = Objective::new(h, &grid);
    let mut form = ClosedOneFormParam::zero(grid.clone());
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut step = 1.0f64;
    for (stage, &beta) in schedule.betas.iter().enumerate() {
        let stage_start = obj.smoothed(&form, beta);
        let mut fcur = stage_start;
        let mut stalled = 0u32;
        history.push(fcur);
        for _ in 0..schedule.iters_per_stage {
            let (f, ga, gu) = obj.smoothed_with_grad(&form, beta);
            fcur = f;
            if !f.is_finite() {
                return Err(CriticalError::Diverged { stage });
            }
            let gnorm2 = crate::linalg::dot(&ga, &ga) + crate::linalg::dot(&gu, &gu);
            let gmax = crate::linalg::norm_inf(&ga).max(crate::linalg::norm_inf(&gu));
            if gmax <= schedule.grad_tol {
                break;
            }
            // Armijo backtracking with warm-started step
            let mut alpha = step;
            let mut accepted = false;
            for _ in 0..40 {
                let mut cand = form.clone();
                for (x, g) in cand.harmonic.iter_mut().zip(&ga) {
                    *x -= alpha * g;
                }
                for (x, g) in cand.potential.iter_mut().zip(&gu) {
                    *x -= alpha * g;
                }
                let fc = obj.smoothed(&cand, beta);
                if fc <= f - 1e-4 * alpha * gnorm2 {
                    // keep u mean-free
                    let mean: f64 =
                        cand.potential.iter().sum::<f64>() / cand.potential.len() as f64;
                    for x in cand.potential.iter_mut() {
                        *x -= mean;
                    }
                    form = cand;
                    fcur = fc;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (alpha * 2.0).min(1e4);
            iterations += 1;
            history.push(fcur);
            if f - fcur <= schedule.progress_tol * (1.0 + fcur.abs()) {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
            } else {
                stalled = 0;
            }
        }
        if fcur > stage_start + 1e-9 {
            return Err(CriticalError::Diverged { stage });
        }
    }
    let value = obj.exact_max(&form);
    Ok(CriticalEstimate {
        value,
        upper_bound: value,
        lower_bound: None,
        grid_dims: form.grid.shape().dims.clone(),
        minimizing_form: form,
        iterations,
        history,
    })
}

/// Closed 1-form basis paired against orbit homology: `dx_i` on tori (and
/// the `dt` axis of a suspension), `dz` on Sol.
fn homology_basis(chart: &Chart) -> Result<Vec<Vec<f64>>, CriticalError> {
    match chart {
        Chart::Torus(t) => {
            let n = t.dim();
            Ok((0..n)
                .map(|i| {
                    let mut e = vec![0.0; n];
                    e[i] = 1.0;
                    e
                })
                .collect())
        }
        Chart::Sol(_) => Ok(vec![vec![0.0, 0.0, 1.0]]),
        Chart::Suspension { base } => {
            let inner = homology_basis(base)?;
            let n = chart.base_dim();
            let mut out: Vec<Vec<f64>> = inner
                .into_iter()
                .map(|mut e| {
                    e.push(0.0);
                    debug_assert_eq!(e.len(), n);
                    e
                })
                .collect();
            let mut et = vec![0.0; n];
            et[n - 1] = 1.0;
            out.push(et);
            Ok(out)
        }
    }
}

/// Action lower bound for `c0` from a weighted family of orbits forming a
/// zero-homology invariant measure: returns
/// `-(sum_i w_i average_t L)`, valid because `int (L + c) dnu >= 0` for any
/// zero-homology measure. Fails with `NonZeroHomology` when the weighted
/// pairing with some basis form exceeds `1e-6`.
pub fn lower_bound_from_measure(
    h: &Arc<dyn TonelliHamiltonian>,
    orbits: &[(Trajectory, f64)],
) -> Result<f64, CriticalError> {
    assert!(!orbits.is_empty());
    let wsum: f64 = orbits.iter().map(|(_, w)| w).sum();
    assert!(
        orbits.iter().all(|(_, w)| *w > 0.0) && (wsum - 1.0).abs() < 1e-12,
        "weights must be positive and sum to 1"
    );
    let basis = homology_basis(h.chart())?;
    for (axis, e) in basis.iter().enumerate() {
        let constant = |_q: &[f64]| e.clone();
        // each orbit carries its normalized (probability) measure
        let mut total = 0.0;
        for (traj, w) in orbits {
            total += w * homology_integral(traj, &constant) / traj.duration();
        }
        if total.abs() > 1e-6 {
            return Err(CriticalError::NonZeroHomology {
                axis,
                integral: total,
            });
        }
    }
    let mut bound = 0.0;
    for (traj, w) in orbits {
        // trapezoidal time average of L along the orbit
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 0..traj.times.len() {
            let l = lagrangian_eval(h.as_ref(), &traj.states[i].q, &traj.velocities[i])?;
            if i > 0 {
                acc += 0.5 * (l + prev) * (traj.times[i] - traj.times[i - 1]);
            }
            prev = l;
        }
        bound -= w * acc / traj.duration();
    }
    Ok(bound)
}

/// Result of the suspension comparison `c0(Hbar) = c0(H)`.
#[derive(Clone, Debug)]
pub struct SuspensionCheck {
    pub base: CriticalEstimate,
    pub suspended: CriticalEstimate,
    pub gap: f64,
    /// harmonic coefficient of the `dt` axis in the suspended minimizer
    pub dt_harmonic: f64,
}

/// Run `estimate_c0` on `H` and on its suspension (one more grid axis of
/// resolution `t_res`) and report the gap.
pub fn suspension_critical_check(
    h: Arc<dyn TonelliHamiltonian>,
    base_res: &[usize],
    t_res: usize,
    schedule: &SmoothingSchedule,
) -> Result<SuspensionCheck, CriticalError> {
    let base_grid = FormGrid::for_chart(h.chart(), base_res)?;
    let base = estimate_c0(h.as_ref(), base_grid, schedule)?;
    let sus = suspend(h);
    let mut res = base_res.to_vec();
    res.push(t_res);
    let sus_grid = FormGrid::for_chart(sus.chart(), &res)?;
    let suspended = estimate_c0(&sus, sus_grid, schedule)?;
    let gap = (suspended.value - base.value).abs();
    let dt_harmonic = *suspended.minimizing_form.harmonic.last().unwrap();
    Ok(SuspensionCheck {
        base,
        suspended,
        gap,
        dt_harmonic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusChart;
    use crate::hamiltonian::{BaseOneForm, KineticFlat, MagneticFlat, SolHamiltonian};
    use crate::rng::CounterRng;

    fn rotating_magnetic() -> MagneticFlat {
        MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap()
    }

    #[test]
    fn fiber_covering_value_of_builtins_is_zero() {
        let kin = KineticFlat::new(TorusChart::unit(2));
        let grid = FormGrid::for_chart(kin.chart(), &[16, 16]).unwrap();
        assert!(estimate_e(&kin, &grid).abs() < 1e-12);

        let mag = rotating_magnetic();
        let grid = FormGrid::for_chart(mag.chart(), &[16, 16]).unwrap();
        assert!(estimate_e(&mag, &grid).abs() < 1e-12);

        let sol = SolHamiltonian::new(crate::geometry::SolLattice::standard());
        let grid = FormGrid::for_chart(sol.chart(), &[16, 16, 16]).unwrap();
        assert!(estimate_e(&sol, &grid).abs() < 1e-12);
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let kin = KineticFlat::new(TorusChart::unit(2));
        let err = FormGrid::for_chart(kin.chart(), &[8, 16]).unwrap_err();
        assert!(matches!(err, CriticalError::GridTooCoarse { axis: 0, .. }));
    }

    #[test]
    fn torus_gradient_matches_finite_differences() {
        let mag = rotating_magnetic();
        let grid = FormGrid::for_chart(mag.chart(), &[16, 16]).unwrap();
        let obj = Objective::new(&mag, &grid);
        let mut rng = CounterRng::new(3);
        let mut form = ClosedOneFormParam::zero(grid.clone());
        form.harmonic = vec![0.13, -0.07];
        for u in form.potential.iter_mut() {
            *u = 0.02 * rng.normal();
        }
        let beta = 50.0;
        let (_, ga, gu) = obj.smoothed_with_grad(&form, beta);
        let h = 1e-6;
        for j in 0..2 {
            let mut fp = form.clone();
            fp.harmonic[j] += h;
            let mut fm = form.clone();
            fm.harmonic[j] -= h;
            let fd = (obj.smoothed(&fp, beta) - obj.smoothed(&fm, beta)) / (2.0 * h);
            assert!((ga[j] - fd).abs() < 1e-6, "harmonic {j}: {} vs {fd}", ga[j]);
        }
        for j in [0usize, 5, 17, 100, 255] {
            let mut fp = form.clone();
            fp.potential[j] += h;
            let mut fm = form.clone();
            fm.potential[j] -= h;
            let fd = (obj.smoothed(&fp, beta) - obj.smoothed(&fm, beta)) / (2.0 * h);
            assert!((gu[j] - fd).abs() < 1e-6, "potential {j}: {} vs {fd}", gu[j]);
        }
    }

    #[test]
    fn sol_gradient_matches_finite_differences() {
        let sol = SolHamiltonian::new(crate::geometry::SolLattice::standard());
        let grid = FormGrid::for_chart(sol.chart(), &[16, 16, 16]).unwrap();
        let obj = Objective::new(&sol, &grid);
        let mut rng = CounterRng::new(7);
        let mut form = ClosedOneFormParam::zero(grid.clone());
        form.harmonic = vec![0.05];
        for u in form.potential.iter_mut() {
            *u = 0.02 * rng.normal();
        }
        let beta = 40.0;
        let (_, ga, gu) = obj.smoothed_with_grad(&form, beta);
        let h = 1e-6;
        {
            let mut fp = form.clone();
            fp.harmonic[0] += h;
            let mut fm = form.clone();
            fm.harmonic[0] -= h;
            let fd = (obj.smoothed(&fp, beta) - obj.smoothed(&fm, beta)) / (2.0 * h);
            assert!((ga[0] - fd).abs() < 1e-6, "{} vs {fd}", ga[0]);
        }
        for j in [0usize, 33, 341, 1000, 4000] {
            let mut fp = form.clone();
            fp.potential[j] += h;
            let mut fm = form.clone();
            fm.potential[j] -= h;
            let fd = (obj.smoothed(&fp, beta) - obj.smoothed(&fm, beta)) / (2.0 * h);
            assert!((gu[j] - fd).abs() < 1e-6, "potential {j}: {} vs {fd}", gu[j]);
        }
    }

    #[test]
    fn twisted_wrap_is_a_grid_bijection() {
        // the s-axis derivative of a twisted-constant field vanishes
        let lat = crate::geometry::SolLattice::standard();
        let shape = GridShape::new(vec![16, 16, 16]);
        // u constant is trivially twisted-periodic
        let u = vec![3.25; shape.len()];
        let d = FormGrid::sol_axis_derivative(&shape, &lat, &u, 2);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kinetic_c0_is_zero() {
        let kin = KineticFlat::new(TorusChart::unit(2));
        let grid = FormGrid::for_chart(kin.chart(), &[16, 16]).unwrap();
        let est = estimate_c0(&kin, grid, &SmoothingSchedule::default()).unwrap();
        assert!(est.value.abs() <= 1e-6, "c0 = {}", est.value);
    }

    #[test]
    fn constant_closed_theta_is_cancelled_exactly() {
        let mag = MagneticFlat::new(
            TorusChart::unit(2),
            BaseOneForm::constant(vec![0.7, 0.0]),
            None,
        )
        .unwrap();
        let grid = FormGrid::for_chart(mag.chart(), &[16, 16]).unwrap();
        let est = estimate_c0(&mag, grid, &SmoothingSchedule::default()).unwrap();
        assert!(est.value.abs() <= 1e-6, "c0 = {}", est.value);
        assert!((est.minimizing_form.harmonic[0] + 0.7).abs() <= 2e-3);
    }

    #[test]
    fn sol_c0_is_one_half() {
        // theta = 0 is already optimal: H(x, 0) = 1/2 everywhere and the
        // smoothed gradient vanishes there
        let sol = SolHamiltonian::new(crate::geometry::SolLattice::standard());
        let grid = FormGrid::for_chart(sol.chart(), &[16, 16, 16]).unwrap();
        let est = estimate_c0(&sol, grid, &SmoothingSchedule::default()).unwrap();
        assert!(est.value >= 0.48 && est.value <= 0.55, "c0 = {}", est.value);
    }

    #[test]
    fn history_is_monotone_within_stages() {
        let mag = rotating_magnetic();
        let grid = FormGrid::for_chart(mag.chart(), &[16, 16]).unwrap();
        let schedule = SmoothingSchedule {
            betas: vec![10.0, 100.0],
            iters_per_stage: 50,
            ..SmoothingSchedule::default()
        };
        let est = estimate_c0(&mag, grid, &schedule).unwrap();
        // stage restarts may jump up; within a stage Armijo is monotone
        let mut increases = 0;
        for w in est.history.windows(2) {
            if w[1] > w[0] + 1e-12 {
                increases += 1;
            }
        }
        assert!(increases <= schedule.betas.len(), "history rose {increases} times");
    }
}
