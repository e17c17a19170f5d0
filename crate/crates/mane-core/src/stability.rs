//! Stabilizing constructions for suspended level sets.
//!
//! Given a 1-form `alpha` on a band of levels of `H` with `i_{X_H} d alpha = 0`
//! and `alpha(X_H)` constant on each level, the suspended level
//! `Hbar^{-1}(k)`, `Hbar = H + p_t^2/2`, carries the stabilizing 1-form
//!
//! ```text
//! lambda = f(p_t) pi^* alpha + g(p_t) dt,
//! g(s) = -int_0^s r(u) f'(u) / u du,      r(s) = alpha(X_H) at level k - s^2/2,
//! ```
//!
//! with `f` an even bump, identically 1 on `(-eps/2, eps/2)` and supported in
//! `(-eps, eps)`, `eps < sqrt(2 delta)`. Then `lambda(X_Hbar) = f r + g p_t > 0`
//! and `i_{X_Hbar} d lambda = -(r f' + p_t g') dp_t = 0` by the choice of `g`.
//!
//! The module also builds the level-function blending family
//! `g_r = alpha(r) beta_0(r) + (1 - alpha(r)) f_{beta_1(r)}` used to deform a
//! stable level's thickening into honest energy levels, and the convexifying
//! reparametrization `h` (identity below the band, `e^{A r} + B` above) that
//! restores fiberwise convexity after such a deformation.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::forms::OneFormField;
use crate::geometry::{sample_level_set, GeometryError, PhasePoint};
use crate::hamiltonian::{hamiltonian_vector_field, TonelliHamiltonian};
use crate::math::{exp, sqrt};
use crate::rng::CounterRng;
use crate::spline::CubicSpline;

#[derive(Clone, Debug, PartialEq)]
pub enum StabilityError {
    /// `alpha(X_H)` failed to be constant on a level.
    NotLevelConstant { level: f64, spread: f64 },
    /// `d_r g_r <= 0` at the reported witness.
    MonotonicityViolation { r: f64, x: f64, value: f64 },
    ParameterChainInvalid,
    /// A fiber Hessian of `h . H` has a non-positive eigenvalue.
    ConvexityCheckFailed { level: f64, eigenvalue: f64 },
    Geometry(GeometryError),
}

impl core::fmt::Display for StabilityError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StabilityError::NotLevelConstant { level, spread } => {
                write!(f, "alpha(X_H) varies by {spread} on level {level}")
            }
            StabilityError::MonotonicityViolation { r, x, value } => {
                write!(f, "d_r g_r = {value} <= 0 at (r, x) = ({r}, {x})")
            }
            StabilityError::ParameterChainInvalid => {
                write!(f, "parameter chain must satisfy 0 < delta1 < delta < eps2 < eps1 < eps")
            }
            StabilityError::ConvexityCheckFailed { level, eigenvalue } => {
                write!(f, "fiber Hessian eigenvalue {eigenvalue} <= 0 near level {level}")
            }
            StabilityError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for StabilityError {}

impl From<GeometryError> for StabilityError {
    fn from(e: GeometryError) -> Self {
        StabilityError::Geometry(e)
    }
}

// ---------------------------------------------------------------------------
// smooth steps
// ---------------------------------------------------------------------------

/// `exp(-1/t)` continued by zero, the standard flat mollifier piece.
fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        exp(-1.0 / t)
    }
}

fn psi_deriv(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        exp(-1.0 / t) / (t * t)
    }
}

/// C-infinity step: 0 for `t <= 0`, 1 for `t >= 1`, all derivatives flat at
/// the ends.
pub fn smooth_step(t: f64) -> f64 {
    let a = psi(t);
    let b = psi(1.0 - t);
    a / (a + b)
}

pub fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let a = psi(t);
    let b = psi(1.0 - t);
    let da = psi_deriv(t);
    let db = -psi_deriv(1.0 - t);
    (da * b - a * db) / ((a + b) * (a + b))
}

/// Quintic polynomial step `6t^5 - 15t^4 + 10t^3` clamped to `[0, 1]`.
pub fn quintic_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

pub fn quintic_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

/// Antiderivative of the quintic step with value 0 at 0 (equals `t - 1/2`
/// plus a constant for `t >= 1`).
fn quintic_step_integral(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        t - 0.5
    } else {
        t * t * t * t * (2.5 + t * (-3.0 + t))
    }
}

// ---------------------------------------------------------------------------
// the bump f
// ---------------------------------------------------------------------------

/// Even bump: 1 on `(-eps/2, eps/2)`, 0 outside `(-eps, eps)`, monotone in
/// between, smooth (mollifier-based transition, so finite-difference
/// residuals of `d lambda` are not polluted by jumps in higher derivatives).
#[derive(Clone, Debug)]
pub struct BumpFunction {
    pub eps: f64,
}

impl BumpFunction {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0);
        BumpFunction { eps }
    }

    pub fn value(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= 0.5 * self.eps {
            1.0
        } else if a >= self.eps {
            0.0
        } else {
            1.0 - smooth_step((a - 0.5 * self.eps) / (0.5 * self.eps))
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= 0.5 * self.eps || a >= self.eps {
            0.0
        } else {
            let d = -smooth_step_deriv((a - 0.5 * self.eps) / (0.5 * self.eps)) / (0.5 * self.eps);
            if s >= 0.0 {
                d
            } else {
                -d
            }
        }
    }
}

// ---------------------------------------------------------------------------
// r profile and g
// ---------------------------------------------------------------------------

/// The even profile `s -> alpha(X_H)` on level `k - s^2/2`, tabulated over
/// `[0, s_max)` and spline-interpolated.
#[derive(Clone, Debug)]
pub struct RProfile {
    spline: CubicSpline,
    pub s_max: f64,
}

impl RProfile {
    pub fn eval(&self, s: f64) -> f64 {
        self.spline.eval(s.clamp(-self.s_max, self.s_max))
    }
}

/// Tabulate `r(s) = alpha(X_H)|_{H = k - s^2/2}`, checking on every level
/// that `alpha(X_H)` is constant across `samples_per_level` samples within
/// `1e-6` (the hypothesis of the suspension construction).
pub fn r_profile(
    alpha: &OneFormField,
    h: &Arc<dyn TonelliHamiltonian>,
    k: f64,
    delta: f64,
    samples_per_level: usize,
    seed: u64,
) -> Result<RProfile, StabilityError> {
    assert!(delta > 0.0 && samples_per_level >= 2);
    let x = hamiltonian_vector_field(h);
    let s_max = sqrt(2.0 * delta) * (1.0 - 1e-9);
    // tabulate the nonnegative half, then mirror: r is even, and keeping
    // s = 0 an interior knot avoids the natural-end kink there
    let half = 512usize;
    let hstep = s_max / half as f64;
    let mut right = Vec::with_capacity(half + 1);
    for j in 0..=half {
        let s = j as f64 * hstep;
        let level = k - 0.5 * s * s;
        let pts = sample_level_set(h.as_ref(), level, samples_per_level, seed ^ ((j as u64) << 20))?;
        let vals: Vec<f64> = pts.iter().map(|pt| alpha.at(pt, &x.at(pt))).collect();
        let lo = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if hi - lo > 1e-6 {
            return Err(StabilityError::NotLevelConstant {
                level,
                spread: hi - lo,
            });
        }
        right.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let mut ys = Vec::with_capacity(2 * half + 1);
    for j in (1..=half).rev() {
        ys.push(right[j]);
    }
    ys.extend_from_slice(&right);
    Ok(RProfile {
        spline: CubicSpline::from_uniform(-s_max, hstep, ys),
        s_max,
    })
}

/// `g(s) = -int_0^s r(u) f'(u)/u du`, odd, zero on `|s| <= eps/2`, constant
/// beyond `eps`. Fast evaluation goes through a dense cumulative-Simpson
/// table; `eval_quadrature` integrates adaptively for independent checks.
#[derive(Clone, Debug)]
pub struct GFunction {
    pub r: RProfile,
    pub f: BumpFunction,
    table: CubicSpline,
    g_at_eps: f64,
}

impl GFunction {
    pub fn integrand(&self, u: f64) -> f64 {
        let a = u.abs();
        if a <= 0.5 * self.f.eps || a >= self.f.eps {
            0.0
        } else {
            self.r.eval(u) * self.f.deriv(u) / u
        }
    }

    /// Spline-table evaluation.
    pub fn eval(&self, s: f64) -> f64 {
        let sign = if s >= 0.0 { 1.0 } else { -1.0 };
        let a = s.abs();
        if a <= 0.5 * self.f.eps {
            0.0
        } else if a >= self.f.eps {
            sign * self.g_at_eps
        } else {
            sign * self.table.eval(a)
        }
    }

    /// Adaptive-quadrature evaluation, independent of the table.
    pub fn eval_quadrature(&self, s: f64, tol: f64) -> f64 {
        let sign = if s >= 0.0 { 1.0 } else { -1.0 };
        let a = s.abs();
        let lo = 0.5 * self.f.eps;
        let hi = a.min(self.f.eps);
        if hi <= lo {
            return 0.0;
        }
        let v = crate::quad::adaptive_simpson(&|u| self.integrand(u), lo, hi, tol);
        -sign * v
    }

    /// `g'(s) = -r(s) f'(s) / s`, from the defining integrand.
    pub fn deriv(&self, s: f64) -> f64 {
        if s == 0.0 {
            0.0
        } else {
            -self.integrand(s)
        }
    }

    pub fn value_at_support_edge(&self) -> f64 {
        self.g_at_eps
    }
}

/// Build `g` from the profile and the bump. Requires `eps < sqrt(2 delta)`
/// (the profile must cover the bump's support).
pub fn g_from_integral(r: RProfile, f: BumpFunction) -> Result<GFunction, StabilityError> {
    if f.eps >= r.s_max {
        return Err(StabilityError::ParameterChainInvalid);
    }
    // cumulative composite Simpson over [0, eps]
    let n = 2048usize;
    let h = f.eps / n as f64;
    let integrand = |u: f64| {
        let a = u.abs();
        if a <= 0.5 * f.eps || a >= f.eps {
            0.0
        } else {
            r.eval(u) * f.deriv(u) / u
        }
    };
    let mut acc = 0.0;
    let mut ys = Vec::with_capacity(n + 1);
    ys.push(0.0);
    for i in 0..n {
        let a = i as f64 * h;
        let b = a + h;
        acc += (b - a) / 6.0 * (integrand(a) + 4.0 * integrand(0.5 * (a + b)) + integrand(b));
        ys.push(-acc);
    }
    let g_at_eps = ys[n];
    Ok(GFunction {
        r,
        f,
        table: CubicSpline::from_uniform(0.0, h, ys),
        g_at_eps,
    })
}

// ---------------------------------------------------------------------------
// the stabilizer and its verification
// ---------------------------------------------------------------------------

/// `lambda = f(p_t) pi^* alpha + g(p_t) dt` on the suspension phase space
/// (layout `[q..., t, p..., p_t]`, `base_dim = dim M`).
pub fn suspension_stabilizer(
    alpha: &OneFormField,
    f: &BumpFunction,
    g: &GFunction,
    base_dim: usize,
) -> OneFormField {
    let alpha = alpha.clone();
    let f = f.clone();
    let g = g.clone();
    let n = base_dim;
    OneFormField::new(
        2 * n + 2,
        Arc::new(move |pt: &PhasePoint, v: &[f64]| {
            let p_t = pt.p[n];
            let base_pt = PhasePoint::new(pt.q[..n].to_vec(), pt.p[..n].to_vec());
            let mut base_v = Vec::with_capacity(2 * n);
            base_v.extend_from_slice(&v[..n]);
            base_v.extend_from_slice(&v[n + 1..2 * n + 1]);
            f.value(p_t) * alpha.at(&base_pt, &base_v) + g.eval(p_t) * v[n]
        }),
    )
}

/// The direction form `alpha = p . dq / |p|` on `T^* T^n` minus the zero
/// section; for the flat kinetic Hamiltonian it satisfies both hypotheses of
/// the suspension construction exactly: `i_{X_H} d alpha = 0` and
/// `alpha(X_H) = |p| = sqrt(2H)`.
pub fn kinetic_direction_form(base_dim: usize) -> OneFormField {
    let n = base_dim;
    OneFormField::new(
        2 * n,
        Arc::new(move |pt: &PhasePoint, v: &[f64]| {
            let norm = crate::linalg::norm(&pt.p);
            crate::linalg::dot(&pt.p, &v[..n]) / norm
        }),
    )
}

/// Sampled verification of the two stability obligations on a level set.
#[derive(Clone, Debug)]
pub struct StabilityCertificate {
    pub level: f64,
    pub samples: usize,
    /// `min lambda(X_Hbar)` over the samples
    pub min_lambda_x: f64,
    /// `max |i_{X_Hbar} d lambda (v)|` over samples and random unit tangents
    pub max_contraction: f64,
    pub eps: f64,
    pub delta: f64,
}

/// Sample `Hbar^{-1}(k)` and measure `min lambda(X)` and the worst
/// finite-difference contraction `|d lambda(X, v)|` over `dirs_per_sample`
/// random unit tangent directions per sample.
pub fn verify_stability(
    lambda: &OneFormField,
    h_bar: &Arc<dyn TonelliHamiltonian>,
    k: f64,
    n_samples: usize,
    seed: u64,
    eps: f64,
    delta: f64,
) -> Result<StabilityCertificate, StabilityError> {
    let pts = sample_level_set(h_bar.as_ref(), k, n_samples, seed)?;
    let x = hamiltonian_vector_field(h_bar);
    let dlambda = crate::forms::exterior_derivative(lambda, crate::forms::FD_STEP);
    let dim = lambda.dim;
    let mut rng = CounterRng::new(seed ^ 0xD1F7).split(99);
    let dirs_per_sample = 8;
    let mut min_lambda_x = f64::INFINITY;
    let mut max_contraction = 0.0f64;
    for pt in &pts {
        let xv = x.at(pt);
        min_lambda_x = min_lambda_x.min(lambda.at(pt, &xv));
        for _ in 0..dirs_per_sample {
            let v = rng.unit_vector(dim);
            max_contraction = max_contraction.max(dlambda.at(pt, &xv, &v).abs());
        }
    }
    Ok(StabilityCertificate {
        level: k,
        samples: pts.len(),
        min_lambda_x,
        max_contraction,
        eps,
        delta,
    })
}

// ---------------------------------------------------------------------------
// the blending family of level-function deformations
// ---------------------------------------------------------------------------

/// Band parameters `0 < delta1 < delta < eps2 < eps1 < eps`.
#[derive(Clone, Copy, Debug)]
pub struct BlendParams {
    pub eps: f64,
    pub delta: f64,
    pub delta1: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl BlendParams {
    fn valid(&self) -> bool {
        0.0 < self.delta1
            && self.delta1 < self.delta
            && self.delta < self.eps2
            && self.eps2 < self.eps1
            && self.eps1 < self.eps
    }
}

/// The blended family `g_r(x) = alpha(r) beta_0(r) + (1 - alpha(r))
/// f_{beta_1(r)}(x)`, with the three auxiliary profiles realized as quintic
/// smoothsteps honoring the stated plateau and slope constraints.
pub struct BlendFamily {
    pub params: BlendParams,
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl BlendFamily {
    /// Even switch: 0 on `[0, delta1]`, 1 beyond `eps1`, increasing between.
    pub fn alpha(&self, r: f64) -> f64 {
        let p = &self.params;
        quintic_step((r.abs() - p.delta1) / (p.eps1 - p.delta1))
    }

    fn alpha_deriv(&self, r: f64) -> f64 {
        let p = &self.params;
        let d = quintic_step_deriv((r.abs() - p.delta1) / (p.eps1 - p.delta1)) / (p.eps1 - p.delta1);
        if r >= 0.0 {
            d
        } else {
            -d
        }
    }

    /// Odd, nondecreasing; constant `(eps1 + eps2)/2 > eps2` on
    /// `[delta1, eps2]`, slope in `(0, 1)` on `(eps2, eps1)`, identity
    /// beyond `eps1`.
    pub fn beta0(&self, r: f64) -> f64 {
        let p = &self.params;
        let a = r.abs();
        let c0 = 0.5 * (p.eps1 + p.eps2);
        let v = if a <= p.delta1 {
            c0 * quintic_step(a / p.delta1)
        } else if a <= p.eps2 {
            c0
        } else if a < p.eps1 {
            c0 + (p.eps1 - p.eps2) * quintic_step_integral((a - p.eps2) / (p.eps1 - p.eps2))
        } else {
            a
        };
        if r >= 0.0 {
            v
        } else {
            -v
        }
    }

    fn beta0_deriv(&self, r: f64) -> f64 {
        let p = &self.params;
        let a = r.abs();
        let c0 = 0.5 * (p.eps1 + p.eps2);
        if a <= p.delta1 {
            c0 * quintic_step_deriv(a / p.delta1) / p.delta1
        } else if a <= p.eps2 {
            0.0
        } else if a < p.eps1 {
            quintic_step((a - p.eps2) / (p.eps1 - p.eps2))
        } else {
            1.0
        }
    }

    /// Odd, nondecreasing; identity on `[0, delta1]`, constant
    /// `(delta + delta1)/2 < delta` beyond `delta`, slope in `(0, 1)`
    /// between.
    pub fn beta1(&self, r: f64) -> f64 {
        let p = &self.params;
        let a = r.abs();
        let v = if a <= p.delta1 {
            a
        } else if a < p.delta {
            let w = p.delta - p.delta1;
            p.delta1 + (a - p.delta1) - w * quintic_step_integral((a - p.delta1) / w)
        } else {
            0.5 * (p.delta + p.delta1)
        };
        if r >= 0.0 {
            v
        } else {
            -v
        }
    }

    fn beta1_deriv(&self, r: f64) -> f64 {
        let p = &self.params;
        let a = r.abs();
        if a <= p.delta1 {
            1.0
        } else if a < p.delta {
            1.0 - quintic_step((a - p.delta1) / (p.delta - p.delta1))
        } else {
            0.0
        }
    }

    pub fn g(&self, r: f64, x: f64) -> f64 {
        let al = self.alpha(r);
        al * self.beta0(r) + (1.0 - al) * (self.f)(self.beta1(r), x)
    }

    /// `d_r g_r(x) = alpha'(beta_0 - f_{beta_1}) + (1 - alpha) beta_1'
    /// d_r f_{beta_1} + alpha beta_0'`; the family derivative of `f` is
    /// taken by central differences.
    pub fn d_r_g(&self, r: f64, x: f64) -> f64 {
        let al = self.alpha(r);
        let dal = self.alpha_deriv(r);
        let b0 = self.beta0(r);
        let b1 = self.beta1(r);
        let hstep = 1e-6;
        let df = ((self.f)(b1 + hstep, x) - (self.f)(b1 - hstep, x)) / (2.0 * hstep);
        dal * (b0 - (self.f)(b1, x)) + (1.0 - al) * self.beta1_deriv(r) * df + al * self.beta0_deriv(r)
    }
}

/// Build and validate the blend: the parameter chain must be ordered, and
/// `d_r g_r > 0` is verified on a `(r, x)` grid, reporting the witness on
/// failure. `f(r, x)` is the family being blended; it must be increasing in
/// `r` with `|f_r| < eps`.
pub fn blend_families(
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    params: BlendParams,
    grid_r: usize,
    grid_x: usize,
) -> Result<BlendFamily, StabilityError> {
    if !params.valid() {
        return Err(StabilityError::ParameterChainInvalid);
    }
    let fam = BlendFamily { params, f };
    for i in 0..grid_r {
        let r = -params.eps + 2.0 * params.eps * i as f64 / (grid_r - 1) as f64;
        for j in 0..grid_x {
            let x = j as f64 / grid_x as f64;
            let d = fam.d_r_g(r, x);
            if d <= 0.0 {
                return Err(StabilityError::MonotonicityViolation { r, x, value: d });
            }
        }
    }
    Ok(fam)
}

// ---------------------------------------------------------------------------
// convexifying reparametrization
// ---------------------------------------------------------------------------

/// Reparametrization `h`: identity for `r <= k - eps`, exactly
/// `e^{A r} + B` for `r >= k - eps1`, with a nonnegative-curvature C^2
/// bridge between; `h' >= 1` and `h'' >= 0` everywhere.
#[derive(Clone, Debug)]
pub struct ReparamFunction {
    pub k: f64,
    pub eps: f64,
    pub eps1: f64,
    pub a: f64,
    pub b: f64,
    /// bridge interval `[k - eps, k - eps1]`
    r0: f64,
    r1: f64,
    /// spike bump of `h''` in normalized coordinates
    spike_x0: f64,
    spike_w: f64,
    spike_amp: f64,
    /// right-edge ramp of `h''` up to `A^2 e^{A r1}`
    ramp_w: f64,
    ramp_amp: f64,
}

/// cumulative and double-cumulative of the normalized bump `16 t^2 (1-t)^2`
fn bump_cum(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        8.0 / 15.0
    } else {
        16.0 * (t * t * t / 3.0 - t * t * t * t / 2.0 + t * t * t * t * t / 5.0)
    }
}

fn bump_cum2(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        4.0 / 15.0 + (t - 1.0) * 8.0 / 15.0
    } else {
        16.0 * (t * t * t * t / 12.0 - t * t * t * t * t / 10.0 + t * t * t * t * t * t / 30.0)
    }
}

fn quintic_cum2(t: f64) -> f64 {
    // int_0^t quintic_step_integral
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0 / 7.0 + (t - 1.0) * (t - 1.0) / 2.0 + (t - 1.0) * 0.5
    } else {
        t * t * t * t * t * (0.5 + t * (-0.5 + t / 7.0))
    }
}

impl ReparamFunction {
    fn bump_at(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            0.0
        } else {
            16.0 * t * t * (1.0 - t) * (1.0 - t)
        }
    }

    /// normalized `h''` profile on the bridge
    fn m(&self, x: f64) -> f64 {
        let spike = self.spike_amp * self.bump_at((x - self.spike_x0) / self.spike_w);
        let ramp = self.ramp_amp * quintic_step((x - (1.0 - self.ramp_w)) / self.ramp_w);
        spike + ramp
    }

    fn m_cum(&self, x: f64) -> f64 {
        let spike = self.spike_amp * self.spike_w * bump_cum((x - self.spike_x0) / self.spike_w);
        let ramp = self.ramp_amp
            * self.ramp_w
            * quintic_step_integral((x - (1.0 - self.ramp_w)) / self.ramp_w);
        spike + ramp
    }

    fn m_cum2(&self, x: f64) -> f64 {
        let spike =
            self.spike_amp * self.spike_w * self.spike_w * bump_cum2((x - self.spike_x0) / self.spike_w);
        let ramp = self.ramp_amp
            * self.ramp_w
            * self.ramp_w
            * quintic_cum2((x - (1.0 - self.ramp_w)) / self.ramp_w);
        spike + ramp
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= self.r0 {
            r
        } else if r >= self.r1 {
            exp(self.a * r) + self.b
        } else {
            let l = self.r1 - self.r0;
            let x = (r - self.r0) / l;
            r + l * l * self.m_cum2(x)
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        if r <= self.r0 {
            1.0
        } else if r >= self.r1 {
            self.a * exp(self.a * r)
        } else {
            let l = self.r1 - self.r0;
            1.0 + l * self.m_cum((r - self.r0) / l)
        }
    }

    pub fn second_deriv(&self, r: f64) -> f64 {
        if r <= self.r0 {
            0.0
        } else if r >= self.r1 {
            self.a * self.a * exp(self.a * r)
        } else {
            self.m((r - self.r0) / (self.r1 - self.r0))
        }
    }
}

/// Estimate the curvature ratio
/// `|d^2 H_x(grad H_x, grad H_x)| / dH_x(grad H_x)` over the band
/// `H^{-1}[k - eps1, k + eps1]` and build the reparametrization with
/// `A = 1.1 max-ratio` (raised further until the C^2 bridge with `B > 0`
/// exists), then verify positive-definite fiber Hessians of `h . H` at
/// `check_samples` random band points by a finite-difference oracle.
pub fn convexify_reparam(
    h: &Arc<dyn TonelliHamiltonian>,
    k: f64,
    eps: f64,
    eps1: f64,
    check_samples: usize,
    seed: u64,
) -> Result<ReparamFunction, StabilityError> {
    assert!(eps > eps1 && eps1 > 0.0, "band parameters must satisfy eps > eps1 > 0");
    let n = h.base_dim();
    // curvature ratio over the band
    let levels = 17usize;
    let per_level = 24usize;
    let mut ratio_max = 0.0f64;
    for i in 0..levels {
        let level = k - eps1 + 2.0 * eps1 * i as f64 / (levels - 1) as f64;
        let pts = sample_level_set(h.as_ref(), level, per_level, seed ^ (0x51ab + i as u64))?;
        for pt in &pts {
            let g = h.grad_p(pt);
            let hess = h.fiber_hessian(pt);
            let mut quad = 0.0;
            for a in 0..n {
                for b in 0..n {
                    quad += hess[a * n + b] * g[a] * g[b];
                }
            }
            let denom = crate::linalg::dot(&g, &g);
            if denom > 1e-12 {
                ratio_max = ratio_max.max(quad.abs() / denom);
            }
        }
    }

    let r0 = k - eps;
    let r1 = k - eps1;
    let l = r1 - r0;
    let mut a = (1.1 * ratio_max).max(1.5 / l);
    let mut built = None;
    for _ in 0..80 {
        let e1 = exp(a * r1);
        let m1 = a * a * e1;
        let mut ramp_w = 0.25f64;
        // slope budget for the spike after the ramp takes its share
        let mut spike_mass = a * e1 - 1.0 - l * m1 * ramp_w / 2.0;
        let mut guard = 0;
        while spike_mass < 0.0 && guard < 60 {
            ramp_w *= 0.5;
            spike_mass = a * e1 - 1.0 - l * m1 * ramp_w / 2.0;
            guard += 1;
        }
        if spike_mass < 0.0 {
            a *= 1.25;
            continue;
        }
        let spike_x0 = 0.02f64;
        let spike_w = (0.98 - ramp_w - spike_x0).min(0.2);
        let spike_amp = spike_mass / (l * spike_w * 8.0 / 15.0);
        // value matching determines B; it must come out positive
        let cand = ReparamFunction {
            k,
            eps,
            eps1,
            a,
            b: 0.0,
            r0,
            r1,
            spike_x0,
            spike_w,
            spike_amp,
            ramp_w,
            ramp_amp: m1,
        };
        let b = r0 + l + l * l * cand.m_cum2(1.0) - e1;
        if b > 0.0 {
            built = Some(ReparamFunction { b, ..cand });
            break;
        }
        a *= 1.25;
    }
    let reparam = built.expect("bridge construction terminates for A large enough");

    // finite-difference convexity oracle on the composed map p -> h(H(q, p))
    let rng = CounterRng::new(seed ^ 0xC07E11);
    let composed = |q: &[f64], p: &[f64]| reparam.eval(h.eval(&PhasePoint::new(q.to_vec(), p.to_vec())));
    for i in 0..check_samples {
        let mut r = rng.split(i as u64);
        let level = k + eps1 * (2.0 * r.uniform() - 1.0);
        let pts = sample_level_set(h.as_ref(), level, 1, seed ^ (0xBEEF + i as u64))?;
        let pt = &pts[0];
        let step = 1e-4 * (1.0 + crate::linalg::norm_inf(&pt.p));
        let mut hess = vec![0.0; n * n];
        let f0 = composed(&pt.q, &pt.p);
        for aa in 0..n {
            for bb in aa..n {
                let mut pp = pt.p.clone();
                let v = if aa == bb {
                    pp[aa] += step;
                    let fp = composed(&pt.q, &pp);
                    pp[aa] -= 2.0 * step;
                    let fm = composed(&pt.q, &pp);
                    (fp - 2.0 * f0 + fm) / (step * step)
                } else {
                    pp[aa] += step;
                    pp[bb] += step;
                    let fpp = composed(&pt.q, &pp);
                    pp[bb] -= 2.0 * step;
                    let fpm = composed(&pt.q, &pp);
                    pp[aa] -= 2.0 * step;
                    let fmm = composed(&pt.q, &pp);
                    pp[bb] += 2.0 * step;
                    let fmp = composed(&pt.q, &pp);
                    (fpp - fpm - fmp + fmm) / (4.0 * step * step)
                };
                hess[aa * n + bb] = v;
                hess[bb * n + aa] = v;
            }
        }
        let eigs = crate::linalg::sym_eigenvalues(&hess, n);
        let min_eig = eigs.iter().fold(f64::INFINITY, |m, &e| m.min(e));
        if min_eig <= 0.0 {
            return Err(StabilityError::ConvexityCheckFailed {
                level,
                eigenvalue: min_eig,
            });
        }
    }
    Ok(reparam)
}
