//! Tonelli Hamiltonians: the evaluation/derivative interface, the built-in
//! instances, the Legendre transform and the circle suspension.
//!
//! A Tonelli Hamiltonian is smooth, strictly fiberwise convex and superlinear.
//! The built-ins are:
//!
//! * `KineticFlat` — `H = |p|^2 / 2` on a flat torus,
//! * `MagneticFlat` — `H = |p + theta_x|^2 / (2 phi(x))`, the convex dual of
//!   the Lagrangian `L = phi |v|^2 / 2 - theta_x(v)`,
//! * `SolHamiltonian` — `2H = e^{2z}(p_x + e^{-z})^2 + e^{-2z} p_y^2 + p_z^2`
//!   on the Sol manifold, with left-invariant momenta
//!   `M_x = e^z p_x`, `M_y = e^{-z} p_y`, `M_z = p_z`,
//! * `SuspensionHamiltonian` — `H(x,p) + p_t^2 / 2` on the product with
//!   `T^* S^1`.
//!
//! Sign convention throughout: `omega = sum dq_i ^ dp_i` with Hamilton's
//! equations `dq/dt = dH/dp`, `dp/dt = -dH/dq`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{Chart, PhasePoint, SolLattice, TorusChart};
use crate::math::{cos, exp, sin, TAU};

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianError {
    /// The conformal factor of a magnetic Hamiltonian must stay positive.
    NonPositiveConformal { at: Vec<f64>, value: f64 },
    /// Newton inversion of the fiber derivative failed to converge.
    NewtonDivergence { residual: f64 },
}

impl core::fmt::Display for HamiltonianError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HamiltonianError::NonPositiveConformal { at, value } => {
                write!(f, "conformal factor {value} <= 0 at {at:?}")
            }
            HamiltonianError::NewtonDivergence { residual } => {
                write!(f, "Legendre inversion stalled with residual {residual}")
            }
        }
    }
}

impl core::error::Error for HamiltonianError {}

/// Evaluatable Hamiltonian with analytic fiber and base derivatives.
pub trait TonelliHamiltonian: Send + Sync {
    fn chart(&self) -> &Chart;

    fn base_dim(&self) -> usize {
        self.chart().base_dim()
    }

    fn eval(&self, pt: &PhasePoint) -> f64;

    /// Fiber derivative `dH/dp`; equals the velocity of the Legendre transform.
    fn grad_p(&self, pt: &PhasePoint) -> Vec<f64>;

    /// Base derivative `dH/dq`.
    fn grad_q(&self, pt: &PhasePoint) -> Vec<f64>;

    /// The fiberwise minimizer of `p -> H(q, p)`.
    /// Default: damped Newton on `grad_p = 0` from the origin.
    fn fiber_minimizer(&self, q: &[f64]) -> Vec<f64> {
        let n = q.len();
        let mut p = vec![0.0; n];
        for _ in 0..100 {
            let pt = PhasePoint::new(q.to_vec(), p.clone());
            let g = self.grad_p(&pt);
            if crate::linalg::norm(&g) < 1e-13 {
                break;
            }
            let mut hess = self.fiber_hessian(&pt);
            let mut rhs = g.clone();
            let step = match crate::linalg::solve(&mut hess, &mut rhs, n) {
                Some(s) => s,
                None => break,
            };
            for i in 0..n {
                p[i] -= step[i];
            }
        }
        p
    }

    /// Fiber Hessian `d^2H/dp^2`, row-major `n x n`.
    /// Default: central differences of `grad_p`.
    fn fiber_hessian(&self, pt: &PhasePoint) -> Vec<f64> {
        let n = pt.dim();
        let h = 1e-6 * (1.0 + crate::linalg::norm_inf(&pt.p));
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            let mut pp = pt.clone();
            pp.p[j] += h;
            let gp = self.grad_p(&pp);
            pp.p[j] -= 2.0 * h;
            let gm = self.grad_p(&pp);
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // symmetrize
        for i in 0..n {
            for j in i + 1..n {
                let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// scalar function of a base point
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// vector-valued function of a base point (covector components, gradients)
pub type CovectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// vector-valued function of a phase point
pub type PhaseVectorFn = Arc<dyn Fn(&PhasePoint) -> Vec<f64> + Send + Sync>;

/// `X_H = (dH/dp, -dH/dq)` as a flat `[qdot..., pdot...]` evaluator.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    eval: PhaseVectorFn,
}

impl VectorField {
    pub fn new(dim: usize, eval: PhaseVectorFn) -> Self {
        VectorField { dim, eval }
    }

    pub fn at(&self, pt: &PhasePoint) -> Vec<f64> {
        (self.eval)(pt)
    }
}

pub fn hamiltonian_vector_field(h: &Arc<dyn TonelliHamiltonian>) -> VectorField {
    let hh = h.clone();
    let n = h.base_dim();
    VectorField::new(
        2 * n,
        Arc::new(move |pt: &PhasePoint| {
            let mut v = hh.grad_p(pt);
            let gq = hh.grad_q(pt);
            v.extend(gq.iter().map(|x| -x));
            v
        }),
    )
}

// ---------------------------------------------------------------------------
// base 1-forms and conformal factors for the magnetic instances
// ---------------------------------------------------------------------------

/// A 1-form on the base manifold, given by its covector components and their
/// Jacobian (row-major `n x n`, `jac[i*n+j] = d theta_i / d q_j`).
#[derive(Clone)]
pub struct BaseOneForm {
    pub dim: usize,
    components: CovectorFn,
    jacobian: CovectorFn,
}

impl BaseOneForm {
    pub fn new(dim: usize, components: CovectorFn, jacobian: CovectorFn) -> Self {
        BaseOneForm {
            dim,
            components,
            jacobian,
        }
    }

    /// Build from components alone; the Jacobian falls back to central
    /// differences with step `1e-6`.
    pub fn from_components(dim: usize, components: CovectorFn) -> Self {
        let c = components.clone();
        let jac = Arc::new(move |q: &[f64]| {
            let n = q.len();
            let mut out = vec![0.0; n * n];
            let h = 1e-6;
            for j in 0..n {
                let mut qq = q.to_vec();
                qq[j] += h;
                let tp = c(&qq);
                qq[j] -= 2.0 * h;
                let tm = c(&qq);
                for i in 0..n {
                    out[i * n + j] = (tp[i] - tm[i]) / (2.0 * h);
                }
            }
            out
        });
        BaseOneForm::new(dim, components, jac)
    }

    pub fn zero(dim: usize) -> Self {
        BaseOneForm::new(
            dim,
            Arc::new(move |_q: &[f64]| vec![0.0; dim]),
            Arc::new(move |_q: &[f64]| vec![0.0; dim * dim]),
        )
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let dim = c.len();
        let cc = c.clone();
        BaseOneForm::new(
            dim,
            Arc::new(move |_q: &[f64]| cc.clone()),
            Arc::new(move |_q: &[f64]| vec![0.0; dim * dim]),
        )
    }

    /// The unit-length rotating form `theta = cos(2 pi y) dx + sin(2 pi y) dy`
    /// on the unit 2-torus. Not closed, `|theta| = 1` everywhere.
    pub fn rotating() -> Self {
        BaseOneForm::new(
            2,
            Arc::new(|q: &[f64]| vec![cos(TAU * q[1]), sin(TAU * q[1])]),
            Arc::new(|q: &[f64]| {
                vec![
                    0.0,
                    -TAU * sin(TAU * q[1]),
                    0.0,
                    TAU * cos(TAU * q[1]),
                ]
            }),
        )
    }

    pub fn at(&self, q: &[f64]) -> Vec<f64> {
        (self.components)(q)
    }

    pub fn jacobian_at(&self, q: &[f64]) -> Vec<f64> {
        (self.jacobian)(q)
    }
}

/// A positive scalar field with gradient, used as conformal factor.
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    gradient: CovectorFn,
}

impl ScalarField {
    pub fn new(value: ScalarFn, gradient: CovectorFn) -> Self {
        ScalarField { value, gradient }
    }

    pub fn from_value(value: ScalarFn) -> Self {
        let v = value.clone();
        let grad = Arc::new(move |q: &[f64]| {
            let n = q.len();
            let h = 1e-6;
            let mut g = vec![0.0; n];
            for (j, gj) in g.iter_mut().enumerate() {
                let mut qq = q.to_vec();
                qq[j] += h;
                let fp = v(&qq);
                qq[j] -= 2.0 * h;
                let fm = v(&qq);
                *gj = (fp - fm) / (2.0 * h);
            }
            g
        });
        ScalarField::new(value, grad)
    }

    pub fn one() -> Self {
        ScalarField::new(
            Arc::new(|_q: &[f64]| 1.0),
            Arc::new(|q: &[f64]| vec![0.0; q.len()]),
        )
    }

    pub fn at(&self, q: &[f64]) -> f64 {
        (self.value)(q)
    }

    pub fn gradient_at(&self, q: &[f64]) -> Vec<f64> {
        (self.gradient)(q)
    }
}

// ---------------------------------------------------------------------------
// built-in Hamiltonians
// ---------------------------------------------------------------------------

/// `H = |p|^2 / 2` on a flat torus.
pub struct KineticFlat {
    chart: Chart,
}

impl KineticFlat {
    pub fn new(torus: TorusChart) -> Self {
        KineticFlat {
            chart: Chart::Torus(torus),
        }
    }
}

impl TonelliHamiltonian for KineticFlat {
    fn chart(&self) -> &Chart {
        &self.chart
    }

    fn eval(&self, pt: &PhasePoint) -> f64 {
        0.5 * crate::linalg::dot(&pt.p, &pt.p)
    }

    fn grad_p(&self, pt: &PhasePoint) -> Vec<f64> {
        pt.p.clone()
    }

    fn grad_q(&self, pt: &PhasePoint) -> Vec<f64> {
        vec![0.0; pt.dim()]
    }

    fn fiber_minimizer(&self, q: &[f64]) -> Vec<f64> {
        vec![0.0; q.len()]
    }

    fn fiber_hessian(&self, pt: &PhasePoint) -> Vec<f64> {
        let n = pt.dim();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }
}

/// Magnetic Hamiltonian `H = |p + theta_x|^2 / (2 phi(x))` on a flat torus.
pub struct MagneticFlat {
    chart: Chart,
    theta: BaseOneForm,
    phi: ScalarField,
}

impl MagneticFlat {
    /// `phi = None` means the flat case `phi = 1`. The conformal factor is
    /// probed for positivity on a coarse grid at construction.
    pub fn new(
        torus: TorusChart,
        theta: BaseOneForm,
        phi: Option<ScalarField>,
    ) -> Result<Self, HamiltonianError> {
        let dim = torus.dim();
        assert_eq!(theta.dim, dim);
        let phi = phi.unwrap_or_else(ScalarField::one);
        let probes_per_axis = 17usize;
        let mut idx = vec![0usize; dim];
        loop {
            let q: Vec<f64> = idx
                .iter()
                .zip(&torus.periods)
                .map(|(&i, &per)| per * i as f64 / probes_per_axis as f64)
                .collect();
            let v = phi.at(&q);
            if v <= 0.0 {
                return Err(HamiltonianError::NonPositiveConformal { at: q, value: v });
            }
            let mut k = dim;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < probes_per_axis {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
        Ok(MagneticFlat {
            chart: Chart::Torus(torus),
            theta,
            phi,
        })
    }

    pub fn theta(&self) -> &BaseOneForm {
        &self.theta
    }
}

impl TonelliHamiltonian for MagneticFlat {
    fn chart(&self) -> &Chart {
        &self.chart
    }

    fn eval(&self, pt: &PhasePoint) -> f64 {
        let th = self.theta.at(&pt.q);
        let s: f64 = pt
            .p
            .iter()
            .zip(&th)
            .map(|(p, t)| (p + t) * (p + t))
            .sum();
        0.5 * s / self.phi.at(&pt.q)
    }

    fn grad_p(&self, pt: &PhasePoint) -> Vec<f64> {
        let th = self.theta.at(&pt.q);
        let phi = self.phi.at(&pt.q);
        pt.p.iter().zip(&th).map(|(p, t)| (p + t) / phi).collect()
    }

    fn grad_q(&self, pt: &PhasePoint) -> Vec<f64> {
        let n = pt.dim();
        let th = self.theta.at(&pt.q);
        let jac = self.theta.jacobian_at(&pt.q);
        let phi = self.phi.at(&pt.q);
        let gphi = self.phi.gradient_at(&pt.q);
        let w: Vec<f64> = pt.p.iter().zip(&th).map(|(p, t)| p + t).collect();
        let w2: f64 = w.iter().map(|x| x * x).sum();
        (0..n)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..n {
                    s += w[i] * jac[i * n + j];
                }
                s / phi - 0.5 * w2 * gphi[j] / (phi * phi)
            })
            .collect()
    }

    fn fiber_minimizer(&self, q: &[f64]) -> Vec<f64> {
        self.theta.at(q).iter().map(|t| -t).collect()
    }

    fn fiber_hessian(&self, pt: &PhasePoint) -> Vec<f64> {
        let n = pt.dim();
        let phi = self.phi.at(&pt.q);
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0 / phi;
        }
        m
    }
}

/// Left-invariant Hamiltonian on Sol:
/// `2H = e^{2z}(p_x + e^{-z})^2 + e^{-2z} p_y^2 + p_z^2
///     = (M_x + 1)^2 + M_y^2 + M_z^2`.
pub struct SolHamiltonian {
    chart: Chart,
}

impl SolHamiltonian {
    pub fn new(lattice: SolLattice) -> Self {
        SolHamiltonian {
            chart: Chart::Sol(lattice),
        }
    }

    /// Left-invariant momenta `(M_x, M_y, M_z) = (e^z p_x, e^{-z} p_y, p_z)`.
    pub fn m_coords(pt: &PhasePoint) -> [f64; 3] {
        let z = pt.q[2];
        [exp(z) * pt.p[0], exp(-z) * pt.p[1], pt.p[2]]
    }

    /// `H` expressed through the left-invariant momenta.
    pub fn h_of_m(m: &[f64; 3]) -> f64 {
        0.5 * ((m[0] + 1.0) * (m[0] + 1.0) + m[1] * m[1] + m[2] * m[2])
    }
}

impl TonelliHamiltonian for SolHamiltonian {
    fn chart(&self) -> &Chart {
        &self.chart
    }

    fn eval(&self, pt: &PhasePoint) -> f64 {
        let m = Self::m_coords(pt);
        Self::h_of_m(&m)
    }

    fn grad_p(&self, pt: &PhasePoint) -> Vec<f64> {
        let z = pt.q[2];
        let (e2z, em2z) = (exp(2.0 * z), exp(-2.0 * z));
        vec![
            e2z * (pt.p[0] + exp(-z)),
            em2z * pt.p[1],
            pt.p[2],
        ]
    }

    fn grad_q(&self, pt: &PhasePoint) -> Vec<f64> {
        let m = Self::m_coords(pt);
        // dH/dz = (M_x+1)^2 - (M_x+1) - M_y^2; x and y are cyclic
        vec![
            0.0,
            0.0,
            (m[0] + 1.0) * (m[0] + 1.0) - (m[0] + 1.0) - m[1] * m[1],
        ]
    }

    fn fiber_minimizer(&self, q: &[f64]) -> Vec<f64> {
        // M = (-1, 0, 0), i.e. p_x = -e^{-z}
        vec![-exp(-q[2]), 0.0, 0.0]
    }

    fn fiber_hessian(&self, pt: &PhasePoint) -> Vec<f64> {
        let z = pt.q[2];
        let mut m = vec![0.0; 9];
        m[0] = exp(2.0 * z);
        m[4] = exp(-2.0 * z);
        m[8] = 1.0;
        m
    }
}

/// `H(x,p) + p_t^2 / 2` on the product with `T^* S^1`; coordinates are laid
/// out `q = [x..., t]`, `p = [p..., p_t]`.
pub struct SuspensionHamiltonian {
    base: Arc<dyn TonelliHamiltonian>,
    chart: Chart,
}

impl SuspensionHamiltonian {
    pub fn base(&self) -> &Arc<dyn TonelliHamiltonian> {
        &self.base
    }

    fn split(&self, pt: &PhasePoint) -> (PhasePoint, f64, f64) {
        let n = pt.dim() - 1;
        (
            PhasePoint::new(pt.q[..n].to_vec(), pt.p[..n].to_vec()),
            pt.q[n],
            pt.p[n],
        )
    }
}

/// Extend `H` by the kinetic energy of an extra circle factor.
pub fn suspend(base: Arc<dyn TonelliHamiltonian>) -> SuspensionHamiltonian {
    let chart = Chart::Suspension {
        base: alloc::boxed::Box::new(base.chart().clone()),
    };
    SuspensionHamiltonian { base, chart }
}

impl TonelliHamiltonian for SuspensionHamiltonian {
    fn chart(&self) -> &Chart {
        &self.chart
    }

    fn eval(&self, pt: &PhasePoint) -> f64 {
        let (b, _t, pt_mom) = self.split(pt);
        self.base.eval(&b) + 0.5 * pt_mom * pt_mom
    }

    fn grad_p(&self, pt: &PhasePoint) -> Vec<f64> {
        let (b, _t, pt_mom) = self.split(pt);
        let mut g = self.base.grad_p(&b);
        g.push(pt_mom);
        g
    }

    fn grad_q(&self, pt: &PhasePoint) -> Vec<f64> {
        let (b, _t, _) = self.split(pt);
        let mut g = self.base.grad_q(&b);
        g.push(0.0);
        g
    }

    fn fiber_minimizer(&self, q: &[f64]) -> Vec<f64> {
        let n = q.len() - 1;
        let mut p = self.base.fiber_minimizer(&q[..n]);
        p.push(0.0);
        p
    }

    fn fiber_hessian(&self, pt: &PhasePoint) -> Vec<f64> {
        let n = pt.dim();
        let (b, _t, _) = self.split(pt);
        let hb = self.base.fiber_hessian(&b);
        let m = n - 1;
        let mut out = vec![0.0; n * n];
        for i in 0..m {
            for j in 0..m {
                out[i * n + j] = hb[i * m + j];
            }
        }
        out[(n - 1) * n + (n - 1)] = 1.0;
        out
    }
}

/// The two-torus instance with a single zero-homology minimizing circle:
/// a vector field `Z` with a unit-speed simple closed orbit `gamma` (the
/// circle of radius `radius` around `(1/2, 1/2)`, smoothly cut off), the form
/// `theta_x(v) = <Z(x), v>` and the conformal factor
/// `phi = |Z|^2 + 2 psi`, `psi >= 0` vanishing exactly on `gamma`. The dual
/// Lagrangian is `L = phi |v|^2 / 2 - theta(v)`, which satisfies
/// `L + 1/2 >= 0` with equality only on the lifted orbit, so `c0 = 1/2`.
pub struct CircleOrbitInstance;

impl CircleOrbitInstance {
    pub const CENTER: [f64; 2] = [0.5, 0.5];
    pub const RADIUS: f64 = 0.2;

    /// displacement from the center by nearest image
    fn rel(q: &[f64]) -> [f64; 2] {
        let wrap = |d: f64| {
            let mut r = crate::math::rem_euclid(d, 1.0);
            if r > 0.5 {
                r -= 1.0;
            }
            r
        };
        [wrap(q[0] - Self::CENTER[0]), wrap(q[1] - Self::CENTER[1])]
    }

    /// speed cutoff: 1 in a band around the circle, 0 near the center and
    /// far outside
    fn eta(d: f64) -> f64 {
        let r = Self::RADIUS;
        crate::stability::quintic_step((d - 0.5 * r) / (0.25 * r))
            * (1.0 - crate::stability::quintic_step((d - 1.25 * r) / (0.25 * r)))
    }

    /// the vector field `Z`: unit rotation around the center, cut off
    pub fn z_field(q: &[f64]) -> Vec<f64> {
        let rel = Self::rel(q);
        let d = crate::math::hypot(rel[0], rel[1]);
        if d < 1e-12 {
            return vec![0.0, 0.0];
        }
        let eta = Self::eta(d);
        vec![-eta * rel[1] / d, eta * rel[0] / d]
    }

    /// smoothed squared distance to the circle, positive away from it
    pub fn psi(q: &[f64]) -> f64 {
        let rel = Self::rel(q);
        let d2 = rel[0] * rel[0] + rel[1] * rel[1];
        let r2 = Self::RADIUS * Self::RADIUS;
        let w = (d2 - r2) * (d2 - r2) / (4.0 * r2);
        // cap far from the center so the cut locus of the torus never shows
        let rho = 1.0 - crate::stability::quintic_step((d2 - 0.16) / 0.04);
        w * rho + 0.05 * (1.0 - rho)
    }

    /// the Tonelli Hamiltonian dual to `L = phi |v|^2/2 - <Z, v>`
    pub fn hamiltonian() -> MagneticFlat {
        let theta = BaseOneForm::from_components(2, Arc::new(|q: &[f64]| Self::z_field(q)));
        let phi = ScalarField::from_value(Arc::new(|q: &[f64]| {
            let z = Self::z_field(q);
            z[0] * z[0] + z[1] * z[1] + 2.0 * Self::psi(q)
        }));
        MagneticFlat::new(TorusChart::unit(2), theta, Some(phi))
            .expect("conformal factor is positive by construction")
    }

    /// a point of the minimizing orbit: `q` on the circle, `p = 0`
    pub fn orbit_point() -> PhasePoint {
        PhasePoint::new(
            vec![Self::CENTER[0] + Self::RADIUS, Self::CENTER[1]],
            vec![0.0, 0.0],
        )
    }

    /// period of the unit-speed circular orbit
    pub fn orbit_period() -> f64 {
        TAU * Self::RADIUS
    }
}

// ---------------------------------------------------------------------------
// Legendre transform
// ---------------------------------------------------------------------------

/// Velocity of the Legendre transform, `v = dH/dp`.
pub fn legendre_velocity(h: &dyn TonelliHamiltonian, pt: &PhasePoint) -> Vec<f64> {
    h.grad_p(pt)
}

/// Solve `grad_p H(q, p) = v` for `p` (damped Newton from the fiberwise
/// minimizer) and return `L(q, v) = p . v - H(q, p)`.
pub fn lagrangian_eval(
    h: &dyn TonelliHamiltonian,
    q: &[f64],
    v: &[f64],
) -> Result<f64, HamiltonianError> {
    let p = legendre_momentum(h, q, v)?;
    let pt = PhasePoint::new(q.to_vec(), p.clone());
    Ok(crate::linalg::dot(&p, v) - h.eval(&pt))
}

/// The momentum dual to velocity `v` over base point `q`.
pub fn legendre_momentum(
    h: &dyn TonelliHamiltonian,
    q: &[f64],
    v: &[f64],
) -> Result<Vec<f64>, HamiltonianError> {
    let n = q.len();
    assert_eq!(v.len(), n);
    let mut p = h.fiber_minimizer(q);
    let resid = |p: &[f64]| -> Vec<f64> {
        let g = h.grad_p(&PhasePoint::new(q.to_vec(), p.to_vec()));
        crate::linalg::sub(&g, v)
    };
    let tol = 1e-12 * (1.0 + crate::linalg::norm(v));
    let mut r = resid(&p);
    for _ in 0..100 {
        let rn = crate::linalg::norm(&r);
        if rn <= tol {
            return Ok(p);
        }
        let pt = PhasePoint::new(q.to_vec(), p.clone());
        let mut hess = h.fiber_hessian(&pt);
        let mut rhs = r.clone();
        let step = crate::linalg::solve(&mut hess, &mut rhs, n)
            .ok_or(HamiltonianError::NewtonDivergence { residual: rn })?;
        // damping: halve on residual increase
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = p.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let rc = resid(&cand);
            if crate::linalg::norm(&rc) < rn || t < 1e-8 {
                p = cand;
                r = rc;
                break;
            }
            t *= 0.5;
        }
    }
    let rn = crate::linalg::norm(&r);
    if rn <= tol {
        Ok(p)
    } else {
        Err(HamiltonianError::NewtonDivergence { residual: rn })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_point(rng: &mut CounterRng, n: usize, qscale: f64, pscale: f64) -> PhasePoint {
        PhasePoint::new(
            (0..n).map(|_| rng.uniform_in(-qscale, qscale)).collect(),
            (0..n).map(|_| rng.uniform_in(-pscale, pscale)).collect(),
        )
    }

    fn check_gradients(h: &dyn TonelliHamiltonian, pt: &PhasePoint, tol: f64) {
        let n = pt.dim();
        let gp = h.grad_p(pt);
        let gq = h.grad_q(pt);
        let step = 1e-5 * (1.0 + crate::linalg::norm_inf(&pt.q).max(crate::linalg::norm_inf(&pt.p)));
        for j in 0..n {
            let mut a = pt.clone();
            a.p[j] += step;
            let hp = h.eval(&a);
            a.p[j] -= 2.0 * step;
            let hm = h.eval(&a);
            let fd = (hp - hm) / (2.0 * step);
            let scale = 1.0_f64.max(fd.abs());
            assert!((gp[j] - fd).abs() / scale < tol, "grad_p[{j}]: {} vs {fd}", gp[j]);

            let mut b = pt.clone();
            b.q[j] += step;
            let hp = h.eval(&b);
            b.q[j] -= 2.0 * step;
            let hm = h.eval(&b);
            let fd = (hp - hm) / (2.0 * step);
            let scale = 1.0_f64.max(fd.abs());
            assert!((gq[j] - fd).abs() / scale < tol, "grad_q[{j}]: {} vs {fd}", gq[j]);
        }
    }

    fn check_fiber_convexity(h: &dyn TonelliHamiltonian, rng: &mut CounterRng, n: usize) {
        for _ in 0..200 {
            let q: alloc::vec::Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let p1: alloc::vec::Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let p2: alloc::vec::Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let mid: alloc::vec::Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
            let hm = h.eval(&PhasePoint::new(q.clone(), mid));
            let h1 = h.eval(&PhasePoint::new(q.clone(), p1));
            let h2 = h.eval(&PhasePoint::new(q, p2));
            assert!(hm <= 0.5 * (h1 + h2) + 1e-12);
        }
    }

    fn check_superlinearity(h: &dyn TonelliHamiltonian, rng: &mut CounterRng, n: usize) {
        let q: alloc::vec::Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let d = rng.unit_vector(n);
        let mut prev = f64::NEG_INFINITY;
        for s in [1.0, 10.0, 100.0] {
            let p: alloc::vec::Vec<f64> = d.iter().map(|x| s * x).collect();
            let ratio = h.eval(&PhasePoint::new(q.clone(), p)) / s;
            assert!(ratio > prev, "H(q, s p)/s must grow along rays");
            prev = ratio;
        }
    }

    #[test]
    fn kinetic_basics() {
        let h = KineticFlat::new(TorusChart::unit(2));
        assert_eq!(h.eval(&PhasePoint::new(vec![0.0, 0.0], vec![1.0, 0.0])), 0.5);
        assert_eq!(h.eval(&PhasePoint::new(vec![0.3, 0.9], vec![0.0, 0.0])), 0.0);
        let pt = PhasePoint::new(vec![0.1, 0.2], vec![0.5, -1.5]);
        assert_eq!(h.grad_p(&pt), vec![0.5, -1.5]);
        assert_eq!(h.grad_q(&pt), vec![0.0, 0.0]);
    }

    #[test]
    fn tonelli_invariants_for_all_builtins() {
        let mut rng = CounterRng::new(17);
        let kin = KineticFlat::new(TorusChart::unit(2));
        let mag = MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap();
        let sol = SolHamiltonian::new(SolLattice::standard());
        let sus = suspend(Arc::new(KineticFlat::new(TorusChart::unit(2))));
        let hs: [&dyn TonelliHamiltonian; 4] = [&kin, &mag, &sol, &sus];
        for h in hs {
            let n = h.base_dim();
            for _ in 0..50 {
                let pt = random_point(&mut rng, n, 1.0, 2.0);
                check_gradients(h, &pt, 1e-6);
            }
            check_fiber_convexity(h, &mut rng, n);
            check_superlinearity(h, &mut rng, n);
        }
    }

    #[test]
    fn magnetic_fiber_minimum_vanishes() {
        let h = MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap();
        let q = vec![0.3, 0.7];
        let p0 = h.fiber_minimizer(&q);
        assert!(h.eval(&PhasePoint::new(q.clone(), p0)).abs() < 1e-15);
        // theta = 0, phi = 1 is the kinetic case
        let flat = MagneticFlat::new(TorusChart::unit(2), BaseOneForm::zero(2), None).unwrap();
        assert_eq!(flat.eval(&PhasePoint::new(vec![0.0, 0.0], vec![0.0, 1.0])), 0.5);
    }

    #[test]
    fn nonpositive_conformal_is_rejected() {
        let phi = ScalarField::from_value(Arc::new(|q: &[f64]| 0.5 - q[0]));
        match MagneticFlat::new(TorusChart::unit(2), BaseOneForm::zero(2), Some(phi)) {
            Err(HamiltonianError::NonPositiveConformal { .. }) => {}
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("nonpositive conformal factor must be rejected"),
        }
    }

    #[test]
    fn sol_values_from_the_display() {
        let h = SolHamiltonian::new(SolLattice::standard());
        // at the origin with p = 0: (M_x + 1)^2 = 1, so H = 1/2
        let origin = PhasePoint::new(vec![0.0; 3], vec![0.0; 3]);
        assert!((h.eval(&origin) - 0.5).abs() < 1e-15);
        // fiber minimum at p_x = -e^{-z}
        let q = vec![0.4, -0.2, 0.35];
        let pmin = h.fiber_minimizer(&q);
        assert!(h.eval(&PhasePoint::new(q, pmin)).abs() < 1e-15);
    }

    #[test]
    fn sol_h_matches_m_expression_on_random_points() {
        let h = SolHamiltonian::new(SolLattice::standard());
        let mut rng = CounterRng::new(5);
        for _ in 0..1000 {
            let pt = random_point(&mut rng, 3, 2.0, 2.0);
            let m = SolHamiltonian::m_coords(&pt);
            assert!((h.eval(&pt) - SolHamiltonian::h_of_m(&m)).abs() <= 1e-12);
        }
    }

    #[test]
    fn sol_first_integral_is_killed_by_the_flow() {
        // dm(X_H) = 0 for m = M_x M_y
        let h: Arc<dyn TonelliHamiltonian> = Arc::new(SolHamiltonian::new(SolLattice::standard()));
        let x = hamiltonian_vector_field(&h);
        let mut rng = CounterRng::new(23);
        for _ in 0..1000 {
            let pt = random_point(&mut rng, 3, 2.0, 2.0);
            let v = x.at(&pt);
            // directional derivative of m along X_H by central differences
            let hstep = 1e-6;
            let shift = |s: f64| {
                let q: alloc::vec::Vec<f64> =
                    pt.q.iter().zip(&v[..3]).map(|(a, b)| a + s * b).collect();
                let p: alloc::vec::Vec<f64> =
                    pt.p.iter().zip(&v[3..]).map(|(a, b)| a + s * b).collect();
                let m = SolHamiltonian::m_coords(&PhasePoint::new(q, p));
                m[0] * m[1]
            };
            let dm = (shift(hstep) - shift(-hstep)) / (2.0 * hstep);
            assert!(dm.abs() <= 1e-8 * (1.0 + crate::linalg::norm(&v)), "dm = {dm}");
        }
    }

    #[test]
    fn sol_hamilton_equations_in_m_coordinates() {
        let h: Arc<dyn TonelliHamiltonian> = Arc::new(SolHamiltonian::new(SolLattice::standard()));
        let x = hamiltonian_vector_field(&h);
        let mut rng = CounterRng::new(29);
        for _ in 0..500 {
            let pt = random_point(&mut rng, 3, 1.5, 1.5);
            let m = SolHamiltonian::m_coords(&pt);
            let v = x.at(&pt);
            let z = pt.q[2];
            // velocities
            assert!((v[0] - (m[0] + 1.0) * exp(z)).abs() < 1e-10);
            assert!((v[1] - m[1] * exp(-z)).abs() < 1e-10);
            assert!((v[2] - m[2]).abs() < 1e-10);
            // Mdot via chain rule from (qdot, pdot)
            let mx_dot = exp(z) * (v[2] * pt.p[0] + v[3]);
            let my_dot = exp(-z) * (-v[2] * pt.p[1] + v[4]);
            let mz_dot = v[5];
            assert!((mx_dot - m[0] * m[2]).abs() < 1e-10);
            assert!((my_dot + m[1] * m[2]).abs() < 1e-10);
            assert!((mz_dot - (m[1] * m[1] - m[0] * (m[0] + 1.0))).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_is_conserved_by_the_field_identity() {
        // dH(X_H) = 0 pointwise
        let mag: Arc<dyn TonelliHamiltonian> =
            Arc::new(MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap());
        let x = hamiltonian_vector_field(&mag);
        let mut rng = CounterRng::new(31);
        for _ in 0..200 {
            let pt = random_point(&mut rng, 2, 1.0, 2.0);
            let v = x.at(&pt);
            let gq = mag.grad_q(&pt);
            let gp = mag.grad_p(&pt);
            let dh = crate::linalg::dot(&gq, &v[..2]) + crate::linalg::dot(&gp, &v[2..]);
            assert!(dh.abs() <= 1e-10);
        }
    }

    #[test]
    fn suspension_adds_the_circle_kinetic_energy() {
        let base: Arc<dyn TonelliHamiltonian> = Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let sus = suspend(base.clone());
        let pt = PhasePoint::new(vec![0.1, 0.2, 0.9], vec![0.3, 0.4, 0.5]);
        let bpt = PhasePoint::new(vec![0.1, 0.2], vec![0.3, 0.4]);
        assert!((sus.eval(&pt) - base.eval(&bpt) - 0.125).abs() < 1e-15);
        // p_t = 0 collapses to the base Hamiltonian
        let pt0 = PhasePoint::new(vec![0.1, 0.2, 0.9], vec![0.3, 0.4, 0.0]);
        assert!((sus.eval(&pt0) - base.eval(&bpt)).abs() < 1e-15);
    }

    #[test]
    fn suspension_level_contains_shifted_base_level() {
        // points of H-level k - s^2/2 lift to Hbar-level k at p_t = s
        let base: Arc<dyn TonelliHamiltonian> = Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let sus = suspend(base.clone());
        let k = 0.5;
        let s = 0.6;
        let pts = crate::geometry::sample_level_set(base.as_ref(), k - 0.5 * s * s, 100, 11).unwrap();
        for bp in pts {
            let mut q = bp.q.clone();
            q.push(0.25);
            let mut p = bp.p.clone();
            p.push(s);
            assert!((sus.eval(&PhasePoint::new(q, p)) - k).abs() <= 1e-10);
        }
    }

    #[test]
    fn legendre_self_duality_of_kinetic() {
        let h = KineticFlat::new(TorusChart::unit(2));
        let l = lagrangian_eval(&h, &[0.2, 0.3], &[0.7, -0.4]).unwrap();
        assert!((l - 0.5 * (0.49 + 0.16)).abs() < 1e-12);
    }

    #[test]
    fn legendre_inverts_the_magnetic_fiber_map() {
        // H = |p + theta|^2/2 has L(q, v) = |v|^2/2 - theta(v)
        let h = MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap();
        let mut rng = CounterRng::new(37);
        for _ in 0..200 {
            let q = vec![rng.uniform(), rng.uniform()];
            let v = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let th = h.theta().at(&q);
            let expect = 0.5 * crate::linalg::dot(&v, &v) - crate::linalg::dot(&th, &v);
            let l = lagrangian_eval(&h, &q, &v).unwrap();
            assert!((l - expect).abs() <= 1e-10, "L = {l}, expect {expect}");
        }
    }

    #[test]
    fn circle_instance_lagrangian_is_bounded_below_by_minus_half() {
        // L + 1/2 >= 0 with equality exactly on the circle with v = Z
        let h = CircleOrbitInstance::hamiltonian();
        let mut rng = CounterRng::new(43);
        for _ in 0..300 {
            let q = vec![rng.uniform(), rng.uniform()];
            let v = vec![rng.uniform_in(-1.5, 1.5), rng.uniform_in(-1.5, 1.5)];
            let l = lagrangian_eval(&h, &q, &v).unwrap();
            assert!(l + 0.5 >= -1e-10, "L + 1/2 = {} at {q:?}", l + 0.5);
        }
        // equality on the orbit
        let pt = CircleOrbitInstance::orbit_point();
        let z = CircleOrbitInstance::z_field(&pt.q);
        let l = lagrangian_eval(&h, &pt.q, &z).unwrap();
        assert!((l + 0.5).abs() <= 1e-10, "on gamma: L + 1/2 = {}", l + 0.5);
        // strictly positive off the orbit
        let l_off = lagrangian_eval(&h, &[0.1, 0.1], &[0.3, 0.0]).unwrap();
        assert!(l_off + 0.5 > 1e-3);
    }

    #[test]
    fn circle_instance_orbit_is_invariant() {
        // the lifted circle (q on gamma, p = 0) is a flow orbit at energy 1/2
        let h: Arc<dyn TonelliHamiltonian> = Arc::new(CircleOrbitInstance::hamiltonian());
        let pt = CircleOrbitInstance::orbit_point();
        assert!((h.eval(&pt) - 0.5).abs() < 1e-12);
        let traj = crate::flow::integrate(&h, &pt, CircleOrbitInstance::orbit_period(), 5e-5, &[])
            .unwrap();
        assert!(traj.energy_drift < 1e-10);
        let end = traj.last();
        let d = h.chart().phase_distance(end, &pt);
        assert!(d < 1e-7, "orbit failed to close: distance {d}");
        // p stays on the zero section (up to the integrator's dt^2 error)
        for state in &traj.states {
            assert!(crate::linalg::norm(&state.p) < 1e-7);
        }
    }

    #[test]
    fn degenerate_fiber_map_reports_newton_divergence() {
        // a (non-Tonelli) H whose fiber derivative never reaches v
        struct Flatliner {
            chart: Chart,
        }
        impl TonelliHamiltonian for Flatliner {
            fn chart(&self) -> &Chart {
                &self.chart
            }
            fn eval(&self, _pt: &PhasePoint) -> f64 {
                0.0
            }
            fn grad_p(&self, pt: &PhasePoint) -> Vec<f64> {
                vec![0.0; pt.dim()]
            }
            fn grad_q(&self, pt: &PhasePoint) -> Vec<f64> {
                vec![0.0; pt.dim()]
            }
        }
        let h = Flatliner {
            chart: Chart::Torus(TorusChart::unit(2)),
        };
        let err = lagrangian_eval(&h, &[0.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, HamiltonianError::NewtonDivergence { .. }));
    }

    #[test]
    fn fenchel_identity_at_the_dual_velocity() {
        // p.v - L(x, v) = H(x, p) at v = (p + theta)/phi
        let h = MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap();
        let mut rng = CounterRng::new(41);
        for _ in 0..200 {
            let pt = random_point(&mut rng, 2, 1.0, 2.0);
            let v = legendre_velocity(&h, &pt);
            let l = lagrangian_eval(&h, &pt.q, &v).unwrap();
            let lhs = crate::linalg::dot(&pt.p, &v) - l;
            assert!((lhs - h.eval(&pt)).abs() <= 1e-10);
        }
    }
}
