//! Symplectic integration and orbit analysis.
//!
//! The integrator is the implicit midpoint rule
//! `x_{n+1} = x_n + dt X((x_n + x_{n+1})/2)`, solved per step by fixed-point
//! iteration with a Newton fallback. Midpoint is symplectic for general
//! smooth Hamiltonians (the built-ins are non-separable) and conserves every
//! quadratic first integral up to the step-solver tolerance, which is what
//! makes the long Sol runs cheap: both `H` and `m = M_x M_y` are quadratic in
//! the left-invariant momenta.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{Chart, PhasePoint};
use crate::hamiltonian::{
    hamiltonian_vector_field, lagrangian_eval, HamiltonianError, SolHamiltonian,
    TonelliHamiltonian,
};
use crate::math::{ln, rem_euclid, round};

#[derive(Clone, Debug, PartialEq)]
pub enum FlowError {
    StepSolverDiverged { t: f64 },
    NonFiniteState { t: f64 },
    NoConvergence { residual: f64 },
    SectionNotTransverse { flow_component: f64 },
    Hamiltonian(HamiltonianError),
}

impl core::fmt::Display for FlowError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FlowError::StepSolverDiverged { t } => write!(f, "implicit step solver diverged at t = {t}"),
            FlowError::NonFiniteState { t } => write!(f, "state became non-finite at t = {t}"),
            FlowError::NoConvergence { residual } => {
                write!(f, "orbit refinement stalled with residual {residual}")
            }
            FlowError::SectionNotTransverse { flow_component } => {
                write!(f, "section not transverse (flow component {flow_component})")
            }
            FlowError::Hamiltonian(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for FlowError {}

impl From<HamiltonianError> for FlowError {
    fn from(e: HamiltonianError) -> Self {
        FlowError::Hamiltonian(e)
    }
}

/// Named scalar observable recorded along a trajectory.
#[derive(Clone)]
pub struct Monitor {
    pub name: String,
    pub eval: Arc<dyn Fn(&PhasePoint) -> f64 + Send + Sync>,
}

impl Monitor {
    pub fn new(name: &str, eval: Arc<dyn Fn(&PhasePoint) -> f64 + Send + Sync>) -> Self {
        Monitor {
            name: String::from(name),
            eval,
        }
    }
}

/// The left-invariant momenta and the first integral `m = M_x M_y`.
pub fn sol_monitors() -> Vec<Monitor> {
    vec![
        Monitor::new("M_x", Arc::new(|pt| SolHamiltonian::m_coords(pt)[0])),
        Monitor::new("M_y", Arc::new(|pt| SolHamiltonian::m_coords(pt)[1])),
        Monitor::new("M_z", Arc::new(|pt| SolHamiltonian::m_coords(pt)[2])),
        Monitor::new(
            "m",
            Arc::new(|pt| {
                let m = SolHamiltonian::m_coords(pt);
                m[0] * m[1]
            }),
        ),
    ]
}

/// The cyclic momentum of the suspension circle.
pub fn suspension_monitors() -> Vec<Monitor> {
    vec![Monitor::new(
        "p_t",
        Arc::new(|pt| pt.p[pt.dim() - 1]),
    )]
}

/// Time-sampled orbit with energy and first-integral records.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    /// `qdot` at each stored state.
    pub velocities: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// `max_t |H(x(t)) - H(x(0))|`
    pub energy_drift: f64,
    pub monitors: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn monitor_drift(&self, name: &str) -> Option<f64> {
        self.monitors.iter().find(|(n, _)| n == name).map(|(_, vals)| {
            let v0 = vals[0];
            vals.iter().fold(0.0f64, |acc, v| acc.max((v - v0).abs()))
        })
    }

    pub fn monitor_values(&self, name: &str) -> Option<&[f64]> {
        self.monitors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, vals)| vals.as_slice())
    }

    pub fn last(&self) -> &PhasePoint {
        &self.states[self.states.len() - 1]
    }
}

const FP_TOL: f64 = 1e-13;

/// One implicit midpoint step on a flat state.
fn midpoint_step(rhs: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], dt: f64) -> Option<Vec<f64>> {
    let n = x.len();
    // explicit Euler predictor
    let fx = rhs(x);
    let mut w: Vec<f64> = x.iter().zip(&fx).map(|(a, f)| a + dt * f).collect();
    let mut last_change = f64::INFINITY;
    for _ in 0..100 {
        let mid: Vec<f64> = x.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = rhs(&mid);
        let mut change = 0.0f64;
        let mut w_next = vec![0.0; n];
        for i in 0..n {
            w_next[i] = x[i] + dt * fm[i];
            change = change.max((w_next[i] - w[i]).abs());
        }
        w = w_next;
        let scale = 1.0 + crate::linalg::norm_inf(&w);
        if change <= 1e-2 * FP_TOL * scale {
            return Some(w);
        }
        // stagnation at round-off level still counts as converged
        if change <= FP_TOL * scale && change >= last_change {
            return Some(w);
        }
        last_change = change;
    }
    // Newton fallback on G(w) = w - x - dt f((x+w)/2)
    let g = |w: &[f64]| -> Vec<f64> {
        let mid: Vec<f64> = x.iter().zip(w).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = rhs(&mid);
        (0..n).map(|i| w[i] - x[i] - dt * fm[i]).collect()
    };
    for _ in 0..50 {
        let gv = g(&w);
        let gn = crate::linalg::norm_inf(&gv);
        if gn <= FP_TOL * (1.0 + crate::linalg::norm_inf(&w)) {
            return Some(w);
        }
        let mut jac = vec![0.0; n * n];
        let h = 1e-7 * (1.0 + crate::linalg::norm_inf(&w));
        for j in 0..n {
            let mut wp = w.clone();
            wp[j] += h;
            let gp = g(&wp);
            wp[j] -= 2.0 * h;
            let gm = g(&wp);
            for i in 0..n {
                jac[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let mut rhs_v = gv.clone();
        let step = crate::linalg::solve(&mut jac, &mut rhs_v, n)?;
        for i in 0..n {
            w[i] -= step[i];
        }
    }
    let gv = g(&w);
    if crate::linalg::norm_inf(&gv) <= 1e-10 {
        Some(w)
    } else {
        None
    }
}

/// Integrate a flat first-order system, storing every step.
fn integrate_flat(
    rhs: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), FlowError> {
    assert!(dt > 0.0, "dt must be positive");
    let n_steps = round(t_final.abs() / dt).max(1.0) as usize;
    let step = t_final / n_steps as f64;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    times.push(0.0);
    for k in 0..n_steps {
        let t = (k + 1) as f64 * step;
        x = midpoint_step(rhs, &x, step).ok_or(FlowError::StepSolverDiverged { t })?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFiniteState { t });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok((times, states))
}

/// Flow of `X_H` from `x0` over `[0, T]`, recording energy and the supplied
/// monitors at every step. A negative `T` integrates backward; the time
/// column then runs backward too.
pub fn integrate(
    h: &Arc<dyn TonelliHamiltonian>,
    x0: &PhasePoint,
    t_final: f64,
    dt: f64,
    monitors: &[Monitor],
) -> Result<Trajectory, FlowError> {
    let x = hamiltonian_vector_field(h);
    let rhs = move |s: &[f64]| x.at(&PhasePoint::from_flat(s));
    let (times, flat_states) = integrate_flat(&rhs, &x0.flatten(), t_final, dt)?;
    let states: Vec<PhasePoint> = flat_states.iter().map(|s| PhasePoint::from_flat(s)).collect();
    let velocities: Vec<Vec<f64>> = states.iter().map(|s| h.grad_p(s)).collect();
    let energy: Vec<f64> = states.iter().map(|s| h.eval(s)).collect();
    let e0 = energy[0];
    let energy_drift = energy.iter().fold(0.0f64, |a, e| a.max((e - e0).abs()));
    let monitors = monitors
        .iter()
        .map(|mon| {
            (
                mon.name.clone(),
                states.iter().map(|s| (mon.eval)(s)).collect::<Vec<f64>>(),
            )
        })
        .collect();
    Ok(Trajectory {
        times,
        states,
        velocities,
        energy,
        energy_drift,
        monitors,
    })
}

// ---------------------------------------------------------------------------
// the reduced Sol system
// ---------------------------------------------------------------------------

/// Right-hand side of the self-contained reduced Sol system on
/// `(z, M_x, M_y, M_z)`:
/// `zdot = M_z`, `Mx' = Mx Mz`, `My' = -My Mz`, `Mz' = My^2 - Mx(Mx+1)`.
pub fn reduced_sol_rhs(s: &[f64]) -> [f64; 4] {
    let (mx, my, mz) = (s[1], s[2], s[3]);
    [mz, mx * mz, -my * mz, my * my - mx * (mx + 1.0)]
}

/// Orbit of the reduced system; the state is `(z, M_x, M_y, M_z)`, which is
/// not a cotangent point, so it gets its own container.
#[derive(Clone, Debug)]
pub struct SolReducedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 4]>,
    /// reduced energy `H_M = ((M_x+1)^2 + M_y^2 + M_z^2)/2` per sample
    pub energy: Vec<f64>,
    pub energy_drift: f64,
    /// first integral `m = M_x M_y` per sample
    pub m_values: Vec<f64>,
    pub m_drift: f64,
}

impl SolReducedTrajectory {
    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn last(&self) -> [f64; 4] {
        self.states[self.states.len() - 1]
    }

    /// Trapezoidal `int M_z dt`; the homology pairing of the orbit with `dz`.
    pub fn mz_integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            acc += 0.5 * (self.states[i][3] + self.states[i - 1][3])
                * (self.times[i] - self.times[i - 1]);
        }
        acc
    }
}

/// Integrate the reduced Sol system, monitoring `H_M` and `m = M_x M_y`.
pub fn integrate_reduced_sol(
    state: [f64; 4],
    t_final: f64,
    dt: f64,
) -> Result<SolReducedTrajectory, FlowError> {
    let rhs = |s: &[f64]| reduced_sol_rhs(s).to_vec();
    let (times, flat) = integrate_flat(&rhs, &state, t_final, dt)?;
    let states: Vec<[f64; 4]> = flat.iter().map(|s| [s[0], s[1], s[2], s[3]]).collect();
    let energy: Vec<f64> = states
        .iter()
        .map(|s| SolHamiltonian::h_of_m(&[s[1], s[2], s[3]]))
        .collect();
    let e0 = energy[0];
    let energy_drift = energy.iter().fold(0.0f64, |a, e| a.max((e - e0).abs()));
    let m_values: Vec<f64> = states.iter().map(|s| s[1] * s[2]).collect();
    let m0 = m_values[0];
    let m_drift = m_values.iter().fold(0.0f64, |a, m| a.max((m - m0).abs()));
    Ok(SolReducedTrajectory {
        times,
        states,
        energy,
        energy_drift,
        m_values,
        m_drift,
    })
}

// ---------------------------------------------------------------------------
// closed orbits
// ---------------------------------------------------------------------------

/// A refined closed orbit: initial point, period, shooting residual (after
/// chart reduction) and one stored period of the orbit.
#[derive(Clone, Debug)]
pub struct ClosedOrbit {
    pub initial: PhasePoint,
    pub period: f64,
    pub residual: f64,
    pub trajectory: Trajectory,
}

/// Poincare section `state[index] = value` in the flat `[q..., p...]` layout.
#[derive(Clone, Copy, Debug)]
pub struct Section {
    pub index: usize,
    pub value: f64,
}

fn flow_endpoint(
    h: &Arc<dyn TonelliHamiltonian>,
    x0: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>, FlowError> {
    let x = hamiltonian_vector_field(h);
    let rhs = move |s: &[f64]| x.at(&PhasePoint::from_flat(s));
    let (_, states) = integrate_flat(&rhs, x0, t, dt)?;
    Ok(states[states.len() - 1].clone())
}

/// Periodicity defect `Phi_T(x) - x` with torus coordinates wrapped to the
/// nearest image.
fn period_defect(chart: &Chart, endpoint: &[f64], start: &[f64]) -> Vec<f64> {
    let dim = endpoint.len() / 2;
    let mut d: Vec<f64> = endpoint.iter().zip(start).map(|(a, b)| a - b).collect();
    // reduce base components modulo the chart identifications
    fn wrap_axes(chart: &Chart, d: &mut [f64], offset: usize) {
        match chart {
            Chart::Torus(t) => {
                for (i, &per) in t.periods.iter().enumerate() {
                    let mut r = rem_euclid(d[offset + i], per);
                    if r > 0.5 * per {
                        r -= per;
                    }
                    d[offset + i] = r;
                }
            }
            Chart::Sol(_) => {
                // full Sol shooting is not used by the built-in experiments;
                // compare raw coordinates
            }
            Chart::Suspension { base } => {
                wrap_axes(base, d, offset);
                let i = chart.base_dim() - 1;
                let mut r = rem_euclid(d[offset + i], 1.0);
                if r > 0.5 {
                    r -= 1.0;
                }
                d[offset + i] = r;
            }
        }
    }
    wrap_axes(chart, &mut d, 0);
    let _ = dim;
    d
}

/// Scan the flow of `x0` for the closest return to itself, in chart-reduced
/// phase distance. Returns `(t_best, distance)` over `t in (t_skip, t_max]`.
pub fn closest_return_scan(
    h: &Arc<dyn TonelliHamiltonian>,
    x0: &PhasePoint,
    t_max: f64,
    dt_scan: f64,
    t_skip: f64,
) -> Result<(f64, f64), FlowError> {
    let traj = integrate(h, x0, t_max, dt_scan, &[])?;
    let chart = h.chart();
    let mut best = (0.0, f64::INFINITY);
    for (i, s) in traj.states.iter().enumerate() {
        let t = traj.times[i];
        if t <= t_skip {
            continue;
        }
        let d = chart.phase_distance(s, x0);
        if d < best.1 {
            best = (t, d);
        }
    }
    Ok(best)
}

/// Newton shooting for a closed orbit near `(guess, guess_t)`.
///
/// Unknowns are the initial point and the period; the system is the
/// periodicity defect plus one scalar condition: the section constraint when
/// a section is supplied, otherwise a phase anchor orthogonal to the flow
/// direction at the guess. Solved by damped Gauss-Newton with a
/// finite-difference flow Jacobian.
pub fn find_closed_orbit(
    h: &Arc<dyn TonelliHamiltonian>,
    section: Option<Section>,
    guess: &PhasePoint,
    guess_t: f64,
    dt: f64,
) -> Result<ClosedOrbit, FlowError> {
    let chart = h.chart().clone();
    let dim = 2 * h.base_dim();
    let xfield = hamiltonian_vector_field(h);
    let anchor_dir = xfield.at(guess);
    let anchor_pt = guess.flatten();
    let energy = h.eval(guess);

    // periodicity defect + one scalar phase/section condition + energy pin;
    // the energy row removes the period/speed degeneracy of the orbit family
    let residual = |x: &[f64], t: f64| -> Result<Vec<f64>, FlowError> {
        let end = flow_endpoint(h, x, t, dt)?;
        let mut r = period_defect(&chart, &end, x);
        match section {
            Some(sec) => r.push(x[sec.index] - sec.value),
            None => {
                let mut s = 0.0;
                for i in 0..dim {
                    s += (x[i] - anchor_pt[i]) * anchor_dir[i];
                }
                r.push(s);
            }
        }
        r.push(h.eval(&PhasePoint::from_flat(x)) - energy);
        Ok(r)
    };

    let mut x = guess.flatten();
    let mut t = guess_t;
    let mut r = residual(&x, t)?;
    let mut best_norm = crate::linalg::norm(&r);
    for _ in 0..30 {
        if best_norm <= 1e-11 {
            break;
        }
        // finite-difference Jacobian in x, analytic in T
        let rows = dim + 2;
        let cols = dim + 1;
        let mut jac = vec![0.0; rows * cols];
        let hstep = 1e-7 * (1.0 + crate::linalg::norm_inf(&x));
        for j in 0..dim {
            let mut xp = x.clone();
            xp[j] += hstep;
            let rp = residual(&xp, t)?;
            xp[j] -= 2.0 * hstep;
            let rm = residual(&xp, t)?;
            for i in 0..rows {
                jac[i * cols + j] = (rp[i] - rm[i]) / (2.0 * hstep);
            }
        }
        let end = flow_endpoint(h, &x, t, dt)?;
        let xe = xfield.at(&PhasePoint::from_flat(&end));
        for i in 0..dim {
            jac[i * cols + dim] = xe[i];
        }
        jac[dim * cols + dim] = 0.0;
        jac[(dim + 1) * cols + dim] = 0.0;

        let step = crate::linalg::least_squares_damped(&jac, &r, rows, cols, 1e-12)
            .ok_or(FlowError::NoConvergence { residual: best_norm })?;
        // damped update
        let mut lambda = 1.0;
        loop {
            let xc: Vec<f64> = x.iter().zip(&step[..dim]).map(|(a, s)| a - lambda * s).collect();
            let tc = t - lambda * step[dim];
            if tc > 10.0 * dt {
                let rc = residual(&xc, tc)?;
                let rn = crate::linalg::norm(&rc);
                if rn < best_norm {
                    x = xc;
                    t = tc;
                    r = rc;
                    best_norm = rn;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                break;
            }
        }
        if lambda < 1e-6 {
            break;
        }
    }

    if let Some(sec) = section {
        let fc = xfield.at(&PhasePoint::from_flat(&x))[sec.index];
        if fc.abs() < 1e-8 {
            return Err(FlowError::SectionNotTransverse { flow_component: fc });
        }
    }

    let initial = PhasePoint::from_flat(&x);
    let end = flow_endpoint(h, &x, t, dt)?;
    let resid = crate::linalg::norm(&period_defect(&chart, &end, &x));
    if resid > 1e-8 {
        return Err(FlowError::NoConvergence { residual: resid });
    }
    let trajectory = integrate(h, &initial, t, dt, &[])?;
    Ok(ClosedOrbit {
        initial,
        period: t,
        residual: resid,
        trajectory,
    })
}

// ---------------------------------------------------------------------------
// integrals along orbits
// ---------------------------------------------------------------------------

/// Trapezoidal integral of `omega(qdot)` along the projected orbit, where
/// `omega` is given by its covector components on the base. Uniform steps
/// over a full period make this spectrally accurate for closed orbits.
pub fn homology_integral(
    traj: &Trajectory,
    omega: &dyn Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let n = traj.times.len();
    let mut acc = 0.0;
    let mut prev = 0.0;
    for i in 0..n {
        let w = omega(&traj.states[i].q);
        let val = crate::linalg::dot(&w, &traj.velocities[i]);
        if i > 0 {
            acc += 0.5 * (val + prev) * (traj.times[i] - traj.times[i - 1]);
        }
        prev = val;
    }
    acc
}

/// Winding number of a torus orbit against `dx_axis`: the rounded integral
/// together with its distance to the nearest integer.
pub fn winding_number(traj: &Trajectory, axis: usize, period: f64) -> (i64, f64) {
    let w = homology_integral(traj, &|q: &[f64]| {
        let mut c = vec![0.0; q.len()];
        c[axis] = 1.0;
        c
    }) / period;
    let r = round(w);
    (r as i64, (w - r).abs())
}

/// Max pointwise defect of `p . qdot = L(q, qdot) + c` along an energy-`c`
/// trajectory; `L` goes through the Newton Legendre inversion, so the two
/// sides are computed by independent routes.
pub fn action_identity_residual(
    h: &Arc<dyn TonelliHamiltonian>,
    traj: &Trajectory,
    c: f64,
) -> Result<f64, FlowError> {
    let mut worst = 0.0f64;
    for (state, v) in traj.states.iter().zip(&traj.velocities) {
        let lhs = crate::linalg::dot(&state.p, v);
        let l = lagrangian_eval(h.as_ref(), &state.q, v)?;
        worst = worst.max((lhs - (l + c)).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// closed orbits of the reduced Sol system
// ---------------------------------------------------------------------------

/// A closed orbit of the reduced Sol system at energy 1/2, with the homology
/// data of the Claim check.
#[derive(Clone, Debug)]
pub struct SolOrbit {
    /// initial reduced state `(z, M_x, M_y, M_z)`
    pub initial: [f64; 4],
    pub period: f64,
    /// value of the first integral `m = M_x M_y`
    pub m: f64,
    /// `|M(T) - M(0)|` for the refined period
    pub residual: f64,
    /// trapezoidal `int_0^T M_z dt`
    pub mz_integral: f64,
    /// `|int M_z dt - log(M_x(T)/M_x(0))|`; `None` when `m = 0`
    pub log_ratio_residual: Option<f64>,
    pub trajectory: SolReducedTrajectory,
}

/// Find the closed orbit of the reduced system through the energy-1/2 sphere
/// point with `M_z = 0`, `M_x = cos(angle) - 1`, `M_y = sin(angle)`.
///
/// On the sphere the level curves of `m` are closed, and the integrator
/// conserves both `H_M` and `m` to solver tolerance, so the orbit returns to
/// the start exactly when `M_z` crosses zero the second time; the crossing
/// time is refined by a scalar Newton iteration.
pub fn find_reduced_sol_orbit(angle: f64, dt_scan: f64, dt_fine: f64) -> Result<SolOrbit, FlowError> {
    let mx = crate::math::cos(angle) - 1.0;
    let my = crate::math::sin(angle);
    let start = [0.0, mx, my, 0.0];
    let m = mx * my;
    let rhs = |s: &[f64]| reduced_sol_rhs(s).to_vec();

    // scan for the second M_z sign change
    let mut x = start.to_vec();
    let mut t = 0.0;
    let mut crossings = 0;
    let mut sign = 0.0;
    let mut bracket = None;
    let t_max = 400.0;
    while t < t_max {
        let next = midpoint_step(&rhs, &x, dt_scan).ok_or(FlowError::StepSolverDiverged { t })?;
        let s_next = next[3];
        if sign == 0.0 {
            if s_next != 0.0 {
                sign = s_next.signum();
            }
        } else if s_next != 0.0 && s_next.signum() != sign {
            crossings += 1;
            sign = s_next.signum();
            if crossings == 2 {
                bracket = Some((x.clone(), t));
                break;
            }
        }
        x = next;
        t += dt_scan;
    }
    let (state_a, t_a) = bracket.ok_or(FlowError::NoConvergence { residual: f64::NAN })?;

    // Newton on tau -> M_z(Phi_tau(state_a)); the bracketing step guarantees
    // a root in (0, dt_scan)
    let mut tau = 0.5 * dt_scan;
    for _ in 0..60 {
        let w = midpoint_step(&rhs, &state_a, tau).ok_or(FlowError::StepSolverDiverged { t: t_a })?;
        let f = w[3];
        let fp = reduced_sol_rhs(&w)[3];
        if fp.abs() < 1e-300 {
            break;
        }
        let dtau = f / fp;
        tau -= dtau;
        if !(0.0..=dt_scan).contains(&tau) {
            tau = tau.clamp(1e-12, dt_scan);
        }
        if dtau.abs() < 1e-14 {
            break;
        }
    }
    let mut period = t_a + tau;

    // Refine the period on the fine discretization with a phase-condition
    // Newton: project the endpoint defect onto the flow direction. The
    // endpoint already lies on the invariant curve (H_M and m are conserved
    // to solver tolerance), so the projection is the whole defect.
    let mut traj = integrate_reduced_sol(start, period, dt_fine)?;
    for _ in 0..5 {
        let end = traj.last();
        let f = reduced_sol_rhs(&end);
        let defect = [end[1] - mx, end[2] - my, end[3]];
        let fn2 = f[1] * f[1] + f[2] * f[2] + f[3] * f[3];
        if fn2 < 1e-300 {
            break;
        }
        let dt_corr = (defect[0] * f[1] + defect[1] * f[2] + defect[2] * f[3]) / fn2;
        if dt_corr.abs() < 1e-13 {
            break;
        }
        period -= dt_corr;
        traj = integrate_reduced_sol(start, period, dt_fine)?;
    }
    let end = traj.last();
    let endm = [end[1], end[2], end[3]];
    let residual = crate::math::sqrt(
        (endm[0] - mx) * (endm[0] - mx) + (endm[1] - my) * (endm[1] - my) + endm[2] * endm[2],
    );
    let mz_integral = traj.mz_integral();
    let log_ratio_residual = if m.abs() > 1e-12 {
        let ratio = endm[0] / mx;
        Some((mz_integral - ln(ratio)).abs())
    } else {
        None
    };
    Ok(SolOrbit {
        initial: start,
        period,
        m,
        residual,
        mz_integral,
        log_ratio_residual,
        trajectory: traj,
    })
}
