//! The four experiment pipelines behind the CLI subcommands.

use std::collections::BTreeMap;
use std::sync::Arc;

use mane_core::critical::{
    estimate_c0, estimate_e, lower_bound_from_measure, suspension_critical_check, FormGrid,
    SmoothingSchedule,
};
use mane_core::flow::{
    find_reduced_sol_orbit, integrate, sol_monitors, winding_number, Trajectory,
};
use mane_core::forms::liouville_form;
use mane_core::geometry::{Chart, PhasePoint};
use mane_core::hamiltonian::TonelliHamiltonian;
use mane_core::stability::{
    g_from_integral, kinetic_direction_form, r_profile, suspension_stabilizer, verify_stability,
    BumpFunction,
};

use crate::config::{Config, ConfigError};
use crate::csv;
use crate::presets::hamiltonian_from_config;
use crate::report::*;

/// Failure classes map onto the process exit codes: config errors exit 2,
/// numeric errors exit 3 (checks that ran but failed exit 1).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn numeric<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// mane integrate
// ---------------------------------------------------------------------------

pub fn cmd_integrate(cfg: &Config) -> Result<(String, bool), CliError> {
    cfg.restrict(&[
        "hamiltonian", "dim", "theta", "q0", "p0", "t_final", "dt", "csv",
    ])?;
    let dt = cfg.f64_or("dt", 1e-2)?;
    if dt <= 0.0 {
        return Err(CliError::Config("dt must be positive".into()));
    }
    let t_final: f64 = cfg
        .require("t_final")?
        .parse()
        .map_err(|_| CliError::Config("t_final must be a real number".into()))?;
    let csv_path = cfg.get("csv").unwrap_or("trajectory.csv").to_string();

    if cfg.require("hamiltonian")? == "sol-reduced" {
        let q0 = cfg.f64_list("q0")?.ok_or(ConfigError::MissingKey("q0"))?;
        let p0 = cfg.f64_list("p0")?.ok_or(ConfigError::MissingKey("p0"))?;
        if q0.len() != 1 || p0.len() != 3 {
            return Err(CliError::Config(
                "sol-reduced takes q0 = z and p0 = M_x,M_y,M_z".into(),
            ));
        }
        let traj = mane_core::flow::integrate_reduced_sol([q0[0], p0[0], p0[1], p0[2]], t_final, dt)
            .map_err(numeric)?;
        csv::write_reduced_trajectory(&csv_path, &traj).map_err(numeric)?;
        let mut monitor_drifts = BTreeMap::new();
        monitor_drifts.insert("m".to_string(), traj.m_drift);
        let report = IntegrateReport {
            schema_version: SCHEMA_VERSION,
            command: "integrate",
            config: cfg.resolved(),
            t_final,
            steps: traj.times.len() - 1,
            energy_initial: traj.energy[0],
            energy_drift: traj.energy_drift,
            monitor_drifts,
            winding: None,
            winding_distance: None,
            csv_path,
        };
        return Ok((to_json(&report), true));
    }

    let h = hamiltonian_from_config(cfg)?;
    let q0 = cfg.f64_list("q0")?.ok_or(ConfigError::MissingKey("q0"))?;
    let p0 = cfg.f64_list("p0")?.ok_or(ConfigError::MissingKey("p0"))?;
    let n = h.base_dim();
    if q0.len() != n || p0.len() != n {
        return Err(CliError::Config(format!(
            "q0 and p0 must have {n} components for this Hamiltonian"
        )));
    }
    let monitors = match h.chart() {
        Chart::Sol(_) => sol_monitors(),
        _ => Vec::new(),
    };
    let x0 = PhasePoint::new(q0, p0);
    let traj = integrate(&h, &x0, t_final, dt, &monitors).map_err(numeric)?;
    csv::write_trajectory(&csv_path, &traj).map_err(numeric)?;

    let mut monitor_drifts = BTreeMap::new();
    for (name, _) in &traj.monitors {
        monitor_drifts.insert(name.clone(), traj.monitor_drift(name).unwrap());
    }
    let (winding, winding_distance) = match h.chart() {
        Chart::Torus(t) => {
            let mut w = Vec::new();
            let mut d = Vec::new();
            for (axis, per) in t.periods.iter().enumerate() {
                let (wi, di) = winding_number(&traj, axis, *per);
                w.push(wi);
                d.push(di);
            }
            (Some(w), Some(d))
        }
        _ => (None, None),
    };
    let report = IntegrateReport {
        schema_version: SCHEMA_VERSION,
        command: "integrate",
        config: cfg.resolved(),
        t_final,
        steps: traj.times.len() - 1,
        energy_initial: traj.energy[0],
        energy_drift: traj.energy_drift,
        monitor_drifts,
        winding,
        winding_distance,
        csv_path,
    };
    Ok((to_json(&report), true))
}

// ---------------------------------------------------------------------------
// mane critical
// ---------------------------------------------------------------------------

/// Zero-homology orbit measures for the built-in instances: the two
/// invariant circles of the rotating form, the rest point of the kinetic
/// flow, and the `M = 0` translation orbit on Sol.
fn builtin_measure(
    name: &str,
    h: &Arc<dyn TonelliHamiltonian>,
) -> Result<Vec<(Trajectory, f64)>, CliError> {
    match name {
        "kinetic" => {
            let n = h.base_dim();
            let orbit = integrate(
                h,
                &PhasePoint::new(vec![0.25; n], vec![0.0; n]),
                1.0,
                1e-2,
                &[],
            )
            .map_err(numeric)?;
            Ok(vec![(orbit, 1.0)])
        }
        "magnetic-rotating" => {
            let o1 = integrate(h, &PhasePoint::new(vec![0.0, 0.0], vec![0.0, 0.0]), 1.0, 1e-3, &[])
                .map_err(numeric)?;
            let o2 = integrate(h, &PhasePoint::new(vec![0.0, 0.5], vec![0.0, 0.0]), 1.0, 1e-3, &[])
                .map_err(numeric)?;
            Ok(vec![(o1, 0.5), (o2, 0.5)])
        }
        "sol" => {
            // M = 0: unit-speed translation in x at energy 1/2; dz-homology
            // vanishes pointwise
            let orbit = integrate(
                h,
                &PhasePoint::new(vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]),
                2.0,
                1e-3,
                &[],
            )
            .map_err(numeric)?;
            Ok(vec![(orbit, 1.0)])
        }
        other => Err(CliError::Config(format!(
            "no built-in zero-homology measure for hamiltonian {other}"
        ))),
    }
}

pub fn cmd_critical(cfg: &Config) -> Result<(String, bool), CliError> {
    cfg.restrict(&[
        "hamiltonian", "dim", "theta", "grid", "betas", "iters", "seed", "suspension", "t_res",
        "measure", "fiber_covering", "gap_tol", "suspension_gap_tol",
    ])?;
    let h = hamiltonian_from_config(cfg)?;
    let default_grid = match h.chart() {
        Chart::Sol(_) => vec![32, 32, 32],
        c => vec![64; c.base_dim()],
    };
    let grid_res = cfg.usize_list("grid")?.unwrap_or(default_grid);
    if grid_res.len() != h.base_dim() {
        return Err(CliError::Config(format!(
            "grid needs {} axes for this Hamiltonian",
            h.base_dim()
        )));
    }
    let mut schedule = SmoothingSchedule::default();
    if let Some(betas) = cfg.f64_list("betas")? {
        if betas.is_empty() || betas.iter().any(|b| *b <= 0.0) {
            return Err(CliError::Config("betas must be positive".into()));
        }
        schedule.betas = betas;
    }
    schedule.iters_per_stage = cfg.usize_or("iters", schedule.iters_per_stage)?;

    let grid = FormGrid::for_chart(h.chart(), &grid_res).map_err(numeric)?;
    let est = estimate_c0(h.as_ref(), grid.clone(), &schedule).map_err(numeric)?;

    let fiber_covering_value = if cfg.bool_or("fiber_covering", false)? {
        Some(estimate_e(h.as_ref(), &grid))
    } else {
        None
    };

    let mut pass = true;
    let lower_bound = if cfg.bool_or("measure", false)? {
        let name = cfg.require("hamiltonian")?;
        let orbits = builtin_measure(name, &h)?;
        let bound = lower_bound_from_measure(&h, &orbits).map_err(numeric)?;
        let gap_tol = cfg.f64_or("gap_tol", 0.04)?;
        if bound > est.value + 1e-9 || (est.value - bound).abs() > gap_tol {
            pass = false;
        }
        Some(bound)
    } else {
        None
    };

    let suspension = if cfg.bool_or("suspension", false)? {
        let t_res = cfg.usize_or("t_res", 16)?;
        let chk = suspension_critical_check(h.clone(), &grid_res, t_res, &schedule)
            .map_err(numeric)?;
        let tol = cfg.f64_or("suspension_gap_tol", 0.02)?;
        if chk.gap > tol {
            pass = false;
        }
        Some(SuspensionReport {
            base_value: chk.base.value,
            suspended_value: chk.suspended.value,
            gap: chk.gap,
            dt_harmonic_coefficient: chk.dt_harmonic,
        })
    } else {
        None
    };

    let report = CriticalReport {
        schema_version: SCHEMA_VERSION,
        command: "critical",
        config: cfg.resolved(),
        value: est.value,
        upper_bound: est.upper_bound,
        lower_bound,
        grid: est.grid_dims.clone(),
        iterations: est.iterations,
        harmonic_coefficients: est.minimizing_form.harmonic.clone(),
        fiber_covering_value,
        suspension,
    };
    Ok((to_json(&report), pass))
}

// ---------------------------------------------------------------------------
// mane stability
// ---------------------------------------------------------------------------

pub fn cmd_stability(cfg: &Config) -> Result<(String, bool), CliError> {
    cfg.restrict(&[
        "hamiltonian", "dim", "k", "eps", "delta", "samples", "seed", "negative_control",
        "contraction_max", "lambda_min", "profile_samples",
    ])?;
    if cfg.require("hamiltonian")? != "kinetic" {
        return Err(CliError::Config(
            "the stabilizer construction is wired to the kinetic instance".into(),
        ));
    }
    let k = cfg.f64_or("k", 0.5)?;
    let eps = cfg.f64_or("eps", 0.5)?;
    let delta = cfg.f64_or("delta", 0.2)?;
    if k <= 0.0 || eps <= 0.0 || delta <= 0.0 {
        return Err(CliError::Config("k, eps and delta must be positive".into()));
    }
    if eps * eps >= 2.0 * delta {
        return Err(CliError::Config(format!(
            "eps = {eps} must satisfy eps < sqrt(2 delta) = {}",
            (2.0 * delta).sqrt()
        )));
    }
    if delta >= k {
        return Err(CliError::Config("delta must stay below the level k".into()));
    }
    let samples = cfg.usize_or("samples", 10_000)?;
    let profile_samples = cfg.usize_or("profile_samples", 8)?;
    let seed = cfg.u64_or("seed", 0)?;
    let negative_control = cfg.bool_or("negative_control", false)?;
    let contraction_max = cfg.f64_or("contraction_max", 1e-4)?;
    let lambda_min = cfg.f64_or("lambda_min", 0.0)?;

    let base = hamiltonian_from_config(cfg)?;
    let n = base.base_dim();
    let hbar: Arc<dyn TonelliHamiltonian> = Arc::new(mane_core::hamiltonian::suspend(base.clone()));

    let lambda = if negative_control {
        liouville_form(n + 1)
    } else {
        let alpha = kinetic_direction_form(n);
        let profile = r_profile(&alpha, &base, k, delta, profile_samples, seed).map_err(numeric)?;
        let f = BumpFunction::new(eps);
        let g = g_from_integral(profile, f.clone()).map_err(numeric)?;
        suspension_stabilizer(&alpha, &f, &g, n)
    };
    let cert = verify_stability(&lambda, &hbar, k, samples, seed, eps, delta).map_err(numeric)?;
    let pass = cert.min_lambda_x > lambda_min && cert.max_contraction <= contraction_max;
    let report = StabilityReport {
        schema_version: SCHEMA_VERSION,
        command: "stability",
        config: cfg.resolved(),
        level: cert.level,
        samples: cert.samples,
        min_lambda_x: cert.min_lambda_x,
        max_contraction: cert.max_contraction,
        eps: cert.eps,
        delta: cert.delta,
        pass,
        thresholds: StabilityThresholds {
            min_lambda_x_above: lambda_min,
            max_contraction_below: contraction_max,
        },
    };
    Ok((to_json(&report), pass))
}

// ---------------------------------------------------------------------------
// mane sol-claim
// ---------------------------------------------------------------------------

pub fn cmd_sol_claim(cfg: &Config) -> Result<(String, bool), CliError> {
    cfg.restrict(&["angles", "dt_scan", "dt_fine", "mz_tol", "log_tol"])?;
    let angles = cfg.f64_list("angles")?.unwrap_or_else(|| {
        vec![0.6, 0.9, 1.2, 1.5, 1.8, 2.3, 2.6, 2.9]
    });
    let dt_scan = cfg.f64_or("dt_scan", 1e-3)?;
    let dt_fine = cfg.f64_or("dt_fine", 1e-4)?;
    if dt_scan <= 0.0 || dt_fine <= 0.0 {
        return Err(CliError::Config("dt_scan and dt_fine must be positive".into()));
    }
    let mz_tol = cfg.f64_or("mz_tol", 1e-6)?;
    let log_tol = cfg.f64_or("log_tol", 1e-8)?;

    let mut orbits = Vec::new();
    let mut pass = true;
    for &angle in &angles {
        let orbit = find_reduced_sol_orbit(angle, dt_scan, dt_fine).map_err(numeric)?;
        let mz_bound = mz_tol * orbit.period;
        let mz_pass = orbit.mz_integral.abs() <= mz_bound;
        let log_ratio_pass = orbit.log_ratio_residual.map(|r| r <= log_tol);
        if !mz_pass || log_ratio_pass == Some(false) {
            pass = false;
        }
        orbits.push(SolOrbitReport {
            angle,
            m: orbit.m,
            period: orbit.period,
            initial: orbit.initial,
            orbit_residual: orbit.residual,
            mz_integral: orbit.mz_integral,
            mz_bound,
            mz_pass,
            log_ratio_residual: orbit.log_ratio_residual,
            log_ratio_pass,
        });
    }
    let warning = if orbits.is_empty() {
        Some("no orbits scanned; the claim check is vacuous".to_string())
    } else {
        None
    };
    let report = SolClaimReport {
        schema_version: SCHEMA_VERSION,
        command: "sol-claim",
        config: cfg.resolved(),
        orbits,
        pass,
        warning,
    };
    Ok((to_json(&report), pass))
}

/// Dispatch a named subcommand.
pub fn run_command(command: &str, cfg: &Config) -> Result<(String, bool), CliError> {
    match command {
        "integrate" => cmd_integrate(cfg),
        "critical" => cmd_critical(cfg),
        "stability" => cmd_stability(cfg),
        "sol-claim" => cmd_sol_claim(cfg),
        other => Err(CliError::Config(format!(
            "unknown command {other}; expected integrate | critical | stability | sol-claim"
        ))),
    }
}
