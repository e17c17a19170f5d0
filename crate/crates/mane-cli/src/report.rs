//! Machine-readable JSON reports. Every report embeds the schema version and
//! the fully resolved configuration, and identical configs produce
//! byte-identical output.

use std::collections::BTreeMap;

use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct IntegrateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub t_final: f64,
    pub steps: usize,
    pub energy_initial: f64,
    pub energy_drift: f64,
    pub monitor_drifts: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winding: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winding_distance: Option<Vec<f64>>,
    pub csv_path: String,
}

#[derive(Serialize)]
pub struct CriticalReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub value: f64,
    pub upper_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    pub grid: Vec<usize>,
    pub iterations: usize,
    pub harmonic_coefficients: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fiber_covering_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suspension: Option<SuspensionReport>,
}

#[derive(Serialize)]
pub struct SuspensionReport {
    pub base_value: f64,
    pub suspended_value: f64,
    pub gap: f64,
    pub dt_harmonic_coefficient: f64,
}

#[derive(Serialize)]
pub struct StabilityReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub level: f64,
    pub samples: usize,
    #[serde(rename = "min_lambda_X")]
    pub min_lambda_x: f64,
    pub max_contraction: f64,
    pub eps: f64,
    pub delta: f64,
    pub pass: bool,
    pub thresholds: StabilityThresholds,
}

#[derive(Serialize)]
pub struct StabilityThresholds {
    pub min_lambda_x_above: f64,
    pub max_contraction_below: f64,
}

#[derive(Serialize)]
pub struct SolClaimReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: BTreeMap<String, String>,
    pub orbits: Vec<SolOrbitReport>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Serialize)]
pub struct SolOrbitReport {
    pub angle: f64,
    pub m: f64,
    pub period: f64,
    pub initial: [f64; 4],
    pub orbit_residual: f64,
    pub mz_integral: f64,
    pub mz_bound: f64,
    pub mz_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_ratio_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_ratio_pass: Option<bool>,
}
