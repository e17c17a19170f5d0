//! Hamiltonian construction from the `hamiltonian` config key.

use std::sync::Arc;

use mane_core::geometry::{SolLattice, TorusChart};
use mane_core::hamiltonian::{
    BaseOneForm, CircleOrbitInstance, KineticFlat, MagneticFlat, SolHamiltonian,
    TonelliHamiltonian,
};

use crate::config::{Config, ConfigError};

/// Build the named Hamiltonian:
///
/// * `kinetic` — `|p|^2/2` on `T^dim` (key `dim`, default 2)
/// * `magnetic-rotating` — the unit rotating form on `T^2`
/// * `magnetic-closed` — constant closed `theta` on `T^2` (key `theta`)
/// * `circle-orbit` — the conformally flat instance with one minimizing circle
/// * `sol` — the left-invariant Sol Hamiltonian
pub fn hamiltonian_from_config(cfg: &Config) -> Result<Arc<dyn TonelliHamiltonian>, ConfigError> {
    let name = cfg.require("hamiltonian")?;
    match name {
        "kinetic" => {
            let dim = cfg.usize_or("dim", 2)?;
            if dim == 0 {
                return Err(ConfigError::Invalid("dim must be positive".into()));
            }
            Ok(Arc::new(KineticFlat::new(TorusChart::unit(dim))))
        }
        "magnetic-rotating" => Ok(Arc::new(
            MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None)
                .expect("flat conformal factor"),
        )),
        "magnetic-closed" => {
            let theta = cfg
                .f64_list("theta")?
                .ok_or(ConfigError::MissingKey("theta"))?;
            if theta.len() != 2 {
                return Err(ConfigError::Invalid("theta needs two components".into()));
            }
            Ok(Arc::new(
                MagneticFlat::new(TorusChart::unit(2), BaseOneForm::constant(theta), None)
                    .expect("flat conformal factor"),
            ))
        }
        "circle-orbit" => Ok(Arc::new(CircleOrbitInstance::hamiltonian())),
        "sol" => Ok(Arc::new(SolHamiltonian::new(SolLattice::standard()))),
        other => Err(ConfigError::BadValue {
            key: "hamiltonian".into(),
            value: other.into(),
            expected: "kinetic | magnetic-rotating | magnetic-closed | circle-orbit | sol",
        }),
    }
}
