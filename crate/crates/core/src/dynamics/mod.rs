//! Finite realizations of the moving particle system.

pub mod brownian;
pub mod continuum;
pub mod dump;
pub mod lattice;
pub mod window;

pub use brownian::{BrownianPath, PathVisitor, FINE_PER_COARSE};
pub use continuum::ContinuumRealization;
pub use lattice::{Jump, LatticeRealization, Residence};
pub use window::{SimulationWindow, DEFAULT_EPSILON};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Mode};

/// Spatial part of an occupancy query.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Site(crate::model::Site),
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParticleRealization {
    Lattice(LatticeRealization),
    Continuum(ContinuumRealization),
}

impl ParticleRealization {
    /// Cloud and motion for the mode of `params`.
    pub fn sample(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<Self> {
        Ok(match params.mode {
            Mode::Lattice => Self::Lattice(LatticeRealization::sample(params, window, seed)?),
            Mode::Continuum => Self::Continuum(ContinuumRealization::sample(params, window, seed)?),
        })
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Self::Lattice(r) => r.params(),
            Self::Continuum(r) => r.params(),
        }
    }

    pub fn window(&self) -> &SimulationWindow {
        match self {
            Self::Lattice(r) => r.window(),
            Self::Continuum(r) => r.window(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Lattice(r) => r.seed(),
            Self::Continuum(r) => r.seed(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Lattice(r) => r.len(),
            Self::Continuum(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Continuum queries are evaluated on the time grid only.
    pub fn is_discretized(&self) -> bool {
        matches!(self, Self::Continuum(_))
    }

    pub fn thinned(&self, lambda: f64) -> Result<Self> {
        Ok(match self {
            Self::Lattice(r) => Self::Lattice(r.thinned(lambda)?),
            Self::Continuum(r) => Self::Continuum(r.thinned(lambda)?),
        })
    }

    pub fn positions_at(&self, time: f64) -> Vec<Vec<f64>> {
        match self {
            Self::Lattice(r) => r
                .positions_at(time)
                .into_iter()
                .map(|p| p.into_iter().map(|c| c as f64).collect())
                .collect(),
            Self::Continuum(r) => r.positions_at(time),
        }
    }

    pub fn occupancy(&self, region: &Region, t0: f64, t1: f64) -> Result<bool> {
        match (self, region) {
            (Self::Lattice(r), Region::Site(s)) => r.occupancy(s, t0, t1),
            (Self::Continuum(r), Region::Ball { center, radius }) => r.occupancy(center, *radius, t0, t1),
            (Self::Continuum(r), Region::Site(s)) => r.occupancy(&s.to_f64(), 0.0, t0, t1),
            (Self::Lattice(_), Region::Ball { .. }) => Err(Error::WrongMode { expected: "continuum" }),
        }
    }

    pub fn as_lattice(&self) -> Option<&LatticeRealization> {
        match self {
            Self::Lattice(r) => Some(r),
            Self::Continuum(_) => None,
        }
    }

    pub fn as_continuum(&self) -> Option<&ContinuumRealization> {
        match self {
            Self::Continuum(r) => Some(r),
            Self::Lattice(_) => None,
        }
    }
}

/// Initial positions only (no motion attached yet).
pub fn sample_initial_cloud(params: &ModelParams, window: &SimulationWindow, seed: u64) -> Result<ParticleRealization> {
    Ok(match params.mode {
        Mode::Lattice => ParticleRealization::Lattice(LatticeRealization::sample_initial_cloud(params, window, seed)?),
        Mode::Continuum => {
            ParticleRealization::Continuum(ContinuumRealization::sample_initial_cloud(params, window, seed)?)
        }
    })
}

pub fn evolve_lattice_walks(realization: ParticleRealization) -> Result<ParticleRealization> {
    match realization {
        ParticleRealization::Lattice(r) => Ok(ParticleRealization::Lattice(r.evolve_lattice_walks())),
        ParticleRealization::Continuum(_) => Err(Error::WrongMode { expected: "lattice" }),
    }
}

pub fn evolve_brownian(realization: ParticleRealization, step_dt: f64) -> Result<ParticleRealization> {
    match realization {
        ParticleRealization::Continuum(r) => Ok(ParticleRealization::Continuum(r.evolve_brownian(step_dt)?)),
        ParticleRealization::Lattice(_) => Err(Error::WrongMode { expected: "continuum" }),
    }
}

pub fn occupancy(realization: &ParticleRealization, region: &Region, t0: f64, t1: f64) -> Result<bool> {
    realization.occupancy(region, t0, t1)
}

pub fn positions_at(realization: &ParticleRealization, time: f64) -> Vec<Vec<f64>> {
    realization.positions_at(time)
}
