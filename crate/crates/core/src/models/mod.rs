//! Built-in example systems.

pub mod classical;
pub mod hopper;
pub mod nonhyperbolic;

use crate::error::{Error, Result};
use crate::system::HybridSystemDef;

pub use classical::make_classical_example;
pub use hopper::{hopper_oracles, make_vertical_hopper, HopperOracles, HopperParams};
pub use nonhyperbolic::make_nonhyperbolic_example;

pub const MODEL_NAMES: [&str; 3] = ["hopper", "nonhyperbolic", "classical"];

/// A built-in model together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hopper(HopperParams),
    NonHyperbolic { x1_star: f64, eps: f64 },
    Classical { eps: f64 },
}

impl Model {
    pub fn by_name(name: &str) -> Result<Model> {
        match name {
            "hopper" => Ok(Model::Hopper(HopperParams::default())),
            "nonhyperbolic" => Ok(Model::NonHyperbolic { x1_star: 1.0, eps: 0.05 }),
            "classical" => Ok(Model::Classical { eps: 0.05 }),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Hopper(_) => "hopper",
            Model::NonHyperbolic { .. } => "nonhyperbolic",
            Model::Classical { .. } => "classical",
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Model::Hopper(p) => p.eps,
            Model::NonHyperbolic { eps, .. } | Model::Classical { eps } => *eps,
        }
    }

    /// Override one named parameter.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match (self, key) {
            (Model::Hopper(p), "omega") => &mut p.omega,
            (Model::Hopper(p), "k") => &mut p.k,
            (Model::Hopper(p), "beta") => &mut p.beta,
            (Model::Hopper(p), "g") => &mut p.g,
            (Model::Hopper(p), "z0") => &mut p.z0,
            (Model::Hopper(p), "eps") => &mut p.eps,
            (Model::NonHyperbolic { x1_star, .. }, "x1_star") => x1_star,
            (Model::NonHyperbolic { eps, .. }, "eps") | (Model::Classical { eps }, "eps") => eps,
            (m, k) => {
                return Err(Error::InvalidParams(format!("model {} has no parameter {k}", m.name())));
            }
        };
        *slot = value;
        Ok(())
    }

    /// Named parameters in a fixed order, for reports.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match self {
            Model::Hopper(p) => vec![
                ("omega", p.omega),
                ("k", p.k),
                ("beta", p.beta),
                ("g", p.g),
                ("z0", p.z0),
                ("eps", p.eps),
            ],
            Model::NonHyperbolic { x1_star, eps } => vec![("x1_star", *x1_star), ("eps", *eps)],
            Model::Classical { eps } => vec![("eps", *eps)],
        }
    }

    pub fn system(&self) -> Result<HybridSystemDef> {
        let def = match self {
            Model::Hopper(p) => make_vertical_hopper(*p)?,
            Model::NonHyperbolic { x1_star, .. } => make_nonhyperbolic_example(*x1_star)?,
            Model::Classical { .. } => make_classical_example()?,
        };
        def.eps_range.check(self.eps())?;
        Ok(def)
    }
}
