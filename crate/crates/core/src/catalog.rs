//! JSON-facing model declarations.
//!
//! A model parameter in a config is a number (fixed), a distribution object
//! (a fresh environment coordinate), or `{"coord": i}` (coordinate `i` of an
//! explicitly declared environment). [`ModelConfig::resolve`] turns the
//! declaration into a [`ModelSpec`] plus the full [`EnvSpec`] it reads from.

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, ScalarDist};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Wire};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Coord {
        coord: usize,
    },
    Dist(ScalarDist),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Hassell {
        lambda: Param,
        b: Param,
    },
    Ricker {
        r: Param,
        a: Param,
    },
    BevertonHolt {
        lambda: Param,
        a: Param,
        #[serde(default)]
        s: f64,
    },
    RickerCompetition {
        r: [Param; 2],
        alpha: [f64; 2],
    },
    Lottery {
        d: f64,
        fecundity: Vec<Param>,
    },
    RpsLottery {
        d: f64,
        alpha: Param,
        beta: Param,
        gamma: Param,
    },
    Biennial {
        p: f64,
        a: f64,
        b1: f64,
        b2: f64,
        xi: Param,
    },
    LinearMatrix {
        entries: Vec<Vec<Param>>,
    },
}

struct Wiring {
    coords: Vec<ScalarDist>,
    declared: usize,
}

impl Wiring {
    fn wire(&mut self, p: &Param) -> Result<Wire> {
        match p {
            Param::Fixed(v) => Ok(Wire::Const(*v)),
            Param::Coord { coord } => {
                if *coord >= self.declared {
                    Err(Error::config(format!(
                        "parameter refers to env coordinate {coord} but only {} are declared",
                        self.declared
                    )))
                } else {
                    Ok(Wire::Coord(*coord))
                }
            }
            Param::Dist(d) => {
                d.validate()?;
                self.coords.push(d.clone());
                Ok(Wire::Coord(self.coords.len() - 1))
            }
        }
    }
}

impl ModelConfig {
    /// Builds the model and its environment. Inline distributions are
    /// appended after the coordinates of `env`, in declaration order.
    pub fn resolve(&self, env: Option<&EnvSpec>) -> Result<(ModelSpec, EnvSpec)> {
        let base = env.cloned().unwrap_or_default();
        base.validate()?;
        let mut w = Wiring {
            declared: base.coords.len(),
            coords: base.coords,
        };
        let model = match self {
            ModelConfig::Hassell { lambda, b } => ModelSpec::Hassell {
                lambda: w.wire(lambda)?,
                b: w.wire(b)?,
            },
            ModelConfig::Ricker { r, a } => ModelSpec::RickerScalar {
                r: w.wire(r)?,
                a: w.wire(a)?,
            },
            ModelConfig::BevertonHolt { lambda, a, s } => ModelSpec::BevertonHolt {
                lambda: w.wire(lambda)?,
                a: w.wire(a)?,
                s: *s,
            },
            ModelConfig::RickerCompetition { r, alpha } => ModelSpec::RickerCompetition {
                r: [w.wire(&r[0])?, w.wire(&r[1])?],
                alpha: *alpha,
            },
            ModelConfig::Lottery { d, fecundity } => ModelSpec::Lottery {
                d: *d,
                fecundity: fecundity.iter().map(|p| w.wire(p)).collect::<Result<_>>()?,
            },
            ModelConfig::RpsLottery {
                d,
                alpha,
                beta,
                gamma,
            } => ModelSpec::RpsLottery {
                d: *d,
                alpha: w.wire(alpha)?,
                beta: w.wire(beta)?,
                gamma: w.wire(gamma)?,
            },
            ModelConfig::Biennial { p, a, b1, b2, xi } => ModelSpec::Biennial {
                p: *p,
                a: *a,
                b1: *b1,
                b2: *b2,
                xi: w.wire(xi)?,
            },
            ModelConfig::LinearMatrix { entries } => ModelSpec::LinearMatrix {
                entries: entries
                    .iter()
                    .map(|row| row.iter().map(|p| w.wire(p)).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?,
            },
        };
        let env = EnvSpec::new(w.coords);
        model.validate(env.dim())?;
        Ok((model, env))
    }
}

/// One row of the model catalog listing.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub state_space: &'static str,
    pub parameters: &'static str,
    pub env_wiring: &'static str,
}

/// The catalog, sorted by name.
pub fn list_models() -> Vec<CatalogEntry> {
    let mut v = vec![
        CatalogEntry {
            name: "beverton_holt",
            state_space: "orthant(1)",
            parameters: "lambda: param, a: param, s: number in [0,1)",
            env_wiring: "lambda, a (each a number, dist or coord)",
        },
        CatalogEntry {
            name: "biennial",
            state_space: "orthant(2)",
            parameters: "p in [0,1], a in (0,1), b1 > 0, b2 > 0, xi: param",
            env_wiring: "xi (seed production, e.g. gamma)",
        },
        CatalogEntry {
            name: "hassell",
            state_space: "orthant(1)",
            parameters: "lambda: param, b: param",
            env_wiring: "lambda, b",
        },
        CatalogEntry {
            name: "linear_matrix",
            state_space: "orthant(k)",
            parameters: "entries: k x k params (nonnegative)",
            env_wiring: "one per random entry, row-major",
        },
        CatalogEntry {
            name: "lottery",
            state_space: "simplex(k)",
            parameters: "d in (0,1], fecundity: k params",
            env_wiring: "fecundity_1 .. fecundity_k",
        },
        CatalogEntry {
            name: "ricker",
            state_space: "orthant(1)",
            parameters: "r: param, a: param",
            env_wiring: "r, a",
        },
        CatalogEntry {
            name: "ricker_competition",
            state_space: "orthant(2)",
            parameters: "r: 2 params, alpha: 2 positive numbers",
            env_wiring: "r_1, r_2 (growth-rate noise)",
        },
        CatalogEntry {
            name: "rps_lottery",
            state_space: "simplex(3)",
            parameters: "d in (0,1], alpha, beta, gamma: params with alpha > beta > gamma > 0",
            env_wiring: "alpha, beta, gamma",
        },
    ];
    v.sort_by_key(|e| e.name);
    v
}
