//! Catalog of stochastic difference-equation population models.
//!
//! Every model is a map `x_{t+1} = F(x_t, w_{t+1})` on either the nonnegative
//! orthant or the probability simplex. Random parameters are wired to
//! coordinates of the environment vector `w` through [`Wire`]; fixed
//! parameters are stored inline.
//!
//! Unstructured models are multiplicative, `F_i(x, w) = f_i(x, w) x_i` with
//! `f_i > 0`, so a coordinate that starts at zero stays exactly zero.
//! Structured models are `F(x, w) = A(x, w) x` with a nonnegative matrix.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Where a model parameter comes from at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Wire {
    Const(f64),
    Coord(usize),
}

impl Wire {
    #[inline]
    pub fn get(&self, omega: &[f64]) -> f64 {
        match *self {
            Wire::Const(v) => v,
            Wire::Coord(i) => omega[i],
        }
    }

    fn max_coord(&self) -> Option<usize> {
        match *self {
            Wire::Const(_) => None,
            Wire::Coord(i) => Some(i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StateSpace {
    Orthant(usize),
    Simplex(usize),
}

impl StateSpace {
    pub fn dim(&self) -> usize {
        match *self {
            StateSpace::Orthant(k) | StateSpace::Simplex(k) => k,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return false;
        }
        match self {
            StateSpace::Orthant(_) => true,
            StateSpace::Simplex(_) => (x.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
        }
    }
}

/// Shape of the extinction set `S_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExtinctionSet {
    /// `S_0 = {0}`; distance is the Euclidean norm.
    Origin,
    /// `S_0 = {x : prod x_i = 0}`; distance is `min_i x_i`.
    CoordinateUnion,
}

impl ExtinctionSet {
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            ExtinctionSet::Origin => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ExtinctionSet::CoordinateUnion => x.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelSpec {
    /// `f(x, w) = lambda / (1 + x)^b`.
    Hassell { lambda: Wire, b: Wire },
    /// `x' = x exp(r - a x)`.
    RickerScalar { r: Wire, a: Wire },
    /// `x' = lambda x / (1 + a x) + s x`.
    BevertonHolt { lambda: Wire, a: Wire, s: f64 },
    /// `x_i' = x_i exp(r_i - x_i - alpha_j x_j)`, `j != i`. Note `alpha[j]`
    /// is the effect of species `j` on the other species.
    RickerCompetition { r: [Wire; 2], alpha: [f64; 2] },
    /// `x_i' = (1-d) x_i + d x_i xi_i / sum_j x_j xi_j` on the simplex.
    Lottery { d: f64, fecundity: Vec<Wire> },
    /// Lottery with frequency-dependent fecundity `b_i(x,w) = sum_j w_ij x_j`,
    /// `w = [[beta, alpha, gamma], [gamma, beta, alpha], [alpha, gamma, beta]]`
    /// and `alpha > beta > gamma > 0` enforced on every draw.
    RpsLottery {
        d: f64,
        alpha: Wire,
        beta: Wire,
        gamma: Wire,
    },
    /// Density-dependent biennial plant with delayed flowering:
    /// `A(x, xi) = [[0, p xi s1(x)], [s2(x), (1-p) s2(x)]]`,
    /// `s1 = 1/(1 + b1 (x1+x2))`, `s2 = a/(1 + b2 (x1+x2))`.
    Biennial {
        p: f64,
        a: f64,
        b1: f64,
        b2: f64,
        xi: Wire,
    },
    /// Density-independent `x' = A(w) x`.
    LinearMatrix { entries: Vec<Vec<Wire>> },
    /// A multiplicative model with every coordinate outside `support` pinned
    /// to zero.
    Face {
        base: Box<ModelSpec>,
        support: Vec<usize>,
    },
}

/// Result of [`ModelSpec::restrict_to_face`]: the face dynamics plus the map
/// from its coordinates to the original model's species indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    pub model: ModelSpec,
    pub embedding: Vec<usize>,
}

/// Anything that can be stepped like a model; lets drift checks run on
/// user-supplied toy maps as well as catalog models.
pub trait StochasticMap {
    fn state_dim(&self) -> usize;
    fn step(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>>;

    fn extinction_set(&self) -> ExtinctionSet {
        ExtinctionSet::Origin
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Hassell { .. } => "hassell",
            ModelSpec::RickerScalar { .. } => "ricker",
            ModelSpec::BevertonHolt { .. } => "beverton_holt",
            ModelSpec::RickerCompetition { .. } => "ricker_competition",
            ModelSpec::Lottery { .. } => "lottery",
            ModelSpec::RpsLottery { .. } => "rps_lottery",
            ModelSpec::Biennial { .. } => "biennial",
            ModelSpec::LinearMatrix { .. } => "linear_matrix",
            ModelSpec::Face { base, .. } => base.name(),
        }
    }

    pub fn state_space(&self) -> StateSpace {
        match self {
            ModelSpec::Hassell { .. }
            | ModelSpec::RickerScalar { .. }
            | ModelSpec::BevertonHolt { .. } => StateSpace::Orthant(1),
            ModelSpec::RickerCompetition { .. } => StateSpace::Orthant(2),
            ModelSpec::Lottery { fecundity, .. } => StateSpace::Simplex(fecundity.len()),
            ModelSpec::RpsLottery { .. } => StateSpace::Simplex(3),
            ModelSpec::Biennial { .. } => StateSpace::Orthant(2),
            ModelSpec::LinearMatrix { entries } => StateSpace::Orthant(entries.len()),
            ModelSpec::Face { base, .. } => base.state_space(),
        }
    }

    pub fn dim(&self) -> usize {
        self.state_space().dim()
    }

    pub fn extinction_set(&self) -> ExtinctionSet {
        match self {
            ModelSpec::Hassell { .. }
            | ModelSpec::RickerScalar { .. }
            | ModelSpec::BevertonHolt { .. }
            | ModelSpec::Biennial { .. }
            | ModelSpec::LinearMatrix { .. } => ExtinctionSet::Origin,
            ModelSpec::RickerCompetition { .. }
            | ModelSpec::Lottery { .. }
            | ModelSpec::RpsLottery { .. } => ExtinctionSet::CoordinateUnion,
            ModelSpec::Face { base, .. } => base.extinction_set(),
        }
    }

    pub fn is_structured(&self) -> bool {
        matches!(
            self,
            ModelSpec::Biennial { .. } | ModelSpec::LinearMatrix { .. }
        )
    }

    pub fn is_multiplicative(&self) -> bool {
        !self.is_structured()
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            ModelSpec::Hassell { .. } | ModelSpec::RickerScalar { .. } | ModelSpec::BevertonHolt { .. }
        )
    }

    /// Species that are not pinned to zero.
    pub fn support(&self) -> Vec<usize> {
        match self {
            ModelSpec::Face { support, .. } => support.clone(),
            _ => (0..self.dim()).collect(),
        }
    }

    fn wires(&self) -> Vec<Wire> {
        match self {
            ModelSpec::Hassell { lambda, b } => vec![*lambda, *b],
            ModelSpec::RickerScalar { r, a } => vec![*r, *a],
            ModelSpec::BevertonHolt { lambda, a, .. } => vec![*lambda, *a],
            ModelSpec::RickerCompetition { r, .. } => r.to_vec(),
            ModelSpec::Lottery { fecundity, .. } => fecundity.clone(),
            ModelSpec::RpsLottery {
                alpha, beta, gamma, ..
            } => vec![*alpha, *beta, *gamma],
            ModelSpec::Biennial { xi, .. } => vec![*xi],
            ModelSpec::LinearMatrix { entries } => entries.iter().flatten().copied().collect(),
            ModelSpec::Face { base, .. } => base.wires(),
        }
    }

    /// Smallest environment dimension this model can read from.
    pub fn env_dim_required(&self) -> usize {
        self.wires()
            .iter()
            .filter_map(Wire::max_coord)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Checks parameter ranges and that every wire points inside an
    /// environment of dimension `env_dim`.
    pub fn validate(&self, env_dim: usize) -> Result<()> {
        let need = self.env_dim_required();
        if need > env_dim {
            return Err(Error::config(format!(
                "{} reads environment coordinate {} but the environment has {env_dim}",
                self.name(),
                need - 1
            )));
        }
        let unit_open = |name: &str, v: f64, lo_closed: bool| -> Result<()> {
            let ok = if lo_closed {
                (0.0..=1.0).contains(&v)
            } else {
                v > 0.0 && v <= 1.0
            };
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{name} out of range: {v}")))
            }
        };
        match self {
            ModelSpec::BevertonHolt { s, .. } => {
                if !(0.0..1.0).contains(s) {
                    return Err(Error::config(format!("survivorship s must be in [0,1): {s}")));
                }
            }
            ModelSpec::RickerCompetition { alpha, .. } => {
                if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::config("competition coefficients must be positive"));
                }
            }
            ModelSpec::Lottery { d, fecundity } => {
                unit_open("death fraction d", *d, false)?;
                if fecundity.is_empty() {
                    return Err(Error::config("lottery needs at least one species"));
                }
            }
            ModelSpec::RpsLottery { d, .. } => unit_open("death fraction d", *d, false)?,
            ModelSpec::Biennial { p, a, b1, b2, .. } => {
                unit_open("flowering probability p", *p, true)?;
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(Error::config(format!("survivorship a must be in (0,1): {a}")));
                }
                if !(*b1 > 0.0 && *b2 > 0.0) {
                    return Err(Error::config("competition strengths b1, b2 must be positive"));
                }
            }
            ModelSpec::LinearMatrix { entries } => {
                let k = entries.len();
                if k == 0 || entries.iter().any(|r| r.len() != k) {
                    return Err(Error::config("linear_matrix entries must form a nonempty square"));
                }
                if entries.iter().flatten().any(|w| matches!(w, Wire::Const(v) if *v < 0.0)) {
                    return Err(Error::config("linear_matrix entries must be nonnegative"));
                }
            }
            ModelSpec::Face { base, support } => {
                base.validate(env_dim)?;
                check_support(support, base.dim())?;
            }
            ModelSpec::Hassell { .. } | ModelSpec::RickerScalar { .. } => {}
        }
        Ok(())
    }

    fn rps_params(alpha: Wire, beta: Wire, gamma: Wire, omega: &[f64]) -> Result<[f64; 3]> {
        let (a, b, g) = (alpha.get(omega), beta.get(omega), gamma.get(omega));
        if a > b && b > g && g > 0.0 {
            Ok([a, b, g])
        } else {
            Err(Error::config(format!(
                "rps draw violates alpha > beta > gamma > 0: ({a}, {b}, {g})"
            )))
        }
    }

    /// Draws of `(alpha, beta, gamma)` for the rock-paper-scissors lottery.
    pub fn rps_draw(&self, omega: &[f64]) -> Result<[f64; 3]> {
        match self {
            ModelSpec::RpsLottery {
                alpha, beta, gamma, ..
            } => Self::rps_params(*alpha, *beta, *gamma, omega),
            ModelSpec::Face { base, .. } => base.rps_draw(omega),
            _ => Err(Error::config(format!("{} is not an rps_lottery", self.name()))),
        }
    }

    /// Writes `ln f_i(x, w)` for every species into `out`.
    ///
    /// Only defined for multiplicative models; structured models return a
    /// configuration error.
    pub fn log_factors(&self, x: &[f64], omega: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ModelSpec::Hassell { lambda, b } => {
                out[0] = lambda.get(omega).ln() - b.get(omega) * x[0].ln_1p();
            }
            ModelSpec::RickerScalar { r, a } => {
                out[0] = r.get(omega) - a.get(omega) * x[0];
            }
            ModelSpec::BevertonHolt { lambda, a, s } => {
                out[0] = (lambda.get(omega) / (1.0 + a.get(omega) * x[0]) + s).ln();
            }
            ModelSpec::RickerCompetition { r, alpha } => {
                out[0] = r[0].get(omega) - x[0] - alpha[1] * x[1];
                out[1] = r[1].get(omega) - x[1] - alpha[0] * x[0];
            }
            ModelSpec::Lottery { d, fecundity } => {
                let total: f64 = x
                    .iter()
                    .zip(fecundity)
                    .map(|(xi, w)| xi * w.get(omega))
                    .sum();
                for (o, w) in out.iter_mut().zip(fecundity) {
                    *o = ((1.0 - d) + d * w.get(omega) / total).ln();
                }
            }
            ModelSpec::RpsLottery {
                d,
                alpha,
                beta,
                gamma,
            } => {
                let [a, b, g] = Self::rps_params(*alpha, *beta, *gamma, omega)?;
                let payoff = [[b, a, g], [g, b, a], [a, g, b]];
                let mut rates = [0.0; 3];
                for (i, row) in payoff.iter().enumerate() {
                    rates[i] = row.iter().zip(x).map(|(w, xj)| w * xj).sum();
                }
                let total: f64 = rates.iter().zip(x).map(|(r, xi)| r * xi).sum();
                for (o, r) in out.iter_mut().zip(rates) {
                    *o = ((1.0 - d) + d * r / total).ln();
                }
            }
            ModelSpec::Face { base, .. } => base.log_factors(x, omega, out)?,
            ModelSpec::Biennial { .. } | ModelSpec::LinearMatrix { .. } => {
                return Err(Error::config(format!(
                    "{} is structured; per-species growth factors are not defined",
                    self.name()
                )))
            }
        }
        Ok(())
    }

    /// Per-capita growth factor `f_i(x, w)`.
    ///
    /// Structured models expose only the total-norm factor
    /// `|A(x,w) x|_1 / |x|_1`, as species index 0.
    pub fn percapita_growth(&self, x: &[f64], omega: &[f64], i: usize) -> Result<f64> {
        if self.is_structured() {
            if i != 0 {
                return Err(Error::config(
                    "structured models expose only the total-norm factor (index 0)",
                ));
            }
            let y = self.matrix_at(x, omega)?.mul_vec(x);
            let norm_x: f64 = x.iter().sum();
            if norm_x <= 0.0 {
                return Err(Error::Domain("total-norm factor undefined at the origin".into()));
            }
            return Ok(y.iter().sum::<f64>() / norm_x);
        }
        if i >= self.dim() {
            return Err(Error::config(format!(
                "species index {i} out of range for {} species",
                self.dim()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        self.log_factors(x, omega, &mut out)?;
        Ok(out[i].exp())
    }

    /// The projection matrix `A(x, w)` of a structured model.
    pub fn matrix_at(&self, x: &[f64], omega: &[f64]) -> Result<Matrix> {
        match self {
            ModelSpec::Biennial { p, a, b1, b2, xi } => {
                let total = x[0] + x[1];
                let s1 = 1.0 / (1.0 + b1 * total);
                let s2 = a / (1.0 + b2 * total);
                Ok(Matrix::from_rows(&[
                    vec![0.0, p * xi.get(omega) * s1],
                    vec![s2, (1.0 - p) * s2],
                ]))
            }
            ModelSpec::LinearMatrix { entries } => {
                let rows: Vec<Vec<f64>> = entries
                    .iter()
                    .map(|r| r.iter().map(|w| w.get(omega)).collect())
                    .collect();
                let m = Matrix::from_rows(&rows);
                if !m.is_nonnegative() {
                    return Err(Error::ModelViolation(format!(
                        "linear_matrix draw has a negative entry: {rows:?}"
                    )));
                }
                Ok(m)
            }
            _ => Err(Error::config(format!("{} is not a structured model", self.name()))),
        }
    }

    /// `A(0, w)`, the linearization of a structured model at extinction.
    pub fn linearization_at_zero(&self, omega: &[f64]) -> Result<Matrix> {
        let zero = vec![0.0; self.dim()];
        self.matrix_at(&zero, omega)
    }

    /// Writes `F(x, w)` into `out` without range checks.
    pub fn step_into(&self, x: &[f64], omega: &[f64], out: &mut [f64]) -> Result<()> {
        if self.is_structured() {
            self.matrix_at(x, omega)?.mul_vec_into(x, out);
            return Ok(());
        }
        self.log_factors(x, omega, out)?;
        for (o, xi) in out.iter_mut().zip(x) {
            // a zero coordinate stays exactly zero whatever the factor
            *o = if *xi == 0.0 { 0.0 } else { o.exp() * xi };
        }
        if let ModelSpec::Face { support, .. } = self {
            for (j, o) in out.iter_mut().enumerate() {
                if !support.contains(&j) {
                    *o = 0.0;
                }
            }
        }
        if matches!(self.state_space(), StateSpace::Simplex(_)) {
            let total: f64 = out.iter().sum();
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        Ok(())
    }

    /// One step of the dynamics, `x_{t+1} = F(x_t, w_{t+1})`.
    pub fn step(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::config(format!(
                "state has dimension {} but {} expects {}",
                x.len(),
                self.name(),
                self.dim()
            )));
        }
        if omega.len() < self.env_dim_required() {
            return Err(Error::config(format!(
                "environment vector has dimension {} but {} reads {}",
                omega.len(),
                self.name(),
                self.env_dim_required()
            )));
        }
        let mut out = vec![0.0; x.len()];
        self.step_into(x, omega, &mut out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow {
                step: None,
                state: x.to_vec(),
            });
        }
        Ok(out)
    }

    /// The model restricted to the face where only `support` species are
    /// present. Reduces to a smaller catalog model when one exists.
    pub fn restrict_to_face(&self, support: &[usize]) -> Result<FaceModel> {
        let mut support = support.to_vec();
        support.sort_unstable();
        support.dedup();
        check_support(&support, self.dim())?;
        if let ModelSpec::Face { base, support: outer } = self {
            if !support.iter().all(|s| outer.contains(s)) {
                return Err(Error::config("face support must lie inside the current face"));
            }
            return base.restrict_to_face(&support);
        }
        let full = support.len() == self.dim();
        if full {
            return Ok(FaceModel {
                model: self.clone(),
                embedding: support,
            });
        }
        match self {
            ModelSpec::RickerCompetition { r, .. } if support.len() == 1 => Ok(FaceModel {
                model: ModelSpec::RickerScalar {
                    r: r[support[0]],
                    a: Wire::Const(1.0),
                },
                embedding: support,
            }),
            ModelSpec::Lottery { d, fecundity } => Ok(FaceModel {
                model: ModelSpec::Lottery {
                    d: *d,
                    fecundity: support.iter().map(|&i| fecundity[i]).collect(),
                },
                embedding: support,
            }),
            m if m.extinction_set() == ExtinctionSet::CoordinateUnion => Ok(FaceModel {
                model: ModelSpec::Face {
                    base: Box::new(m.clone()),
                    support,
                },
                embedding: (0..m.dim()).collect(),
            }),
            m => Err(Error::config(format!(
                "{} has extinction set {{0}}; it has no proper faces",
                m.name()
            ))),
        }
    }
}

impl StochasticMap for ModelSpec {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn step(&self, x: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        ModelSpec::step(self, x, omega)
    }

    fn extinction_set(&self) -> ExtinctionSet {
        ModelSpec::extinction_set(self)
    }
}

fn check_support(support: &[usize], dim: usize) -> Result<()> {
    if support.is_empty() {
        return Err(Error::config("face support must be nonempty"));
    }
    if let Some(bad) = support.iter().find(|&&i| i >= dim) {
        return Err(Error::config(format!("species {bad} out of range for {dim} species")));
    }
    Ok(())
}
