//! Dominant Lyapunov exponent of random matrix products.
//!
//! `lyapunov_mc` estimates `gamma = lim (1/t) ln |A(0,xi_t)...A(0,xi_1) v|`
//! by renormalized products. `roerdink_gamma` evaluates the closed form for
//! the biennial plant model with Gamma-distributed seed production,
//!
//! ```text
//! gamma = ln(a(1-p)) + (1/K) int_0^inf ln(1+t) t^(k-1) (1+t)^(-k) e^(-zt) dt
//! K     =                   int_0^inf         t^(k-1) (1+t)^(-k) e^(-zt) dt
//! ```
//!
//! with `z = a(1-p)^2 / (theta p)` for the linearization
//! `[[0, p xi], [a, (1-p) a]]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{initial_state, InitialState, SimConfig};
use crate::env::{make_stream, EnvSpec};
use crate::error::{Error, Result};
use crate::stats::{BatchAccumulator, RateEstimate, DEFAULT_BATCHES};
use crate::models::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    One,
    Max,
}

impl Norm {
    fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::One => v.iter().map(|x| x.abs()).sum(),
            Norm::Max => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Monte Carlo estimate of the dominant Lyapunov exponent of `A(0, xi)`.
///
/// Each replicate iterates `v <- A(0,xi) v / |A(0,xi) v|` from its
/// normalized initial vector and averages `ln |A(0,xi) v|` over steps
/// `B..T-1`; replicate estimates are pooled in replicate order.
pub fn lyapunov_mc(
    model: &ModelSpec,
    env: &EnvSpec,
    cfg: &SimConfig,
    norm: Norm,
) -> Result<RateEstimate> {
    cfg.validate()?;
    if !model.is_structured() {
        return Err(Error::config(format!(
            "{} has no linearization A(0, w); lyapunov needs biennial or linear_matrix",
            model.name()
        )));
    }
    model.validate(env.dim())?;
    let sampler = env.sampler()?;
    if let InitialState::Vector(v) = &cfg.initial_state {
        if v.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::config("lyapunov initial vector must be strictly positive"));
        }
    }
    let k = model.dim();
    let parts: Vec<Result<RateEstimate>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut stream = make_stream(cfg.seed, r as u64);
            let mut v = initial_state(model, cfg, &stream)?;
            let n0 = norm.of(&v);
            v.iter_mut().for_each(|x| *x /= n0);
            let mut w = vec![0.0; k];
            let mut omega = vec![0.0; sampler.dim()];
            let mut acc = BatchAccumulator::new(cfg.samples(), DEFAULT_BATCHES)?;
            for s in 0..cfg.horizon {
                sampler.sample_into(&mut stream, &mut omega);
                model.linearization_at_zero(&omega)?.mul_vec_into(&v, &mut w);
                let n = norm.of(&w);
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::ModelViolation(format!(
                        "matrix product collapsed to {w:?} at step {}; A(0, w) is not primitive",
                        s + 1
                    )));
                }
                if s >= cfg.burn_in {
                    acc.push(n.ln());
                }
                for (vi, wi) in v.iter_mut().zip(&w) {
                    *vi = wi / n;
                }
            }
            Ok(acc.finish())
        })
        .collect();
    let parts: Vec<RateEstimate> = parts.into_iter().collect::<Result<_>>()?;
    Ok(RateEstimate::pool(&parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaClosedFormInput {
    pub p: f64,
    pub a: f64,
    pub theta: f64,
    pub k: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    1e-10
}

impl GammaClosedFormInput {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config(format!("p must be in [0,1]: {}", self.p)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::config(format!("a must be in (0,1): {}", self.a)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::config(format!("theta must be positive: {}", self.theta)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config(format!("k must be positive: {}", self.k)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::config(format!("rel_tol must be in (0,1): {}", self.rel_tol)));
        }
        Ok(())
    }

    /// `z` for the linearization `[[0, p xi], [a, (1-p) a]]`.
    pub fn z(&self) -> f64 {
        self.a * (1.0 - self.p).powi(2) / (self.theta * self.p)
    }

    /// `z = (1-p)^2 / (theta p)`, the parametrization `a [[0, p xi], [1, 1-p]]`.
    pub fn z_unscaled(&self) -> f64 {
        (1.0 - self.p).powi(2) / (self.theta * self.p)
    }
}

/// Largest `p` evaluated by quadrature; `p = 1` is reported separately.
pub const P_CAP: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointReport {
    /// `gamma` at `p = P_CAP`.
    pub at_cap: f64,
    /// Polynomial extrapolation of `gamma(z)` in `1/ln(1/z)` to `z = 0`.
    pub extrapolated: f64,
    /// `(ln(a theta) + psi(k)) / 2`.
    pub candidate_psi_k: f64,
    /// `(ln(a theta) + psi(a)) / 2`, digamma of the survivorship.
    pub candidate_psi_a: f64,
    pub discrepancy_psi_k: f64,
    pub discrepancy_psi_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaClosedForm {
    pub value: f64,
    /// Propagated quadrature error estimate.
    pub error_bound: f64,
    /// Same formula with `z = (1-p)^2 / (theta p)`; `None` at the endpoints.
    pub unscaled_z: Option<f64>,
    pub p1: Option<EndpointReport>,
}

/// Closed-form dominant Lyapunov exponent of the linearized biennial model
/// with Gamma(k, theta) seed production.
pub fn roerdink_gamma(input: &GammaClosedFormInput) -> Result<GammaClosedForm> {
    input.validate()?;
    let GammaClosedFormInput {
        p,
        a,
        theta,
        k,
        rel_tol,
    } = *input;
    if p == 0.0 {
        return Ok(GammaClosedForm {
            value: a.ln(),
            error_bound: 0.0,
            unscaled_z: None,
            p1: None,
        });
    }
    if p == 1.0 {
        let capped = GammaClosedFormInput { p: P_CAP, ..*input };
        let at_cap = gamma_at(capped.z(), (a * (1.0 - P_CAP)).ln(), k, rel_tol)?.0;
        let extrapolated = p1_extrapolation(a, theta, k, rel_tol)?;
        let base = (a * theta).ln();
        let candidate_psi_k = 0.5 * (base + digamma(k)?);
        let candidate_psi_a = 0.5 * (base + digamma(a)?);
        return Ok(GammaClosedForm {
            value: extrapolated,
            error_bound: (extrapolated - at_cap).abs(),
            unscaled_z: None,
            p1: Some(EndpointReport {
                at_cap,
                extrapolated,
                candidate_psi_k,
                candidate_psi_a,
                discrepancy_psi_k: (extrapolated - candidate_psi_k).abs(),
                discrepancy_psi_a: (extrapolated - candidate_psi_a).abs(),
            }),
        });
    }
    let p = p.min(P_CAP);
    let input = GammaClosedFormInput { p, ..*input };
    let offset = (a * (1.0 - p)).ln();
    let (value, error_bound) = gamma_at(input.z(), offset, k, rel_tol)?;
    let (unscaled_z, _) = gamma_at(input.z_unscaled(), offset, k, rel_tol)?;
    Ok(GammaClosedForm {
        value,
        error_bound,
        unscaled_z: Some(unscaled_z),
        p1: None,
    })
}

/// `offset + I1/K` with both integrals at relative tolerance `rel_tol`.
fn gamma_at(z: f64, offset: f64, k: f64, rel_tol: f64) -> Result<(f64, f64)> {
    let (big_k, ek) = roerdink_integral(z, k, false, rel_tol)?;
    let (i1, e1) = roerdink_integral(z, k, true, rel_tol)?;
    let ratio = i1 / big_k;
    Ok((offset + ratio, e1 / big_k + ratio * ek / big_k))
}

/// The p -> 1 limit: gamma as a function of z behaves like
/// `c0 + c1/L + c2/L^2 + ...` with `L = ln(1/z)`, so Neville extrapolation
/// in `1/L` to zero removes the slowly decaying terms.
fn p1_extrapolation(a: f64, theta: f64, k: f64, rel_tol: f64) -> Result<f64> {
    let ls = [10.0, 14.0, 18.0, 22.0, 26.0, 30.0];
    let mut h = [0.0; 6];
    let mut v = [0.0; 6];
    for (j, l) in ls.iter().enumerate() {
        let z = (-l as f64).exp();
        // 1-p solves a q^2 + z theta q - z theta = 0
        let zt = z * theta;
        let q = 2.0 * zt / (zt + (zt * zt + 4.0 * a * zt).sqrt());
        h[j] = 1.0 / l;
        v[j] = gamma_at(z, (a * q).ln(), k, rel_tol)?.0;
    }
    let n = v.len();
    for m in 1..n {
        for i in 0..n - m {
            v[i] = (h[i + m] * v[i] - h[i] * v[i + 1]) / (h[i + m] - h[i]);
        }
    }
    Ok(v[0])
}

/// `int_0^inf [ln(1+t)] t^(k-1) (1+t)^(-k) e^(-zt) dt`, returning the value
/// and an error estimate.
///
/// With `w = ln(1+t)` the integrand becomes
/// `[w] (1 - e^-w)^(k-1) exp(-z expm1(w))`, flat up to `w ~ ln(1/z)` and
/// double-exponentially small beyond `ln(750/z + 1)`. For `k < 1` the
/// `w^(k-1)` singularity on `[0, 1]` is removed by `w = s^(1/k)`.
pub fn roerdink_integral(z: f64, k: f64, log_weight: bool, rel_tol: f64) -> Result<(f64, f64)> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Quadrature(format!("z must be positive and finite, got {z}")));
    }
    let f = move |w: f64| -> f64 {
        if w == 0.0 {
            return if k == 1.0 && !log_weight { 1.0 } else if k > 1.0 || log_weight { 0.0 } else { f64::INFINITY };
        }
        let base = (-(-w).exp_m1()).powf(k - 1.0) * (-z * w.exp_m1()).exp();
        if log_weight {
            w * base
        } else {
            base
        }
    };
    let upper = (750.0 / z).ln_1p();
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    if k < 1.0 {
        let split = upper.min(1.0);
        let s_max = split.powf(k);
        let g = move |s: f64| -> f64 {
            if s == 0.0 {
                return if log_weight { 0.0 } else { 1.0 / k };
            }
            let w = s.powf(1.0 / k);
            let ratio = -(-w).exp_m1() / w;
            let base = ratio.powf(k - 1.0) * (-z * w.exp_m1()).exp() / k;
            if log_weight {
                w * base
            } else {
                base
            }
        };
        pieces.push(adaptive_simpson(&g, 0.0, s_max, rel_tol)?);
        if upper > split {
            pieces.push(adaptive_simpson(&f, split, upper, rel_tol)?);
        }
    } else {
        pieces.push(adaptive_simpson(&f, 0.0, upper, rel_tol)?);
    }
    Ok(pieces
        .iter()
        .fold((0.0, 0.0), |(v, e), (pv, pe)| (v + pv, e + pe)))
}

const SIMPSON_MIN_DEPTH: u32 = 6;
const SIMPSON_MAX_DEPTH: u32 = 60;

struct Simpson<'f, F> {
    f: &'f F,
    failures: usize,
    worst: (f64, f64),
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let h = (b - a) / 12.0;
        let left = h * (fa + 4.0 * flm + fm);
        let right = h * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth >= SIMPSON_MIN_DEPTH && delta.abs() <= 15.0 * eps {
            return (left + right + delta / 15.0, delta.abs() / 15.0);
        }
        if depth >= SIMPSON_MAX_DEPTH || m <= a || m >= b {
            self.failures += 1;
            self.worst = (m, delta.abs() / 15.0);
            return (left + right + delta / 15.0, delta.abs() / 15.0);
        }
        let (lv, le) = self.recurse(a, m, fa, flm, fm, left, 0.5 * eps, depth + 1);
        let (rv, re) = self.recurse(m, b, fm, frm, fb, right, 0.5 * eps, depth + 1);
        (lv + rv, le + re)
    }
}

/// Adaptive Simpson quadrature with Richardson correction on `[a, b]` to
/// relative tolerance `rel_tol`. Returns the value and the summed local
/// error estimates; fails if any subinterval hits the depth limit.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)> {
    if !(b > a) {
        return Ok((0.0, 0.0));
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::Quadrature(format!(
            "integrand not finite on [{a}, {b}]: f(a)={fa}, f(m)={fm}, f(b)={fb}"
        )));
    }
    // a coarse pass sets the absolute target
    let n = 64;
    let h = (b - a) / n as f64;
    let coarse: f64 = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(a + i as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    let scale = coarse.abs().max(f64::MIN_POSITIVE);
    let eps = rel_tol * scale;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut s = Simpson {
        f,
        failures: 0,
        worst: (0.0, 0.0),
    };
    let (v, e) = s.recurse(a, b, fa, fm, fb, whole, eps, 0);
    if !v.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integral on [{a}, {b}]")));
    }
    if s.failures > 0 && e > eps {
        return Err(Error::Quadrature(format!(
            "no convergence on [{a}, {b}] after depth {SIMPSON_MAX_DEPTH}: {} unresolved \
             subintervals, last near {} with local error {:e}; total error {e:e} > target {eps:e}",
            s.failures, s.worst.0, s.worst.1
        )));
    }
    Ok((v, e))
}

/// Digamma function `psi(x) = Gamma'(x)/Gamma(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma needs a positive finite argument, got {x}")));
    }
    Ok(statrs::function::gamma::digamma(x))
}
