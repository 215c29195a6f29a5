//! Environment distributions and reproducible random streams.
//!
//! The environment is an i.i.d. sequence of vectors; each coordinate has its
//! own [`ScalarDist`] and coordinates are drawn independently. Every draw
//! comes from a [`Stream`], a ChaCha8 generator keyed by `(seed, domain)` and
//! positioned on its own stream id, so replicate sequences never overlap and
//! depend only on `(seed, replicate_id, draw index)`.
//!
//! Sampling algorithms are those of `rand_distr` 0.5 (ziggurat normals,
//! Marsaglia–Tsang gamma with the `k < 1` boost); the version is pinned by the
//! workspace lockfile, which keeps output bit-identical across runs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Uniform as UniformDist;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One coordinate of the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", deny_unknown_fields)]
pub enum ScalarDist {
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "normal")]
    Normal { mean: f64, sd: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { log_mean: f64, log_sd: f64 },
    /// Shape `k`, scale `theta`; mean `k theta`, variance `k theta^2`.
    #[serde(rename = "gamma")]
    Gamma { shape: f64, scale: f64 },
    #[serde(rename = "uniform")]
    Uniform { lo: f64, hi: f64 },
    #[serde(rename = "discrete")]
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl ScalarDist {
    pub fn constant(value: f64) -> Self {
        ScalarDist::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        fn finite(name: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite, got {v}")))
            }
        }
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be strictly positive, got {v}")))
            }
        }
        match self {
            ScalarDist::Constant { value } => finite("constant value", *value),
            ScalarDist::Normal { mean, sd } => {
                finite("normal mean", *mean)?;
                positive("normal sd", *sd)
            }
            ScalarDist::LogNormal { log_mean, log_sd } => {
                finite("lognormal log_mean", *log_mean)?;
                positive("lognormal log_sd", *log_sd)
            }
            ScalarDist::Gamma { shape, scale } => {
                positive("gamma shape", *shape)?;
                positive("gamma scale", *scale)
            }
            ScalarDist::Uniform { lo, hi } => {
                finite("uniform lo", *lo)?;
                finite("uniform hi", *hi)?;
                if lo < hi {
                    Ok(())
                } else {
                    Err(Error::config(format!("uniform requires lo < hi, got [{lo}, {hi}]")))
                }
            }
            ScalarDist::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::config(
                        "discrete distribution needs equally many (nonzero) values and probs",
                    ));
                }
                for v in values {
                    finite("discrete value", *v)?;
                }
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::config("discrete probs must be finite and >= 0"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "discrete probs must sum to 1 within 1e-12, got {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ScalarDist::Constant { value } => *value,
            ScalarDist::Normal { mean, .. } => *mean,
            ScalarDist::LogNormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
            ScalarDist::Gamma { shape, scale } => shape * scale,
            ScalarDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarDist::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ScalarDist::Constant { .. } => 0.0,
            ScalarDist::Normal { sd, .. } => sd * sd,
            ScalarDist::LogNormal { log_mean, log_sd } => {
                let s2 = log_sd * log_sd;
                (s2.exp() - 1.0) * (2.0 * log_mean + s2).exp()
            }
            ScalarDist::Gamma { shape, scale } => shape * scale * scale,
            ScalarDist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            ScalarDist::Discrete { values, probs } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m).powi(2)).sum()
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            ScalarDist::Constant { .. } => true,
            ScalarDist::Discrete { values, probs } => {
                let support: Vec<f64> = values
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(v, _)| *v)
                    .collect();
                support.windows(2).all(|w| w[0] == w[1])
            }
            _ => false,
        }
    }
}

/// Distribution of one environment vector; coordinates are independent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub coords: Vec<ScalarDist>,
}

impl EnvSpec {
    pub fn new(coords: Vec<ScalarDist>) -> Self {
        EnvSpec { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.coords.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::config(format!("env coordinate {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.coords.iter().all(ScalarDist::is_deterministic)
    }

    /// Validates the spec and builds a reusable sampler.
    pub fn sampler(&self) -> Result<EnvSampler> {
        EnvSampler::new(self)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream for one replicate.
///
/// Not `Sync`-shared: move a stream into the context that draws from it.
#[derive(Debug, Clone)]
pub struct Stream {
    seed: u64,
    domain: u64,
    replicate_id: u64,
    rng: ChaCha8Rng,
}

impl Stream {
    fn keyed(seed: u64, domain: u64, replicate_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate_id);
        Stream {
            seed,
            domain,
            replicate_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_id(&self) -> u64 {
        self.replicate_id
    }

    /// An independent child stream, e.g. one per inner Monte Carlo sample.
    /// Children depend only on the parent's identity and `index`, never on
    /// how far the parent has been advanced.
    pub fn substream(&self, index: u64) -> Stream {
        let domain = splitmix64(self.domain ^ splitmix64(self.replicate_id.wrapping_add(1)));
        Stream::keyed(self.seed, domain, index)
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn make_stream(seed: u64, replicate_id: u64) -> Stream {
    Stream::keyed(seed, 0, replicate_id)
}

#[derive(Debug, Clone)]
enum Compiled {
    Constant(f64),
    Normal(Normal<f64>),
    LogNormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
    Uniform(UniformDist<f64>),
    Discrete(WeightedIndex<f64>, Vec<f64>),
}

impl Compiled {
    fn new(d: &ScalarDist) -> Result<Self> {
        d.validate()?;
        let bad = |e: &dyn std::fmt::Display| Error::config(e.to_string());
        Ok(match d {
            ScalarDist::Constant { value } => Compiled::Constant(*value),
            ScalarDist::Normal { mean, sd } => {
                Compiled::Normal(Normal::new(*mean, *sd).map_err(|e| bad(&e))?)
            }
            ScalarDist::LogNormal { log_mean, log_sd } => {
                Compiled::LogNormal(LogNormal::new(*log_mean, *log_sd).map_err(|e| bad(&e))?)
            }
            ScalarDist::Gamma { shape, scale } => {
                Compiled::Gamma(Gamma::new(*shape, *scale).map_err(|e| bad(&e))?)
            }
            ScalarDist::Uniform { lo, hi } => {
                Compiled::Uniform(UniformDist::new(*lo, *hi).map_err(|e| bad(&e))?)
            }
            ScalarDist::Discrete { values, probs } => Compiled::Discrete(
                WeightedIndex::new(probs.iter().copied()).map_err(|e| bad(&e))?,
                values.clone(),
            ),
        })
    }

    fn draw(&self, s: &mut Stream) -> f64 {
        match self {
            Compiled::Constant(v) => *v,
            Compiled::Normal(d) => d.sample(s),
            Compiled::LogNormal(d) => d.sample(s),
            Compiled::Gamma(d) => d.sample(s),
            Compiled::Uniform(d) => d.sample(s),
            Compiled::Discrete(idx, values) => values[idx.sample(s)],
        }
    }
}

/// A validated [`EnvSpec`] ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct EnvSampler {
    coords: Vec<Compiled>,
}

impl EnvSampler {
    pub fn new(spec: &EnvSpec) -> Result<Self> {
        let coords = spec
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Compiled::new(c).map_err(|e| Error::config(format!("env coordinate {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnvSampler { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Draws one environment vector into `out`, advancing the stream.
    pub fn sample_into(&self, stream: &mut Stream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.coords.len());
        for (slot, c) in out.iter_mut().zip(&self.coords) {
            *slot = c.draw(stream);
        }
    }

    pub fn sample(&self, stream: &mut Stream) -> Vec<f64> {
        let mut out = vec![0.0; self.coords.len()];
        self.sample_into(stream, &mut out);
        out
    }
}

/// Draws one environment vector; validates `spec` on every call.
pub fn sample(spec: &EnvSpec, stream: &mut Stream) -> Result<Vec<f64>> {
    Ok(EnvSampler::new(spec)?.sample(stream))
}
