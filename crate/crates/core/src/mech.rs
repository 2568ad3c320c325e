//! Randomized perturbation primitives.
//!
//! Numeric values get Laplace noise scaled to `delta / epsilon`; textual
//! values are resampled from their candidate pool with a keep probability of
//! `e^(eps/2) / (e^(eps/2) + n - 1)` and a uniform draw over the remaining
//! pool otherwise. All randomness flows through [`RandomSource`] so that a
//! `(seed, stream_id)` pair pins down every draw.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::entity::{EntityKind, ValueBounds};
use crate::error::{Error, Result};

/// Deterministic random stream. Two sources built from the same
/// `(seed, stream_id)` produce identical draws on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha12Rng,
    seed: u64,
    stream_id: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomSource {
            rng,
            seed,
            stream_id,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw from [0, 1) with 53 usable bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from the open interval (-1/2, 1/2). The half-step offset
    /// keeps the endpoints unreachable.
    pub fn uniform_centered(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64) - 0.5
    }

    /// Uniform index in `0..n`, bias-free via rejection.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_index over an empty range");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Stable 64-bit FNV-1a, used to derive per-document stream seeds from
/// string identifiers.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator byte so ("ab","c") and ("a","bc") hash apart.
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Maps a Uniform(-1/2, 1/2) draw through the Laplace inverse CDF.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One Laplace(0, scale) draw.
pub fn laplace_sample(scale: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Parameter(format!(
            "laplace scale must be a positive finite real, got {scale}"
        )));
    }
    Ok(laplace_from_uniform(rng.uniform_centered(), scale))
}

/// Probability that a pool resample returns the original entry.
///
/// Derived from a score of 1 for the original and 0 for every other entry,
/// with unit score sensitivity: `e^(eps/2) / (e^(eps/2) + n - 1)`.
pub fn keep_probability(epsilon: f64, pool_size: usize) -> Result<f64> {
    if pool_size < 2 {
        return Err(Error::Parameter(format!(
            "pool size must be at least 2, got {pool_size}"
        )));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon must be a nonnegative finite real, got {epsilon}"
        )));
    }
    // 1 / (1 + (n-1) e^(-eps/2)) stays finite for any epsilon; the naive
    // e^(eps/2) numerator overflows past eps ~ 1420.
    Ok(1.0 / (1.0 + (pool_size as f64 - 1.0) * (-epsilon / 2.0).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Laplace,
    Exponential,
    Redacted,
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismKind::Laplace => "laplace",
            MechanismKind::Exponential => "exponential",
            MechanismKind::Redacted => "redacted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntityValue {
    Num(f64),
    Text(String),
}

/// Outcome of one mechanism application to one entity instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedValue {
    pub original: EntityValue,
    pub output: EntityValue,
    pub kind: EntityKind,
    pub epsilon_used: f64,
    pub mechanism: MechanismKind,
}

impl PerturbedValue {
    pub fn output_number(&self) -> Result<f64> {
        match &self.output {
            EntityValue::Num(v) => Ok(*v),
            EntityValue::Text(_) => Err(Error::Protocol(format!(
                "{} output is textual, expected numeric",
                self.kind
            ))),
        }
    }

    pub fn output_text(&self) -> Result<String> {
        match &self.output {
            EntityValue::Text(t) => Ok(t.clone()),
            EntityValue::Num(_) => Err(Error::Protocol(format!(
                "{} output is numeric, expected textual",
                self.kind
            ))),
        }
    }
}

/// Smallest number of fractional digits that represents `value` exactly,
/// capped at 6. Integer-valued inputs report 0.
fn value_decimals(value: f64) -> u32 {
    for d in 0..=6u32 {
        let scale = 10f64.powi(d as i32);
        let rounded = (value * scale).round() / scale;
        if rounded == value {
            return d;
        }
    }
    6
}

/// Adds Laplace noise at scale `delta / epsilon`, then rounds the sum back
/// to the precision of the original value and clamps it into `bounds`.
pub fn perturb_numeric(
    value: f64,
    kind: EntityKind,
    delta: f64,
    epsilon: f64,
    bounds: Option<ValueBounds>,
    rng: &mut RandomSource,
) -> Result<PerturbedValue> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon must be a positive finite real, got {epsilon}"
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!(
            "delta must be a positive finite real, got {delta}"
        )));
    }
    let noise = laplace_sample(delta / epsilon, rng)?;
    let output = apply_numeric_post(value, noise, bounds);
    Ok(PerturbedValue {
        original: EntityValue::Num(value),
        output: EntityValue::Num(output),
        kind,
        epsilon_used: epsilon,
        mechanism: MechanismKind::Laplace,
    })
}

/// Deterministic tail of [`perturb_numeric`]: round to the original's
/// precision, then clamp.
pub(crate) fn apply_numeric_post(value: f64, noise: f64, bounds: Option<ValueBounds>) -> f64 {
    let decimals = value_decimals(value);
    let scale = 10f64.powi(decimals as i32);
    let mut out = ((value + noise) * scale).round() / scale;
    if let Some(b) = bounds {
        out = b.clamp(out);
    }
    out
}

/// Resamples a pool entry: keep the original with [`keep_probability`],
/// otherwise draw uniformly from the rest of the pool.
pub fn perturb_textual(
    pool_index: usize,
    kind: EntityKind,
    pool: &[String],
    epsilon: f64,
    rng: &mut RandomSource,
) -> Result<PerturbedValue> {
    if pool.len() < 2 {
        return Err(Error::Parameter(format!(
            "pool for {kind} must have at least 2 entries, got {}",
            pool.len()
        )));
    }
    if pool_index >= pool.len() {
        return Err(Error::Parameter(format!(
            "pool index {pool_index} out of range for pool of {}",
            pool.len()
        )));
    }
    let p_keep = keep_probability(epsilon, pool.len())?;
    let out_index = if rng.next_f64() < p_keep {
        pool_index
    } else {
        let draw = rng.uniform_index(pool.len() - 1);
        if draw >= pool_index {
            draw + 1
        } else {
            draw
        }
    };
    Ok(PerturbedValue {
        original: EntityValue::Text(pool[pool_index].clone()),
        output: EntityValue::Text(pool[out_index].clone()),
        kind,
        epsilon_used: epsilon,
        mechanism: MechanismKind::Exponential,
    })
}
