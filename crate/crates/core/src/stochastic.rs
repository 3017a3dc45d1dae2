//! Seeded random streams and the correlated mean-reverting perception
//! process.
//!
//! Every run owns a ChaCha stream addressed by (master seed, run index,
//! purpose), so the same shock draw can be replayed under every regulatory
//! regime and runs can execute in any order without affecting each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// What a random stream is consumed for; keeps shock streams disjoint from
/// auxiliary randomness such as bootstrap resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Shocks = 0,
    Bootstrap = 1,
    Synthetic = 2,
}

/// Deterministic generator for (master_seed, run_index, purpose).
/// Identical addresses always yield identical sequences.
pub fn stream_rng(master_seed: u64, run_index: u64, purpose: StreamPurpose) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    // Stream ids partition the generator's period; the purpose tag sits in
    // the top byte so run indices cannot collide across purposes.
    rng.set_stream(((purpose as u64) << 56) | (run_index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Scale and cross-agent equicorrelation of the per-step perception shocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub corr: f64,
    pub n_agents: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.sigma > 0.0) {
            return Err("sigma must be > 0");
        }
        let lo = if self.n_agents > 1 { -1.0 / (self.n_agents as f64 - 1.0) } else { -1.0 };
        if !(self.corr > lo && self.corr <= 1.0) {
            return Err("corr must be a valid equicorrelation");
        }
        Ok(())
    }
}

/// Draw one correlated shock vector into `out`.
///
/// For corr >= 0 the common-factor construction is used:
/// eps_i = sigma * (sqrt(c) * z0 + sqrt(1-c) * z_i), which has marginal
/// variance sigma^2 and pairwise correlation c exactly. Negative
/// equicorrelations fall back to the spectral construction on the
/// centered/mean subspaces.
pub fn sample_epsilon_into(spec: &NoiseSpec, rng: &mut ChaCha12Rng, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.n_agents);
    let c = spec.corr;
    if c >= 0.0 {
        let z0: f64 = rng.sample(StandardNormal);
        let a = c.sqrt();
        let b = (1.0 - c).sqrt();
        for e in out.iter_mut() {
            let zi: f64 = rng.sample(StandardNormal);
            *e = spec.sigma * (a * z0 + b * zi);
        }
    } else {
        let n = out.len();
        for e in out.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let mean = out.iter().sum::<f64>() / n as f64;
        let scale_centered = (1.0 - c).sqrt();
        let scale_mean = (1.0 + (n as f64 - 1.0) * c).sqrt();
        for e in out.iter_mut() {
            *e = spec.sigma * (scale_centered * (*e - mean) + scale_mean * mean);
        }
    }
}

/// Allocating variant of [`sample_epsilon_into`].
pub fn sample_epsilon(spec: &NoiseSpec, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_agents];
    sample_epsilon_into(spec, rng, &mut out);
    out
}

/// One step of the discrete mean-reverting log-perception process:
/// log p_perc <- rho * log p_perc + (1 - rho) * log V + eps, elementwise.
pub fn update_perceptions(log_percs: &mut [f64], rho: f64, log_v: f64, eps: &[f64]) {
    debug_assert_eq!(log_percs.len(), eps.len());
    for (lp, e) in log_percs.iter_mut().zip(eps) {
        *lp = rho * *lp + (1.0 - rho) * log_v + e;
    }
}

/// Order-sensitive FNV-1a accumulator over the bit patterns of consumed
/// shocks; used to assert that runs sharing a stream consumed identical
/// draws regardless of regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShockHasher(u64);

impl ShockHasher {
    pub fn new() -> Self {
        ShockHasher(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, values: &[f64]) {
        for v in values {
            let mut h = self.0;
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            self.0 = h;
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for ShockHasher {
    fn default() -> Self {
        Self::new()
    }
}
