//! Perturbation probe for the algorithmic lookahead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SlowFastConfig;
use crate::engine::enhance_offline;
use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::signal_io::AudioBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub probes: usize,
    /// Allowed lookahead, `frame_len - 1` samples.
    pub bound: usize,
    /// Largest observed `m - n` over changed outputs `n <= m`.
    pub horizon: usize,
    /// Probes `m` whose perturbation changed some output `n < m - bound`.
    pub violations: Vec<(usize, usize)>,
}

impl LatencyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts a failed probe into an error naming the first offender.
    pub fn check(&self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(&(m, n)) => Err(Error::Verification(format!(
                "perturbing input[{m}] changed output[{n}] (bound {} samples)",
                self.bound
            ))),
        }
    }
}

/// Perturbs `probes` random input positions of a random signal and compares
/// outputs bitwise against the unperturbed run.
pub fn verify_latency(
    weights: &ModelWeights,
    cfg: &SlowFastConfig,
    probes: usize,
    seed: u64,
) -> Result<LatencyReport> {
    let len = (cfg.slow_window * 4).max(cfg.frame_len * 64).max(512);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let base = enhance_offline(&AudioBuffer::new(x.clone())?, weights, cfg)?;
    let bound = cfg.frame_len - 1;
    let mut report = LatencyReport {
        probes,
        bound,
        horizon: 0,
        violations: Vec::new(),
    };
    for _ in 0..probes {
        let m = rng.gen_range(0..len);
        let mut y = x.clone();
        y[m] += if y[m] > 0.0 { -0.25 } else { 0.25 };
        let out = enhance_offline(&AudioBuffer::new(y)?, weights, cfg)?;
        let first = out
            .samples()
            .iter()
            .zip(base.samples())
            .position(|(a, b)| a.to_bits() != b.to_bits());
        if let Some(n) = first {
            if n + bound < m {
                report.violations.push((m, n));
            }
            report.horizon = report.horizon.max(m.saturating_sub(n));
        }
    }
    Ok(report)
}
