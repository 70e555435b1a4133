//! Real-time factor measurement.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::SlowFastConfig;
use crate::engine::StreamSession;
use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::signal_io::{AudioBuffer, SAMPLE_RATE};

/// Push size for the streaming run, 10 ms.
pub const RTF_CHUNK: usize = 160;

#[derive(Debug, Clone, PartialEq)]
pub struct RtfReport {
    pub audio_secs: f64,
    pub wall: Duration,
    pub slow_time: Duration,
    pub fast_time: Duration,
    pub rtf: f64,
    /// SHA-256 of the output samples as little-endian `f64`.
    pub output_hash: String,
}

impl RtfReport {
    /// Fraction of profiled branch time spent in the slow branch.
    pub fn slow_share(&self) -> f64 {
        let s = self.slow_time.as_secs_f64();
        let total = s + self.fast_time.as_secs_f64();
        if total > 0.0 {
            s / total
        } else {
            0.0
        }
    }
}

/// Deterministic benchmark input: uniform noise at moderate level.
pub fn bench_signal(seconds: f64, seed: u64) -> Result<AudioBuffer> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "seconds must be positive, got {seconds}"
        )));
    }
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect())
}

pub fn hash_samples(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Streams `seconds` of audio through a profiled session on the calling
/// thread.
pub fn benchmark_rtf(
    weights: &ModelWeights,
    cfg: &SlowFastConfig,
    seconds: f64,
) -> Result<RtfReport> {
    let x = bench_signal(seconds, 0x5EED)?;
    let mut session = StreamSession::new(weights, cfg)?.with_profiling();
    let mut out = Vec::with_capacity(x.len());
    let t0 = Instant::now();
    for chunk in x.samples().chunks(RTF_CHUNK) {
        session.push_samples(chunk)?;
        out.extend(session.pull_output(usize::MAX));
    }
    session.close()?;
    out.extend(session.pull_output(usize::MAX));
    let wall = t0.elapsed();
    let stats = session.stats();
    let audio_secs = x.duration_secs();
    Ok(RtfReport {
        audio_secs,
        wall,
        slow_time: stats.slow_time,
        fast_time: stats.fast_time,
        rtf: wall.as_secs_f64() / audio_secs,
        output_hash: hash_samples(&out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::enhance_offline;

    #[test]
    fn hash_matches_offline_output() {
        let cfg = SlowFastConfig::two_ms(3, "film")
            .unwrap()
            .with_gru(16, 2)
            .unwrap();
        let w = ModelWeights::init(&cfg, 2);
        let r = benchmark_rtf(&w, &cfg, 0.25).unwrap();
        let y = enhance_offline(&bench_signal(0.25, 0x5EED).unwrap(), &w, &cfg).unwrap();
        assert_eq!(r.output_hash, hash_samples(y.samples()));
        assert!(r.rtf > 0.0 && r.audio_secs == 0.25);
        assert!(r.slow_share() > 0.0 && r.slow_share() < 1.0);
    }

    #[test]
    fn rejects_bad_duration() {
        assert!(bench_signal(0.0, 1).is_err());
        assert!(bench_signal(f64::NAN, 1).is_err());
    }
}
