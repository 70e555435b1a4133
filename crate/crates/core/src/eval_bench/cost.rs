//! Multiply-accumulate cost model.
//!
//! Only multiplies are counted; biases and activations are free. A dense
//! layer `m -> n` costs `m * n`, a GRU layer `in -> h` costs
//! `3 * (in * h + h * h)`.

use std::fmt;

use crate::config::SlowFastConfig;
use crate::error::Result;
use crate::kv::KvMap;

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub slow_macs_per_frame: u64,
    pub fast_macs_per_frame: u64,
    pub slow_fps: f64,
    pub fast_fps: f64,
    /// Millions of MACs per second of audio.
    pub total_mmacs: f64,
    pub latency_us: f64,
}

impl CostReport {
    fn new(slow: u64, slow_fps: f64, fast: u64, fast_fps: f64, latency_us: f64) -> Self {
        Self {
            slow_macs_per_frame: slow,
            fast_macs_per_frame: fast,
            slow_fps,
            fast_fps,
            total_mmacs: (slow as f64 * slow_fps + fast as f64 * fast_fps) / 1e6,
            latency_us,
        }
    }

    pub fn slow_mmacs(&self) -> f64 {
        self.slow_macs_per_frame as f64 * self.slow_fps / 1e6
    }

    pub fn fast_mmacs(&self) -> f64 {
        self.fast_macs_per_frame as f64 * self.fast_fps / 1e6
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("slow_macs_per_frame", self.slow_macs_per_frame);
        m.set("fast_macs_per_frame", self.fast_macs_per_frame);
        m.set("slow_fps", self.slow_fps);
        m.set("fast_fps", self.fast_fps);
        m.set("total_mmacs_per_s", format!("{:.3}", self.total_mmacs));
        m.set("latency_us", self.latency_us);
        m
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render())
    }
}

fn dense(m: usize, n: usize) -> u64 {
    (m * n) as u64
}

fn gru(input: usize, h: usize) -> u64 {
    3 * (input * h + h * h) as u64
}

fn trunk_macs(input: usize, cfg: &SlowFastConfig) -> u64 {
    let w = cfg.gru_width;
    dense(input, w) + (0..cfg.gru_layers).map(|_| gru(w, w)).sum::<u64>()
}

/// Cost of a slow/fast model.
pub fn mac_count(cfg: &SlowFastConfig) -> Result<CostReport> {
    cfg.validate()?;
    let variant = cfg.fast_variant();
    let h = cfg.state_dim;
    let slow = trunk_macs(cfg.slow_window, cfg) + dense(cfg.gru_width, variant.packet_len(h));
    let fast = dense(cfg.frame_len, h)
        + variant.modulation_macs(h)
        + dense(variant.hidden_len(h), cfg.frame_len);
    Ok(CostReport::new(
        slow,
        cfg.slow_fps(),
        fast,
        cfg.fast_fps(),
        cfg.latency_us(),
    ))
}

/// Cost of the single-branch network with the same trunk run on every fast
/// frame and a dense head to the output frame. Everything lands in the fast
/// columns.
pub fn single_branch_cost(cfg: &SlowFastConfig) -> Result<CostReport> {
    cfg.validate()?;
    let per_frame = trunk_macs(cfg.frame_len, cfg) + dense(cfg.gru_width, cfg.frame_len);
    Ok(CostReport::new(
        0,
        0.0,
        per_frame,
        cfg.fast_fps(),
        cfg.latency_us(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::REUSE_GRID;
    use crate::engine::BaselineWeights;
    use crate::model::ModelWeights;
    use proptest::prelude::*;

    #[test]
    fn dense_layer_count() {
        assert_eq!(dense(32, 64), 2048);
    }

    #[test]
    fn reuse_one_by_hand() {
        let r = mac_count(&SlowFastConfig::two_ms(1, "ssmm").unwrap()).unwrap();
        // 32x64 + 4 * 3 * (64*64 + 64*64) + 64x64
        assert_eq!(r.slow_macs_per_frame, 2048 + 98_304 + 4096);
        assert_eq!(r.fast_macs_per_frame, 1024 + 64 + 1024);
        assert_eq!(r.slow_fps, 1000.0);
        assert!((r.total_mmacs - 106.56).abs() < 1e-9);
        assert_eq!(r.latency_us, 2000.0);
    }

    #[test]
    fn sample_level_by_hand() {
        let r = mac_count(&SlowFastConfig::sample_level("ssmm").unwrap()).unwrap();
        assert_eq!(r.slow_macs_per_frame, 2048 + 98_304 + 1024);
        assert_eq!(r.fast_macs_per_frame, 8 + 16 + 8);
        assert!((r.total_mmacs - 101.888).abs() < 1e-9);
        assert_eq!(r.latency_us, 62.5);
    }

    #[test]
    fn variants_differ_only_in_fast_and_head() {
        let f = |v| mac_count(&SlowFastConfig::two_ms(3, v).unwrap()).unwrap();
        let (s, fi, e) = (f("ssmm"), f("film"), f("ec"));
        assert_eq!(fi.fast_macs_per_frame, 1024 + 32 + 1024);
        assert_eq!(e.fast_macs_per_frame, 1024 + 2048);
        assert_eq!(s.slow_macs_per_frame, fi.slow_macs_per_frame);
        assert_eq!(e.slow_macs_per_frame, s.slow_macs_per_frame - 32 * 64);
    }

    #[test]
    fn agrees_with_weight_shapes() {
        for v in ["ssmm", "film", "ec"] {
            for reuse in [1, 4] {
                let cfg = SlowFastConfig::two_ms(reuse, v).unwrap();
                let w = ModelWeights::zeros(&cfg);
                let r = mac_count(&cfg).unwrap();
                assert_eq!(r.slow_macs_per_frame, w.slow.macs());
                let fast = w.fast.f_in.macs()
                    + cfg.fast_variant().modulation_macs(cfg.state_dim)
                    + w.fast.f_out.macs();
                assert_eq!(r.fast_macs_per_frame, fast);
            }
        }
        let cfg = SlowFastConfig::two_ms(3, "ssmm").unwrap();
        let b = single_branch_cost(&cfg).unwrap();
        assert_eq!(
            b.fast_macs_per_frame,
            BaselineWeights::zeros(&cfg).macs_per_frame()
        );
    }

    #[test]
    fn mac_column_nonincreasing_in_reuse() {
        for v in ["ssmm", "film", "ec"] {
            let totals: Vec<f64> = REUSE_GRID
                .iter()
                .map(|&d| {
                    mac_count(&SlowFastConfig::two_ms(d, v).unwrap())
                        .unwrap()
                        .total_mmacs
                })
                .collect();
            assert!(totals.windows(2).all(|p| p[1] <= p[0]), "{v}: {totals:?}");
        }
    }

    proptest! {
        #[test]
        fn total_is_component_sum(reuse in 1usize..12, h in 1usize..40, idx in 0usize..3) {
            let v = ["ssmm", "film", "ec"][idx];
            let cfg = SlowFastConfig::new(32, 16, reuse, h, v).unwrap();
            let r = mac_count(&cfg).unwrap();
            let sum = (r.slow_macs_per_frame as f64 * r.slow_fps
                + r.fast_macs_per_frame as f64 * r.fast_fps) / 1e6;
            prop_assert_eq!(r.total_mmacs, sum);
            prop_assert_eq!(r.latency_us, 32.0 / 16000.0 * 1e6);
            prop_assert!((r.slow_mmacs() + r.fast_mmacs() - r.total_mmacs).abs() < 1e-9);
        }
    }
}
