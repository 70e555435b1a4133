use crate::error::{Error, Result};
use crate::fast_branch::{self, FastVariant};
use crate::kv::KvMap;
use crate::signal_io::{FrameGeometry, SAMPLE_RATE};

pub const DEFAULT_GRU_WIDTH: usize = 64;
pub const DEFAULT_GRU_LAYERS: usize = 4;

/// Reuse factors evaluated for the 2 ms geometry.
pub const REUSE_GRID: [usize; 6] = [1, 2, 3, 4, 5, 10];

/// Geometry and architecture of a slow/fast model.
///
/// `slow_hop` is always `reuse * frame_hop` and `slow_window` is always
/// `2 * slow_hop`; both are stored so that model files carry the full
/// geometry and can be checked on load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlowFastConfig {
    pub frame_len: usize,
    pub frame_hop: usize,
    pub reuse: usize,
    pub slow_hop: usize,
    pub slow_window: usize,
    pub state_dim: usize,
    pub variant: String,
    pub gru_width: usize,
    pub gru_layers: usize,
}

impl SlowFastConfig {
    pub fn new(
        frame_len: usize,
        frame_hop: usize,
        reuse: usize,
        state_dim: usize,
        variant: &str,
    ) -> Result<Self> {
        let cfg = Self {
            frame_len,
            frame_hop,
            reuse,
            slow_hop: reuse * frame_hop,
            slow_window: 2 * reuse * frame_hop,
            state_dim,
            variant: variant.to_string(),
            gru_width: DEFAULT_GRU_WIDTH,
            gru_layers: DEFAULT_GRU_LAYERS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 2 ms latency geometry: 32-sample frames, 16-sample hop, H = 32.
    pub fn two_ms(reuse: usize, variant: &str) -> Result<Self> {
        Self::new(32, 16, reuse, 32, variant)
    }

    /// Single-sample latency: 1-sample frames, slow hop 16, H = 8.
    pub fn sample_level(variant: &str) -> Result<Self> {
        Self::new(1, 1, 16, 8, variant)
    }

    pub fn with_gru(mut self, width: usize, layers: usize) -> Result<Self> {
        self.gru_width = width;
        self.gru_layers = layers;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_hop == 0 || self.frame_hop > self.frame_len {
            return bad(format!(
                "need 1 <= frame_hop <= frame_len, got frame_hop={} frame_len={}",
                self.frame_hop, self.frame_len
            ));
        }
        if self.reuse == 0 {
            return bad("reuse factor must be >= 1".into());
        }
        if self.slow_hop != self.reuse * self.frame_hop {
            return bad(format!(
                "slow_hop ({}) must equal reuse * frame_hop ({} * {})",
                self.slow_hop, self.reuse, self.frame_hop
            ));
        }
        if self.slow_window != 2 * self.slow_hop {
            return bad(format!(
                "slow_window ({}) must equal 2 * slow_hop ({})",
                self.slow_window, self.slow_hop
            ));
        }
        if self.state_dim == 0 {
            return bad("state_dim must be >= 1".into());
        }
        if self.gru_width == 0 || self.gru_layers == 0 {
            return bad("gru_width and gru_layers must be >= 1".into());
        }
        fast_branch::lookup(&self.variant)?;
        Ok(())
    }

    pub fn fast_variant(&self) -> &'static dyn FastVariant {
        fast_branch::lookup(&self.variant).expect("config validated")
    }

    /// Zero padding in front of the first fast frame. With `frame_len - frame_hop`
    /// every output sample receives all of its overlapping frames.
    pub fn fast_left_pad(&self) -> usize {
        self.frame_len - self.frame_hop
    }

    pub fn fast_geometry(&self) -> FrameGeometry {
        FrameGeometry {
            window_len: self.frame_len,
            hop: self.frame_hop,
            left_pad: self.fast_left_pad(),
        }
    }

    /// Packet length emitted by the slow head.
    pub fn packet_len(&self) -> usize {
        self.fast_variant().packet_len(self.state_dim)
    }

    pub fn fast_fps(&self) -> f64 {
        SAMPLE_RATE as f64 / self.frame_hop as f64
    }

    pub fn slow_fps(&self) -> f64 {
        SAMPLE_RATE as f64 / self.slow_hop as f64
    }

    /// Algorithmic latency in microseconds (one synthesis frame).
    pub fn latency_us(&self) -> f64 {
        self.frame_len as f64 / SAMPLE_RATE as f64 * 1e6
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("frame_len", self.frame_len);
        m.set("frame_hop", self.frame_hop);
        m.set("reuse", self.reuse);
        m.set("slow_hop", self.slow_hop);
        m.set("slow_window", self.slow_window);
        m.set("state_dim", self.state_dim);
        m.set("variant", &self.variant);
        m.set("gru_width", self.gru_width);
        m.set("gru_layers", self.gru_layers);
        m
    }

    /// Reads a config. `slow_hop` and `slow_window` default to their derived
    /// values when absent; when present they must agree with the invariants.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let frame_len = m.parse_required("frame_len")?;
        let frame_hop = m.parse_required("frame_hop")?;
        let reuse: usize = m.parse_required("reuse")?;
        let slow_hop = m.parse_value("slow_hop")?.unwrap_or(reuse * frame_hop);
        let cfg = Self {
            frame_len,
            frame_hop,
            reuse,
            slow_hop,
            slow_window: m.parse_value("slow_window")?.unwrap_or(2 * slow_hop),
            state_dim: m.parse_required("state_dim")?,
            variant: m.get("variant").unwrap_or("ssmm").to_string(),
            gru_width: m.parse_value("gru_width")?.unwrap_or(DEFAULT_GRU_WIDTH),
            gru_layers: m.parse_value("gru_layers")?.unwrap_or(DEFAULT_GRU_LAYERS),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let c = SlowFastConfig::two_ms(3, "ssmm").unwrap();
        assert_eq!((c.slow_hop, c.slow_window), (48, 96));
        assert_eq!(c.fast_fps(), 1000.0);
        assert_eq!(c.latency_us(), 2000.0);
        let s = SlowFastConfig::sample_level("ssmm").unwrap();
        assert_eq!((s.slow_hop, s.slow_window, s.state_dim), (16, 32, 8));
        assert_eq!(s.latency_us(), 62.5);
    }

    #[test]
    fn rejects_broken_invariants() {
        assert!(SlowFastConfig::new(16, 32, 1, 4, "ssmm").is_err());
        assert!(SlowFastConfig::new(32, 16, 0, 4, "ssmm").is_err());
        assert!(SlowFastConfig::new(32, 16, 1, 4, "lstm").is_err());
        let mut m = SlowFastConfig::two_ms(2, "film").unwrap().to_kv();
        m.set("reuse", 3);
        assert!(SlowFastConfig::from_kv(&m).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let c = SlowFastConfig::two_ms(5, "ec").unwrap();
        assert_eq!(SlowFastConfig::from_kv(&c.to_kv()).unwrap(), c);
    }
}
