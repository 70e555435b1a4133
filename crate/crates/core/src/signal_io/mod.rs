//! Audio buffers, dual-rate framing, windows and overlap-add.

mod framing;
mod wav;

pub use framing::{frame_count, frame_signal, make_window, overlap_add, WindowKind};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// The only sample rate the engine operates at.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
}

impl AudioBuffer {
    /// Wraps samples, rejecting NaN and infinities.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// Window length, hop and left zero-padding of a framing scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub window_len: usize,
    pub hop: usize,
    pub left_pad: usize,
}

impl FrameGeometry {
    pub fn new(window_len: usize, hop: usize, left_pad: usize) -> Result<Self> {
        if hop == 0 || hop > window_len {
            return Err(Error::Config(format!(
                "frame hop must satisfy 1 <= hop <= window_len, got hop={hop}, window_len={window_len}"
            )));
        }
        Ok(Self {
            window_len,
            hop,
            left_pad,
        })
    }

    /// Absolute sample index of the first sample of frame `i` (may be negative).
    pub fn frame_start(&self, i: usize) -> i64 {
        (i * self.hop) as i64 - self.left_pad as i64
    }
}
