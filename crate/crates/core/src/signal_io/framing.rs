use std::f64::consts::PI;

use super::{AudioBuffer, FrameGeometry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    SqrtHannPeriodic,
    Rectangular,
}

pub fn make_window(kind: WindowKind, len: usize) -> Vec<f64> {
    assert!(len >= 1, "window length must be at least 1");
    if len == 1 {
        return vec![1.0];
    }
    match kind {
        WindowKind::Rectangular => vec![1.0; len],
        WindowKind::SqrtHannPeriodic => (0..len)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
            .collect(),
    }
}

/// Number of frames needed so that every input sample receives its full set
/// of overlapping frames: `ceil((len + left_pad) / hop)`.
pub fn frame_count(len: usize, g: &FrameGeometry) -> usize {
    (len + g.left_pad).div_ceil(g.hop)
}

/// Cuts `x` into frames of `g.window_len` samples, reading zeros outside the
/// signal.
pub fn frame_signal(x: &AudioBuffer, g: &FrameGeometry) -> Vec<Vec<f64>> {
    let samples = x.samples();
    let n = samples.len() as i64;
    (0..frame_count(samples.len(), g))
        .map(|i| {
            let start = g.frame_start(i);
            (0..g.window_len as i64)
                .map(|k| {
                    let idx = start + k;
                    if (0..n).contains(&idx) {
                        samples[idx as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Sums hop-shifted frames. Frame `i` lands at offset `i * hop`; the caller
/// is responsible for removing any left padding and truncating the tail.
pub fn overlap_add(frames: &[Vec<f64>], hop: usize) -> Result<AudioBuffer> {
    if hop == 0 {
        return Err(Error::InvalidInput("overlap-add hop must be >= 1".into()));
    }
    let Some(first) = frames.first() else {
        return Ok(AudioBuffer::zeros(0));
    };
    let len = first.len();
    if let Some(bad) = frames.iter().find(|f| f.len() != len) {
        return Err(Error::shape("overlap_add frame length", len, bad.len()));
    }
    let mut out = vec![0.0; (frames.len() - 1) * hop + len];
    for (i, frame) in frames.iter().enumerate() {
        for (o, v) in out[i * hop..i * hop + len].iter_mut().zip(frame) {
            *o += v;
        }
    }
    AudioBuffer::new(out)
}
