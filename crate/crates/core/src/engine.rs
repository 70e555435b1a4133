//! Dual-rate scheduling and the streaming API.
//!
//! Positions below are measured on the *padded* stream: the input preceded
//! by `frame_len - frame_hop` zeros. On that stream fast frame `i` covers
//! `[i·Δ_F, i·Δ_F + L_F)`, and the packet it consumes comes from slow frame
//! `j = ⌊i/δ⌋ − 1`, whose span ends at `(j+1)·Δ_S`, no later than the first
//! sample of the earliest fast frame that uses it. Enhanced output is shifted
//! back by the padding, so output sample `n` depends only on input samples
//! `0..=n + L_F − 1`.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::config::SlowFastConfig;
use crate::error::{Error, Result};
use crate::fast_branch::{FastVariant, ModulationPacket, SsmState, StepScratch};
use crate::model::ModelWeights;
use crate::nn::{dot, Dense};
use crate::signal_io::{make_window, AudioBuffer, WindowKind};
use crate::slow_branch::{slow_forward, warmup_packet, SlowState, Trunk};

/// Slow frame index whose packet fast frame `i` uses; −1 selects the warm-up
/// packet.
pub fn modulation_index(i: usize, reuse: usize) -> i64 {
    (i / reuse) as i64 - 1
}

/// Half-open span `[(j+1)·Δ_S − L_S, (j+1)·Δ_S)` of slow frame `j` on the
/// padded stream. Negative positions read as zeros.
pub fn slow_frame_span(j: usize, slow_hop: usize, slow_window: usize) -> (i64, i64) {
    let end = ((j + 1) * slow_hop) as i64;
    (end - slow_window as i64, end)
}

/// Analysis and synthesis windows for a fast geometry: square-root periodic
/// Hann when frames overlap, rectangular otherwise.
pub fn fast_windows(cfg: &SlowFastConfig) -> (Vec<f64>, Vec<f64>) {
    let kind = if cfg.frame_hop < cfg.frame_len {
        WindowKind::SqrtHannPeriodic
    } else {
        WindowKind::Rectangular
    };
    let w = make_window(kind, cfg.frame_len);
    (w.clone(), w)
}

/// Number of fast frames that cover an input of `len` samples.
pub fn fast_frame_count(cfg: &SlowFastConfig, len: usize) -> usize {
    (len + cfg.fast_left_pad()).div_ceil(cfg.frame_hop)
}

/// Counters and optional wall-clock split of a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionStats {
    pub fast_frames: usize,
    pub slow_calls: usize,
    pub warmup_frames: usize,
    pub slow_time: Duration,
    pub fast_time: Duration,
}

/// Incremental enhancer for one audio stream.
pub struct StreamSession<'m> {
    cfg: SlowFastConfig,
    weights: &'m ModelWeights,
    variant: &'static dyn FastVariant,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    slow_state: SlowState,
    ssm_state: SsmState,
    warmup: ModulationPacket,
    packet: Option<(i64, ModulationPacket)>,
    /// Padded-stream samples; `history[0]` sits at `history_base`.
    history: VecDeque<f64>,
    history_base: usize,
    /// Padded-stream samples received so far (padding included).
    received: usize,
    next_frame: usize,
    ola: VecDeque<f64>,
    ola_base: usize,
    ready: VecDeque<f64>,
    /// Padded position up to which output has been moved into `ready`.
    finalized: usize,
    closed: bool,
    profile: bool,
    stats: SessionStats,
    frame_buf: Vec<f64>,
    out_buf: Vec<f64>,
    slow_buf: Vec<f64>,
    scratch: StepScratch,
}

impl<'m> StreamSession<'m> {
    pub fn new(weights: &'m ModelWeights, cfg: &SlowFastConfig) -> Result<Self> {
        cfg.validate()?;
        weights.check(cfg)?;
        let variant = cfg.fast_variant();
        let (analysis, synthesis) = fast_windows(cfg);
        let pad = cfg.fast_left_pad();
        Ok(Self {
            cfg: cfg.clone(),
            weights,
            variant,
            analysis,
            synthesis,
            slow_state: SlowState::for_trunk(&weights.slow.trunk),
            ssm_state: SsmState::zeros(variant.state_len(cfg.state_dim)),
            warmup: warmup_packet(&weights.slow, variant, cfg.state_dim)?,
            packet: None,
            history: std::iter::repeat_n(0.0, pad).collect(),
            history_base: 0,
            received: pad,
            next_frame: 0,
            ola: VecDeque::new(),
            ola_base: 0,
            ready: VecDeque::new(),
            finalized: 0,
            closed: false,
            profile: false,
            stats: SessionStats::default(),
            frame_buf: vec![0.0; cfg.frame_len],
            out_buf: vec![0.0; cfg.frame_len],
            slow_buf: vec![0.0; cfg.slow_window],
            scratch: StepScratch::new(&weights.fast),
        })
    }

    /// Records per-branch wall-clock time in [`SessionStats`].
    pub fn with_profiling(mut self) -> Self {
        self.profile = true;
        self
    }

    pub fn config(&self) -> &SlowFastConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    /// Consumes input and runs every fast frame that became complete.
    /// Returns the number of output samples ready to pull.
    pub fn push_samples(&mut self, chunk: &[f64]) -> Result<usize> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        if let Some(pos) = chunk.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        self.history.extend(chunk.iter().copied());
        self.received += chunk.len();
        while self.next_frame * self.cfg.frame_hop + self.cfg.frame_len <= self.received {
            self.run_frame()?;
        }
        Ok(self.ready.len())
    }

    /// Ends the stream: remaining frames are computed against zeros and the
    /// overlap-add tail becomes available.
    pub fn close(&mut self) -> Result<usize> {
        if self.closed {
            return Ok(self.ready.len());
        }
        self.closed = true;
        while self.next_frame * self.cfg.frame_hop < self.received {
            self.run_frame()?;
        }
        self.finalize_until(self.received);
        Ok(self.ready.len())
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn available(&self) -> usize {
        self.ready.len()
    }

    /// Returns up to `max_n` finalized samples, oldest first.
    pub fn pull_output(&mut self, max_n: usize) -> Vec<f64> {
        let n = max_n.min(self.ready.len());
        self.ready.drain(..n).collect()
    }

    fn read_padded(&self, pos: i64) -> f64 {
        if pos < self.history_base as i64 {
            // Only negative positions (before the padded stream) reach here.
            debug_assert!(pos < 0);
            return 0.0;
        }
        self.history
            .get(pos as usize - self.history_base)
            .copied()
            .unwrap_or(0.0)
    }

    fn run_frame(&mut self) -> Result<()> {
        let i = self.next_frame;
        let cfg = &self.cfg;
        let start = i * cfg.frame_hop;
        let j = modulation_index(i, cfg.reuse);

        if j >= 0 && self.packet.as_ref().map(|(pj, _)| *pj) != Some(j) {
            let (s0, _) = slow_frame_span(j as usize, cfg.slow_hop, cfg.slow_window);
            for k in 0..cfg.slow_window {
                self.slow_buf[k] = self.read_padded(s0 + k as i64);
            }
            let t = self.profile.then(Instant::now);
            let packet = slow_forward(
                &self.slow_buf,
                &mut self.slow_state,
                &self.weights.slow,
                self.variant,
                cfg.state_dim,
            )?;
            if let Some(t) = t {
                self.stats.slow_time += t.elapsed();
            }
            self.stats.slow_calls += 1;
            self.packet = Some((j, packet));
        }
        let packet = if j < 0 {
            self.stats.warmup_frames += 1;
            &self.warmup
        } else {
            &self.packet.as_ref().expect("packet computed above").1
        };

        for k in 0..cfg.frame_len {
            self.frame_buf[k] = self.read_padded((start + k) as i64) * self.analysis[k];
        }
        let t = self.profile.then(Instant::now);
        self.weights.fast.step_with(
            self.variant,
            packet,
            &mut self.ssm_state,
            &self.frame_buf,
            &mut self.out_buf,
            &mut self.scratch,
        )?;
        if let Some(t) = t {
            self.stats.fast_time += t.elapsed();
        }
        self.stats.fast_frames += 1;

        let need = start + cfg.frame_len - self.ola_base;
        if self.ola.len() < need {
            self.ola.resize(need, 0.0);
        }
        for k in 0..cfg.frame_len {
            self.ola[start - self.ola_base + k] += self.out_buf[k] * self.synthesis[k];
        }
        self.next_frame += 1;
        self.finalize_until((start + cfg.frame_hop).min(self.received));
        self.trim_history();
        Ok(())
    }

    /// Moves padded positions `< upto` from the accumulator to the output.
    fn finalize_until(&mut self, upto: usize) {
        let pad = self.cfg.fast_left_pad();
        while self.finalized < upto {
            let v = if self.finalized >= self.ola_base {
                self.ola_base += 1;
                self.ola.pop_front().unwrap_or(0.0)
            } else {
                0.0
            };
            if self.finalized >= pad {
                self.ready.push_back(v);
            }
            self.finalized += 1;
        }
    }

    fn trim_history(&mut self) {
        let cfg = &self.cfg;
        // Earliest sample any future fast frame or slow span can read.
        let keep_from = (self.next_frame * cfg.frame_hop)
            .saturating_sub(cfg.reuse * cfg.frame_hop + cfg.slow_window);
        while self.history_base < keep_from && !self.history.is_empty() {
            self.history.pop_front();
            self.history_base += 1;
        }
    }
}

/// Whole-utterance enhancement through a [`StreamSession`].
pub fn enhance_offline(
    x: &AudioBuffer,
    weights: &ModelWeights,
    cfg: &SlowFastConfig,
) -> Result<AudioBuffer> {
    let mut s = StreamSession::new(weights, cfg)?;
    s.push_samples(x.samples())?;
    s.close()?;
    AudioBuffer::new(s.pull_output(usize::MAX))
}

/// Streams `x` in chunks of `chunk` samples, pulling output after each push.
pub fn enhance_chunked(
    x: &AudioBuffer,
    weights: &ModelWeights,
    cfg: &SlowFastConfig,
    chunk: usize,
) -> Result<AudioBuffer> {
    let mut s = StreamSession::new(weights, cfg)?;
    let mut out = Vec::with_capacity(x.len());
    for c in x.samples().chunks(chunk.max(1)) {
        s.push_samples(c)?;
        out.extend(s.pull_output(usize::MAX));
    }
    s.close()?;
    out.extend(s.pull_output(usize::MAX));
    AudioBuffer::new(out)
}

/// Conventional single-branch network: the full trunk plus a dense head to a
/// time-domain frame, run for every fast frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineWeights {
    pub trunk: Trunk,
    pub head: Dense,
}

impl BaselineWeights {
    pub fn zeros(cfg: &SlowFastConfig) -> Self {
        Self {
            trunk: Trunk::zeros(cfg.frame_len, cfg.gru_width, cfg.gru_layers),
            head: Dense::zeros(cfg.gru_width, cfg.frame_len),
        }
    }

    pub fn init(cfg: &SlowFastConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self {
            trunk: Trunk::init(cfg.frame_len, cfg.gru_width, cfg.gru_layers, &mut rng),
            head: Dense::init(cfg.gru_width, cfg.frame_len, &mut rng),
        }
    }

    pub fn macs_per_frame(&self) -> u64 {
        self.trunk.macs() + self.head.macs()
    }
}

pub fn single_branch_forward(
    x: &AudioBuffer,
    weights: &BaselineWeights,
    cfg: &SlowFastConfig,
) -> Result<AudioBuffer> {
    let (analysis, synthesis) = fast_windows(cfg);
    let pad = cfg.fast_left_pad();
    let n_frames = fast_frame_count(cfg, x.len());
    let samples = x.samples();
    let read = |p: usize| -> f64 {
        p.checked_sub(pad)
            .and_then(|idx| samples.get(idx))
            .copied()
            .unwrap_or(0.0)
    };
    let mut state = SlowState::for_trunk(&weights.trunk);
    let mut ola = vec![0.0; (n_frames.max(1) - 1) * cfg.frame_hop + cfg.frame_len];
    let mut frame = vec![0.0; cfg.frame_len];
    for i in 0..n_frames {
        let start = i * cfg.frame_hop;
        for k in 0..cfg.frame_len {
            frame[k] = read(start + k) * analysis[k];
        }
        let top = weights.trunk.forward(&frame, &mut state)?;
        for k in 0..cfg.frame_len {
            let y = dot(weights.head.weight.row(k), top) + weights.head.bias[k];
            ola[start + k] += y * synthesis[k];
        }
    }
    AudioBuffer::new(ola.into_iter().skip(pad).take(x.len()).collect())
}
