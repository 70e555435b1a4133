//! Reverse-mode gradients through the unrolled dual-rate graph.
//!
//! [`forward_trace`] runs the same arithmetic as the streaming engine on a
//! whole utterance and keeps every intermediate. [`backward_trace`] walks it
//! in reverse: overlap-add, fast frames (with the recurrent state carried
//! backwards), per-packet accumulation over every frame that reused it, the
//! head, and full-sequence BPTT through the GRU stack.

use crate::config::SlowFastConfig;
use crate::engine::{fast_frame_count, fast_windows, modulation_index, slow_frame_span};
use crate::error::{Error, Result};
use crate::fast_branch::{FastVariant, ModulationPacket};
use crate::model::{GradientSet, ModelWeights};
use crate::slow_branch::GruCache;

use super::loss::{loss_terms_with_grad, total_loss_with_grad, LossTerms, LossWeights, StftParams};

/// One (noisy, clean) training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

struct SlowStep {
    input: Vec<f64>,
    /// `fc_in` output, the input of GRU layer 0.
    u0: Vec<f64>,
    caches: Vec<GruCache>,
    raw_packet: ModulationPacket,
}

struct FastStep {
    frame: Vec<f64>,
    u: Vec<f64>,
    state_prev: Vec<f64>,
    hidden: Vec<f64>,
}

/// Every intermediate of one enhanced utterance.
pub struct Trace {
    len: usize,
    slow: Vec<SlowStep>,
    /// `hidden[l][t]` is layer `l`'s hidden vector before slow step `t`;
    /// `hidden[l][t + 1]` is its output at step `t`.
    hidden: Vec<Vec<Vec<f64>>>,
    warmup: ModulationPacket,
    fast: Vec<FastStep>,
    output: Vec<f64>,
}

impl Trace {
    /// Enhanced signal, identical to [`crate::engine::enhance_offline`].
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn slow_steps(&self) -> usize {
        self.slow.len()
    }

    pub fn fast_steps(&self) -> usize {
        self.fast.len()
    }
}

pub fn forward_trace(x: &[f64], w: &ModelWeights, cfg: &SlowFastConfig) -> Result<Trace> {
    cfg.validate()?;
    w.check(cfg)?;
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let variant = cfg.fast_variant();
    let (analysis, synthesis) = fast_windows(cfg);
    let pad = cfg.fast_left_pad();
    let read = |p: i64| -> f64 {
        if p < pad as i64 {
            return 0.0;
        }
        x.get(p as usize - pad).copied().unwrap_or(0.0)
    };
    let n_fast = fast_frame_count(cfg, x.len());
    let n_slow = if n_fast == 0 {
        0
    } else {
        (modulation_index(n_fast - 1, cfg.reuse) + 1) as usize
    };
    let width = cfg.gru_width;
    let layers = cfg.gru_layers;
    let trunk = &w.slow.trunk;

    let mut hidden = vec![vec![vec![0.0; width]]; layers];
    let mut slow = Vec::with_capacity(n_slow);
    for j in 0..n_slow {
        let (s0, _) = slow_frame_span(j, cfg.slow_hop, cfg.slow_window);
        let input: Vec<f64> = (0..cfg.slow_window).map(|k| read(s0 + k as i64)).collect();
        let mut u0 = vec![0.0; width];
        trunk.fc_in.forward(&input, &mut u0);
        let mut caches = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut cache = GruCache::default();
            let mut out = vec![0.0; width];
            let below = if l == 0 { &u0 } else { &hidden[l - 1][j + 1] };
            trunk.gru[l].step_into(below, &hidden[l][j], &mut out, &mut cache);
            hidden[l].push(out);
            caches.push(cache);
        }
        let mut raw = vec![0.0; w.slow.packet_len()];
        w.slow.head.forward(&hidden[layers - 1][j + 1], &mut raw);
        let raw_packet = variant.activate(&raw, cfg.state_dim)?;
        slow.push(SlowStep {
            input,
            u0,
            caches,
            raw_packet,
        });
    }

    let warmup = variant.activate(&w.slow.warmup_raw, cfg.state_dim)?;
    let mut state = vec![0.0; variant.state_len(cfg.state_dim)];
    let mut ola = vec![0.0; n_fast.saturating_sub(1) * cfg.frame_hop + cfg.frame_len];
    let mut out = vec![0.0; cfg.frame_len];
    let mut fast = Vec::with_capacity(n_fast);
    for i in 0..n_fast {
        let start = i * cfg.frame_hop;
        let frame: Vec<f64> = (0..cfg.frame_len)
            .map(|k| read((start + k) as i64) * analysis[k])
            .collect();
        let j = modulation_index(i, cfg.reuse);
        let packet = if j < 0 {
            &warmup
        } else {
            &slow[j as usize].raw_packet
        };
        let mut u = vec![0.0; cfg.state_dim];
        w.fast.f_in.forward(&frame, &mut u);
        let state_prev = state.clone();
        let mut hid = vec![0.0; variant.hidden_len(cfg.state_dim)];
        variant.modulate(packet, &u, &mut state, &mut hid)?;
        w.fast.f_out.forward(&hid, &mut out);
        for k in 0..cfg.frame_len {
            ola[start + k] += out[k] * synthesis[k];
        }
        fast.push(FastStep {
            frame,
            u,
            state_prev,
            hidden: hid,
        });
    }
    let output = ola.into_iter().skip(pad).take(x.len()).collect();
    Ok(Trace {
        len: x.len(),
        slow,
        hidden,
        warmup,
        fast,
        output,
    })
}

/// Accumulates `d loss / d weights` into `grad` given `dy = d loss / d output`.
pub fn backward_trace(
    trace: &Trace,
    w: &ModelWeights,
    cfg: &SlowFastConfig,
    dy: &[f64],
    grad: &mut GradientSet,
) -> Result<()> {
    if dy.len() != trace.len {
        return Err(Error::shape("output gradient", trace.len, dy.len()));
    }
    let variant: &dyn FastVariant = cfg.fast_variant();
    let (_, synthesis) = fast_windows(cfg);
    let pad = cfg.fast_left_pad();
    let p_len = w.slow.packet_len();
    let h = cfg.state_dim;

    let mut dpackets = vec![vec![0.0; p_len]; trace.slow.len()];
    let mut dwarm = vec![0.0; p_len];
    let mut dstate = vec![0.0; variant.state_len(h)];
    let mut dout = vec![0.0; cfg.frame_len];
    let mut dhidden = vec![0.0; variant.hidden_len(h)];
    let mut du = vec![0.0; h];
    for (i, step) in trace.fast.iter().enumerate().rev() {
        let start = i * cfg.frame_hop;
        for k in 0..cfg.frame_len {
            let g = (start + k)
                .checked_sub(pad)
                .and_then(|n| dy.get(n))
                .copied()
                .unwrap_or(0.0);
            dout[k] = g * synthesis[k];
        }
        dhidden.fill(0.0);
        w.fast.f_out.backward(
            &step.hidden,
            &dout,
            &mut grad.fast.f_out,
            Some(&mut dhidden),
        );
        let j = modulation_index(i, cfg.reuse);
        let (packet, dpacket) = if j < 0 {
            (&trace.warmup, &mut dwarm)
        } else {
            (
                &trace.slow[j as usize].raw_packet,
                &mut dpackets[j as usize],
            )
        };
        du.fill(0.0);
        variant.modulate_backward(
            packet,
            &step.u,
            &step.state_prev,
            &dhidden,
            &mut dstate,
            &mut du,
            dpacket,
        );
        w.fast
            .f_in
            .backward(&step.frame, &du, &mut grad.fast.f_in, None);
    }
    variant.activate_backward(&trace.warmup, &dwarm, &mut grad.slow.warmup_raw);

    let layers = cfg.gru_layers;
    let width = cfg.gru_width;
    let trunk = &w.slow.trunk;
    let mut carry = vec![vec![0.0; width]; layers];
    let mut draw = vec![0.0; p_len];
    let mut dabove = vec![0.0; width];
    let mut dh_out = vec![0.0; width];
    let mut dx = vec![0.0; width];
    let mut scratch: [Vec<f64>; 3] = Default::default();
    for (j, step) in trace.slow.iter().enumerate().rev() {
        draw.fill(0.0);
        variant.activate_backward(&step.raw_packet, &dpackets[j], &mut draw);
        dabove.fill(0.0);
        w.slow.head.backward(
            &trace.hidden[layers - 1][j + 1],
            &draw,
            &mut grad.slow.head,
            Some(&mut dabove),
        );
        for l in (0..layers).rev() {
            for k in 0..width {
                dh_out[k] = dabove[k] + carry[l][k];
            }
            carry[l].fill(0.0);
            dx.fill(0.0);
            let below = if l == 0 {
                &step.u0
            } else {
                &trace.hidden[l - 1][j + 1]
            };
            trunk.gru[l].step_backward(
                below,
                &trace.hidden[l][j],
                &step.caches[l],
                &dh_out,
                &mut grad.slow.trunk.gru[l],
                &mut dx,
                &mut carry[l],
                &mut scratch,
            );
            dabove.copy_from_slice(&dx);
        }
        trunk
            .fc_in
            .backward(&step.input, &dabove, &mut grad.slow.trunk.fc_in, None);
    }
    Ok(())
}

/// Mean total loss over the batch and its gradient.
pub fn backward(
    batch: &[TrainingPair],
    w: &ModelWeights,
    cfg: &SlowFastConfig,
    lw: &LossWeights,
    stft: &StftParams,
) -> Result<(f64, GradientSet)> {
    let (terms, grad) = backward_terms(batch, w, cfg, lw, stft)?;
    Ok((terms.total, grad))
}

/// [`backward`] with the batch mean of every loss term.
pub fn backward_terms(
    batch: &[TrainingPair],
    w: &ModelWeights,
    cfg: &SlowFastConfig,
    lw: &LossWeights,
    stft: &StftParams,
) -> Result<(LossTerms, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grad = w.zeros_like();
    let mut mean = LossTerms {
        total: 0.0,
        spec_mse: 0.0,
        sisnr: 0.0,
    };
    let scale = 1.0 / batch.len() as f64;
    for (b, pair) in batch.iter().enumerate() {
        if pair.noisy.len() != pair.clean.len() {
            return Err(Error::shape(
                "training pair",
                pair.clean.len(),
                pair.noisy.len(),
            ));
        }
        let trace = forward_trace(&pair.noisy, w, cfg)?;
        let (terms, mut dy) = loss_terms_with_grad(trace.output(), &pair.clean, lw, stft, true)
            .map_err(|e| match e {
                Error::NonFiniteLoss(m) => Error::NonFiniteLoss(format!("batch item {b}: {m}")),
                other => other,
            })?;
        for g in dy.iter_mut() {
            *g *= scale;
        }
        mean.total += terms.total * scale;
        mean.spec_mse += terms.spec_mse * scale;
        mean.sisnr += terms.sisnr * scale;
        backward_trace(&trace, w, cfg, &dy, &mut grad)?;
    }
    if let Some(bad) = grad
        .arrays()
        .iter()
        .find(|a| a.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteLoss(format!(
            "gradient of {} is not finite",
            bad.name
        )));
    }
    Ok((mean, grad))
}

/// Mean total loss without gradients.
pub fn batch_loss(
    batch: &[TrainingPair],
    w: &ModelWeights,
    cfg: &SlowFastConfig,
    lw: &LossWeights,
    stft: &StftParams,
) -> Result<f64> {
    let mut total = 0.0;
    for pair in batch {
        let trace = forward_trace(&pair.noisy, w, cfg)?;
        total += total_loss_with_grad(trace.output(), &pair.clean, lw, stft, false)?.0;
    }
    Ok(total / batch.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::enhance_offline;
    use crate::signal_io::AudioBuffer;
    use crate::training::loss::StftWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn trace_matches_engine_bitwise() {
        for variant in ["ssmm", "film", "ec"] {
            for reuse in [1, 3] {
                let cfg = SlowFastConfig::two_ms(reuse, variant)
                    .unwrap()
                    .with_gru(8, 2)
                    .unwrap();
                let w = ModelWeights::init(&cfg, 9);
                let x = randv(1, 777);
                let t = forward_trace(&x, &w, &cfg).unwrap();
                let e = enhance_offline(&AudioBuffer::new(x).unwrap(), &w, &cfg).unwrap();
                assert_eq!(t.output(), e.samples());
            }
        }
    }

    fn tiny(variant: &str) -> SlowFastConfig {
        SlowFastConfig::new(4, 2, 2, 3, variant)
            .unwrap()
            .with_gru(5, 2)
            .unwrap()
    }

    #[test]
    fn warmup_gradient_follows_dependency_structure() {
        // FiLM carries no state, so the warm-up packet only reaches the
        // outputs of the first `reuse` frames.
        let cfg = tiny("film");
        let mut w = ModelWeights::init(&cfg, 2);
        w.slow.warmup_raw = randv(3, cfg.packet_len());
        let x = randv(4, 22);
        let t = forward_trace(&x, &w, &cfg).unwrap();
        let covered = (cfg.reuse - 1) * cfg.frame_hop + cfg.frame_len - cfg.fast_left_pad();

        let mut dy = vec![1.0; x.len()];
        let mut g = w.zeros_like();
        backward_trace(&t, &w, &cfg, &dy, &mut g).unwrap();
        assert!(g.slow.warmup_raw.iter().any(|v| *v != 0.0));

        dy[..covered].fill(0.0);
        let mut g = w.zeros_like();
        backward_trace(&t, &w, &cfg, &dy, &mut g).unwrap();
        assert!(g.slow.warmup_raw.iter().all(|v| *v == 0.0));
        assert!(g.slow.head.weight.data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn unused_weights_get_zero_gradient() {
        // With reuse 20 all 12 frames use the warm-up packet, so the head and
        // trunk never influence the output.
        let cfg = SlowFastConfig::new(4, 2, 20, 3, "ec")
            .unwrap()
            .with_gru(5, 2)
            .unwrap();
        let w = ModelWeights::init(&cfg, 6);
        let p = StftParams::new(8, 4, StftWindow::Hann).unwrap();
        let pair = TrainingPair {
            noisy: randv(7, 22),
            clean: randv(8, 22),
        };
        let lw = LossWeights::new(1.0, 0.0).unwrap();
        let (_, g) = backward(&[pair], &w, &cfg, &lw, &p).unwrap();
        assert!(g.slow.head.weight.data.iter().all(|v| *v == 0.0));
        assert!(g.slow.trunk.fc_in.weight.data.iter().all(|v| *v == 0.0));
        assert!(g.fast.f_in.weight.data.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = StftParams::new(8, 4, StftWindow::Hann).unwrap();
        for variant in ["ssmm", "film", "ec"] {
            let cfg = tiny(variant);
            let mut w = ModelWeights::init(&cfg, 10);
            w.slow.warmup_raw = randv(11, cfg.packet_len());
            let pair = TrainingPair {
                noisy: randv(12, 22),
                clean: randv(13, 22),
            };
            let batch = [pair];
            let lw = LossWeights::FULL;
            let (_, g) = backward(&batch, &w, &cfg, &lw, &p).unwrap();
            let mut probe = w.clone();
            let names: Vec<String> = w.arrays().iter().map(|a| a.name.clone()).collect();
            for (ai, name) in names.iter().enumerate() {
                let n = w.arrays()[ai].data.len();
                let mut num = vec![0.0; n];
                for (k, slot) in num.iter_mut().enumerate() {
                    let base = w.arrays()[ai].data[k];
                    probe.arrays_mut()[ai].data[k] = base + 1e-5;
                    let lp = batch_loss(&batch, &probe, &cfg, &lw, &p).unwrap();
                    probe.arrays_mut()[ai].data[k] = base - 1e-5;
                    let lm = batch_loss(&batch, &probe, &cfg, &lw, &p).unwrap();
                    probe.arrays_mut()[ai].data[k] = base;
                    *slot = (lp - lm) / 2e-5;
                }
                let ana = g.arrays()[ai].data;
                let diff: f64 = ana
                    .iter()
                    .zip(&num)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let scale = norm(ana).max(norm(&num));
                assert!(scale > 0.0, "{variant} {name}: zero gradient");
                assert!(
                    diff / scale < 1e-4,
                    "{variant} {name}: relative error {}",
                    diff / scale
                );
            }
        }
    }
}
