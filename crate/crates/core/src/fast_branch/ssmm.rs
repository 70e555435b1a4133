//! State-space modulation: the slow branch sets a diagonal transition `A` and
//! an input gate `g` for the recurrence
//!
//! ```text
//! h_i = A ∘ h_{i-1} + g ∘ F_IN(x_i)
//! ŝ_i = F_OUT(h_i)
//! ```
//!
//! Both `A` and `g` are sigmoid-squashed, so `0 < A < 1` keeps the recurrence
//! bounded-input bounded-output.

use super::{check_raw, FastBranchWeights, FastVariant, ModulationPacket, SsmState};
use crate::error::Result;
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, Default)]
pub struct Ssmm;

impl Ssmm {
    pub const NAME: &'static str = "ssmm";
}

impl FastVariant for Ssmm {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn packet_len(&self, state_dim: usize) -> usize {
        2 * state_dim
    }

    fn hidden_len(&self, state_dim: usize) -> usize {
        state_dim
    }

    fn state_len(&self, state_dim: usize) -> usize {
        state_dim
    }

    fn activate(&self, raw: &[f64], state_dim: usize) -> Result<ModulationPacket> {
        check_raw(raw, 2 * state_dim)?;
        Ok(ModulationPacket::new(
            Self::NAME,
            state_dim,
            raw.iter().map(|&v| sigmoid(v)).collect(),
        ))
    }

    fn activate_backward(&self, packet: &ModulationPacket, dpacket: &[f64], draw: &mut [f64]) {
        for ((d, &p), &g) in draw.iter_mut().zip(packet.as_slice()).zip(dpacket) {
            *d += g * p * (1.0 - p);
        }
    }

    fn modulate(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        state: &mut [f64],
        hidden: &mut [f64],
    ) -> Result<()> {
        packet.expect(Self::NAME)?;
        let h = packet.state_dim();
        let (a, g) = packet.as_slice().split_at(h);
        for k in 0..h {
            state[k] = a[k] * state[k] + g[k] * u[k];
        }
        hidden.copy_from_slice(state);
        Ok(())
    }

    fn modulate_backward(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        state_prev: &[f64],
        dhidden: &[f64],
        dstate: &mut [f64],
        du: &mut [f64],
        dpacket: &mut [f64],
    ) {
        let h = packet.state_dim();
        let (a, g) = packet.as_slice().split_at(h);
        let (da, dg) = dpacket.split_at_mut(h);
        for k in 0..h {
            let dh = dhidden[k] + dstate[k];
            da[k] += dh * state_prev[k];
            dg[k] += dh * u[k];
            du[k] += dh * g[k];
            dstate[k] = dh * a[k];
        }
    }

    fn modulation_macs(&self, state_dim: usize) -> u64 {
        2 * state_dim as u64
    }
}

/// One SSMM fast frame. Returns the updated state and the enhanced frame.
pub fn ssmm_step(
    h_prev: &SsmState,
    frame: &[f64],
    packet: &ModulationPacket,
    w: &FastBranchWeights,
) -> Result<(SsmState, Vec<f64>)> {
    packet.expect(Ssmm::NAME)?;
    let mut state = h_prev.clone();
    let mut out = vec![0.0; w.f_out.output_dim()];
    w.step(&Ssmm, packet, &mut state, frame, &mut out)?;
    Ok((state, out))
}
