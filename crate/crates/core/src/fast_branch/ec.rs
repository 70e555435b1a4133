//! Embedding concatenation: `ŝ = F_OUT([F_IN(x); e])`. Stateless.

use super::{check_raw, FastBranchWeights, FastVariant, ModulationPacket, SsmState};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddingConcat;

impl EmbeddingConcat {
    pub const NAME: &'static str = "ec";
}

impl FastVariant for EmbeddingConcat {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn packet_len(&self, state_dim: usize) -> usize {
        state_dim
    }

    fn hidden_len(&self, state_dim: usize) -> usize {
        2 * state_dim
    }

    fn state_len(&self, _state_dim: usize) -> usize {
        0
    }

    fn activate(&self, raw: &[f64], state_dim: usize) -> Result<ModulationPacket> {
        check_raw(raw, state_dim)?;
        Ok(ModulationPacket::new(Self::NAME, state_dim, raw.to_vec()))
    }

    fn activate_backward(&self, _packet: &ModulationPacket, dpacket: &[f64], draw: &mut [f64]) {
        crate::nn::axpy(draw, 1.0, dpacket);
    }

    fn modulate(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        _state: &mut [f64],
        hidden: &mut [f64],
    ) -> Result<()> {
        packet.expect(Self::NAME)?;
        let (left, right) = hidden.split_at_mut(u.len());
        left.copy_from_slice(u);
        right.copy_from_slice(packet.as_slice());
        Ok(())
    }

    fn modulate_backward(
        &self,
        _packet: &ModulationPacket,
        u: &[f64],
        _state_prev: &[f64],
        dhidden: &[f64],
        _dstate: &mut [f64],
        du: &mut [f64],
        dpacket: &mut [f64],
    ) {
        let (left, right) = dhidden.split_at(u.len());
        crate::nn::axpy(du, 1.0, left);
        crate::nn::axpy(dpacket, 1.0, right);
    }

    fn modulation_macs(&self, _state_dim: usize) -> u64 {
        0
    }
}

pub fn ec_step(
    frame: &[f64],
    packet: &ModulationPacket,
    w: &FastBranchWeights,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w.f_out.output_dim()];
    w.step(
        &EmbeddingConcat,
        packet,
        &mut SsmState::zeros(0),
        frame,
        &mut out,
    )?;
    Ok(out)
}
