//! Feature-wise linear modulation: `ŝ = F_OUT(alpha ∘ F_IN(x) + beta)` with
//! `alpha = 1 + raw[..H]` and `beta = raw[H..]`. Stateless.

use super::{check_raw, FastBranchWeights, FastVariant, ModulationPacket, SsmState};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct Film;

impl Film {
    pub const NAME: &'static str = "film";
}

impl FastVariant for Film {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn packet_len(&self, state_dim: usize) -> usize {
        2 * state_dim
    }

    fn hidden_len(&self, state_dim: usize) -> usize {
        state_dim
    }

    fn state_len(&self, _state_dim: usize) -> usize {
        0
    }

    fn activate(&self, raw: &[f64], state_dim: usize) -> Result<ModulationPacket> {
        check_raw(raw, 2 * state_dim)?;
        let mut data = raw.to_vec();
        for a in &mut data[..state_dim] {
            *a += 1.0;
        }
        Ok(ModulationPacket::new(Self::NAME, state_dim, data))
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
        let (alpha, beta) = packet.as_slice().split_at(packet.state_dim());
        for (k, out) in hidden.iter_mut().enumerate() {
            *out = alpha[k] * u[k] + beta[k];
        }
        Ok(())
    }

    fn modulate_backward(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        _state_prev: &[f64],
        dhidden: &[f64],
        _dstate: &mut [f64],
        du: &mut [f64],
        dpacket: &mut [f64],
    ) {
        let h = packet.state_dim();
        let alpha = &packet.as_slice()[..h];
        let (dalpha, dbeta) = dpacket.split_at_mut(h);
        for k in 0..h {
            dalpha[k] += dhidden[k] * u[k];
            dbeta[k] += dhidden[k];
            du[k] += dhidden[k] * alpha[k];
        }
    }

    fn modulation_macs(&self, state_dim: usize) -> u64 {
        state_dim as u64
    }
}

pub fn film_step(
    frame: &[f64],
    packet: &ModulationPacket,
    w: &FastBranchWeights,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w.f_out.output_dim()];
    w.step(&Film, packet, &mut SsmState::zeros(0), frame, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fast_branch::test_util::scalar_weights;

    fn packet(alpha: f64, beta: f64) -> ModulationPacket {
        ModulationPacket::new(Film::NAME, 1, vec![alpha, beta])
    }

    #[test]
    fn zero_raw_is_identity_modulation() {
        let p = Film.activate(&[0.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(p.scale().unwrap(), &[1.0, 1.0]);
        assert_eq!(p.shift().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_cases() {
        let w = scalar_weights(&Film);
        assert_eq!(film_step(&[3.0], &packet(2.0, 1.0), &w).unwrap(), vec![7.0]);
        assert_eq!(film_step(&[3.0], &packet(1.0, 0.0), &w).unwrap(), vec![3.0]);
        let a = film_step(&[3.0], &packet(0.0, 0.5), &w).unwrap();
        let b = film_step(&[-9.0], &packet(0.0, 0.5), &w).unwrap();
        assert_eq!(a, b);
    }
}
