//! The high-rate fast branch and its slow/fast integration variants.
//!
//! Every variant shares the same skeleton: `F_IN` (one dense layer from the
//! windowed time-domain frame to `H` features), a variant-specific modulation
//! driven by the slow-branch packet, and `F_OUT` (one dense layer back to a
//! time-domain frame). Variants are looked up by name through
//! [`VariantRegistry`], so configs and the CLI select them at runtime.

mod ec;
mod film;
mod ssmm;

use std::sync::OnceLock;

pub use ec::{ec_step, EmbeddingConcat};
pub use film::{film_step, Film};
pub use ssmm::{ssmm_step, Ssmm};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Dense;

/// Slow-branch output handed to the fast branch.
///
/// Stored flat in head order: SSMM `[A; g]`, FiLM `[alpha; beta]`, EC `[e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationPacket {
    variant: &'static str,
    state_dim: usize,
    data: Vec<f64>,
}

impl ModulationPacket {
    pub(crate) fn new(variant: &'static str, state_dim: usize, data: Vec<f64>) -> Self {
        Self {
            variant,
            state_dim,
            data,
        }
    }

    pub fn variant(&self) -> &'static str {
        self.variant
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn half(&self, second: bool) -> &[f64] {
        let h = self.state_dim;
        if second {
            &self.data[h..2 * h]
        } else {
            &self.data[..h]
        }
    }

    /// Diagonal state transition (SSMM).
    pub fn transition(&self) -> Option<&[f64]> {
        (self.variant == Ssmm::NAME).then(|| self.half(false))
    }

    /// Input gate (SSMM).
    pub fn gate(&self) -> Option<&[f64]> {
        (self.variant == Ssmm::NAME).then(|| self.half(true))
    }

    /// FiLM scale.
    pub fn scale(&self) -> Option<&[f64]> {
        (self.variant == Film::NAME).then(|| self.half(false))
    }

    /// FiLM shift.
    pub fn shift(&self) -> Option<&[f64]> {
        (self.variant == Film::NAME).then(|| self.half(true))
    }

    /// EC embedding.
    pub fn embedding(&self) -> Option<&[f64]> {
        (self.variant == EmbeddingConcat::NAME).then_some(&self.data[..])
    }

    pub(crate) fn expect(&self, variant: &'static str) -> Result<()> {
        if self.variant != variant {
            return Err(Error::VariantMismatch {
                expected: variant,
                actual: self.variant,
            });
        }
        Ok(())
    }
}

/// Recurrent fast-branch state. Empty for stateless variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmState {
    pub h: Vec<f64>,
}

impl SsmState {
    pub fn zeros(len: usize) -> Self {
        Self { h: vec![0.0; len] }
    }
}

/// A slow/fast integration method.
pub trait FastVariant: Send + Sync {
    fn name(&self) -> &'static str;

    /// Number of raw head outputs the slow branch must produce.
    fn packet_len(&self, state_dim: usize) -> usize;

    /// Width of the modulated feature vector fed to `F_OUT`.
    fn hidden_len(&self, state_dim: usize) -> usize;

    /// Length of the recurrent state carried across fast frames.
    fn state_len(&self, state_dim: usize) -> usize;

    /// Maps raw head outputs to the packet.
    fn activate(&self, raw: &[f64], state_dim: usize) -> Result<ModulationPacket>;

    /// `draw += d packet / d raw · dpacket`
    fn activate_backward(&self, packet: &ModulationPacket, dpacket: &[f64], draw: &mut [f64]);

    /// Combines `F_IN` features `u` with the packet, updating `state` in place
    /// and writing the `F_OUT` input into `hidden`.
    fn modulate(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        state: &mut [f64],
        hidden: &mut [f64],
    ) -> Result<()>;

    /// Reverse of [`FastVariant::modulate`]. `dstate` holds the gradient with
    /// respect to the state after the step on entry and the gradient with
    /// respect to `state_prev` on exit. `du` and `dpacket` are accumulated.
    #[allow(clippy::too_many_arguments)]
    fn modulate_backward(
        &self,
        packet: &ModulationPacket,
        u: &[f64],
        state_prev: &[f64],
        dhidden: &[f64],
        dstate: &mut [f64],
        du: &mut [f64],
        dpacket: &mut [f64],
    );

    /// Multiplies spent in the modulation itself per fast frame.
    fn modulation_macs(&self, state_dim: usize) -> u64;
}

/// Name-keyed collection of variants.
pub struct VariantRegistry {
    variants: Vec<Box<dyn FastVariant>>,
}

impl VariantRegistry {
    pub fn empty() -> Self {
        Self {
            variants: Vec::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Ssmm));
        r.register(Box::new(Film));
        r.register(Box::new(EmbeddingConcat));
        r
    }

    /// Adds a variant, replacing any existing one with the same name.
    pub fn register(&mut self, variant: Box<dyn FastVariant>) {
        self.variants.retain(|v| v.name() != variant.name());
        self.variants.push(variant);
    }

    pub fn get(&self, name: &str) -> Option<&dyn FastVariant> {
        self.variants
            .iter()
            .find(|v| v.name().eq_ignore_ascii_case(name))
            .map(|v| v.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.variants.iter().map(|v| v.name()).collect()
    }
}

/// The process-wide registry of built-in variants.
pub fn registry() -> &'static VariantRegistry {
    static REGISTRY: OnceLock<VariantRegistry> = OnceLock::new();
    REGISTRY.get_or_init(VariantRegistry::with_builtins)
}

pub fn lookup(name: &str) -> Result<&'static dyn FastVariant> {
    registry()
        .get(name)
        .ok_or_else(|| Error::UnknownVariant(name.to_string()))
}

/// `F_IN` and `F_OUT`.
#[derive(Debug, Clone, PartialEq)]
pub struct FastBranchWeights {
    pub f_in: Dense,
    pub f_out: Dense,
}

impl FastBranchWeights {
    pub fn zeros(frame_len: usize, state_dim: usize, variant: &dyn FastVariant) -> Self {
        Self {
            f_in: Dense::zeros(frame_len, state_dim),
            f_out: Dense::zeros(variant.hidden_len(state_dim), frame_len),
        }
    }

    pub fn init<R: Rng>(
        frame_len: usize,
        state_dim: usize,
        variant: &dyn FastVariant,
        rng: &mut R,
    ) -> Self {
        Self {
            f_in: Dense::init(frame_len, state_dim, rng),
            f_out: Dense::init(variant.hidden_len(state_dim), frame_len, rng),
        }
    }

    /// One fast frame: `F_OUT(modulate(F_IN(frame)))`.
    pub fn step(
        &self,
        variant: &dyn FastVariant,
        packet: &ModulationPacket,
        state: &mut SsmState,
        frame: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut scratch = StepScratch::new(self);
        self.step_with(variant, packet, state, frame, out, &mut scratch)
    }

    pub(crate) fn step_with(
        &self,
        variant: &dyn FastVariant,
        packet: &ModulationPacket,
        state: &mut SsmState,
        frame: &[f64],
        out: &mut [f64],
        scratch: &mut StepScratch,
    ) -> Result<()> {
        self.f_in.check_input("fast frame", frame.len())?;
        self.f_in.forward(frame, &mut scratch.u);
        variant.modulate(packet, &scratch.u, &mut state.h, &mut scratch.hidden)?;
        self.f_out.forward(&scratch.hidden, out);
        Ok(())
    }
}

pub(crate) struct StepScratch {
    pub u: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl StepScratch {
    pub fn new(w: &FastBranchWeights) -> Self {
        Self {
            u: vec![0.0; w.f_in.output_dim()],
            hidden: vec![0.0; w.f_out.input_dim()],
        }
    }
}

pub(crate) fn check_raw(raw: &[f64], expected: usize) -> Result<()> {
    if raw.len() != expected {
        return Err(Error::shape("slow head output", expected, raw.len()));
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        assert_eq!(lookup("SSMM").unwrap().name(), "ssmm");
        assert_eq!(lookup("film").unwrap().name(), "film");
        assert_eq!(lookup("ec").unwrap().name(), "ec");
        assert!(matches!(lookup("lstm"), Err(Error::UnknownVariant(_))));
        assert_eq!(registry().names(), vec!["ssmm", "film", "ec"]);
    }

    #[test]
    fn packet_and_hidden_sizes() {
        let h = 32;
        assert_eq!(lookup("ssmm").unwrap().packet_len(h), 64);
        assert_eq!(lookup("film").unwrap().packet_len(h), 64);
        assert_eq!(lookup("ec").unwrap().packet_len(h), 32);
        assert_eq!(lookup("ec").unwrap().hidden_len(h), 64);
        assert_eq!(lookup("ssmm").unwrap().state_len(h), 32);
        assert_eq!(lookup("film").unwrap().state_len(h), 0);
    }

    #[test]
    fn variant_mismatch_is_an_error() {
        let film = lookup("film").unwrap();
        let packet = lookup("ssmm").unwrap().activate(&[0.0, 0.0], 1).unwrap();
        let w = test_util::scalar_weights(film);
        let mut s = SsmState::zeros(0);
        let mut out = [0.0];
        assert!(matches!(
            w.step(film, &packet, &mut s, &[1.0], &mut out),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn custom_variants_can_be_registered() {
        struct Bypass;
        impl FastVariant for Bypass {
            fn name(&self) -> &'static str {
                "bypass"
            }
            fn packet_len(&self, _: usize) -> usize {
                0
            }
            fn hidden_len(&self, h: usize) -> usize {
                h
            }
            fn state_len(&self, _: usize) -> usize {
                0
            }
            fn activate(&self, _: &[f64], h: usize) -> Result<ModulationPacket> {
                Ok(ModulationPacket::new("bypass", h, vec![]))
            }
            fn activate_backward(&self, _: &ModulationPacket, _: &[f64], _: &mut [f64]) {}
            fn modulate(
                &self,
                _: &ModulationPacket,
                u: &[f64],
                _: &mut [f64],
                hidden: &mut [f64],
            ) -> Result<()> {
                hidden.copy_from_slice(u);
                Ok(())
            }
            fn modulate_backward(
                &self,
                _: &ModulationPacket,
                _: &[f64],
                _: &[f64],
                dh: &[f64],
                _: &mut [f64],
                du: &mut [f64],
                _: &mut [f64],
            ) {
                crate::nn::axpy(du, 1.0, dh);
            }
            fn modulation_macs(&self, _: usize) -> u64 {
                0
            }
        }
        let mut r = VariantRegistry::with_builtins();
        r.register(Box::new(Bypass));
        assert_eq!(r.get("bypass").unwrap().packet_len(8), 0);
        assert_eq!(r.names().len(), 4);
    }
}
