//! All trainable arrays of a slow/fast model, addressable by name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SlowFastConfig;
use crate::error::{Error, Result};
use crate::fast_branch::FastBranchWeights;
use crate::nn::Matrix;
use crate::slow_branch::{GruLayerWeights, SlowBranchWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub slow: SlowBranchWeights,
    pub fast: FastBranchWeights,
}

/// Borrowed view of one named array.
pub struct ArrayRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct ArrayMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn matrix_shape(m: &Matrix) -> Vec<usize> {
    vec![m.rows, m.cols]
}

macro_rules! collect_arrays {
    ($model:expr, $ctor:ident, $iter:ident, $($r:tt)+) => {{
        let model = $model;
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $shape:expr, $data:expr) => {
                out.push($ctor { name: $name, shape: $shape, data: $($r)+ $data[..] })
            };
        }
        macro_rules! dense {
            ($prefix:literal, $d:expr) => {{
                let d = $($r)+ $d;
                push!(format!("{}.weight", $prefix), matrix_shape(&d.weight), d.weight.data);
                push!(format!("{}.bias", $prefix), vec![d.bias.len()], d.bias);
            }};
        }
        dense!("slow.fc_in", model.slow.trunk.fc_in);
        for (l, g) in model.slow.trunk.gru.$iter().enumerate() {
            let GruLayerWeights { w_z, w_r, w_n, u_z, u_r, u_n, b_z, b_r, b_n } = g;
            for (tag, m) in [("w_z", w_z), ("w_r", w_r), ("w_n", w_n), ("u_z", u_z), ("u_r", u_r), ("u_n", u_n)] {
                push!(format!("slow.gru{l}.{tag}"), matrix_shape(&*m), m.data);
            }
            for (tag, b) in [("b_z", b_z), ("b_r", b_r), ("b_n", b_n)] {
                push!(format!("slow.gru{l}.{tag}"), vec![b.len()], b);
            }
        }
        dense!("slow.head", model.slow.head);
        push!("slow.warmup_raw".to_string(), vec![model.slow.warmup_raw.len()], model.slow.warmup_raw);
        dense!("fast.f_in", model.fast.f_in);
        dense!("fast.f_out", model.fast.f_out);
        out
    }};
}

impl ModelWeights {
    pub fn zeros(cfg: &SlowFastConfig) -> Self {
        let variant = cfg.fast_variant();
        Self {
            slow: SlowBranchWeights::zeros(
                cfg.slow_window,
                cfg.gru_width,
                cfg.gru_layers,
                cfg.packet_len(),
            ),
            fast: FastBranchWeights::zeros(cfg.frame_len, cfg.state_dim, variant),
        }
    }

    /// Uniform ±sqrt(1/fan_in) matrices, zero biases, zero warm-up packet.
    pub fn init(cfg: &SlowFastConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = cfg.fast_variant();
        let slow = SlowBranchWeights::init(
            cfg.slow_window,
            cfg.gru_width,
            cfg.gru_layers,
            cfg.packet_len(),
            &mut rng,
        );
        let fast = FastBranchWeights::init(cfg.frame_len, cfg.state_dim, variant, &mut rng);
        Self { slow, fast }
    }

    /// Every array in a fixed order, with dotted names such as
    /// `slow.gru2.u_n` or `fast.f_out.bias`.
    pub fn arrays(&self) -> Vec<ArrayRef<'_>> {
        collect_arrays!(self, ArrayRef, iter, &)
    }

    pub fn arrays_mut(&mut self) -> Vec<ArrayMut<'_>> {
        collect_arrays!(self, ArrayMut, iter_mut, &mut)
    }

    /// Verifies every array shape against `cfg`.
    pub fn check(&self, cfg: &SlowFastConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        let a = self.arrays();
        let b = expected.arrays();
        if a.len() != b.len() {
            return Err(Error::shape("model array count", b.len(), a.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(Error::Config(format!(
                    "array {} has shape {:?}, config requires {} {:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        if let Some(bad) = a.iter().find(|x| x.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config(format!(
                "array {} has non-finite entries",
                bad.name
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.data.len()).sum()
    }

    /// Rounds every entry to the nearest `f32`, the precision of model files.
    pub fn round_to_f32(&mut self) {
        for a in self.arrays_mut() {
            for v in a.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Zeroed copy with identical shapes, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for a in z.arrays_mut() {
            a.data.fill(0.0);
        }
        z
    }
}

/// Gradient of a scalar loss with respect to every array of [`ModelWeights`].
pub type GradientSet = ModelWeights;

/// Passthrough model for `frame_len == state_dim` SSMM configs: `F_IN` and
/// `F_OUT` are identities, the head saturates `A` to ~0 and `g` to ~1.
pub fn passthrough_weights(cfg: &SlowFastConfig) -> Result<ModelWeights> {
    if cfg.frame_len != cfg.state_dim || cfg.variant != "ssmm" {
        return Err(Error::Config(
            "passthrough weights need an ssmm config with frame_len == state_dim".into(),
        ));
    }
    let mut w = ModelWeights::zeros(cfg);
    w.fast.f_in.weight = Matrix::identity(cfg.frame_len);
    w.fast.f_out.weight = Matrix::identity(cfg.frame_len);
    let h = cfg.state_dim;
    for (k, b) in w.slow.head.bias.iter_mut().enumerate() {
        *b = if k < h { -40.0 } else { 40.0 };
    }
    w.slow.warmup_raw = w.slow.head.bias.clone();
    Ok(w)
}
