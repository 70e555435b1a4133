//! The low-rate slow branch: dense input layer, a stack of GRU layers, and a
//! dense head that produces the modulation packet for the fast branch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fast_branch::{FastVariant, ModulationPacket};
use crate::nn::{axpy, dot, sigmoid, Dense, Matrix};

/// One GRU layer. Input matrices are `hidden x input`, recurrent matrices
/// `hidden x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerWeights {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_n: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_n: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_n: Vec<f64>,
}

/// Intermediates of one GRU step, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n h` before the reset gate is applied.
    pub q: Vec<f64>,
}

impl GruLayerWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_n: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_n: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_n: vec![0.0; hidden],
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_z: Matrix::uniform(hidden, input, rng),
            w_r: Matrix::uniform(hidden, input, rng),
            w_n: Matrix::uniform(hidden, input, rng),
            u_z: Matrix::uniform(hidden, hidden, rng),
            u_r: Matrix::uniform(hidden, hidden, rng),
            u_n: Matrix::uniform(hidden, hidden, rng),
            ..Self::zeros(input, hidden)
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    pub fn macs(&self) -> u64 {
        let (i, h) = (self.input_dim() as u64, self.hidden_dim() as u64);
        3 * (i * h + h * h)
    }

    /// `h_out = GRU(x, h)`; records intermediates into `cache` when given.
    pub(crate) fn step_into(&self, x: &[f64], h: &[f64], h_out: &mut [f64], cache: &mut GruCache) {
        let hd = self.hidden_dim();
        cache.z.resize(hd, 0.0);
        cache.r.resize(hd, 0.0);
        cache.n.resize(hd, 0.0);
        cache.q.resize(hd, 0.0);
        for k in 0..hd {
            let z = sigmoid(dot(self.w_z.row(k), x) + dot(self.u_z.row(k), h) + self.b_z[k]);
            let r = sigmoid(dot(self.w_r.row(k), x) + dot(self.u_r.row(k), h) + self.b_r[k]);
            let q = dot(self.u_n.row(k), h);
            let n = (dot(self.w_n.row(k), x) + r * q + self.b_n[k]).tanh();
            cache.z[k] = z;
            cache.r[k] = r;
            cache.q[k] = q;
            cache.n[k] = n;
            h_out[k] = (1.0 - z) * n + z * h[k];
        }
    }

    /// Reverse of one step. Accumulates parameter gradients into `grad`,
    /// input gradient into `dx` and previous-hidden gradient into `dh_prev`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step_backward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        cache: &GruCache,
        dh_out: &[f64],
        grad: &mut GruLayerWeights,
        dx: &mut [f64],
        dh_prev: &mut [f64],
        scratch: &mut [Vec<f64>; 3],
    ) {
        let hd = self.hidden_dim();
        let [da_z, da_r, da_n] = scratch;
        da_z.resize(hd, 0.0);
        da_r.resize(hd, 0.0);
        da_n.resize(hd, 0.0);
        let mut dq = vec![0.0; hd];
        for k in 0..hd {
            let (z, r, n, q) = (cache.z[k], cache.r[k], cache.n[k], cache.q[k]);
            let g = dh_out[k];
            dh_prev[k] += g * z;
            let dn = g * (1.0 - z);
            let dz = g * (h_prev[k] - n);
            let dan = dn * (1.0 - n * n);
            da_n[k] = dan;
            dq[k] = dan * r;
            da_r[k] = dan * q * r * (1.0 - r);
            da_z[k] = dz * z * (1.0 - z);
        }
        grad.w_z.outer_acc(da_z, x);
        grad.w_r.outer_acc(da_r, x);
        grad.w_n.outer_acc(da_n, x);
        grad.u_z.outer_acc(da_z, h_prev);
        grad.u_r.outer_acc(da_r, h_prev);
        grad.u_n.outer_acc(&dq, h_prev);
        axpy(&mut grad.b_z, 1.0, da_z);
        axpy(&mut grad.b_r, 1.0, da_r);
        axpy(&mut grad.b_n, 1.0, da_n);
        self.w_z.matvec_t_acc(da_z, dx);
        self.w_r.matvec_t_acc(da_r, dx);
        self.w_n.matvec_t_acc(da_n, dx);
        self.u_z.matvec_t_acc(da_z, dh_prev);
        self.u_r.matvec_t_acc(da_r, dh_prev);
        self.u_n.matvec_t_acc(&dq, dh_prev);
    }
}

/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// n = tanh(W_n x + r ∘ (U_n h) + b_n), h' = (1 − z) ∘ n + z ∘ h.
pub fn gru_cell_step(x: &[f64], h: &[f64], w: &GruLayerWeights) -> Result<Vec<f64>> {
    if x.len() != w.input_dim() {
        return Err(Error::shape("gru input", w.input_dim(), x.len()));
    }
    if h.len() != w.hidden_dim() {
        return Err(Error::shape("gru hidden", w.hidden_dim(), h.len()));
    }
    let mut out = vec![0.0; h.len()];
    w.step_into(x, h, &mut out, &mut GruCache::default());
    Ok(out)
}

/// Dense input layer followed by stacked GRU layers. Shared by the slow
/// branch and the single-branch baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub fc_in: Dense,
    pub gru: Vec<GruLayerWeights>,
}

impl Trunk {
    pub fn zeros(input: usize, width: usize, layers: usize) -> Self {
        Self {
            fc_in: Dense::zeros(input, width),
            gru: (0..layers)
                .map(|_| GruLayerWeights::zeros(width, width))
                .collect(),
        }
    }

    pub fn init<R: Rng>(input: usize, width: usize, layers: usize, rng: &mut R) -> Self {
        Self {
            fc_in: Dense::init(input, width, rng),
            gru: (0..layers)
                .map(|_| GruLayerWeights::init(width, width, rng))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.fc_in.output_dim()
    }

    pub fn macs(&self) -> u64 {
        self.fc_in.macs() + self.gru.iter().map(GruLayerWeights::macs).sum::<u64>()
    }

    /// Runs one frame through the stack, updating `state` in place. Returns
    /// the top-layer hidden vector.
    pub fn forward<'s>(&self, frame: &[f64], state: &'s mut SlowState) -> Result<&'s [f64]> {
        self.fc_in.check_input("slow frame", frame.len())?;
        if state.layers.len() != self.gru.len() {
            return Err(Error::shape(
                "slow state layers",
                self.gru.len(),
                state.layers.len(),
            ));
        }
        let width = self.width();
        let mut u = vec![0.0; width];
        self.fc_in.forward(frame, &mut u);
        let mut next = vec![0.0; width];
        let mut cache = GruCache::default();
        for (layer, h) in self.gru.iter().zip(state.layers.iter_mut()) {
            layer.step_into(&u, h, &mut next, &mut cache);
            h.copy_from_slice(&next);
            u.copy_from_slice(&next);
        }
        Ok(state.layers.last().map(Vec::as_slice).unwrap_or(&[]))
    }
}

/// Per-stream recurrent state of the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowState {
    pub layers: Vec<Vec<f64>>,
}

impl SlowState {
    pub fn zeros(width: usize, layers: usize) -> Self {
        Self {
            layers: vec![vec![0.0; width]; layers],
        }
    }

    pub fn for_trunk(trunk: &Trunk) -> Self {
        Self::zeros(trunk.width(), trunk.gru.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowBranchWeights {
    pub trunk: Trunk,
    pub head: Dense,
    /// Raw head output used for fast frames that precede the first slow frame.
    pub warmup_raw: Vec<f64>,
}

impl SlowBranchWeights {
    pub fn zeros(slow_window: usize, width: usize, layers: usize, packet_len: usize) -> Self {
        Self {
            trunk: Trunk::zeros(slow_window, width, layers),
            head: Dense::zeros(width, packet_len),
            warmup_raw: vec![0.0; packet_len],
        }
    }

    pub fn init<R: Rng>(
        slow_window: usize,
        width: usize,
        layers: usize,
        packet_len: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            trunk: Trunk::init(slow_window, width, layers, rng),
            head: Dense::init(width, packet_len, rng),
            warmup_raw: vec![0.0; packet_len],
        }
    }

    pub fn packet_len(&self) -> usize {
        self.head.output_dim()
    }

    pub fn macs(&self) -> u64 {
        self.trunk.macs() + self.head.macs()
    }
}

/// Maps raw head outputs to a packet for `variant`.
pub fn activate_head(
    raw: &[f64],
    variant: &dyn FastVariant,
    state_dim: usize,
) -> Result<ModulationPacket> {
    variant.activate(raw, state_dim)
}

/// Packet for fast frames with slow index −1.
pub fn warmup_packet(
    w: &SlowBranchWeights,
    variant: &dyn FastVariant,
    state_dim: usize,
) -> Result<ModulationPacket> {
    variant.activate(&w.warmup_raw, state_dim)
}

/// One slow frame through the trunk and head. Updates `state` in place.
pub fn slow_forward(
    frame: &[f64],
    state: &mut SlowState,
    w: &SlowBranchWeights,
    variant: &dyn FastVariant,
    state_dim: usize,
) -> Result<ModulationPacket> {
    let top = w.trunk.forward(frame, state)?;
    let mut raw = vec![0.0; w.packet_len()];
    w.head.forward(top, &mut raw);
    variant.activate(&raw, state_dim)
}
