//! Small dense-layer primitives shared by the inference and training paths.

use rand::Rng;

use crate::error::{Error, Result};

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y += scale * x`
#[inline]
pub fn axpy(y: &mut [f64], scale: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += scale * b;
    }
}

/// Row-major weight matrix: `rows` outputs by `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform in ±sqrt(1/fan_in), fan_in = cols.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (1.0 / cols.max(1) as f64).sqrt();
        Self {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `y = M x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, out) in y.iter_mut().enumerate().take(self.rows) {
            *out = dot(self.row(r), x);
        }
    }

    /// `dx += Mᵀ dy`
    pub fn matvec_t_acc(&self, dy: &[f64], dx: &mut [f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(dx, g, self.row(r));
            }
        }
    }

    /// `M += dy xᵀ`
    pub fn outer_acc(&mut self, dy: &[f64], x: &[f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                let cols = self.cols;
                axpy(&mut self.data[r * cols..(r + 1) * cols], g, x);
            }
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::uniform(output, input, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        self.weight.matvec(x, y);
        for (o, b) in y.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }

    pub fn check_input(&self, context: &str, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::shape(context, self.input_dim(), len));
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grad` and, when given, the input
    /// gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        grad.weight.outer_acc(dy, x);
        axpy(&mut grad.bias, 1.0, dy);
        if let Some(dx) = dx {
            self.weight.matvec_t_acc(dy, dx);
        }
    }

    pub fn macs(&self) -> u64 {
        (self.input_dim() * self.output_dim()) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|v| v as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|v| 1.0 - v as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(20.0) < 1.0);
    }

    #[test]
    fn fc_32_to_64_costs_2048() {
        assert_eq!(Dense::zeros(32, 64).macs(), 2048);
    }
}
