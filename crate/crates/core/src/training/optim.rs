//! Adam and the plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::{GradientSet, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: ModelWeights,
    v: ModelWeights,
    t: u64,
}

impl Adam {
    pub fn new(like: &ModelWeights, params: AdamParams) -> Self {
        Self {
            params,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, w: &mut ModelWeights, grad: &GradientSet, lr: f64) -> Result<()> {
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let g_arrays = grad.arrays();
        let mut w_arrays = w.arrays_mut();
        if g_arrays.len() != w_arrays.len() {
            return Err(Error::shape(
                "gradient arrays",
                w_arrays.len(),
                g_arrays.len(),
            ));
        }
        for (((wa, ga), ma), va) in w_arrays
            .iter_mut()
            .zip(&g_arrays)
            .zip(self.m.arrays_mut())
            .zip(self.v.arrays_mut())
        {
            if wa.data.len() != ga.data.len() {
                return Err(Error::shape(ga.name.clone(), wa.data.len(), ga.data.len()));
            }
            for k in 0..wa.data.len() {
                let g = ga.data[k];
                ma.data[k] = beta1 * ma.data[k] + (1.0 - beta1) * g;
                va.data[k] = beta2 * va.data[k] + (1.0 - beta2) * g * g;
                let m_hat = ma.data[k] / c1;
                let v_hat = va.data[k] / c2;
                wa.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the rate by `factor` after `patience` consecutive epochs
/// without a new best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) || !(factor > 0.0 && factor <= 1.0) || patience == 0 {
            return Err(Error::Config(format!(
                "plateau schedule needs lr > 0, 0 < factor <= 1, patience >= 1 (got {lr}, {factor}, {patience})"
            )));
        }
        Ok(Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SlowFastConfig;

    #[test]
    fn plateau_of_two_epochs_cuts_ten_percent() {
        let mut p = Plateau::new(1e-3, 0.9, 2).unwrap();
        assert_eq!(p.observe(1.0), 1e-3);
        assert_eq!(p.observe(1.0), 1e-3);
        let lr = p.observe(1.5);
        assert!((lr - 9e-4).abs() < 1e-18);
        assert_eq!(p.observe(0.5), lr);
    }

    #[test]
    fn plateau_of_one_epoch_cuts_quarter() {
        let mut p = Plateau::new(1e-4, 0.75, 1).unwrap();
        p.observe(2.0);
        assert!((p.observe(2.0) - 7.5e-5).abs() < 1e-18);
        assert!(Plateau::new(0.0, 0.5, 1).is_err());
        assert!(Plateau::new(1e-3, 1.5, 1).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let cfg = SlowFastConfig::two_ms(2, "ssmm")
            .unwrap()
            .with_gru(4, 1)
            .unwrap();
        let mut w = ModelWeights::zeros(&cfg);
        let mut g = w.zeros_like();
        g.fast.f_in.bias[0] = 3.0;
        g.fast.f_in.bias[1] = -0.01;
        let mut adam = Adam::new(&w, AdamParams::default());
        adam.step(&mut w, &g, 0.1).unwrap();
        assert!((w.fast.f_in.bias[0] + 0.1).abs() < 1e-8);
        assert!((w.fast.f_in.bias[1] - 0.1).abs() < 1e-6);
        assert_eq!(w.fast.f_in.bias[2], 0.0);
        assert_eq!(adam.steps(), 1);
    }
}
