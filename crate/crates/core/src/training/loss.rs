//! Training losses: spectral MSE on magnitude, real and imaginary parts, and
//! negative scale-invariant SNR. Each comes with its exact gradient.

use std::f64::consts::{LN_10, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Upper (and lower) clamp on SI-SNR in dB.
pub const SISNR_CAP_DB: f64 = 60.0;
/// Added to the error energy before the log.
pub const SISNR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StftWindow {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: StftWindow,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            fft_size: 256,
            hop: 128,
            window: StftWindow::Hann,
        }
    }
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize, window: StftWindow) -> Result<Self> {
        let p = Self {
            fft_size,
            hop,
            window,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidInput(format!(
                "stft hop must be in 1..=fft_size, got {}",
                self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames needed to cover `len` samples, zero-padding the tail.
    pub fn frames(&self, len: usize) -> usize {
        1 + (len.saturating_sub(self.fft_size)).div_ceil(self.hop)
    }

    pub fn window_coeffs(&self) -> Vec<f64> {
        let n = self.fft_size;
        match self.window {
            StftWindow::Rectangular => vec![1.0; n],
            StftWindow::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// One-sided complex spectrogram, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

struct StftPlan {
    params: StftParams,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl StftPlan {
    fn new(params: &StftParams) -> Result<Self> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            params: *params,
            forward: planner.plan_fft_forward(params.fft_size),
            inverse: planner.plan_fft_inverse(params.fft_size),
            window: params.window_coeffs(),
        })
    }

    fn forward(&self, x: &[f64]) -> Result<Spectrogram> {
        let p = &self.params;
        if x.len() < p.fft_size {
            return Err(Error::InvalidInput(format!(
                "stft needs at least {} samples, got {}",
                p.fft_size,
                x.len()
            )));
        }
        let n = p.fft_size;
        let frames = p.frames(x.len());
        let bins = p.bins();
        let mut spec = Spectrogram {
            frames,
            bins,
            re: vec![0.0; frames * bins],
            im: vec![0.0; frames * bins],
        };
        let mut buf = vec![Complex64::default(); n];
        for f in 0..frames {
            let start = f * p.hop;
            for (k, c) in buf.iter_mut().enumerate() {
                *c = Complex64::new(
                    x.get(start + k).copied().unwrap_or(0.0) * self.window[k],
                    0.0,
                );
            }
            self.forward.process(&mut buf);
            for (k, c) in buf[..bins].iter().enumerate() {
                spec.re[f * bins + k] = c.re;
                spec.im[f * bins + k] = c.im;
            }
        }
        Ok(spec)
    }

    /// Gradient with respect to the time signal given gradients with
    /// respect to every real and imaginary spectrogram entry.
    fn adjoint(&self, g_re: &[f64], g_im: &[f64], len: usize) -> Vec<f64> {
        let p = &self.params;
        let n = p.fft_size;
        let bins = p.bins();
        let frames = g_re.len() / bins;
        let mut gx = vec![0.0; len];
        let mut buf = vec![Complex64::default(); n];
        for f in 0..frames {
            buf.fill(Complex64::default());
            for k in 0..bins {
                buf[k] = Complex64::new(g_re[f * bins + k], g_im[f * bins + k]);
            }
            // Re(Σ_k G_k e^{+iθ}) over the one-sided bins
            self.inverse.process(&mut buf);
            let start = f * p.hop;
            for (k, c) in buf.iter().enumerate() {
                if let Some(g) = gx.get_mut(start + k) {
                    *g += self.window[k] * c.re;
                }
            }
        }
        gx
    }
}

/// Framed, windowed radix-2 STFT; bins `0..=fft_size/2`.
pub fn stft(x: &[f64], p: &StftParams) -> Result<Spectrogram> {
    StftPlan::new(p)?.forward(x)
}

fn check_lengths(est: &[f64], target: &[f64]) -> Result<()> {
    if est.len() != target.len() {
        return Err(Error::shape("loss signal length", target.len(), est.len()));
    }
    Ok(())
}

/// Mean over frames and bins of `(|Ŝ|−|S|)² + (ReŜ−ReS)² + (ImŜ−ImS)²`.
pub fn spec_mse_loss(est: &[f64], target: &[f64], p: &StftParams) -> Result<f64> {
    Ok(spec_mse_with_grad(est, target, p, false)?.0)
}

pub(crate) fn spec_mse_with_grad(
    est: &[f64],
    target: &[f64],
    p: &StftParams,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(est, target)?;
    let plan = StftPlan::new(p)?;
    let a = plan.forward(est)?;
    let b = plan.forward(target)?;
    let count = a.re.len() as f64;
    let mut loss = 0.0;
    let mut g_re = vec![0.0; if want_grad { a.re.len() } else { 0 }];
    let mut g_im = g_re.clone();
    for k in 0..a.re.len() {
        let (ar, ai, br, bi) = (a.re[k], a.im[k], b.re[k], b.im[k]);
        let ma = (ar * ar + ai * ai).sqrt();
        let mb = (br * br + bi * bi).sqrt();
        let dm = ma - mb;
        loss += dm * dm + (ar - br).powi(2) + (ai - bi).powi(2);
        if want_grad {
            let (ur, ui) = if ma > 0.0 {
                (ar / ma, ai / ma)
            } else {
                (0.0, 0.0)
            };
            g_re[k] = 2.0 * (dm * ur + (ar - br)) / count;
            g_im[k] = 2.0 * (dm * ui + (ai - bi)) / count;
        }
    }
    let grad = if want_grad {
        plan.adjoint(&g_re, &g_im, est.len())
    } else {
        Vec::new()
    };
    Ok((loss / count, grad))
}

/// Scale-invariant SNR in dB, clamped to ±60 dB.
pub fn sisnr(est: &[f64], target: &[f64]) -> Result<f64> {
    Ok(sisnr_with_grad(est, target, false)?.0)
}

pub(crate) fn sisnr_with_grad(
    est: &[f64],
    target: &[f64],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(est, target)?;
    if est.is_empty() {
        return Err(Error::InvalidInput("SI-SNR of empty signals".into()));
    }
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|v| v - me).collect();
    let s: Vec<f64> = target.iter().map(|v| v - mt).collect();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::InvalidInput(
            "SI-SNR target is all zeros after mean removal".into(),
        ));
    }
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let err: Vec<f64> = e.iter().zip(&s).map(|(a, b)| a - alpha * b).collect();
    let p_target = alpha * alpha * ss;
    let p_err = err.iter().map(|v| v * v).sum::<f64>() + SISNR_EPS;
    let raw = 10.0 * (p_target / p_err).log10();
    if raw.is_nan() {
        return Err(Error::NonFiniteLoss("SI-SNR is NaN".into()));
    }
    let value = raw.clamp(-SISNR_CAP_DB, SISNR_CAP_DB);
    let clamped = raw != value;
    let grad = if want_grad && !clamped {
        // d/dê of 10·log10(P_t/P_e) with P_t = α²‖s‖², P_e = ‖ê − αs‖² + ε.
        // Both terms are mean-free, so the mean-removal Jacobian is the identity here.
        let c = 10.0 / LN_10;
        s.iter()
            .zip(&err)
            .map(|(sv, ev)| c * (2.0 * sv / (alpha * ss) - 2.0 * ev / p_err))
            .collect()
    } else if want_grad {
        vec![0.0; est.len()]
    } else {
        Vec::new()
    };
    Ok((value, grad))
}

/// Weights of the implemented loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub spec_mse: f64,
    pub sisnr: f64,
}

impl LossWeights {
    /// λ1 = 10 (SpecMSE), λ2 = 0.5 (SI-SNR).
    pub const FULL: LossWeights = LossWeights {
        spec_mse: 10.0,
        sisnr: 0.5,
    };

    pub fn new(spec_mse: f64, sisnr: f64) -> Result<Self> {
        let lw = Self { spec_mse, sisnr };
        lw.validate()?;
        Ok(lw)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.spec_mse) || !ok(self.sisnr) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if self.spec_mse == 0.0 && self.sisnr == 0.0 {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn write_kv(&self, m: &mut KvMap, prefix: &str) {
        m.set(format!("{prefix}lambda_spec_mse"), self.spec_mse);
        m.set(format!("{prefix}lambda_sisnr"), self.sisnr);
    }
}

/// `λ1·SpecMSE + λ2·(−SI-SNR)`.
pub fn total_loss(est: &[f64], target: &[f64], lw: &LossWeights, p: &StftParams) -> Result<f64> {
    Ok(total_loss_with_grad(est, target, lw, p, false)?.0)
}

/// Value of each implemented term alongside the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    /// Unweighted spectral loss; NaN when its weight is zero.
    pub spec_mse: f64,
    /// SI-SNR in dB; NaN when its weight is zero.
    pub sisnr: f64,
}

pub(crate) fn total_loss_with_grad(
    est: &[f64],
    target: &[f64],
    lw: &LossWeights,
    p: &StftParams,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let (terms, grad) = loss_terms_with_grad(est, target, lw, p, want_grad)?;
    Ok((terms.total, grad))
}

pub(crate) fn loss_terms_with_grad(
    est: &[f64],
    target: &[f64],
    lw: &LossWeights,
    p: &StftParams,
    want_grad: bool,
) -> Result<(LossTerms, Vec<f64>)> {
    lw.validate()?;
    let mut terms = LossTerms {
        total: 0.0,
        spec_mse: f64::NAN,
        sisnr: f64::NAN,
    };
    let mut grad = vec![0.0; if want_grad { est.len() } else { 0 }];
    if lw.spec_mse > 0.0 {
        let (l, g) = spec_mse_with_grad(est, target, p, want_grad)?;
        terms.spec_mse = l;
        terms.total += lw.spec_mse * l;
        crate::nn::axpy(&mut grad, lw.spec_mse, &g);
    }
    if lw.sisnr > 0.0 {
        let (l, g) = sisnr_with_grad(est, target, want_grad)?;
        terms.sisnr = l;
        terms.total -= lw.sisnr * l;
        crate::nn::axpy(&mut grad, -lw.sisnr, &g);
    }
    if !terms.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss = {}", terms.total)));
    }
    Ok((terms, grad))
}
