//! Seven-tap FIR relation between pressure and velocity: prediction and
//! least-squares identification.
//!
//! The filter output at sample `i` is `sum_k h[k] * p(i - k)` for `k` in
//! 0..6, defined only where a full window exists, so predictions drop the
//! first six samples instead of fabricating data. Identification solves the
//! windowed least-squares problem through a singular value decomposition,
//! with an optional ridge penalty for degenerate inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SampledSignal;

/// Number of filter taps.
pub const FIR_TAPS: usize = 7;

#[derive(Debug, Error)]
pub enum FirError {
    #[error("input must hold at least {FIR_TAPS} samples, got {0}")]
    InputTooShort(usize),
    #[error("pressure and velocity must have equal length and sampling frequency")]
    MismatchedSignals,
    #[error("fit needs at least {need} samples per signal, got {got}")]
    TooFewSamplesForFit { need: usize, got: usize },
    #[error("ridge weight must be finite and >= 0, got {0}")]
    InvalidRidge(f64),
    #[error("tap {index} is not finite")]
    NonFiniteTap { index: usize },
    #[error("singular system; supply ridge > 0")]
    SingularSystem,
}

/// Impulse response `h(0..6)`; `h[0]` multiplies the newest sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FirCoefficients {
    taps: [f64; FIR_TAPS],
}

impl FirCoefficients {
    pub fn new(taps: [f64; FIR_TAPS]) -> Result<Self, FirError> {
        if let Some(index) = taps.iter().position(|t| !t.is_finite()) {
            return Err(FirError::NonFiniteTap { index });
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64; FIR_TAPS] {
        &self.taps
    }

    /// Filter response to one window ordered newest-first.
    pub fn apply(&self, window: &[f64; FIR_TAPS]) -> f64 {
        self.taps.iter().zip(window).map(|(h, p)| h * p).sum()
    }
}

/// Windows of `signal` ordered newest-first, one per output sample.
pub(crate) fn windows(signal: &[f64]) -> impl Iterator<Item = [f64; FIR_TAPS]> + '_ {
    (FIR_TAPS - 1..signal.len()).map(|i| {
        let mut w = [0.0; FIR_TAPS];
        for (k, slot) in w.iter_mut().enumerate() {
            *slot = signal[i - k];
        }
        w
    })
}

/// Convolves the filter with the pressure signal.
///
/// Output sample `j` corresponds to input sample `j + 6`; length shrinks by
/// six, the sampling frequency carries over.
pub fn fir_predict(h: &FirCoefficients, p: &SampledSignal) -> Result<SampledSignal, FirError> {
    if p.len() < FIR_TAPS {
        return Err(FirError::InputTooShort(p.len()));
    }
    let out: Vec<f64> = windows(p.samples()).map(|w| h.apply(&w)).collect();
    Ok(SampledSignal::from_computed(out, p.fs(), "fir_prediction"))
}

/// Least-squares identification of the taps from one signal pair.
///
/// Minimizes the windowed squared prediction error plus `ridge` times the
/// squared tap norm. With `ridge = 0` a rank-deficient design is refused.
pub fn fir_fit(
    p: &SampledSignal,
    v: &SampledSignal,
    ridge: f64,
) -> Result<FirCoefficients, FirError> {
    if p.len() != v.len() || p.fs() != v.fs() {
        return Err(FirError::MismatchedSignals);
    }
    if p.len() < 2 * FIR_TAPS {
        return Err(FirError::TooFewSamplesForFit { need: 2 * FIR_TAPS, got: p.len() });
    }
    fir_fit_pooled(&[(p, v)], ridge)
}

/// Identification over concatenated windows from several subjects, the
/// common-coefficients variant. Windows never straddle subject boundaries.
pub fn fir_fit_pooled(
    pairs: &[(&SampledSignal, &SampledSignal)],
    ridge: f64,
) -> Result<FirCoefficients, FirError> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(FirError::InvalidRidge(ridge));
    }
    let mut rows: Vec<[f64; FIR_TAPS]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (p, v) in pairs {
        if p.len() != v.len() || p.fs() != v.fs() {
            return Err(FirError::MismatchedSignals);
        }
        if p.len() < FIR_TAPS {
            return Err(FirError::InputTooShort(p.len()));
        }
        rows.extend(windows(p.samples()));
        targets.extend(&v.samples()[FIR_TAPS - 1..]);
    }
    if rows.len() < FIR_TAPS {
        return Err(FirError::TooFewSamplesForFit {
            need: 2 * FIR_TAPS,
            got: rows.len() + FIR_TAPS - 1,
        });
    }

    let design = DMatrix::from_fn(rows.len(), FIR_TAPS, |r, c| rows[r][c]);
    let rhs = DVector::from_vec(targets);

    let svd = design.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma = &svd.singular_values;

    let tol = sigma.max() * rows.len().max(FIR_TAPS) as f64 * f64::EPSILON;
    if ridge == 0.0 && sigma.iter().any(|s| *s <= tol) {
        return Err(FirError::SingularSystem);
    }

    // h = sum_i  sigma_i / (sigma_i^2 + ridge) * (u_i . y) * v_i
    let mut taps = [0.0; FIR_TAPS];
    for i in 0..FIR_TAPS {
        let s = sigma[i];
        let filter = s / (s * s + ridge);
        let coeff = u.column(i).dot(&rhs) * filter;
        for (k, tap) in taps.iter_mut().enumerate() {
            *tap += coeff * v_t[(i, k)];
        }
    }
    FirCoefficients::new(taps)
}
