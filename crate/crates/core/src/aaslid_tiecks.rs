//! Discrete second-order Aaslid-Tiecks autoregulation simulator and the ten
//! canonical ARI template responses.
//!
//! Driven by the normalized pressure deviation `dP`, the model integrates
//!
//! ```text
//! x1(t) = x1(t-1) + (dP(t-1) - x2(t-1)) / (fs * T)
//! x2(t) = x2(t-1) + (x1(t-1) - 2 * D * x2(t-1)) / (fs * T)
//! v(t)  = 1 + dP(t-1) - K * x2(t)
//! ```
//!
//! producing a normalized velocity with rest level 1. Each of the ten
//! canonical `(K, D, T)` rows yields one template curve; the row index is the
//! autoregulation index it represents (ARI 0 = absent, ARI 9 = perfect).

use thiserror::Error;

use crate::signal::SampledSignal;

#[derive(Debug, Error)]
pub enum AtError {
    #[error("invalid autoregulation parameters: gain={gain}, damping={damping}, time_constant={time_constant} (need 0 <= gain <= 1, damping > 0, time_constant > 0)")]
    InvalidParameters { gain: f64, damping: f64, time_constant: f64 },
    #[error("template table must hold exactly 10 rows, got {0}")]
    WrongRowCount(usize),
}

/// Gain, damping factor, and time constant of one autoregulation response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ATParameters {
    gain: f64,
    damping: f64,
    time_constant: f64,
}

impl ATParameters {
    pub fn new(gain: f64, damping: f64, time_constant: f64) -> Result<Self, AtError> {
        let valid = (0.0..=1.0).contains(&gain)
            && damping > 0.0
            && time_constant > 0.0
            && gain.is_finite()
            && damping.is_finite()
            && time_constant.is_finite();
        if !valid {
            return Err(AtError::InvalidParameters { gain, damping, time_constant });
        }
        Ok(Self { gain, damping, time_constant })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn time_constant(&self) -> f64 {
        self.time_constant
    }
}

/// The canonical (gain, damping, time constant) association, one row per ARI.
const STANDARD_ROWS: [(f64, f64, f64); 10] = [
    (0.00, 1.70, 2.00),
    (0.20, 1.60, 2.00),
    (0.40, 1.50, 2.00),
    (0.60, 1.15, 2.00),
    (0.80, 0.90, 2.00),
    (0.90, 0.75, 1.90),
    (0.94, 0.65, 1.60),
    (0.96, 0.55, 1.20),
    (0.97, 0.52, 0.87),
    (0.98, 0.50, 0.65),
];

/// Ten parameter rows in ARI order 0..9.
#[derive(Debug, Clone, PartialEq)]
pub struct AriTemplateTable {
    rows: [ATParameters; 10],
}

impl AriTemplateTable {
    /// The canonical table. Row `k` defines the response graded ARI `k`.
    pub fn standard() -> Self {
        let rows = STANDARD_ROWS.map(|(k, d, t)| {
            ATParameters::new(k, d, t).expect("canonical rows are valid")
        });
        Self { rows }
    }

    /// Advanced constructor for non-canonical parameter sets. The row index
    /// still acts as the assigned ARI value.
    pub fn custom(rows: Vec<ATParameters>) -> Result<Self, AtError> {
        let n = rows.len();
        let rows: [ATParameters; 10] =
            rows.try_into().map_err(|_| AtError::WrongRowCount(n))?;
        Ok(Self { rows })
    }

    pub fn params_for(&self, ari: u8) -> &ATParameters {
        &self.rows[ari as usize]
    }

    pub fn rows(&self) -> &[ATParameters; 10] {
        &self.rows
    }
}

impl Default for AriTemplateTable {
    fn default() -> Self {
        Self::standard()
    }
}

/// State variables of the second-order system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ATState {
    pub x1: f64,
    pub x2: f64,
}

/// Advances the state by one sample and emits the velocity at the new time.
///
/// `dp_prev` is the pressure deviation one sample in the past; the velocity
/// uses the post-update second state.
pub fn at_step(state: ATState, dp_prev: f64, params: &ATParameters, fs: f64) -> (ATState, f64) {
    let tau = fs * params.time_constant();
    let x1 = state.x1 + (dp_prev - state.x2) / tau;
    let x2 = state.x2 + (state.x1 - 2.0 * params.damping() * state.x2) / tau;
    let v = 1.0 + dp_prev - params.gain() * x2;
    (ATState { x1, x2 }, v)
}

/// Simulates the full velocity response to a pressure deviation signal.
///
/// The state starts at rest and `dP(-1)` is taken as zero, so the output has
/// the same length and sampling frequency as the input.
pub fn at_simulate(dp: &SampledSignal, params: &ATParameters) -> SampledSignal {
    let fs = dp.fs();
    let input = dp.samples();
    let mut state = ATState::default();
    let mut out = Vec::with_capacity(input.len());
    for t in 0..input.len() {
        let dp_prev = if t == 0 { 0.0 } else { input[t - 1] };
        let (next, v) = at_step(state, dp_prev, params, fs);
        state = next;
        out.push(v);
    }
    SampledSignal::from_computed(out, fs, "v")
}

/// The ten template responses to `dp`, in ARI order 0..9.
pub fn generate_templates(dp: &SampledSignal, table: &AriTemplateTable) -> Vec<SampledSignal> {
    table.rows().iter().map(|params| at_simulate(dp, params)).collect()
}
