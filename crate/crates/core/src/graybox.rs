//! Serial gray-box velocity estimator: a small trainable network maps each
//! seven-sample pressure window to seven filter coefficients, and a fixed
//! phenomenological layer applies those coefficients to the raw window as an
//! inner product.
//!
//! The phenomenological stage stores no trainable parameters at all — it is
//! the structural composition `v = coeffs . window` — so the optimizer cannot
//! touch it. Training is indirect: the loss is the mean squared error at the
//! velocity output and gradients flow back through the fixed stage into the
//! empirical weights only.
//!
//! The empirical net standardizes its input windows with per-signal
//! mean/std statistics fixed before training; the inner product always
//! consumes the raw normalized-pressure window.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fir_simpson::{windows, FIR_TAPS};
use crate::signal::SampledSignal;

/// Serialized model format tag.
pub const MODEL_VERSION: &str = "graybox-v1";

#[derive(Debug, Error)]
pub enum GrayBoxError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input must hold at least {need} samples, got {got}")]
    InputTooShort { need: usize, got: usize },
    #[error("input and target must have equal length and sampling frequency")]
    MismatchedSignals,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("model deserialization failed: {0}")]
    BadModelFile(String),
    #[error("unsupported model version `{0}`, expected `{MODEL_VERSION}`")]
    WrongVersion(String),
}

/// Hyperparameters of the empirical subnetwork and its training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayBoxConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Uniform initialization half-width; `None` selects 1/sqrt(fan_in) per
    /// layer.
    pub init_scale: Option<f64>,
    /// Pressure window length; fixed at 7.
    pub window: usize,
}

impl Default for GrayBoxConfig {
    fn default() -> Self {
        Self {
            hidden_width: 8,
            learning_rate: 0.01,
            epochs: 2000,
            seed: 0,
            init_scale: None,
            window: FIR_TAPS,
        }
    }
}

impl GrayBoxConfig {
    pub fn validate(&self) -> Result<(), GrayBoxError> {
        if self.hidden_width == 0 {
            return Err(GrayBoxError::InvalidConfig("hidden_width must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GrayBoxError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if let Some(scale) = self.init_scale {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(GrayBoxError::InvalidConfig(format!(
                    "init_scale must be finite and > 0, got {scale}"
                )));
            }
        }
        if self.window != FIR_TAPS {
            return Err(GrayBoxError::InvalidConfig(format!(
                "window is fixed at {FIR_TAPS}, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Input standardization statistics, fixed before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl NormStats {
    /// Population mean and standard deviation; a zero spread falls back to
    /// unit scale.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self { mean, std: if std > 0.0 { std } else { 1.0 } }
    }

    pub fn from_signal(signal: &SampledSignal) -> Self {
        Self::from_samples(signal.samples())
    }
}

/// One hidden layer of `tanh` units between the standardized window and the
/// seven predicted coefficients, plus the parameterless output stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayBoxModel {
    config: GrayBoxConfig,
    norm_stats: NormStats,
    /// hidden_width x 7, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// 7 x hidden_width, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Output of one forward pass: the predicted coefficients and the velocity
/// produced by applying them to the raw window.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub coefficients: [f64; FIR_TAPS],
    pub velocity: f64,
}

/// Per-epoch mean squared velocity errors plus the loss of the returned
/// model.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingTrace {
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Per-window coefficient vectors and their element-wise mean.
#[derive(Debug, Clone)]
pub struct CoefficientProfile {
    pub per_window: Vec<[f64; FIR_TAPS]>,
    pub summary: [f64; FIR_TAPS],
}

/// All parameter gradients, in the model's canonical parameter order.
struct Gradients {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl GrayBoxModel {
    /// Draws fresh parameters from a seeded uniform distribution. The draw
    /// order is fixed (w1 row-major, b1, w2 row-major, b2) so equal seeds
    /// give bit-identical models.
    pub fn init(config: &GrayBoxConfig) -> Result<Self, GrayBoxError> {
        config.validate()?;
        let h = config.hidden_width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale1 = config.init_scale.unwrap_or(1.0 / (FIR_TAPS as f64).sqrt());
        let scale2 = config.init_scale.unwrap_or(1.0 / (h as f64).sqrt());
        let layer1 = Uniform::new_inclusive(-scale1, scale1);
        let layer2 = Uniform::new_inclusive(-scale2, scale2);

        let w1 = (0..h * FIR_TAPS).map(|_| rng.sample(layer1)).collect();
        let b1 = (0..h).map(|_| rng.sample(layer1)).collect();
        let w2 = (0..FIR_TAPS * h).map(|_| rng.sample(layer2)).collect();
        let b2 = (0..FIR_TAPS).map(|_| rng.sample(layer2)).collect();

        Ok(Self { config: config.clone(), norm_stats: NormStats::default(), w1, b1, w2, b2 })
    }

    /// Fixes the input standardization statistics from a training signal.
    /// Must happen before training so that training itself only ever touches
    /// the empirical weights.
    pub fn with_input_stats(self, signal: &SampledSignal) -> Self {
        let stats = NormStats::from_signal(signal);
        self.with_norm_stats(stats)
    }

    /// Fixes explicit standardization statistics, for pooled training over
    /// several signals.
    pub fn with_norm_stats(mut self, stats: NormStats) -> Self {
        self.norm_stats = stats;
        self
    }

    pub fn config(&self) -> &GrayBoxConfig {
        &self.config
    }

    pub fn norm_stats(&self) -> NormStats {
        self.norm_stats
    }

    /// Empirical stage: standardized window through the hidden layer to the
    /// seven coefficients.
    fn coefficients_for(&self, window: &[f64; FIR_TAPS]) -> ([f64; FIR_TAPS], Vec<f64>) {
        let h = self.config.hidden_width;
        let mut hidden = vec![0.0; h];
        for r in 0..h {
            let mut z = self.b1[r];
            for c in 0..FIR_TAPS {
                let x = (window[c] - self.norm_stats.mean) / self.norm_stats.std;
                z += self.w1[r * FIR_TAPS + c] * x;
            }
            hidden[r] = z.tanh();
        }
        let mut coeffs = [0.0; FIR_TAPS];
        for (r, coeff) in coeffs.iter_mut().enumerate() {
            let mut acc = self.b2[r];
            for c in 0..h {
                acc += self.w2[r * h + c] * hidden[c];
            }
            *coeff = acc;
        }
        (coeffs, hidden)
    }

    /// Serial composition: empirical coefficients, then the fixed inner
    /// product with the raw window.
    pub fn forward(&self, window: &[f64; FIR_TAPS]) -> ForwardPass {
        let (coefficients, _) = self.coefficients_for(window);
        let velocity = coefficients.iter().zip(window).map(|(c, p)| c * p).sum();
        ForwardPass { coefficients, velocity }
    }

    /// Velocity predictions over every full window of `input`; output sample
    /// `j` corresponds to input sample `j + 6`.
    pub fn predict(&self, input: &SampledSignal) -> Result<SampledSignal, GrayBoxError> {
        if input.len() < FIR_TAPS {
            return Err(GrayBoxError::InputTooShort { need: FIR_TAPS, got: input.len() });
        }
        let out: Vec<f64> = windows(input.samples()).map(|w| self.forward(&w).velocity).collect();
        Ok(SampledSignal::from_computed(out, input.fs(), "graybox_prediction"))
    }

    /// Per-window coefficient vectors plus their element-wise mean as the
    /// subject summary.
    pub fn coefficients(&self, input: &SampledSignal) -> Result<CoefficientProfile, GrayBoxError> {
        if input.len() < FIR_TAPS {
            return Err(GrayBoxError::InputTooShort { need: FIR_TAPS, got: input.len() });
        }
        let per_window: Vec<[f64; FIR_TAPS]> =
            windows(input.samples()).map(|w| self.coefficients_for(&w).0).collect();
        let mut summary = [0.0; FIR_TAPS];
        for coeffs in &per_window {
            for (s, c) in summary.iter_mut().zip(coeffs) {
                *s += c;
            }
        }
        let n = per_window.len() as f64;
        for s in summary.iter_mut() {
            *s /= n;
        }
        Ok(CoefficientProfile { per_window, summary })
    }

    /// Mean squared velocity error over a window batch.
    fn batch_loss(&self, batch: &[([f64; FIR_TAPS], f64)]) -> f64 {
        let mut acc = 0.0;
        for (window, target) in batch {
            let err = self.forward(window).velocity - target;
            acc += err * err;
        }
        acc / batch.len() as f64
    }

    /// Analytic gradients of the batch loss with respect to every empirical
    /// parameter. The fixed inner product contributes only its chain-rule
    /// factor (the raw window) and has nothing to update.
    fn batch_gradients(&self, batch: &[([f64; FIR_TAPS], f64)]) -> (f64, Gradients) {
        let h = self.config.hidden_width;
        let n = batch.len() as f64;
        let mut grads = Gradients {
            w1: vec![0.0; h * FIR_TAPS],
            b1: vec![0.0; h],
            w2: vec![0.0; FIR_TAPS * h],
            b2: vec![0.0; FIR_TAPS],
        };
        let mut loss = 0.0;

        for (window, target) in batch {
            let (coeffs, hidden) = self.coefficients_for(window);
            let velocity: f64 = coeffs.iter().zip(window).map(|(c, p)| c * p).sum();
            let err = velocity - target;
            loss += err * err;
            let g = 2.0 * err / n;

            // dL/dcoeffs[r] = g * window[r]; the output stage is linear in
            // the coefficients with the window as its fixed weights.
            let mut d_hidden = vec![0.0; h];
            for r in 0..FIR_TAPS {
                let dc = g * window[r];
                grads.b2[r] += dc;
                for c in 0..h {
                    grads.w2[r * h + c] += dc * hidden[c];
                    d_hidden[c] += dc * self.w2[r * h + c];
                }
            }
            for r in 0..h {
                let dz = d_hidden[r] * (1.0 - hidden[r] * hidden[r]);
                grads.b1[r] += dz;
                for c in 0..FIR_TAPS {
                    let x = (window[c] - self.norm_stats.mean) / self.norm_stats.std;
                    grads.w1[r * FIR_TAPS + c] += dz * x;
                }
            }
        }
        (loss / n, grads)
    }

    fn apply_update(&mut self, grads: &Gradients, learning_rate: f64) {
        for (p, g) in self.w1.iter_mut().zip(&grads.w1) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grads.b1) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.w2.iter_mut().zip(&grads.w2) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.b2.iter_mut().zip(&grads.b2) {
            *p -= learning_rate * g;
        }
    }

    /// Serializes to the versioned JSON format.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION.to_string(),
            config: self.config.clone(),
            norm_stats: self.norm_stats,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, GrayBoxError> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| GrayBoxError::BadModelFile(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(GrayBoxError::WrongVersion(file.version));
        }
        file.config.validate()?;
        let h = file.config.hidden_width;
        if file.w1.len() != h * FIR_TAPS
            || file.b1.len() != h
            || file.w2.len() != FIR_TAPS * h
            || file.b2.len() != FIR_TAPS
        {
            return Err(GrayBoxError::BadModelFile("parameter shape mismatch".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&file.w1) && finite(&file.b1) && finite(&file.w2) && finite(&file.b2)) {
            return Err(GrayBoxError::BadModelFile("non-finite parameter".into()));
        }
        Ok(Self {
            config: file.config,
            norm_stats: file.norm_stats,
            w1: file.w1,
            b1: file.b1,
            w2: file.w2,
            b2: file.b2,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    config: GrayBoxConfig,
    norm_stats: NormStats,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

fn build_batch(
    input: &SampledSignal,
    target: &SampledSignal,
) -> Result<Vec<([f64; FIR_TAPS], f64)>, GrayBoxError> {
    if input.len() != target.len() || input.fs() != target.fs() {
        return Err(GrayBoxError::MismatchedSignals);
    }
    if input.len() < FIR_TAPS {
        return Err(GrayBoxError::InputTooShort { need: FIR_TAPS, got: input.len() });
    }
    Ok(windows(input.samples())
        .zip(&target.samples()[FIR_TAPS - 1..])
        .map(|(w, y)| (w, *y))
        .collect())
}

/// Full-batch gradient descent on the velocity-output loss for one subject.
///
/// Only the empirical parameters move; the model's standardization stats and
/// the structural output stage are left untouched. Aborts if the loss goes
/// non-finite.
pub fn train(
    model: &GrayBoxModel,
    input: &SampledSignal,
    target: &SampledSignal,
    config: &GrayBoxConfig,
) -> Result<(GrayBoxModel, TrainingTrace), GrayBoxError> {
    if input.len() < 2 * FIR_TAPS {
        return Err(GrayBoxError::InputTooShort { need: 2 * FIR_TAPS, got: input.len() });
    }
    let batch = build_batch(input, target)?;
    train_batch(model, &batch, config)
}

/// Pooled variant for the common-coefficients comparison: the window batches
/// of several subjects are concatenated and trained as one.
pub fn train_pooled(
    model: &GrayBoxModel,
    pairs: &[(&SampledSignal, &SampledSignal)],
    config: &GrayBoxConfig,
) -> Result<(GrayBoxModel, TrainingTrace), GrayBoxError> {
    let mut batch = Vec::new();
    for (input, target) in pairs {
        batch.extend(build_batch(input, target)?);
    }
    if batch.is_empty() {
        return Err(GrayBoxError::InputTooShort { need: 2 * FIR_TAPS, got: 0 });
    }
    train_batch(model, &batch, config)
}

fn train_batch(
    model: &GrayBoxModel,
    batch: &[([f64; FIR_TAPS], f64)],
    config: &GrayBoxConfig,
) -> Result<(GrayBoxModel, TrainingTrace), GrayBoxError> {
    config.validate()?;
    let mut trained = model.clone();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = trained.batch_gradients(batch);
        if !loss.is_finite() {
            return Err(GrayBoxError::Diverged { epoch });
        }
        losses.push(loss);
        trained.apply_update(&grads, config.learning_rate);
    }
    let final_loss = trained.batch_loss(batch);
    if !final_loss.is_finite() {
        return Err(GrayBoxError::Diverged { epoch: config.epochs });
    }
    Ok((trained, TrainingTrace { losses, final_loss }))
}

/// Compares the analytic gradient of the velocity-output loss against
/// central finite differences over every parameter; returns the worst
/// relative disagreement.
pub fn gradient_check(
    model: &GrayBoxModel,
    input: &SampledSignal,
    target: &SampledSignal,
) -> Result<f64, GrayBoxError> {
    const STEP: f64 = 1e-6;
    let batch = build_batch(input, target)?;
    let (_, analytic) = model.batch_gradients(&batch);

    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
    let mut worst = 0.0f64;

    let mut probe = |select: &dyn Fn(&mut GrayBoxModel) -> &mut f64, analytic_g: f64| {
        let mut plus = model.clone();
        *select(&mut plus) += STEP;
        let mut minus = model.clone();
        *select(&mut minus) -= STEP;
        let numeric = (plus.batch_loss(&batch) - minus.batch_loss(&batch)) / (2.0 * STEP);
        worst = worst.max(rel(analytic_g, numeric));
    };

    for i in 0..model.w1.len() {
        probe(&|m: &mut GrayBoxModel| &mut m.w1[i], analytic.w1[i]);
    }
    for i in 0..model.b1.len() {
        probe(&|m: &mut GrayBoxModel| &mut m.b1[i], analytic.b1[i]);
    }
    for i in 0..model.w2.len() {
        probe(&|m: &mut GrayBoxModel| &mut m.w2[i], analytic.w2[i]);
    }
    for i in 0..model.b2.len() {
        probe(&|m: &mut GrayBoxModel| &mut m.b2[i], analytic.b2[i]);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fir_simpson::{fir_predict, FirCoefficients};
    use approx::assert_relative_eq;

    fn step_dp(n: usize) -> SampledSignal {
        let samples = (0..n).map(|i| if i < 50 { 0.0 } else { -0.2 }).collect();
        SampledSignal::new(samples, 10.0, "dp").unwrap()
    }

    /// Velocity deviation generated by a planted constant filter, padded to
    /// the input length.
    fn planted_target(input: &SampledSignal, taps: [f64; FIR_TAPS]) -> SampledSignal {
        let h = FirCoefficients::new(taps).unwrap();
        let pred = fir_predict(&h, input).unwrap();
        let mut v = vec![0.0; FIR_TAPS - 1];
        v.extend(pred.samples());
        SampledSignal::new(v, input.fs(), "v").unwrap()
    }

    const PLANT: [f64; 7] = [0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005];

    fn default_model(seed: u64, input: &SampledSignal) -> GrayBoxModel {
        let config = GrayBoxConfig { seed, ..GrayBoxConfig::default() };
        GrayBoxModel::init(&config).unwrap().with_input_stats(input)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let config = GrayBoxConfig { seed: 42, ..GrayBoxConfig::default() };
        let a = GrayBoxModel::init(&config).unwrap();
        let b = GrayBoxModel::init(&config).unwrap();
        assert_eq!(a, b);

        let other = GrayBoxConfig { seed: 43, ..GrayBoxConfig::default() };
        let c = GrayBoxModel::init(&other).unwrap();
        assert_ne!(a.w1, c.w1);
    }

    #[test]
    fn init_respects_scale_bound() {
        let config = GrayBoxConfig { seed: 7, ..GrayBoxConfig::default() };
        let model = GrayBoxModel::init(&config).unwrap();
        let bound1 = 1.0 / (FIR_TAPS as f64).sqrt();
        let bound2 = 1.0 / (config.hidden_width as f64).sqrt();
        assert!(model.w1.iter().chain(&model.b1).all(|p| p.abs() <= bound1));
        assert!(model.w2.iter().chain(&model.b2).all(|p| p.abs() <= bound2));
    }

    #[test]
    fn config_validation() {
        let bad = GrayBoxConfig { hidden_width: 0, ..GrayBoxConfig::default() };
        assert!(GrayBoxModel::init(&bad).is_err());
        let bad = GrayBoxConfig { window: 5, ..GrayBoxConfig::default() };
        assert!(GrayBoxModel::init(&bad).is_err());
        let bad = GrayBoxConfig { init_scale: Some(0.0), ..GrayBoxConfig::default() };
        assert!(GrayBoxModel::init(&bad).is_err());
    }

    #[test]
    fn zero_parameters_map_to_zero() {
        let input = step_dp(60);
        let mut model = default_model(1, &input);
        model.w1.iter_mut().for_each(|p| *p = 0.0);
        model.b1.iter_mut().for_each(|p| *p = 0.0);
        model.w2.iter_mut().for_each(|p| *p = 0.0);
        model.b2.iter_mut().for_each(|p| *p = 0.0);
        let pass = model.forward(&[0.1, -0.2, 0.3, 0.0, 0.05, -0.1, 0.2]);
        assert!(pass.coefficients.iter().all(|&c| c == 0.0));
        assert_eq!(pass.velocity, 0.0);
    }

    #[test]
    fn identity_tap_reduces_to_newest_sample() {
        let input = step_dp(60);
        let mut model = default_model(1, &input);
        model.w2.iter_mut().for_each(|p| *p = 0.0);
        model.b2 = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for window in [[0.3, 0.1, -0.2, 0.4, 0.0, 0.1, -0.3], [-0.2; 7]] {
            let pass = model.forward(&window);
            assert_eq!(pass.velocity, window[0]);
        }
    }

    #[test]
    fn forward_matches_two_step_evaluation() {
        let input = step_dp(60);
        let model = default_model(5, &input);
        let window = [0.12, -0.05, 0.3, -0.2, 0.07, 0.0, -0.11];
        let pass = model.forward(&window);
        let as_filter = FirCoefficients::new(pass.coefficients).unwrap();
        let expected = as_filter.apply(&window);
        assert!((pass.velocity - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let input = step_dp(100);
        let target = planted_target(&input, PLANT);
        let model = default_model(3, &input);
        let config =
            GrayBoxConfig { learning_rate: 0.0, epochs: 50, ..model.config().clone() };
        let (trained, trace) = train(&model, &input, &target, &config).unwrap();
        assert_eq!(trained, model);
        assert_eq!(trace.losses.len(), 50);
        assert!(trace.losses.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(trace.final_loss, trace.losses[0]);
    }

    #[test]
    fn training_converges_on_planted_filter() {
        let input = step_dp(600);
        let target = planted_target(&input, PLANT);
        let model = default_model(7, &input);
        let (_, trace) = train(&model, &input, &target, model.config()).unwrap();
        assert_eq!(trace.losses.len(), 2000);
        assert!(
            trace.final_loss < 0.5 * trace.losses[0],
            "final {} vs initial {}",
            trace.final_loss,
            trace.losses[0]
        );
    }

    #[test]
    fn tiny_learning_rate_changes_loss_continuously() {
        let input = step_dp(300);
        let target = planted_target(&input, PLANT);
        let model = default_model(11, &input);
        let config =
            GrayBoxConfig { learning_rate: 1e-9, epochs: 1, ..model.config().clone() };
        let (_, trace) = train(&model, &input, &target, &config).unwrap();
        let change = (trace.final_loss - trace.losses[0]).abs();
        assert!(change <= 1e-6 * trace.losses[0], "change {change}");
    }

    #[test]
    fn divergent_training_reports_epoch() {
        let input = step_dp(100);
        let target = planted_target(&input, PLANT);
        let model = default_model(13, &input);
        let config =
            GrayBoxConfig { learning_rate: 1e12, epochs: 200, ..model.config().clone() };
        let err = train(&model, &input, &target, &config).unwrap_err();
        assert!(matches!(err, GrayBoxError::Diverged { .. }), "{err}");
    }

    #[test]
    fn training_is_deterministic() {
        let input = step_dp(200);
        let target = planted_target(&input, PLANT);
        let model = default_model(17, &input);
        let config = GrayBoxConfig { epochs: 100, ..model.config().clone() };
        let (a, ta) = train(&model, &input, &target, &config).unwrap();
        let (b, tb) = train(&model, &input, &target, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.losses, tb.losses);
    }

    #[test]
    fn gradient_check_over_seed_suite() {
        let input = step_dp(60);
        let target = planted_target(&input, PLANT);
        for seed in 0..10 {
            let model = default_model(seed, &input);
            let worst = gradient_check(&model, &input, &target).unwrap();
            assert!(worst < 1e-5, "seed {seed}: gradient mismatch {worst}");
        }
    }

    #[test]
    fn gradient_check_zero_data_is_exact() {
        let zeros = SampledSignal::new(vec![0.0; 40], 10.0, "z").unwrap();
        let model = default_model(3, &zeros);
        let worst = gradient_check(&model, &zeros, &zeros).unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn zeroed_hidden_weight_only_touches_reachable_gradients() {
        // With w2 = 0 the velocity ignores the hidden layer, so zeroing one
        // w1 entry may only move the w2 gradients fed by that hidden unit.
        let input = step_dp(60);
        let target = planted_target(&input, PLANT);
        let batch = build_batch(&input, &target).unwrap();

        let mut model = default_model(19, &input);
        model.w2.iter_mut().for_each(|p| *p = 0.0);
        let (_, before) = model.batch_gradients(&batch);

        let zero_row = 2usize;
        let mut modified = model.clone();
        modified.w1[zero_row * FIR_TAPS + 3] = 0.0;
        let (_, after) = modified.batch_gradients(&batch);

        assert_eq!(before.b2, after.b2);
        assert_eq!(before.b1, after.b1);
        assert_eq!(before.w1, after.w1);
        let h = model.config.hidden_width;
        let mut changed = false;
        for r in 0..FIR_TAPS {
            for c in 0..h {
                let delta = (before.w2[r * h + c] - after.w2[r * h + c]).abs();
                if c == zero_row {
                    changed |= delta > 0.0;
                } else {
                    assert_eq!(delta, 0.0, "gradient w2[{r}][{c}] moved unexpectedly");
                }
            }
        }
        assert!(changed, "gradients fed by the zeroed unit should move");
    }

    #[test]
    fn coefficient_profile_shapes() {
        let input = step_dp(60);
        let mut model = default_model(23, &input);
        model.w2.iter_mut().for_each(|p| *p = 0.0);
        model.b2 = vec![0.5, 0.1, 0.0, 0.0, 0.0, 0.0, -0.2];

        let profile = model.coefficients(&input).unwrap();
        assert_eq!(profile.per_window.len(), input.len() - FIR_TAPS + 1);
        for coeffs in &profile.per_window {
            assert_eq!(coeffs.as_slice(), model.b2.as_slice());
        }
        for (s, b) in profile.summary.iter().zip(&model.b2) {
            assert_relative_eq!(s, b, max_relative = 1e-12);
        }

        let seven = SampledSignal::new(vec![0.1; 7], 10.0, "x").unwrap();
        let profile = model.coefficients(&seven).unwrap();
        assert_eq!(profile.per_window.len(), 1);

        let six = SampledSignal::new(vec![0.1; 6], 10.0, "x").unwrap();
        assert!(model.coefficients(&six).is_err());
    }

    #[test]
    fn trained_subjects_with_different_filters_differ() {
        let input = step_dp(600);
        let target_a = planted_target(&input, PLANT);
        let target_b = planted_target(&input, [0.05, 0.1, 0.25, 0.15, 0.1, 0.05, 0.02]);
        let model = default_model(29, &input);
        let (model_a, _) = train(&model, &input, &target_a, model.config()).unwrap();
        let (model_b, _) = train(&model, &input, &target_b, model.config()).unwrap();
        let summary_a = model_a.coefficients(&input).unwrap().summary;
        let summary_b = model_b.coefficients(&input).unwrap().summary;
        let gap = summary_a
            .iter()
            .zip(&summary_b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(gap > 1e-3, "summaries too close: {gap}");
    }

    #[test]
    fn training_touches_only_empirical_parameters() {
        let input = step_dp(200);
        let target = planted_target(&input, PLANT);
        let model = default_model(31, &input);
        let config = GrayBoxConfig { epochs: 50, ..model.config().clone() };
        let (trained, _) = train(&model, &input, &target, &config).unwrap();

        let before: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        let after: serde_json::Value = serde_json::from_str(&trained.to_json()).unwrap();
        let empirical = ["w1", "b1", "w2", "b2"];
        let mut moved = 0;
        for (key, value) in before.as_object().unwrap() {
            if empirical.contains(&key.as_str()) {
                if value != &after[key] {
                    moved += 1;
                }
            } else {
                assert_eq!(value, &after[key], "field `{key}` must not change in training");
            }
        }
        assert!(moved > 0, "training should move the empirical weights");
    }

    #[test]
    fn json_round_trip() {
        let input = step_dp(60);
        let model = default_model(37, &input);
        let json = model.to_json();
        assert!(json.contains("\"version\": \"graybox-v1\""));
        let back = GrayBoxModel::from_json(&json).unwrap();
        assert_eq!(back, model);

        let wrong = json.replace("graybox-v1", "graybox-v0");
        assert!(matches!(
            GrayBoxModel::from_json(&wrong),
            Err(GrayBoxError::WrongVersion(_))
        ));
    }

    #[test]
    fn pooled_training_runs_over_concatenated_windows() {
        let input = step_dp(200);
        let target = planted_target(&input, PLANT);
        let model = default_model(41, &input);
        let config = GrayBoxConfig { epochs: 200, ..model.config().clone() };
        let pairs = vec![(&input, &target), (&input, &target)];
        let (_, trace) = train_pooled(&model, &pairs, &config).unwrap();
        assert!(trace.final_loss < trace.losses[0]);
    }
}
