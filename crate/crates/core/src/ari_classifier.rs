//! Template-matching ARI assignment and normo/hyper state comparison.
//!
//! A measured (or estimated) velocity is scored against the ten template
//! curves either by mean squared error or by Pearson correlation; the winning
//! template's row index is the assigned ARI. Ties break toward the lower ARI.

use serde::Serialize;
use thiserror::Error;

use crate::signal::SampledSignal;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("expected exactly 10 templates, got {0}")]
    WrongTemplateCount(usize),
    #[error("velocity and templates must share length >= 2 and sampling frequency")]
    IncompatibleSignals,
    #[error("undefined correlation: zero-variance signal")]
    UndefinedCorrelation,
}

/// Goodness-of-fit measure for template matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMetric {
    /// Minimize the mean squared error.
    Mse,
    /// Maximize the Pearson correlation.
    Correlation,
}

/// Result of matching one velocity signal against the ten templates.
#[derive(Debug, Clone, Serialize)]
pub struct AriEstimate {
    pub ari: u8,
    /// Score of the winning template (MSE value or correlation).
    pub score: f64,
    /// Score of every template, indexed by ARI.
    pub per_template_scores: Vec<f64>,
    pub metric: FitMetric,
}

/// Normo-to-hypercapnia ARI change for one subject.
#[derive(Debug, Clone, Serialize)]
pub struct StateChangeReport {
    pub subject_id: String,
    pub ari_normo: u8,
    pub ari_hyper: u8,
    /// `ari_hyper - ari_normo`.
    pub delta: i8,
    /// Magnitude of the change exceeds the 2-unit plausibility limit.
    pub exceeds_limit: bool,
    /// The index rose where hypercapnia should lower it.
    pub anomalous_increase: bool,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Pearson correlation; `None` when either side has zero variance.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Assigns an ARI by scoring `v_measured` against the ten templates.
///
/// All eleven signals must share their length (at least two samples) and
/// sampling frequency, with the measured side normalized to the templates'
/// dimensionless scale (rest level about 1). MSE mode takes the argmin,
/// correlation mode the argmax; both break ties toward the lower ARI.
pub fn classify(
    v_measured: &SampledSignal,
    templates: &[SampledSignal],
    metric: FitMetric,
) -> Result<AriEstimate, ClassifyError> {
    if templates.len() != 10 {
        return Err(ClassifyError::WrongTemplateCount(templates.len()));
    }
    let n = v_measured.len();
    let fs = v_measured.fs();
    if n < 2 || templates.iter().any(|t| t.len() != n || t.fs() != fs) {
        return Err(ClassifyError::IncompatibleSignals);
    }

    let v = v_measured.samples();
    let per_template_scores: Vec<f64> = match metric {
        FitMetric::Mse => templates.iter().map(|t| mse(v, t.samples())).collect(),
        FitMetric::Correlation => templates
            .iter()
            .map(|t| pearson(v, t.samples()).ok_or(ClassifyError::UndefinedCorrelation))
            .collect::<Result<_, _>>()?,
    };

    // Strict comparisons while scanning upward keep ties at the lower ARI.
    let mut ari = 0usize;
    for k in 1..10 {
        let better = match metric {
            FitMetric::Mse => per_template_scores[k] < per_template_scores[ari],
            FitMetric::Correlation => per_template_scores[k] > per_template_scores[ari],
        };
        if better {
            ari = k;
        }
    }

    Ok(AriEstimate {
        ari: ari as u8,
        score: per_template_scores[ari],
        per_template_scores,
        metric,
    })
}

/// Derives the state-change report for one subject from the two estimates.
pub fn compare_states(
    normo: &AriEstimate,
    hyper: &AriEstimate,
    subject_id: impl Into<String>,
) -> StateChangeReport {
    let delta = hyper.ari as i8 - normo.ari as i8;
    StateChangeReport {
        subject_id: subject_id.into(),
        ari_normo: normo.ari,
        ari_hyper: hyper.ari,
        delta,
        exceeds_limit: delta.abs() > 2,
        anomalous_increase: delta > 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aaslid_tiecks::{at_simulate, generate_templates, AriTemplateTable};
    use crate::signal::SampledSignal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn step_dp() -> SampledSignal {
        let fs = 10.0;
        let samples = (0..600)
            .map(|i| if (i as f64 / fs) < 5.0 { 0.0 } else { -0.2 })
            .collect();
        SampledSignal::new(samples, fs, "dp").unwrap()
    }

    fn estimate(normo: u8, hyper: u8) -> (AriEstimate, AriEstimate) {
        let mk = |ari| AriEstimate {
            ari,
            score: 0.0,
            per_template_scores: vec![0.0; 10],
            metric: FitMetric::Mse,
        };
        (mk(normo), mk(hyper))
    }

    #[test]
    fn self_match_is_exact() {
        let dp = step_dp();
        let templates = generate_templates(&dp, &AriTemplateTable::standard());
        let estimate = classify(&templates[5], &templates, FitMetric::Mse).unwrap();
        assert_eq!(estimate.ari, 5);
        assert_eq!(estimate.score, 0.0);
        assert_eq!(estimate.per_template_scores.len(), 10);
    }

    #[test]
    fn noiseless_round_trip_is_exact_for_every_ari() {
        let dp = step_dp();
        let table = AriTemplateTable::standard();
        let templates = generate_templates(&dp, &table);
        for k in 0..10u8 {
            let v = at_simulate(&dp, table.params_for(k));
            let est = classify(&v, &templates, FitMetric::Mse).unwrap();
            assert_eq!(est.ari, k);
            assert_eq!(est.score, 0.0);
        }
    }

    #[test]
    fn noisy_round_trip_recovers_every_ari() {
        let dp = step_dp();
        let templates = generate_templates(&dp, &AriTemplateTable::standard());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..10usize {
            let noisy: Vec<f64> = templates[k]
                .samples()
                .iter()
                .map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let noisy = SampledSignal::new(noisy, 10.0, "v").unwrap();
            for metric in [FitMetric::Mse, FitMetric::Correlation] {
                let est = classify(&noisy, &templates, metric).unwrap();
                assert_eq!(est.ari as usize, k, "metric {metric:?} missed template {k}");
            }
        }
    }

    #[test]
    fn constant_signals_tie_break_to_zero_and_break_correlation() {
        let dp = SampledSignal::new(vec![0.0; 100], 10.0, "dp").unwrap();
        let templates = generate_templates(&dp, &AriTemplateTable::standard());
        let v = SampledSignal::new(vec![1.0; 100], 10.0, "v").unwrap();

        let est = classify(&v, &templates, FitMetric::Mse).unwrap();
        assert_eq!(est.ari, 0);
        assert_eq!(est.score, 0.0);

        assert!(matches!(
            classify(&v, &templates, FitMetric::Correlation),
            Err(ClassifyError::UndefinedCorrelation)
        ));
    }

    #[test]
    fn rejects_bad_template_sets() {
        let dp = step_dp();
        let templates = generate_templates(&dp, &AriTemplateTable::standard());
        let v = templates[0].clone();
        assert!(matches!(
            classify(&v, &templates[..9], FitMetric::Mse),
            Err(ClassifyError::WrongTemplateCount(9))
        ));
        let short = SampledSignal::new(vec![1.0; 10], 10.0, "v").unwrap();
        assert!(matches!(
            classify(&short, &templates, FitMetric::Mse),
            Err(ClassifyError::IncompatibleSignals)
        ));
    }

    #[test]
    fn offset_and_scale_invariance() {
        let dp = step_dp();
        let table = AriTemplateTable::standard();
        let templates = generate_templates(&dp, &table);
        let v = at_simulate(&dp, table.params_for(6));

        let shift = |s: &SampledSignal, c: f64, a: f64| {
            SampledSignal::new(s.samples().iter().map(|x| a * x + c).collect(), s.fs(), "v")
                .unwrap()
        };

        for (offset, scale) in [(0.35, 1.0), (0.0, 2.5), (-0.1, 0.7)] {
            let v2 = shift(&v, offset, scale);
            let t2: Vec<SampledSignal> =
                templates.iter().map(|t| shift(t, offset, scale)).collect();
            let est = classify(&v2, &t2, FitMetric::Mse).unwrap();
            assert_eq!(est.ari, 6, "offset {offset} scale {scale}");
            let est = classify(&v2, &t2, FitMetric::Correlation).unwrap();
            assert_eq!(est.ari, 6, "offset {offset} scale {scale}");
        }
    }

    #[test]
    fn compare_states_examples() {
        let (n, h) = estimate(8, 8);
        let report = compare_states(&n, &h, "1");
        assert_eq!(report.delta, 0);
        assert!(!report.exceeds_limit);
        assert!(!report.anomalous_increase);

        let (n, h) = estimate(6, 7);
        let report = compare_states(&n, &h, "14");
        assert_eq!(report.delta, 1);
        assert!(!report.exceeds_limit);
        assert!(report.anomalous_increase);

        let (n, h) = estimate(9, 5);
        let report = compare_states(&n, &h, "x");
        assert_eq!(report.delta, -4);
        assert!(report.exceeds_limit);
        assert!(!report.anomalous_increase);
    }
}
