//! End-to-end hybrid flow: pressure normalization, velocity estimation,
//! template generation, ARI assignment, and cohort evaluation.
//!
//! The empirical estimators (FIR, gray-box) relate the pressure deviation
//! `dP` to the velocity deviation `v - 1`; the unit rest level is restored
//! before template matching. Estimators that need a full seven-sample window
//! drop the first six samples, and the templates are trimmed identically so
//! every comparison shares its support.

use serde::Serialize;
use thiserror::Error;

use crate::aaslid_tiecks::{generate_templates, AriTemplateTable};
use crate::ari_classifier::{
    classify, compare_states, AriEstimate, ClassifyError, FitMetric, StateChangeReport,
};
use crate::fir_simpson::{fir_fit, fir_predict, FirCoefficients, FirError, FIR_TAPS};
use crate::graybox::{train, GrayBoxConfig, GrayBoxError, GrayBoxModel, TrainingTrace};
use crate::signal::{
    baseline_mean, normalize_pressure, NormalizationParams, SampledSignal, SignalError,
    SubjectPair, SubjectRecord, TimeWindow,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Fir(#[from] FirError),
    #[error(transparent)]
    GrayBox(#[from] GrayBoxError),
    #[error("velocity baseline must be positive, got {0}")]
    NonPositiveVelocityBaseline(f64),
    #[error("unmatched cohort pair `{id}`: need normocapnia and hypercapnia records sharing one subject id")]
    UnmatchedPair { id: String },
}

/// Which velocity estimate feeds the template matcher.
#[derive(Debug, Clone)]
pub enum EstimatorChoice {
    /// The measured CBFV, normalized by its baseline mean.
    MeasuredVelocity,
    /// A fixed FIR filter applied to the pressure deviation.
    Fir(FirCoefficients),
    /// A trained gray-box model applied to the pressure deviation.
    GrayBox(GrayBoxModel),
}

/// Knobs shared by every pipeline run.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    /// Critical closing pressure in mmHg.
    pub crcp: f64,
    /// Window for the automatic pressure and velocity baselines.
    pub baseline_window: TimeWindow,
    /// Optional comparison trim on the original time axis, for excluding
    /// the pre-step baseline from matching.
    pub trim: Option<TimeWindow>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { crcp: 0.0, baseline_window: TimeWindow::default_baseline(), trim: None }
    }
}

/// Tallies over a cohort's rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CohortSummary {
    pub exceeds_limit: usize,
    pub anomalous_increase: usize,
}

/// Per-subject state changes plus their summary counts.
#[derive(Debug, Clone, Serialize)]
pub struct CohortReport {
    pub rows: Vec<StateChangeReport>,
    pub summary: CohortSummary,
}

impl CohortReport {
    fn from_rows(mut rows: Vec<StateChangeReport>) -> Self {
        rows.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        let summary = CohortSummary {
            exceeds_limit: rows.iter().filter(|r| r.exceeds_limit).count(),
            anomalous_increase: rows.iter().filter(|r| r.anomalous_increase).count(),
        };
        Self { rows, summary }
    }

    /// Fixed-width text table in the two-column subject layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:<9}{:>6}{:>7}{:>7}  {:<6}",
            "subject", "normo", "hyper", "delta", "flags"
        );
        out.push_str(&format!("{header}   {header}\n"));

        let half = self.rows.len().div_ceil(2);
        let fmt_row = |r: &StateChangeReport| {
            let mut flags = String::new();
            if r.anomalous_increase {
                flags.push('^');
            }
            if r.exceeds_limit {
                flags.push('!');
            }
            format!(
                "{:<9}{:>6}{:>7}{:>7}  {:<6}",
                r.subject_id, r.ari_normo, r.ari_hyper, r.delta, flags
            )
        };
        for i in 0..half {
            let left = fmt_row(&self.rows[i]);
            match self.rows.get(half + i) {
                Some(right) => out.push_str(&format!("{left}   {}\n", fmt_row(right))),
                None => out.push_str(&format!("{left}\n")),
            }
        }
        out.push_str(&format!(
            "anomalous increases (^): {}   |delta| > 2 (!): {}\n",
            self.summary.anomalous_increase, self.summary.exceeds_limit
        ));
        out
    }
}

/// Pressure deviation of a record under explicit or automatic normalization.
fn pressure_deviation(
    record: &SubjectRecord,
    norm: Option<NormalizationParams>,
    config: &AnalysisConfig,
) -> Result<SampledSignal, PipelineError> {
    let params = match norm {
        Some(params) => params,
        None => {
            let p_base = baseline_mean(record.abp(), config.baseline_window)?;
            NormalizationParams::new(p_base, config.crcp)?
        }
    };
    Ok(normalize_pressure(record.abp(), &params))
}

/// Measured velocity normalized so its rest level is 1.
fn normalized_velocity(
    record: &SubjectRecord,
    config: &AnalysisConfig,
) -> Result<SampledSignal, PipelineError> {
    let v_base = baseline_mean(record.cbfv(), config.baseline_window)?;
    if v_base <= 0.0 {
        return Err(PipelineError::NonPositiveVelocityBaseline(v_base));
    }
    let samples = record.cbfv().samples().iter().map(|v| v / v_base).collect();
    Ok(SampledSignal::from_computed(samples, record.fs(), "v_norm"))
}

fn tail(signal: &SampledSignal, skip: usize) -> SampledSignal {
    SampledSignal::from_computed(
        signal.samples()[skip..].to_vec(),
        signal.fs(),
        signal.label().to_string(),
    )
}

/// Keeps the samples of an estimator output whose original-axis timestamps
/// fall in `window`; `offset` is the output's first original index.
fn trim_to_window(
    signal: &SampledSignal,
    offset: usize,
    window: TimeWindow,
) -> Result<SampledSignal, PipelineError> {
    let fs = signal.fs();
    let picked: Vec<f64> = signal
        .samples()
        .iter()
        .enumerate()
        .filter(|(j, _)| window.contains((j + offset) as f64 / fs))
        .map(|(_, s)| *s)
        .collect();
    if picked.is_empty() {
        return Err(SignalError::EmptyWindow { start_s: window.start_s, end_s: window.end_s }.into());
    }
    Ok(SampledSignal::from_computed(picked, fs, signal.label().to_string()))
}

/// Runs the full flow for one record: normalize, estimate the velocity,
/// generate the ten templates from the same pressure, and classify.
pub fn estimate_ari(
    record: &SubjectRecord,
    estimator: &EstimatorChoice,
    metric: FitMetric,
    norm: Option<NormalizationParams>,
    config: &AnalysisConfig,
) -> Result<AriEstimate, PipelineError> {
    let dp = pressure_deviation(record, norm, config)?;
    let templates = generate_templates(&dp, &AriTemplateTable::standard());

    let (velocity, offset) = match estimator {
        EstimatorChoice::MeasuredVelocity => (normalized_velocity(record, config)?, 0usize),
        EstimatorChoice::Fir(h) => {
            let deviation = fir_predict(h, &dp)?;
            let samples = deviation.samples().iter().map(|d| 1.0 + d).collect();
            (SampledSignal::from_computed(samples, dp.fs(), "v_fir"), FIR_TAPS - 1)
        }
        EstimatorChoice::GrayBox(model) => {
            let deviation = model.predict(&dp)?;
            let samples = deviation.samples().iter().map(|d| 1.0 + d).collect();
            (SampledSignal::from_computed(samples, dp.fs(), "v_graybox"), FIR_TAPS - 1)
        }
    };

    let mut aligned: Vec<SampledSignal> =
        templates.iter().map(|t| tail(t, offset)).collect();
    let mut velocity = velocity;
    if let Some(window) = config.trim {
        velocity = trim_to_window(&velocity, offset, window)?;
        aligned = aligned
            .iter()
            .map(|t| trim_to_window(t, offset, window))
            .collect::<Result<_, _>>()?;
    }

    Ok(classify(&velocity, &aligned, metric)?)
}

/// Fits the seven-tap filter of one record on the deviation pair
/// `(dP, v/v_base - 1)`, the form consumed by the FIR estimator.
pub fn fit_record_fir(
    record: &SubjectRecord,
    ridge: f64,
    norm: Option<NormalizationParams>,
    config: &AnalysisConfig,
) -> Result<FirCoefficients, PipelineError> {
    let dp = pressure_deviation(record, norm, config)?;
    let v = normalized_velocity(record, config)?;
    let deviation = SampledSignal::from_computed(
        v.samples().iter().map(|x| x - 1.0).collect(),
        v.fs(),
        "v_dev",
    );
    Ok(fir_fit(&dp, &deviation, ridge)?)
}

/// Initializes and trains a per-subject gray-box model on the deviation
/// pair, fixing the standardization stats from the training pressure.
pub fn train_record_graybox(
    record: &SubjectRecord,
    gb_config: &GrayBoxConfig,
    norm: Option<NormalizationParams>,
    config: &AnalysisConfig,
) -> Result<(GrayBoxModel, TrainingTrace), PipelineError> {
    let dp = pressure_deviation(record, norm, config)?;
    let v = normalized_velocity(record, config)?;
    let deviation = SampledSignal::from_computed(
        v.samples().iter().map(|x| x - 1.0).collect(),
        v.fs(),
        "v_dev",
    );
    let model = GrayBoxModel::init(gb_config)?.with_input_stats(&dp);
    Ok(train(&model, &dp, &deviation, gb_config)?)
}

/// Deviation pairs `(dP, v/v_base - 1)` for several records, each under its
/// own automatic baseline.
fn deviation_pairs(
    records: &[SubjectRecord],
    config: &AnalysisConfig,
) -> Result<Vec<(SampledSignal, SampledSignal)>, PipelineError> {
    records
        .iter()
        .map(|record| {
            let dp = pressure_deviation(record, None, config)?;
            let v = normalized_velocity(record, config)?;
            let deviation = SampledSignal::from_computed(
                v.samples().iter().map(|x| x - 1.0).collect(),
                v.fs(),
                "v_dev",
            );
            Ok((dp, deviation))
        })
        .collect()
}

/// Common-coefficients identification: one filter fit on the concatenated
/// windows of several subjects.
pub fn fit_records_fir(
    records: &[SubjectRecord],
    ridge: f64,
    config: &AnalysisConfig,
) -> Result<FirCoefficients, PipelineError> {
    let pairs = deviation_pairs(records, config)?;
    let borrowed: Vec<(&SampledSignal, &SampledSignal)> =
        pairs.iter().map(|(p, v)| (p, v)).collect();
    Ok(crate::fir_simpson::fir_fit_pooled(&borrowed, ridge)?)
}

/// Pooled-training variant: one gray-box model trained on the concatenated
/// windows of several subjects, stats fixed from the concatenated pressure.
pub fn train_records_graybox(
    records: &[SubjectRecord],
    gb_config: &GrayBoxConfig,
    config: &AnalysisConfig,
) -> Result<(GrayBoxModel, TrainingTrace), PipelineError> {
    let pairs = deviation_pairs(records, config)?;
    let all_dp: Vec<f64> =
        pairs.iter().flat_map(|(p, _)| p.samples().iter().copied()).collect();
    let stats = crate::graybox::NormStats::from_samples(&all_dp);
    let model = GrayBoxModel::init(gb_config)?.with_norm_stats(stats);
    let borrowed: Vec<(&SampledSignal, &SampledSignal)> =
        pairs.iter().map(|(p, v)| (p, v)).collect();
    Ok(crate::graybox::train_pooled(&model, &borrowed, gb_config)?)
}

/// Evaluates every pair with the same estimator and metric and assembles the
/// state-change report, rows ordered by subject id.
pub fn evaluate_cohort(
    pairs: &[SubjectPair],
    estimator: &EstimatorChoice,
    metric: FitMetric,
    config: &AnalysisConfig,
) -> Result<CohortReport, PipelineError> {
    use crate::signal::CapniaState;

    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let matched = pair.normo.id == pair.hyper.id
            && pair.normo.state == CapniaState::Normocapnia
            && pair.hyper.state == CapniaState::Hypercapnia;
        if !matched {
            return Err(PipelineError::UnmatchedPair { id: pair.normo.id.clone() });
        }
        let normo = estimate_ari(&pair.normo, estimator, metric, None, config)?;
        let hyper = estimate_ari(&pair.hyper, estimator, metric, None, config)?;
        rows.push(compare_states(&normo, &hyper, pair.normo.id.clone()));
    }
    Ok(CohortReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_cohort_from_pairs, synth_subject, SynthSpec};
    use crate::signal::CapniaState;

    /// Baseline window covering exactly the pre-step plateau of the default
    /// synthetic step.
    fn step_config() -> AnalysisConfig {
        AnalysisConfig { baseline_window: TimeWindow::new(0.0, 5.0), ..Default::default() }
    }

    fn noiseless_subject(true_ari: u8, seed: u64) -> SubjectRecord {
        synth_subject(&SynthSpec { true_ari, seed, ..SynthSpec::default() }).unwrap()
    }

    #[test]
    fn measured_round_trip_is_exact_for_every_ari() {
        let config = step_config();
        for k in 0..10u8 {
            let record = noiseless_subject(k, 5);
            let est = estimate_ari(
                &record,
                &EstimatorChoice::MeasuredVelocity,
                FitMetric::Mse,
                None,
                &config,
            )
            .unwrap();
            assert_eq!(est.ari, k);
            assert_eq!(est.score, 0.0, "planted {k}: score {}", est.score);
        }
    }

    #[test]
    fn constant_record_ties_to_zero() {
        let abp = SampledSignal::new(vec![100.0; 100], 10.0, "abp").unwrap();
        let cbfv = SampledSignal::new(vec![64.0; 100], 10.0, "cbfv").unwrap();
        let record = SubjectRecord::new("c", CapniaState::Normocapnia, abp, cbfv).unwrap();
        let est = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            None,
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(est.ari, 0);
        assert_eq!(est.score, 0.0);
    }

    #[test]
    fn explicit_norm_params_match_auto_on_plateau() {
        let record = noiseless_subject(7, 3);
        let config = step_config();
        let auto = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            None,
            &config,
        )
        .unwrap();
        let explicit = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            Some(NormalizationParams::new(100.0, 0.0).unwrap()),
            &config,
        )
        .unwrap();
        assert_eq!(auto.ari, explicit.ari);
        assert_eq!(auto.per_template_scores, explicit.per_template_scores);
    }

    #[test]
    fn fir_route_aligns_supports() {
        let record = noiseless_subject(3, 9);
        let config = step_config();
        let h = fit_record_fir(&record, 0.0, None, &config).unwrap();
        let est =
            estimate_ari(&record, &EstimatorChoice::Fir(h), FitMetric::Mse, None, &config)
                .unwrap();
        assert_eq!(est.per_template_scores.len(), 10);
    }

    /// Frozen behavior of the seven-tap FIR route on noiseless steps: its
    /// 0.7 s memory reproduces the low-regulation responses exactly but
    /// cannot express the multi-second recovery of the high rows, which
    /// saturate toward the top of the scale.
    #[test]
    fn fir_route_consistency_and_saturation() {
        const FROZEN_FIR_ESTIMATES: [u8; 10] = [0, 1, 2, 3, 4, 8, 9, 9, 9, 9];
        let config = step_config();
        for k in 0..10u8 {
            let record = noiseless_subject(k, 5);
            let measured = estimate_ari(
                &record,
                &EstimatorChoice::MeasuredVelocity,
                FitMetric::Mse,
                None,
                &config,
            )
            .unwrap();
            let h = fit_record_fir(&record, 0.0, None, &config).unwrap();
            let fir = estimate_ari(&record, &EstimatorChoice::Fir(h), FitMetric::Mse, None, &config)
                .unwrap();
            assert_eq!(measured.ari, k);
            assert_eq!(
                fir.ari, FROZEN_FIR_ESTIMATES[k as usize],
                "planted {k} drifted from the frozen filter-route estimate"
            );
        }
    }

    #[test]
    fn noise_tolerance_within_one_unit() {
        // Measured 100/100 on this seed grid; frozen as the regression gate.
        const FROZEN_HIT_COUNT: usize = 100;
        let config = step_config();
        let mut hits = 0;
        for k in 0..10u8 {
            for seed in 0..10u64 {
                let record = synth_subject(&SynthSpec {
                    true_ari: k,
                    seed: 1000 + 17 * seed + k as u64,
                    noise_sigma: 0.01,
                    ..SynthSpec::default()
                })
                .unwrap();
                let est = estimate_ari(
                    &record,
                    &EstimatorChoice::MeasuredVelocity,
                    FitMetric::Mse,
                    None,
                    &config,
                )
                .unwrap();
                if (est.ari as i8 - k as i8).abs() <= 1 {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 95, "recovered within one unit only {hits}/100 times");
        assert_eq!(hits, FROZEN_HIT_COUNT, "recovery rate drifted from the frozen measurement");
    }

    #[test]
    fn trim_window_excludes_baseline() {
        let record = noiseless_subject(8, 2);
        let config = AnalysisConfig {
            baseline_window: TimeWindow::new(0.0, 5.0),
            trim: Some(TimeWindow::new(5.0, 60.0)),
            ..Default::default()
        };
        let est = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            None,
            &config,
        )
        .unwrap();
        assert_eq!(est.ari, 8);
        assert_eq!(est.score, 0.0);
    }

    #[test]
    fn cohort_reproduces_planted_reference_pairs() {
        // The sixteen (normo, hyper) pairs of the reference cohort; exactly
        // one subject (14) rises and none move more than two units.
        let planted: [(u8, u8); 16] = [
            (8, 8),
            (8, 8),
            (8, 6),
            (8, 8),
            (7, 7),
            (8, 8),
            (7, 6),
            (8, 7),
            (9, 8),
            (8, 8),
            (7, 6),
            (7, 6),
            (7, 7),
            (6, 7),
            (8, 8),
            (8, 8),
        ];
        let cohort = synth_cohort_from_pairs(&planted, &SynthSpec::default(), 42).unwrap();
        let report = evaluate_cohort(
            &cohort.pairs,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .unwrap();

        assert_eq!(report.rows.len(), 16);
        for (row, (normo, hyper)) in report.rows.iter().zip(&planted) {
            assert_eq!(row.ari_normo, *normo, "subject {}", row.subject_id);
            assert_eq!(row.ari_hyper, *hyper, "subject {}", row.subject_id);
        }
        assert_eq!(report.summary.anomalous_increase, 1);
        assert_eq!(report.summary.exceeds_limit, 0);
        let anomalous: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| r.anomalous_increase)
            .map(|r| r.subject_id.as_str())
            .collect();
        assert_eq!(anomalous, ["14"]);
    }

    #[test]
    fn empty_cohort_yields_empty_report() {
        let report = evaluate_cohort(
            &[],
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.summary, CohortSummary::default());
    }

    #[test]
    fn large_drop_counts_as_limit_violation() {
        let cohort = synth_cohort_from_pairs(&[(9, 5)], &SynthSpec::default(), 3).unwrap();
        let report = evaluate_cohort(
            &cohort.pairs,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .unwrap();
        assert_eq!(report.summary.exceeds_limit, 1);
        assert_eq!(report.rows[0].delta, -4);
    }

    #[test]
    fn unmatched_pair_is_rejected() {
        let cohort = synth_cohort_from_pairs(&[(8, 7)], &SynthSpec::default(), 4).unwrap();
        let mut pair = cohort.pairs[0].clone();
        pair.hyper.id = "other".into();
        let err = evaluate_cohort(
            &[pair],
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::UnmatchedPair { .. }));

        let mut pair = cohort.pairs[0].clone();
        pair.hyper.state = CapniaState::Normocapnia;
        assert!(evaluate_cohort(
            &[pair],
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .is_err());
    }

    #[test]
    fn report_summary_matches_rows() {
        let cohort = synth_cohort_from_pairs(
            &[(8, 8), (9, 5), (6, 7), (7, 6)],
            &SynthSpec::default(),
            11,
        )
        .unwrap();
        let report = evaluate_cohort(
            &cohort.pairs,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .unwrap();
        let exceeds = report.rows.iter().filter(|r| r.exceeds_limit).count();
        let rises = report.rows.iter().filter(|r| r.anomalous_increase).count();
        assert_eq!(report.summary.exceeds_limit, exceeds);
        assert_eq!(report.summary.anomalous_increase, rises);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let record = synth_subject(&SynthSpec {
            noise_sigma: 0.01,
            seed: 21,
            true_ari: 6,
            ..SynthSpec::default()
        })
        .unwrap();
        let config = step_config();
        let a = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            None,
            &config,
        )
        .unwrap();
        let b = estimate_ari(
            &record,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            None,
            &config,
        )
        .unwrap();
        assert_eq!(a.ari, b.ari);
        assert_eq!(a.per_template_scores, b.per_template_scores);
    }

    #[test]
    fn table_rendering_mirrors_two_column_layout() {
        let cohort = synth_cohort_from_pairs(
            &[(8, 8), (9, 8), (7, 6), (6, 7)],
            &SynthSpec::default(),
            13,
        )
        .unwrap();
        let report = evaluate_cohort(
            &cohort.pairs,
            &EstimatorChoice::MeasuredVelocity,
            FitMetric::Mse,
            &step_config(),
        )
        .unwrap();
        let table = report.render_table();
        let lines: Vec<&str> = table.lines().collect();
        // Header, two subject rows holding four subjects, one summary line.
        assert_eq!(lines.len(), 4);
        assert!(lines[0].matches("subject").count() == 2);
        assert!(lines[1].contains("01") && lines[1].contains("03"));
        assert!(lines[2].contains("02") && lines[2].contains("04"));
        assert!(lines[3].contains("anomalous increases (^): 1"));
        assert!(lines[3].contains("|delta| > 2 (!): 0"));
    }
}
