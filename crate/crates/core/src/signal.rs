//! Signal containers, CSV ingestion, baseline computation, and pressure
//! normalization.
//!
//! Subject recordings are pairs of uniformly sampled arterial blood pressure
//! (ABP, mmHg) and cerebral blood flow velocity (CBFV, cm/s) series. Pressure
//! is reduced to the dimensionless deviation
//! `dP(t) = (P(t) - P_base) / (P_base - CrCP)` before it drives any of the
//! downstream models, where `P_base` is a baseline mean over a configurable
//! window and `CrCP` is the critical closing pressure.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative jitter tolerated on the time grid of an ingested CSV.
const TIME_JITTER_REL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("sampling frequency must be positive and finite, got {0}")]
    InvalidSamplingRate(f64),
    #[error("signal must contain at least one sample")]
    EmptySignal,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("abp and cbfv must have equal length and sampling frequency")]
    MismatchedChannels,
    #[error("baseline pressure must exceed critical closing pressure: p_base={p_base}, crcp={crcp}")]
    InvalidNormalization { p_base: f64, crcp: f64 },
    #[error("window [{start_s}, {end_s}) s contains no samples")]
    EmptyWindow { start_s: f64, end_s: f64 },
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("non-uniform time grid at row {row}: step {dt} vs median {median}")]
    NonUniformTimeGrid { row: usize, dt: f64, median: f64 },
    #[error("cannot infer sampling frequency from fewer than two rows")]
    CannotInferRate,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-open time interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    /// First ten seconds, the default baseline window.
    pub fn default_baseline() -> Self {
        Self::new(0.0, 10.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Uniformly sampled real-valued time series.
///
/// Invariants enforced at construction: `fs` positive and finite, at least
/// one sample, every sample finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    fs: f64,
    label: String,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, fs: f64, label: impl Into<String>) -> Result<Self, SignalError> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(SignalError::InvalidSamplingRate(fs));
        }
        if samples.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFiniteSample { index });
        }
        Ok(Self { samples, fs, label: label.into() })
    }

    /// Construction path for computed outputs whose finiteness is
    /// guaranteed by the producing operation.
    pub(crate) fn from_computed(samples: Vec<f64>, fs: f64, label: impl Into<String>) -> Self {
        debug_assert!(fs > 0.0 && fs.is_finite());
        debug_assert!(!samples.is_empty());
        Self { samples, fs, label: label.into() }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timestamp of sample `i` in seconds.
    pub fn time_at(&self, i: usize) -> f64 {
        i as f64 / self.fs
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Copy of the sub-signal whose timestamps fall in `window`.
    pub fn slice_window(&self, window: TimeWindow) -> Result<Self, SignalError> {
        let picked: Vec<f64> = self
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| window.contains(self.time_at(*i)))
            .map(|(_, s)| *s)
            .collect();
        if picked.is_empty() {
            return Err(SignalError::EmptyWindow { start_s: window.start_s, end_s: window.end_s });
        }
        Ok(Self::from_computed(picked, self.fs, self.label.clone()))
    }
}

/// Capnia state of a recording phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapniaState {
    Normocapnia,
    Hypercapnia,
}

impl std::fmt::Display for CapniaState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CapniaState::Normocapnia => write!(f, "normocapnia"),
            CapniaState::Hypercapnia => write!(f, "hypercapnia"),
        }
    }
}

impl std::str::FromStr for CapniaState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normocapnia" | "normo" => Ok(CapniaState::Normocapnia),
            "hypercapnia" | "hyper" => Ok(CapniaState::Hypercapnia),
            other => Err(format!("unknown capnia state: {other}")),
        }
    }
}

/// One recording phase of one subject: paired ABP and CBFV channels.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub id: String,
    pub state: CapniaState,
    abp: SampledSignal,
    cbfv: SampledSignal,
}

impl SubjectRecord {
    pub fn new(
        id: impl Into<String>,
        state: CapniaState,
        abp: SampledSignal,
        cbfv: SampledSignal,
    ) -> Result<Self, SignalError> {
        if abp.len() != cbfv.len() || abp.fs() != cbfv.fs() {
            return Err(SignalError::MismatchedChannels);
        }
        Ok(Self { id: id.into(), state, abp, cbfv })
    }

    pub fn abp(&self) -> &SampledSignal {
        &self.abp
    }

    pub fn cbfv(&self) -> &SampledSignal {
        &self.cbfv
    }

    pub fn fs(&self) -> f64 {
        self.abp.fs()
    }

    pub fn len(&self) -> usize {
        self.abp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abp.is_empty()
    }
}

/// Normocapnia/hypercapnia recording pair for one subject.
#[derive(Debug, Clone)]
pub struct SubjectPair {
    pub normo: SubjectRecord,
    pub hyper: SubjectRecord,
}

/// Parameters of the pressure normalization `dP = (P - p_base)/(p_base - crcp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    p_base: f64,
    crcp: f64,
}

impl NormalizationParams {
    pub fn new(p_base: f64, crcp: f64) -> Result<Self, SignalError> {
        if !(p_base.is_finite() && crcp.is_finite()) || p_base <= crcp {
            return Err(SignalError::InvalidNormalization { p_base, crcp });
        }
        Ok(Self { p_base, crcp })
    }

    pub fn p_base(&self) -> f64 {
        self.p_base
    }

    pub fn crcp(&self) -> f64 {
        self.crcp
    }
}

/// Arithmetic mean of the samples whose timestamps fall in `window`.
pub fn baseline_mean(signal: &SampledSignal, window: TimeWindow) -> Result<f64, SignalError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, s) in signal.samples().iter().enumerate() {
        if window.contains(signal.time_at(i)) {
            sum += s;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SignalError::EmptyWindow { start_s: window.start_s, end_s: window.end_s });
    }
    Ok(sum / count as f64)
}

/// Dimensionless pressure deviation `dP(t) = (P(t) - p_base)/(p_base - crcp)`.
///
/// The output shares the input's length and sampling frequency and is zero
/// wherever the pressure sits at baseline.
pub fn normalize_pressure(abp: &SampledSignal, params: &NormalizationParams) -> SampledSignal {
    let denom = params.p_base - params.crcp;
    let samples = abp.samples().iter().map(|p| (p - params.p_base) / denom).collect();
    SampledSignal::from_computed(samples, abp.fs(), "dp")
}

/// Plain-decimal rendering with nine significant digits, the CSV writers'
/// fixed precision.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (9 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Reads a `time,abp,cbfv` CSV into a subject record.
///
/// The sampling frequency is inferred from the median time step unless
/// `fs_override` is given; the grid must be uniform within 1e-6 relative
/// jitter either way.
pub fn load_subject_csv(
    source: impl Read,
    id: impl Into<String>,
    state: CapniaState,
    fs_override: Option<f64>,
) -> Result<SubjectRecord, SignalError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    {
        let headers = reader
            .headers()
            .map_err(|e| SignalError::MalformedCsv(e.to_string()))?;
        let expected = ["time", "abp", "cbfv"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(SignalError::MalformedCsv(format!(
                "header must be `time,abp,cbfv`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut times = Vec::new();
    let mut abp = Vec::new();
    let mut cbfv = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SignalError::MalformedCsv(e.to_string()))?;
        if record.len() != 3 {
            return Err(SignalError::MalformedCsv(format!(
                "row {} has {} fields, expected 3",
                row + 1,
                record.len()
            )));
        }
        let mut parsed = [0.0f64; 3];
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                SignalError::MalformedCsv(format!("row {}: cannot parse `{field}`", row + 1))
            })?;
            if !value.is_finite() {
                return Err(SignalError::MalformedCsv(format!(
                    "row {}: non-finite value `{field}`",
                    row + 1
                )));
            }
            parsed[j] = value;
        }
        times.push(parsed[0]);
        abp.push(parsed[1]);
        cbfv.push(parsed[2]);
    }

    if times.is_empty() {
        return Err(SignalError::EmptySignal);
    }

    let fs = match fs_override {
        Some(fs) => {
            if !(fs > 0.0 && fs.is_finite()) {
                return Err(SignalError::InvalidSamplingRate(fs));
            }
            check_uniform_grid(&times)?;
            fs
        }
        None => {
            if times.len() < 2 {
                return Err(SignalError::CannotInferRate);
            }
            let median_dt = check_uniform_grid(&times)?;
            1.0 / median_dt
        }
    };

    let abp = SampledSignal::new(abp, fs, "abp")?;
    let cbfv = SampledSignal::new(cbfv, fs, "cbfv")?;
    SubjectRecord::new(id, state, abp, cbfv)
}

/// Reads a two-column `time,<value_header>` CSV into one signal, with the
/// same grid rules as the subject loader.
pub fn load_series_csv(
    source: impl Read,
    value_header: &str,
) -> Result<SampledSignal, SignalError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    {
        let headers = reader
            .headers()
            .map_err(|e| SignalError::MalformedCsv(e.to_string()))?;
        if headers.len() != 2 || &headers[0] != "time" || &headers[1] != value_header {
            return Err(SignalError::MalformedCsv(format!(
                "header must be `time,{value_header}`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SignalError::MalformedCsv(e.to_string()))?;
        if record.len() != 2 {
            return Err(SignalError::MalformedCsv(format!(
                "row {} has {} fields, expected 2",
                row + 1,
                record.len()
            )));
        }
        let parse = |field: &str| -> Result<f64, SignalError> {
            let value: f64 = field.trim().parse().map_err(|_| {
                SignalError::MalformedCsv(format!("row {}: cannot parse `{field}`", row + 1))
            })?;
            if !value.is_finite() {
                return Err(SignalError::MalformedCsv(format!(
                    "row {}: non-finite value `{field}`",
                    row + 1
                )));
            }
            Ok(value)
        };
        times.push(parse(&record[0])?);
        values.push(parse(&record[1])?);
    }
    if times.len() < 2 {
        return Err(SignalError::CannotInferRate);
    }
    let median_dt = check_uniform_grid(&times)?;
    SampledSignal::new(values, 1.0 / median_dt, value_header)
}

/// Validates strict monotone uniform spacing; returns the median step.
fn check_uniform_grid(times: &[f64]) -> Result<f64, SignalError> {
    if times.len() < 2 {
        return Ok(1.0);
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(|a, b| a.partial_cmp(b).expect("finite steps"));
    let median = steps[steps.len() / 2];
    for (row, w) in times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        if dt <= 0.0 || (dt - median).abs() > TIME_JITTER_REL * median {
            return Err(SignalError::NonUniformTimeGrid { row: row + 1, dt, median });
        }
    }
    Ok(median)
}

/// Writes a subject record in the `time,abp,cbfv` CSV contract: nine
/// significant digits, rows sorted by time.
pub fn save_subject_csv(record: &SubjectRecord, mut sink: impl Write) -> Result<(), SignalError> {
    writeln!(sink, "time,abp,cbfv")?;
    let abp = record.abp().samples();
    let cbfv = record.cbfv().samples();
    for i in 0..record.len() {
        writeln!(
            sink,
            "{},{},{}",
            format_sig9(record.abp().time_at(i)),
            format_sig9(abp[i]),
            format_sig9(cbfv[i])
        )?;
    }
    Ok(())
}
