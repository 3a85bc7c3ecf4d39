//! Seeded synthetic subjects and cohorts with known ground-truth ARI.
//!
//! Pressure is a two-level downward step (a thigh-cuff-style excursion) with
//! optional Gaussian noise; velocity is the canonical template response of
//! the planted ARI, rescaled to a physiological baseline. Hypercapnia is
//! modeled purely as a lower planted ARI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::Serialize;
use thiserror::Error;

use crate::aaslid_tiecks::{at_simulate, AriTemplateTable};
use crate::signal::{
    normalize_pressure, CapniaState, NormalizationParams, SampledSignal, SubjectPair,
    SubjectRecord,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("anomaly index {index} out of range for {n} subjects")]
    AnomalyIndexOutOfRange { index: usize, n: usize },
    #[error("planted ari must lie in 0..=9, got {0}")]
    InvalidAri(u8),
}

/// Parameters of one synthetic recording.
///
/// The velocity baseline defaults to 64 cm/s, a power of two, so that the
/// rescale to physical units is exactly invertible in floating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub fs: f64,
    pub duration_s: f64,
    pub step_time_s: f64,
    /// Fractional pressure drop at the step.
    pub step_drop: f64,
    pub baseline_pressure: f64,
    pub velocity_baseline: f64,
    /// Noise level relative to each channel's baseline.
    pub noise_sigma: f64,
    pub seed: u64,
    pub true_ari: u8,
    pub state: CapniaState,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fs: 10.0,
            duration_s: 60.0,
            step_time_s: 5.0,
            step_drop: 0.2,
            baseline_pressure: 100.0,
            velocity_baseline: 64.0,
            noise_sigma: 0.0,
            seed: 0,
            true_ari: 9,
            state: CapniaState::Normocapnia,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |msg: &str| Err(DatagenError::InvalidSpec(msg.into()));
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad("fs must be positive and finite");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.step_time_s > 0.0 && self.step_time_s < self.duration_s) {
            return bad("step time must satisfy 0 < step_time < duration");
        }
        if !(0.0..1.0).contains(&self.step_drop) {
            return bad("step drop must satisfy 0 <= drop < 1");
        }
        if !(self.baseline_pressure > 0.0 && self.velocity_baseline > 0.0) {
            return bad("baselines must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and >= 0");
        }
        if self.true_ari > 9 {
            return Err(DatagenError::InvalidAri(self.true_ari));
        }
        Ok(())
    }

    fn sample_count(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    /// Noiseless two-level pressure core.
    fn pressure_core(&self) -> Vec<f64> {
        let low = self.baseline_pressure * (1.0 - self.step_drop);
        (0..self.sample_count())
            .map(|i| {
                if (i as f64 / self.fs) < self.step_time_s {
                    self.baseline_pressure
                } else {
                    low
                }
            })
            .collect()
    }
}

/// One noise stream per channel, both derived from the spec seed.
fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_noise(samples: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).expect("valid sigma");
    for s in samples.iter_mut() {
        *s += rng.sample(dist);
    }
}

/// Synthetic arterial pressure: the step core plus seeded Gaussian noise of
/// standard deviation `noise_sigma * baseline_pressure`.
pub fn synth_pressure(spec: &SynthSpec) -> Result<SampledSignal, DatagenError> {
    spec.validate()?;
    let mut samples = spec.pressure_core();
    let mut rng = channel_rng(spec.seed, 0);
    add_noise(&mut samples, spec.noise_sigma * spec.baseline_pressure, &mut rng);
    Ok(SampledSignal::from_computed(samples, spec.fs, "abp"))
}

/// Synthetic subject: pressure from [`synth_pressure`], velocity as the
/// planted template response of the noiseless pressure core rescaled to the
/// velocity baseline, plus independent seeded noise.
pub fn synth_subject(spec: &SynthSpec) -> Result<SubjectRecord, DatagenError> {
    let abp = synth_pressure(spec)?;

    let core = SampledSignal::from_computed(spec.pressure_core(), spec.fs, "abp_core");
    let norm = NormalizationParams::new(spec.baseline_pressure, 0.0)
        .expect("baseline pressure validated positive");
    let dp = normalize_pressure(&core, &norm);
    let table = AriTemplateTable::standard();
    let velocity = at_simulate(&dp, table.params_for(spec.true_ari));

    let mut cbfv: Vec<f64> =
        velocity.samples().iter().map(|v| spec.velocity_baseline * v).collect();
    let mut rng = channel_rng(spec.seed, 1);
    add_noise(&mut cbfv, spec.noise_sigma * spec.velocity_baseline, &mut rng);
    let cbfv = SampledSignal::from_computed(cbfv, spec.fs, "cbfv");

    SubjectRecord::new(subject_label(spec), spec.state, abp, cbfv)
        .map_err(|e| DatagenError::InvalidSpec(e.to_string()))
}

fn subject_label(spec: &SynthSpec) -> String {
    format!("synth-ari{}-seed{}", spec.true_ari, spec.seed)
}

/// Parameters of a whole synthetic cohort.
#[derive(Debug, Clone)]
pub struct CohortSpec {
    pub n_subjects: usize,
    /// How many ARI units the hypercapnia phase may lose per subject.
    pub hyper_drop_choices: Vec<u8>,
    /// Optional 0-based subject whose index anomalously rises instead.
    pub anomaly_index: Option<usize>,
    pub seed: u64,
    /// Template for per-record synthesis; ari, state, and seed fields are
    /// overwritten per record.
    pub base: SynthSpec,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_subjects: 16,
            hyper_drop_choices: vec![0, 1, 2],
            anomaly_index: None,
            seed: 0,
            base: SynthSpec::default(),
        }
    }
}

/// Ground truth for one generated subject.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedSubject {
    pub id: String,
    pub normo_ari: u8,
    pub hyper_ari: u8,
    pub normo_seed: u64,
    pub hyper_seed: u64,
}

/// One manifest row per generated record.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub id: String,
    pub state: CapniaState,
    pub true_ari: u8,
    pub seed: u64,
}

/// A generated cohort with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub pairs: Vec<SubjectPair>,
    pub planted: Vec<PlantedSubject>,
}

impl SynthCohort {
    pub fn manifest_entries(&self) -> Vec<ManifestEntry> {
        self.planted
            .iter()
            .flat_map(|p| {
                [
                    ManifestEntry {
                        id: p.id.clone(),
                        state: CapniaState::Normocapnia,
                        true_ari: p.normo_ari,
                        seed: p.normo_seed,
                    },
                    ManifestEntry {
                        id: p.id.clone(),
                        state: CapniaState::Hypercapnia,
                        true_ari: p.hyper_ari,
                        seed: p.hyper_seed,
                    },
                ]
            })
            .collect()
    }
}

fn build_pair(
    base: &SynthSpec,
    id: &str,
    normo_ari: u8,
    hyper_ari: u8,
    normo_seed: u64,
    hyper_seed: u64,
) -> Result<SubjectPair, DatagenError> {
    let normo_spec = SynthSpec {
        true_ari: normo_ari,
        state: CapniaState::Normocapnia,
        seed: normo_seed,
        ..base.clone()
    };
    let hyper_spec = SynthSpec {
        true_ari: hyper_ari,
        state: CapniaState::Hypercapnia,
        seed: hyper_seed,
        ..base.clone()
    };
    let mut normo = synth_subject(&normo_spec)?;
    let mut hyper = synth_subject(&hyper_spec)?;
    normo.id = id.to_string();
    hyper.id = id.to_string();
    Ok(SubjectPair { normo, hyper })
}

/// Generates a cohort with randomly planted ARIs: normocapnia from 6..=9,
/// hypercapnia lower by a drawn drop (clamped at zero). The anomaly subject,
/// if any, instead gains one unit.
pub fn synth_cohort(spec: &CohortSpec) -> Result<SynthCohort, DatagenError> {
    if spec.n_subjects == 0 {
        return Err(DatagenError::InvalidSpec("cohort needs at least one subject".into()));
    }
    if spec.hyper_drop_choices.is_empty() {
        return Err(DatagenError::InvalidSpec("hyper_drop_choices must not be empty".into()));
    }
    if let Some(index) = spec.anomaly_index {
        if index >= spec.n_subjects {
            return Err(DatagenError::AnomalyIndexOutOfRange { index, n: spec.n_subjects });
        }
    }
    spec.base.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.n_subjects);
    let mut planted = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let (normo_ari, hyper_ari) = if spec.anomaly_index == Some(i) {
            // Drawn from 6..=8 so the anomalous +1 stays on the scale.
            let normo = rng.gen_range(6..=8u8);
            (normo, normo + 1)
        } else {
            let normo = rng.gen_range(6..=9u8);
            let drop = spec.hyper_drop_choices[rng.gen_range(0..spec.hyper_drop_choices.len())];
            (normo, normo.saturating_sub(drop))
        };
        let normo_seed = rng.gen::<u64>();
        let hyper_seed = rng.gen::<u64>();
        let id = format!("{:02}", i + 1);
        pairs.push(build_pair(&spec.base, &id, normo_ari, hyper_ari, normo_seed, hyper_seed)?);
        planted.push(PlantedSubject { id, normo_ari, hyper_ari, normo_seed, hyper_seed });
    }
    Ok(SynthCohort { pairs, planted })
}

/// Generates a cohort with explicitly planted (normo, hyper) ARI pairs, one
/// subject per entry.
pub fn synth_cohort_from_pairs(
    planted_pairs: &[(u8, u8)],
    base: &SynthSpec,
    seed: u64,
) -> Result<SynthCohort, DatagenError> {
    if planted_pairs.is_empty() {
        return Err(DatagenError::InvalidSpec("cohort needs at least one subject".into()));
    }
    base.validate()?;
    for (normo, hyper) in planted_pairs {
        if *normo > 9 {
            return Err(DatagenError::InvalidAri(*normo));
        }
        if *hyper > 9 {
            return Err(DatagenError::InvalidAri(*hyper));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(planted_pairs.len());
    let mut planted = Vec::with_capacity(planted_pairs.len());
    for (i, (normo_ari, hyper_ari)) in planted_pairs.iter().enumerate() {
        let normo_seed = rng.gen::<u64>();
        let hyper_seed = rng.gen::<u64>();
        let id = format!("{:02}", i + 1);
        pairs.push(build_pair(base, &id, *normo_ari, *hyper_ari, normo_seed, hyper_seed)?);
        planted.push(PlantedSubject {
            id,
            normo_ari: *normo_ari,
            hyper_ari: *hyper_ari,
            normo_seed,
            hyper_seed,
        });
    }
    Ok(SynthCohort { pairs, planted })
}
