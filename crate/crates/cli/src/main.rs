//! Command-line interface for the autoregulation index pipeline.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use autoreg_core::aaslid_tiecks::{generate_templates, AriTemplateTable};
use autoreg_core::ari_classifier::FitMetric;
use autoreg_core::datagen::{
    synth_cohort, synth_cohort_from_pairs, synth_subject, CohortSpec, SynthSpec,
};
use autoreg_core::fir_simpson::FirCoefficients;
use autoreg_core::graybox::{GrayBoxConfig, GrayBoxModel};
use autoreg_core::pipeline::{
    estimate_ari, evaluate_cohort, fit_records_fir, train_record_graybox, train_records_graybox,
    AnalysisConfig, EstimatorChoice,
};
use autoreg_core::signal::{
    format_sig9, load_series_csv, load_subject_csv, save_subject_csv, CapniaState, SampledSignal,
    SubjectRecord, TimeWindow,
};

#[derive(Parser)]
#[command(
    name = "autoreg",
    about = "Cerebral autoregulation index estimation from pressure and flow velocity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the ten template velocity curves as a CSV (time + ari0..ari9).
    Templates(TemplatesArgs),
    /// Assign an ARI to one subject recording.
    Classify(ClassifyArgs),
    /// Identify seven FIR taps from one or more subject recordings.
    FitFir(FitFirArgs),
    /// Train a gray-box velocity model on one or more subject recordings.
    Train(TrainArgs),
    /// Generate a synthetic subject recording.
    Synth(SynthArgs),
    /// Generate and evaluate a synthetic cohort.
    Cohort(CohortArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Mse,
    Correlation,
}

impl From<MetricArg> for FitMetric {
    fn from(metric: MetricArg) -> Self {
        match metric {
            MetricArg::Mse => FitMetric::Mse,
            MetricArg::Correlation => FitMetric::Correlation,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Measured,
    Fir,
    Graybox,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StateArg {
    Normocapnia,
    Hypercapnia,
}

impl From<StateArg> for CapniaState {
    fn from(state: StateArg) -> Self {
        match state {
            StateArg::Normocapnia => CapniaState::Normocapnia,
            StateArg::Hypercapnia => CapniaState::Hypercapnia,
        }
    }
}

/// Flags shared by every command that re-analyzes a recording.
#[derive(Args)]
struct AnalysisArgs {
    /// Critical closing pressure in mmHg.
    #[arg(long, default_value_t = 0.0)]
    crcp: f64,
    /// Baseline window length in seconds, starting at t = 0.
    #[arg(long, default_value_t = 10.0)]
    baseline_window: f64,
    /// Sampling frequency override in Hz; inferred from the time column
    /// otherwise.
    #[arg(long)]
    fs: Option<f64>,
}

impl AnalysisArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            crcp: self.crcp,
            baseline_window: TimeWindow::new(0.0, self.baseline_window),
            trim: None,
        }
    }
}

#[derive(Args)]
struct TemplatesArgs {
    /// Pressure-deviation source as a `time,dp` CSV; a synthetic step is
    /// used when absent.
    #[arg(long)]
    dp_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    fs: f64,
    /// Duration of the synthetic step input in seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Step onset in seconds.
    #[arg(long, default_value_t = 5.0)]
    step_time: f64,
    /// Fractional pressure drop at the step.
    #[arg(long, default_value_t = 0.2)]
    step_drop: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    subject_csv: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Mse)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Measured)]
    estimator: EstimatorArg,
    /// FIR coefficients file (JSON array), required with `--estimator fir`.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    /// Gray-box model file, required with `--estimator graybox`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Capnia state recorded in the subject metadata.
    #[arg(long, value_enum, default_value_t = StateArg::Normocapnia)]
    state: StateArg,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CoeffFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct FitFirArgs {
    /// One or more subject CSVs; several files share one common filter.
    #[arg(required = true)]
    subject_csvs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, value_enum, default_value_t = CoeffFormat::Json)]
    format: CoeffFormat,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// One or more subject CSVs; several files train one pooled model.
    #[arg(required = true)]
    subject_csvs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    hidden_width: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, env = "AUTOREG_SEED", default_value_t = 0)]
    seed: u64,
    /// Uniform initialization half-width; per-layer 1/sqrt(fan_in) when
    /// absent.
    #[arg(long)]
    init_scale: Option<f64>,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Model output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-epoch loss trace as an `epoch,loss` CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=9))]
    true_ari: u8,
    #[arg(long, value_enum, default_value_t = StateArg::Normocapnia)]
    state: StateArg,
    #[arg(long, default_value_t = 10.0)]
    fs: f64,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 5.0)]
    step_time: f64,
    #[arg(long, default_value_t = 0.2)]
    step_drop: f64,
    #[arg(long, default_value_t = 100.0)]
    baseline_pressure: f64,
    #[arg(long, default_value_t = 64.0)]
    velocity_baseline: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, env = "AUTOREG_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Args)]
struct CohortArgs {
    /// Number of randomly planted subjects.
    #[arg(long, default_value_t = 16)]
    subjects: usize,
    /// Explicit planted pairs like `8:8,9:8,7:6`; overrides random planting.
    #[arg(long)]
    pairs: Option<String>,
    /// 0-based subject whose index anomalously rises.
    #[arg(long)]
    anomaly_index: Option<usize>,
    /// Candidate ARI drops for the hypercapnia phase.
    #[arg(long, default_value = "0,1,2")]
    drop_choices: String,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, env = "AUTOREG_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MetricArg::Mse)]
    metric: MetricArg,
    #[command(flatten)]
    analysis: AnalysisArgs,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every record as a CSV plus a `manifest.json` here.
    #[arg(long)]
    emit_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Templates(args) => cmd_templates(args),
        Command::Classify(args) => cmd_classify(args),
        Command::FitFir(args) => cmd_fit_fir(args),
        Command::Train(args) => cmd_train(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Cohort(args) => cmd_cohort(args),
    }
}

/// Writes to the output path or stdout.
fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn load_subject(path: &Path, state: CapniaState, fs: Option<f64>) -> Result<SubjectRecord> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    load_subject_csv(file, id, state, fs)
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn load_subjects(paths: &[PathBuf], fs: Option<f64>) -> Result<Vec<SubjectRecord>> {
    paths.iter().map(|p| load_subject(p, CapniaState::Normocapnia, fs)).collect()
}

fn cmd_templates(args: TemplatesArgs) -> Result<()> {
    let dp = match &args.dp_csv {
        Some(path) => {
            let file =
                File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            load_series_csv(file, "dp")?
        }
        None => {
            if !(args.step_time > 0.0 && args.step_time < args.duration) {
                bail!("step time must satisfy 0 < step_time < duration");
            }
            let n = (args.duration * args.fs).round() as usize;
            let samples: Vec<f64> = (0..n)
                .map(|i| if (i as f64 / args.fs) < args.step_time { 0.0 } else { -args.step_drop })
                .collect();
            SampledSignal::new(samples, args.fs, "dp")?
        }
    };

    let templates = generate_templates(&dp, &AriTemplateTable::standard());
    let mut content = String::from("time");
    for k in 0..10 {
        content.push_str(&format!(",ari{k}"));
    }
    content.push('\n');
    for i in 0..dp.len() {
        content.push_str(&format_sig9(dp.time_at(i)));
        for template in &templates {
            content.push(',');
            content.push_str(&format_sig9(template.samples()[i]));
        }
        content.push('\n');
    }
    emit(args.out.as_deref(), &content)
}

fn cmd_classify(args: ClassifyArgs) -> Result<()> {
    let record = load_subject(&args.subject_csv, args.state.into(), args.analysis.fs)?;
    let estimator = match args.estimator {
        EstimatorArg::Measured => EstimatorChoice::MeasuredVelocity,
        EstimatorArg::Fir => {
            let path = args.coeffs.as_ref().context("--estimator fir needs --coeffs")?;
            let json = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let h: FirCoefficients = serde_json::from_str(&json)
                .with_context(|| format!("cannot parse coefficients in {}", path.display()))?;
            EstimatorChoice::Fir(h)
        }
        EstimatorArg::Graybox => {
            let path = args.model.as_ref().context("--estimator graybox needs --model")?;
            let json = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            EstimatorChoice::GrayBox(GrayBoxModel::from_json(&json)?)
        }
    };

    let estimate =
        estimate_ari(&record, &estimator, args.metric.into(), None, &args.analysis.config())?;
    let mut json = serde_json::to_string_pretty(&estimate)?;
    json.push('\n');
    emit(args.out.as_deref(), &json)
}

fn cmd_fit_fir(args: FitFirArgs) -> Result<()> {
    let records = load_subjects(&args.subject_csvs, args.analysis.fs)?;
    let h = fit_records_fir(&records, args.ridge, &args.analysis.config())?;
    let content = match args.format {
        CoeffFormat::Json => {
            let mut json = serde_json::to_string(&h)?;
            json.push('\n');
            json
        }
        CoeffFormat::Csv => {
            let row: Vec<String> = h.taps().iter().map(|t| format!("{t}")).collect();
            format!("{}\n", row.join(","))
        }
    };
    emit(args.out.as_deref(), &content)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let records = load_subjects(&args.subject_csvs, args.analysis.fs)?;
    let gb_config = GrayBoxConfig {
        hidden_width: args.hidden_width,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        seed: args.seed,
        init_scale: args.init_scale,
        ..GrayBoxConfig::default()
    };
    let config = args.analysis.config();
    let (model, trace) = if records.len() == 1 {
        train_record_graybox(&records[0], &gb_config, None, &config)?
    } else {
        train_records_graybox(&records, &gb_config, &config)?
    };

    if let Some(path) = &args.trace_out {
        let mut content = String::from("epoch,loss\n");
        for (epoch, loss) in trace.losses.iter().enumerate() {
            content.push_str(&format!("{epoch},{loss}\n"));
        }
        fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let mut json = model.to_json();
    json.push('\n');
    emit(args.out.as_deref(), &json)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        fs: args.fs,
        duration_s: args.duration,
        step_time_s: args.step_time,
        step_drop: args.step_drop,
        baseline_pressure: args.baseline_pressure,
        velocity_baseline: args.velocity_baseline,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
        true_ari: args.true_ari,
        state: args.state.into(),
    };
    let record = synth_subject(&spec)?;
    let mut buf = Vec::new();
    save_subject_csv(&record, &mut buf)?;
    emit(args.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn parse_planted_pairs(text: &str) -> Result<Vec<(u8, u8)>> {
    text.split(',')
        .map(|chunk| {
            let (normo, hyper) = chunk
                .trim()
                .split_once(':')
                .with_context(|| format!("pair `{chunk}` must look like `8:7`"))?;
            Ok((normo.trim().parse()?, hyper.trim().parse()?))
        })
        .collect()
}

fn cmd_cohort(args: CohortArgs) -> Result<()> {
    let base = SynthSpec { noise_sigma: args.noise_sigma, ..SynthSpec::default() };
    let cohort = match &args.pairs {
        Some(text) => synth_cohort_from_pairs(&parse_planted_pairs(text)?, &base, args.seed)?,
        None => {
            let drops: Vec<u8> = args
                .drop_choices
                .split(',')
                .map(|d| d.trim().parse().context("bad --drop-choices entry"))
                .collect::<Result<_>>()?;
            synth_cohort(&CohortSpec {
                n_subjects: args.subjects,
                hyper_drop_choices: drops,
                anomaly_index: args.anomaly_index,
                seed: args.seed,
                base,
            })?
        }
    };

    if let Some(dir) = &args.emit_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for pair in &cohort.pairs {
            for record in [&pair.normo, &pair.hyper] {
                let name = format!("subject{}_{}.csv", record.id, record.state);
                let mut file = File::create(dir.join(&name))?;
                save_subject_csv(record, &mut file)?;
                file.flush()?;
            }
        }
        let manifest = serde_json::to_string_pretty(&cohort.manifest_entries())?;
        fs::write(dir.join("manifest.json"), format!("{manifest}\n"))?;
    }

    let report = evaluate_cohort(
        &cohort.pairs,
        &EstimatorChoice::MeasuredVelocity,
        args.metric.into(),
        &args.analysis.config(),
    )?;
    let content = match args.format {
        ReportFormat::Table => report.render_table(),
        ReportFormat::Json => {
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            json
        }
    };
    emit(args.out.as_deref(), &content)
}
