use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gazekit::dataset::{
    build_normalized_dataset, parse_annotations, parse_calibration, read_archive, write_archive,
    BuildOptions, DatasetError, DirectorySource,
};
use gazekit::geometry::EyeSide;
use gazekit::harness::{
    cross_dataset_eval, fusion_eval, leave_one_person_out, read_samples_csv, resolution_study,
    write_eval_outputs, write_fusion_csv, write_grid_csv, write_loss_csv, EvalConfig, EvalReport,
    HarnessError, DEFAULT_RESOLUTIONS, REFERENCE_NOTE,
};
use gazekit::regressors::{
    fit_estimator, EstimatorConfig, EstimatorKind, FeatureConfig, RegressorError, TrainConfig,
};
use gazekit::synth::{generate_persons, SynthConfig, SynthError};

#[derive(Parser)]
#[command(name = "gazekit", version, about = "Appearance-based gaze estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic persons and write a normalized archive.
    Synth(SynthArgs),
    /// Normalize annotated frames into an archive.
    Normalize(NormalizeArgs),
    /// Train one estimator on an archive and save it.
    Train(TrainArgs),
    /// Run an evaluation protocol.
    Eval(EvalArgs),
    /// Re-aggregate report.csv and plots from a samples.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    persons: usize,
    /// Records per person; each record yields one sample per eye.
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaze yaw range in degrees, as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "-18,18")]
    yaw_range: (f64, f64),
    /// Gaze pitch range in degrees, as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "-1.5,20")]
    pitch_range: (f64, f64),
    /// Add random shading of this strength to the left eye.
    #[arg(long)]
    corrupt_left: Option<f64>,
    /// Also write calibration, annotations and rendered frames here.
    #[arg(long)]
    raw_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct NormalizeArgs {
    /// Directory with calibration.txt, annotations.txt and the frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also emit the horizontal mirror of every sample.
    #[arg(long)]
    flip_augment: bool,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Estimator::Cnn)]
    estimator: Estimator,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add the pupil position to the auxiliary features.
    #[arg(long)]
    use_pupil: bool,
    /// Drop head pose from the auxiliary features.
    #[arg(long)]
    no_head_pose: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    /// Number of head-pose clusters for kNN; 0 searches all samples.
    #[arg(long, default_value_t = 8)]
    knn_clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Resize patches to `WxH` before training.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(usize, usize)>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value_t = Protocol::Lopo)]
    protocol: Protocol,
    /// Archive used by `lopo`, or training archive for `cross`.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(usize, usize)>,
    /// Also run the resolution grid (cross protocol); `WxH` list, or
    /// `default` for 60x36,30x18,15x9,8x5.
    #[arg(long)]
    resolutions: Option<String>,
    /// Also compare per-eye, best-eye and two-eye fused errors.
    #[arg(long)]
    fuse_eyes: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A samples.csv written by `eval`.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Cnn,
    Knn,
    Linear,
    Mean,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Protocol {
    Lopo,
    Cross,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    let size = (p(w)?, p(h)?);
    if size.0 == 0 || size.1 == 0 {
        return Err("sizes must be positive".into());
    }
    Ok(size)
}

fn parse_resolutions(s: &str) -> Result<Vec<(usize, usize)>, Failure> {
    if s == "default" {
        return Ok(DEFAULT_RESOLUTIONS.to_vec());
    }
    s.split(',')
        .map(|t| parse_size(t).map_err(|e| Failure::validation(format!("--resolutions: {e}"))))
        .collect()
}

/// An error with its exit-code class.
struct Failure {
    validation: bool,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            validation: true,
            message: message.into(),
        }
    }
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            validation: false,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self {
            validation: e.is_validation(),
            message: e.to_string(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<RegressorError> for Failure {
    fn from(e: RegressorError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => d.into(),
            SynthError::InvalidConfig(_) | SynthError::OutOfRangeGaze { .. } => Failure::validation(e.to_string()),
            other => Failure::runtime(other.to_string()),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

impl ModelArgs {
    fn estimator_config(&self) -> EstimatorConfig {
        let mut train = TrainConfig::default();
        if let Some(n) = self.iterations {
            train.iterations = n;
        }
        if let Some(b) = self.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            train.learning_rate = lr;
        }
        EstimatorConfig {
            kind: match self.estimator {
                Estimator::Cnn => EstimatorKind::Cnn,
                Estimator::Knn => EstimatorKind::Knn,
                Estimator::Linear => EstimatorKind::Linear,
                Estimator::Mean => EstimatorKind::Mean,
            },
            features: FeatureConfig {
                head: !self.no_head_pose,
                pupil: self.use_pupil,
            },
            train,
            knn_k: self.knn_k,
            knn_clusters: (self.knn_clusters > 0).then_some(self.knn_clusters),
            ridge_lambda: self.ridge_lambda,
            seed: self.seed,
        }
    }
}

/// `run-config.txt`: the command line, the resolved configuration and the
/// reference note.
fn run_config(extra: &[(&str, String)]) -> String {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut s = format!("command: {}\n", args.join(" "));
    for (k, v) in extra {
        let _ = writeln!(s, "{k}: {v}");
    }
    let _ = writeln!(s, "note: {REFERENCE_NOTE}");
    s
}

fn load(path: &Path) -> Result<Vec<gazekit::dataset::NormalizedSample>, Failure> {
    if !path.is_dir() {
        return Err(Failure::validation(format!("{}: archive directory not found", path.display())));
    }
    Ok(read_archive(path)?)
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let config = SynthConfig {
        persons: a.persons,
        samples_per_person: a.samples,
        gaze_yaw_deg: a.yaw_range,
        gaze_pitch_deg: a.pitch_range,
        corrupt_eye: a.corrupt_left.map(|s| (EyeSide::Left, s)),
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = generate_persons(&config)?;
    if let Some(raw) = &a.raw_dir {
        ds.write_raw(raw, true)?;
    }
    let out = ds.normalize(&BuildOptions::default())?;
    write_archive(&a.out_dir, &out.samples)?;
    write_failures(&a.out_dir, &out.failures)?;
    eprintln!(
        "{} records, {} samples, {} failed records",
        ds.len(),
        out.samples.len(),
        out.failures.len()
    );
    Ok(())
}

fn write_failures(dir: &Path, failures: &[gazekit::dataset::RecordFailure]) -> Result<(), Failure> {
    let mut s = String::from("record,reason\n");
    for f in failures {
        let _ = writeln!(s, "{},{}", f.index + 1, f.reason.replace(',', ";"));
    }
    write_text(&dir.join("failures.csv"), &s)
}

fn normalize(a: NormalizeArgs) -> Result<(), Failure> {
    let calib = parse_calibration(a.input.join("calibration.txt"))?;
    let records = parse_annotations(a.input.join("annotations.txt"), None)?;
    let opts = BuildOptions {
        flip_augment: a.flip_augment,
        ..BuildOptions::default()
    };
    let out = build_normalized_dataset(&records, &calib, &DirectorySource::new(&a.input), &opts)?;
    write_archive(&a.out_dir, &out.samples)?;
    write_failures(&a.out_dir, &out.failures)?;
    eprintln!(
        "{} of {} records normalized, {} samples",
        out.records_ok,
        records.len(),
        out.samples.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let samples = load(&a.train)?;
    let cfg = a.model.estimator_config();
    let canon = gazekit::harness::prepare_samples(&samples, a.input_size);
    let (model, trace) = fit_estimator(&canon, &cfg)?;
    create_dir(&a.out_dir)?;
    model.save(a.out_dir.join("model.gkm"))?;
    if !trace.is_empty() {
        write_loss_csv(&trace, a.out_dir.join("loss.csv"))?;
    }
    let extra = [("estimator", cfg.describe()), ("samples", samples.len().to_string())];
    write_text(&a.out_dir.join("run-config.txt"), &run_config(&extra))
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let config = EvalConfig {
        estimator: a.model.estimator_config(),
        input_size: a.input_size,
    };
    let resolutions = a.resolutions.as_deref().map(parse_resolutions).transpose()?;
    if resolutions.is_some() && a.protocol != Protocol::Cross {
        return Err(Failure::validation("--resolutions needs --protocol cross"));
    }
    let train = load(&a.train)?;
    let test = match (a.protocol, &a.test) {
        (Protocol::Cross, Some(t)) => Some(load(t)?),
        (Protocol::Cross, None) => return Err(Failure::validation("--protocol cross needs --test")),
        (Protocol::Lopo, Some(_)) => return Err(Failure::validation("--test is only used with --protocol cross")),
        (Protocol::Lopo, None) => None,
    };
    let report = match &test {
        Some(t) => cross_dataset_eval(&train, t, &config)?,
        None => leave_one_person_out(&train, &config)?,
    };
    create_dir(&a.out_dir)?;
    let mut notes = write_eval_outputs(&report, &a.out_dir)?;
    if a.fuse_eyes {
        let f = fusion_eval(&report.results)?;
        write_fusion_csv(&f, a.out_dir.join("fusion.csv"))?;
        f.write_plot(a.out_dir.join("plots").join("fusion.svg"))?;
    }
    if let (Some(res), Some(t)) = (&resolutions, &test) {
        let grid = resolution_study(&train, t, res, &config)?;
        write_grid_csv(&grid, a.out_dir.join("grid.csv"))?;
        grid.write_plot(a.out_dir.join("plots").join("grid.svg"))?;
    }
    notes.iter().for_each(|n| eprintln!("note: {n}"));
    let mut extra = vec![
        ("protocol", report.protocol.clone()),
        ("config", report.config.clone()),
        ("overall_mean_deg", format!("{:?}", report.overall_mean)),
    ];
    if let Some(b) = report.baseline_mean {
        extra.push(("mean_predictor_deg", format!("{b:?}")));
    }
    extra.extend(notes.drain(..).map(|n| ("skipped", n)));
    write_text(&a.out_dir.join("run-config.txt"), &run_config(&extra))?;
    println!("overall mean error {:.3} deg over {} samples", report.overall_mean, report.results.len());
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let results = read_samples_csv(&a.samples)?;
    if results.is_empty() {
        return Err(HarnessError::EmptyArchive(a.samples.display().to_string()).into());
    }
    let folds = results.iter().map(|r| r.fold).max().map_or(0, |f| f + 1);
    let report = EvalReport::from_results("report", format!("from {}", a.samples.display()), folds, results, None);
    create_dir(&a.out_dir)?;
    let notes = write_eval_outputs(&report, &a.out_dir)?;
    let mut extra = vec![("overall_mean_deg", format!("{:?}", report.overall_mean))];
    extra.extend(notes.into_iter().map(|n| ("skipped", n)));
    write_text(&a.out_dir.join("run-config.txt"), &run_config(&extra))?;
    println!("overall mean error {:.3} deg over {} samples", report.overall_mean, report.results.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Normalize(a) => normalize(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(if f.validation { 1 } else { 2 })
        }
    }
}
