//! Command-line front end. Four commands cover the whole workflow:
//!
//! - `synth`: generate a labeled synthetic corpus as WAV files plus CSVs.
//! - `run`: cross-validate detection and speed estimation over a corpus.
//! - `correct`: replace annotated approach times with median predictions.
//! - `report`: score a finished run against reference labels, with plots.
//!
//! `init` additionally writes a configuration preset to edit by hand. Given
//! identical inputs, `run` writes byte-identical outputs regardless of
//! thread count.

use crate::config::ExperimentConfig;
use crate::dataio::{
    self, read_labels, read_predictions, write_labels, write_predictions, LabelRow,
    PredictionRow,
};
use crate::error::{Error, Result};
use crate::eval::{ClassificationTable, OffsetStats};
use crate::features::RecordingLabel;
use crate::pipeline::{
    clip_features, correct_labels, phase_outcome, run_cv, ClipFeatures, PhaseOutcome,
    RunCvOutput, RunResult,
};
use crate::svg::{maxima_scatter_svg, offset_histogram_svg};
use crate::synth::make_dataset;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "passby",
    version,
    about = "Acoustic vehicle pass-by detection and speed estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration preset as a TOML file.
    Init(InitArgs),
    /// Generate a synthetic labeled corpus of pass-by recordings.
    Synth(SynthArgs),
    /// Cross-validate detection and speed estimation over a corpus.
    Run(RunArgs),
    /// Replace annotated approach times with median held-out predictions.
    Correct(CorrectArgs),
    /// Score a finished run against reference labels and render plots.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Configuration TOML; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: full, desk, or mini.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
}

impl ConfigSource {
    /// Explicit file beats preset beats the corpus's own `experiment.toml`
    /// beats the desk preset.
    fn resolve(&self, data_dir: Option<&Path>) -> Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            return ExperimentConfig::load(path);
        }
        if let Some(name) = &self.preset {
            return preset_by_name(name);
        }
        if let Some(dir) = data_dir {
            let stored = dir.join("experiment.toml");
            if stored.exists() {
                return ExperimentConfig::load(&stored);
            }
        }
        Ok(ExperimentConfig::desk())
    }
}

fn preset_by_name(name: &str) -> Result<ExperimentConfig> {
    match name {
        "full" => Ok(ExperimentConfig::full()),
        "desk" => Ok(ExperimentConfig::desk()),
        "mini" => Ok(ExperimentConfig::mini()),
        other => Err(Error::invalid(format!(
            "unknown preset `{other}`; expected full, desk, or mini"
        ))),
    }
}

#[derive(Args)]
struct InitArgs {
    /// Preset to start from.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Where to write the TOML file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory for WAV files, label CSVs, and the resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the corpus seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Corpus directory produced by `synth` (WAVs plus label CSVs).
    #[arg(long)]
    data: PathBuf,
    /// Label file: `true`, `noisy`, or `corrected` name a CSV inside the
    /// corpus directory; anything else is a path.
    #[arg(long, default_value = "noisy")]
    labels: String,
    /// Output directory for predictions.csv and metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the cross-validation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of cross-validation repetitions.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CorrectArgs {
    /// Label CSV whose approach times should be corrected.
    #[arg(long)]
    labels: PathBuf,
    /// predictions.csv from a `run` over those labels.
    #[arg(long)]
    predictions: PathBuf,
    /// Where to write the corrected label CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding predictions.csv and metrics.json.
    #[arg(long)]
    run: PathBuf,
    /// Reference label CSV to score against (typically the true labels).
    #[arg(long)]
    labels: PathBuf,
    /// Output directory for the table, plots, and summary.
    #[arg(long)]
    out: PathBuf,
}

/// Everything `run` knows about its own output, scored against the labels
/// it was trained on. `report` rescores the same predictions against a
/// different label file.
#[derive(Serialize, Deserialize)]
struct MetricsFile {
    n_clips: usize,
    n_noise_clips: usize,
    n_repetitions: usize,
    labels_file: String,
    rmse_kmh: f64,
    rmse_by_rep_kmh: Vec<f64>,
    classification: ClassificationTable,
    offset_stats: OffsetStats,
    separation_gap: f64,
    calibrated_threshold: f64,
    detection_errors: usize,
    noise_maxima: Vec<f64>,
}

fn metrics_from_phase(
    phase: &PhaseOutcome,
    n_clips: usize,
    n_noise_clips: usize,
    n_reps: usize,
    labels_file: &Path,
) -> MetricsFile {
    MetricsFile {
        n_clips,
        n_noise_clips,
        n_repetitions: n_reps,
        labels_file: labels_file.display().to_string(),
        rmse_kmh: phase.rmse_overall,
        rmse_by_rep_kmh: phase.rmse_by_rep.clone(),
        classification: phase.table.clone(),
        offset_stats: phase.offset_stats.clone(),
        separation_gap: phase.separation_gap,
        calibrated_threshold: phase.calibrated_threshold,
        detection_errors: phase.detection_errors,
        noise_maxima: phase.noise_maxima.clone(),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(args) => cmd_init(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Correct(args) => cmd_correct(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_init(args: &InitArgs) -> Result<()> {
    let cfg = preset_by_name(&args.preset)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    cfg.save(&args.out)?;
    println!("wrote {} preset to {}", args.preset, args.out.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.source.resolve(None)?;
    if let Some(seed) = args.seed {
        cfg.dataset.seed = seed;
    }
    cfg.validate()?;
    ensure_dir(&args.out)?;

    println!(
        "generating {} vehicles x {} passes plus {} background clips...",
        cfg.dataset.n_vehicles, cfg.dataset.passes_per_vehicle, cfg.dataset.n_noise_clips
    );
    let dataset = make_dataset(&cfg.dataset)?;

    for (clip, name) in dataset.clips.iter().zip(&dataset.clip_names) {
        dataio::write_wav(&args.out.join(format!("{name}.wav")), clip)?;
    }
    for (clip, name) in dataset.noise_clips.iter().zip(&dataset.noise_names) {
        dataio::write_wav(&args.out.join(format!("{name}.wav")), clip)?;
    }

    let noise_rows: Vec<LabelRow> = dataset
        .noise_names
        .iter()
        .map(|name| LabelRow {
            clip: name.clone(),
            label: RecordingLabel {
                vehicle_id: "-".into(),
                speed_kmh: 0.0,
                t_cpa_s: 0.0,
                has_vehicle: false,
            },
        })
        .collect();
    let rows = |labels: &[RecordingLabel]| -> Vec<LabelRow> {
        dataset
            .clip_names
            .iter()
            .zip(labels)
            .map(|(name, label)| LabelRow {
                clip: name.clone(),
                label: label.clone(),
            })
            .chain(noise_rows.iter().cloned())
            .collect()
    };
    write_labels(&args.out.join("labels_true.csv"), &rows(&dataset.labels_true))?;
    write_labels(
        &args.out.join("labels_noisy.csv"),
        &rows(&dataset.labels_noisy),
    )?;
    cfg.save(&args.out.join("experiment.toml"))?;

    println!(
        "wrote {} clips to {}",
        dataset.clips.len() + dataset.noise_clips.len(),
        args.out.display()
    );
    Ok(())
}

/// Splits label rows into vehicle and background entries, loading each
/// clip's WAV and computing its network inputs.
struct LoadedCorpus {
    labels: Vec<RecordingLabel>,
    clip_names: Vec<String>,
    features: Vec<ClipFeatures>,
    noise_features: Vec<ClipFeatures>,
}

fn load_corpus(data: &Path, label_file: &Path, cfg: &ExperimentConfig) -> Result<LoadedCorpus> {
    let rows = read_labels(label_file)?;
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "{} contains no rows",
            label_file.display()
        )));
    }
    let mut labels = Vec::new();
    let mut clip_names = Vec::new();
    let mut noise_names = Vec::new();
    for row in rows {
        if row.label.has_vehicle {
            labels.push(row.label);
            clip_names.push(row.clip);
        } else {
            noise_names.push(row.clip);
        }
    }
    let features = clip_names
        .par_iter()
        .map(|name| {
            let clip = dataio::read_wav(&data.join(format!("{name}.wav")))?;
            clip_features(&clip, &cfg.stft, &cfg.mel, &cfg.features)
        })
        .collect::<Result<_>>()?;
    let noise_features = noise_names
        .par_iter()
        .map(|name| {
            let clip = dataio::read_wav(&data.join(format!("{name}.wav")))?;
            clip_features(&clip, &cfg.stft, &cfg.mel, &cfg.features)
        })
        .collect::<Result<_>>()?;
    Ok(LoadedCorpus {
        labels,
        clip_names,
        features,
        noise_features,
    })
}

fn resolve_label_file(data: &Path, value: &str) -> PathBuf {
    match value {
        "true" | "noisy" | "corrected" => data.join(format!("labels_{value}.csv")),
        other => PathBuf::from(other),
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    let mut cfg = args.source.resolve(Some(&args.data))?;
    if let Some(seed) = args.seed {
        cfg.plan.seed = seed;
    }
    if let Some(reps) = args.repetitions {
        cfg.plan.n_repetitions = reps;
    }
    cfg.validate()?;
    ensure_dir(&args.out)?;

    let label_file = resolve_label_file(&args.data, &args.labels);
    let corpus = load_corpus(&args.data, &label_file, &cfg)?;
    println!(
        "loaded {} vehicle clips and {} background clips from {}",
        corpus.features.len(),
        corpus.noise_features.len(),
        args.data.display()
    );
    println!(
        "cross-validating: {} repetitions, {} epochs per network",
        cfg.plan.n_repetitions, cfg.nn.epochs
    );

    let settings = cfg.run_settings();
    let output = run_cv(
        &corpus.features,
        &corpus.labels,
        &corpus.noise_features,
        &settings,
    )?;

    let rows: Vec<PredictionRow> = output
        .results
        .iter()
        .map(|r| PredictionRow {
            rep: r.rep,
            clip: corpus.clip_names[r.clip_index].clone(),
            vehicle_id: r.vehicle_id.clone(),
            estimated_speed_kmh: r.estimated_speed_kmh,
            predicted_t_cpa_s: r.predicted_t_cpa_s,
            profile_max: r.profile_max,
            detected: r.detected,
        })
        .collect();
    write_predictions(&args.out.join("predictions.csv"), &rows)?;

    let phase = phase_outcome(output, &corpus.labels, cfg.plan.n_repetitions)?;
    let metrics = metrics_from_phase(
        &phase,
        corpus.features.len(),
        corpus.noise_features.len(),
        cfg.plan.n_repetitions,
        &label_file,
    );
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Error::invalid(format!("metrics serialization: {e}")))?;
    dataio::atomic_write(&args.out.join("metrics.json"), json.as_bytes())?;

    println!(
        "speed RMSE {:.2} km/h against {}; separation gap {:.3}; wrote {}",
        phase.rmse_overall,
        label_file.display(),
        phase.separation_gap,
        args.out.display()
    );
    Ok(())
}

/// Rebuilds pipeline results from a prediction CSV, with clip indices
/// resolved against the vehicle rows of `labels`.
fn results_from_rows(
    rows: &[PredictionRow],
    labels: &[RecordingLabel],
    clip_names: &[String],
) -> Result<Vec<RunResult>> {
    rows.iter()
        .map(|row| {
            let clip_index = clip_names
                .iter()
                .position(|n| *n == row.clip)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "prediction references unknown vehicle clip `{}`",
                        row.clip
                    ))
                })?;
            Ok(RunResult {
                rep: row.rep,
                clip_index,
                vehicle_id: labels[clip_index].vehicle_id.clone(),
                profile: Vec::new(),
                profile_max: row.profile_max,
                predicted_t_cpa_s: row.predicted_t_cpa_s,
                detected: row.detected,
                estimated_speed_kmh: row.estimated_speed_kmh,
            })
        })
        .collect()
}

fn split_vehicle_rows(rows: &[LabelRow]) -> (Vec<RecordingLabel>, Vec<String>) {
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for row in rows {
        if row.label.has_vehicle {
            labels.push(row.label.clone());
            names.push(row.clip.clone());
        }
    }
    (labels, names)
}

fn cmd_correct(args: &CorrectArgs) -> Result<()> {
    let all_rows = read_labels(&args.labels)?;
    let (labels, clip_names) = split_vehicle_rows(&all_rows);
    if labels.is_empty() {
        return Err(Error::invalid("label file has no vehicle rows"));
    }
    let predictions = read_predictions(&args.predictions)?;
    let results = results_from_rows(&predictions, &labels, &clip_names)?;
    let corrected = correct_labels(&labels, &results)?;

    // Vehicle rows get the corrected approach times; background rows pass
    // through untouched, preserving the file's row order.
    let mut corrected_iter = corrected.into_iter();
    let out_rows: Vec<LabelRow> = all_rows
        .iter()
        .map(|row| {
            if row.label.has_vehicle {
                LabelRow {
                    clip: row.clip.clone(),
                    label: corrected_iter.next().expect("one corrected label per vehicle row"),
                }
            } else {
                row.clone()
            }
        })
        .collect();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_labels(&args.out, &out_rows)?;
    println!(
        "corrected {} approach times from {} predictions; wrote {}",
        labels.len(),
        predictions.len(),
        args.out.display()
    );
    Ok(())
}

fn classification_csv(table: &ClassificationTable) -> String {
    let mut out = String::from(
        "vehicle,n,exact_pct,off_by_one_pct,off_by_two_pct,off_more_pct,within_one_pct\n",
    );
    for row in table.rows.iter().chain(std::iter::once(&table.average)) {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            row.vehicle_id,
            row.n,
            row.pct_exact,
            row.pct_off_one,
            row.pct_off_two,
            row.pct_off_more,
            row.pct_within_one
        ));
    }
    out
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let all_rows = read_labels(&args.labels)?;
    let (labels, clip_names) = split_vehicle_rows(&all_rows);
    if labels.is_empty() {
        return Err(Error::invalid("label file has no vehicle rows"));
    }
    let predictions = read_predictions(&args.run.join("predictions.csv"))?;
    if predictions.is_empty() {
        return Err(Error::invalid("prediction file has no rows"));
    }
    let metrics_path = args.run.join("metrics.json");
    let metrics_text =
        std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let run_metrics: MetricsFile = serde_json::from_str(&metrics_text)
        .map_err(|e| Error::parse(&metrics_path, "document", e.to_string()))?;

    let results = results_from_rows(&predictions, &labels, &clip_names)?;
    let n_reps = results.iter().map(|r| r.rep).max().unwrap() + 1;
    let phase = phase_outcome(
        RunCvOutput {
            results,
            noise_maxima: run_metrics.noise_maxima.clone(),
        },
        &labels,
        n_reps,
    )?;

    ensure_dir(&args.out)?;
    dataio::atomic_write(
        &args.out.join("classification.csv"),
        classification_csv(&phase.table).as_bytes(),
    )?;
    dataio::atomic_write(
        &args.out.join("offsets.svg"),
        offset_histogram_svg(&phase.offset_stats)?.as_bytes(),
    )?;
    dataio::atomic_write(
        &args.out.join("maxima.svg"),
        maxima_scatter_svg(
            &phase.vehicle_maxima,
            &phase.noise_maxima,
            phase.calibrated_threshold,
        )?
        .as_bytes(),
    )?;
    let report = metrics_from_phase(
        &phase,
        labels.len(),
        phase.noise_maxima.len(),
        n_reps,
        &args.labels,
    );
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
    dataio::atomic_write(&args.out.join("report.json"), json.as_bytes())?;

    println!(
        "against {}: speed RMSE {:.2} km/h, {:.1}% within one class, offset mean {:.3} s (std {:.3} s)",
        args.labels.display(),
        phase.rmse_overall,
        phase.table.average.pct_within_one,
        phase.offset_stats.mean_s,
        phase.offset_stats.std_s
    );
    println!(
        "detection: separation gap {:.3}, threshold {:.3}, {} errors; wrote {}",
        phase.separation_gap,
        phase.calibrated_threshold,
        phase.detection_errors,
        args.out.display()
    );
    Ok(())
}
