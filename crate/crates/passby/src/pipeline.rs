//! The end-to-end experiment: leave-one-vehicle-out cross-validation of the
//! profile regressor, peak detection, speed estimation from a window around
//! the detected peak, and annotation correction from repeated predictions.
//!
//! One cross-validation job trains on the clips of every vehicle except the
//! held-out one (with a per-vehicle train/validation split of the training
//! clips), then predicts the held-out vehicle's profile, approach time, and
//! speed. Jobs run in parallel; every random choice is seeded from the plan
//! seed and the job's (repetition, fold) coordinates, so a run is
//! reproducible bit for bit regardless of thread count.

use crate::dsp::{log_mel_spectrogram, mel_filterbank, AudioClip, MelConfig, StftConfig};
use crate::error::{Error, Result};
use crate::eval::{
    classification_table, detection_offset_stats, rmse, separation_gap, ClassificationTable,
    OffsetStats, SpeedClassScheme, SpeedOutcome,
};
use crate::features::{
    frame_times, lms_window_matrix, ma_profile, FeatureConfig, MaParams, MaProfile, RecordingLabel,
};
use crate::mat::Mat;
use crate::nn::{DenseNet, TrainConfig};
use crate::seed::derive;
use crate::svr::{self, SvrConfig};
use crate::synth::SynthDataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hidden layer widths of the profile regressor.
pub const HIDDEN_LAYERS: [usize; 3] = [200, 50, 10];

/// Width in frames of the profile window handed to the speed regressor.
pub const SPEED_WINDOW_WIDTH: usize = 73;

// Seed stream tags, one per randomized pipeline stage.
const STREAM_SPLIT: u64 = 11;
const STREAM_NN_INIT: u64 = 12;
const STREAM_NN_SHUFFLE: u64 = 13;

/// Per-clip network inputs: one feature row per spectrogram frame, plus the
/// frame-center times.
#[derive(Clone, Debug)]
pub struct ClipFeatures {
    pub rows: Mat<f32>,
    pub frame_times: Vec<f64>,
}

/// Front end for one clip: spectrogram, log-mel, stacked context windows.
pub fn clip_features(
    clip: &AudioClip,
    stft_cfg: &StftConfig,
    mel_cfg: &MelConfig,
    feat_cfg: &FeatureConfig,
) -> Result<ClipFeatures> {
    let bank = mel_filterbank(mel_cfg)?;
    let lms = log_mel_spectrogram(clip, &bank, stft_cfg)?;
    let rows = lms_window_matrix(&lms, feat_cfg)?;
    let times = frame_times(rows.rows(), stft_cfg.hop, clip.sample_rate);
    Ok(ClipFeatures {
        rows,
        frame_times: times,
    })
}

/// Cross-validation layout: every vehicle is held out once per repetition,
/// and each training vehicle's clips are split train/validation per
/// repetition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvPlan {
    pub n_repetitions: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            n_repetitions: 20,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_repetitions == 0 {
            return Err(Error::invalid("need at least one repetition"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

/// One fold: indices into the label array.
#[derive(Clone, Debug)]
pub struct Fold {
    pub test_vehicle: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Builds the folds of one repetition: one fold per vehicle, sorted by
/// vehicle id. Train/validation splits are stratified per vehicle and
/// shuffle deterministically from `(plan.seed, rep, vehicle)`.
pub fn make_folds(labels: &[RecordingLabel], plan: &CvPlan, rep: usize) -> Result<Vec<Fold>> {
    plan.validate()?;
    let mut vehicles: Vec<&str> = Vec::new();
    for l in labels {
        if !vehicles.contains(&l.vehicle_id.as_str()) {
            vehicles.push(&l.vehicle_id);
        }
    }
    vehicles.sort();
    if vehicles.len() < 2 {
        return Err(Error::invalid(
            "cross-validation needs at least two vehicles",
        ));
    }

    // Per-vehicle split, shared by all folds of this repetition.
    let mut splits: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(vehicles.len());
    for (vi, v) in vehicles.iter().enumerate() {
        let mut clips: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i].vehicle_id == *v)
            .collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive(plan.seed, &[STREAM_SPLIT, rep as u64, vi as u64]));
        clips.shuffle(&mut rng);
        let n_train = ((clips.len() as f64 * plan.train_fraction).round() as usize)
            .clamp(1, clips.len());
        let val = clips.split_off(n_train);
        splits.push((clips, val));
    }

    Ok(vehicles
        .iter()
        .enumerate()
        .map(|(fi, v)| {
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (vi, (tr, va)) in splits.iter().enumerate() {
                if vi != fi {
                    train.extend_from_slice(tr);
                    val.extend_from_slice(va);
                }
            }
            Fold {
                test_vehicle: v.to_string(),
                train,
                val,
                test: (0..labels.len())
                    .filter(|&i| labels[i].vehicle_id == *v)
                    .collect(),
            }
        })
        .collect())
}

/// Peak-threshold detector. The peak location breaks ties toward the
/// earliest frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionRule {
    pub threshold: f64,
}

impl Default for DetectionRule {
    fn default() -> Self {
        DetectionRule { threshold: 1.0 }
    }
}

impl DetectionRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("detection threshold must be positive"));
        }
        Ok(())
    }
}

/// Returns the peak's frame time when the peak clears the threshold.
pub fn detect(profile: &MaProfile, rule: &DetectionRule) -> Option<f64> {
    let peak = profile.peak_frame();
    if profile.values[peak] >= rule.threshold {
        Some(profile.frame_times[peak])
    } else {
        None
    }
}

/// Extracts `width` profile values centered on `center`, clamping indices at
/// the edges, so `out[width / 2] == values[center]` always holds.
pub fn select_window(values: &[f64], center: usize, width: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("empty profile"));
    }
    if width == 0 || width % 2 == 0 {
        return Err(Error::invalid("window width must be odd"));
    }
    if center >= values.len() {
        return Err(Error::invalid("window center outside the profile"));
    }
    let half = (width / 2) as i64;
    let top = values.len() as i64 - 1;
    Ok((-half..=half)
        .map(|off| values[(center as i64 + off).clamp(0, top) as usize])
        .collect())
}

/// Everything a cross-validated run needs besides the data.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub features: FeatureConfig,
    pub ma: MaParams,
    pub nn: TrainConfig,
    pub svr: SvrConfig,
    /// Select C and epsilon per fold on the validation clips before the
    /// final fit on train plus validation. Without validation clips the
    /// configured values are used as-is.
    pub svr_grid: bool,
    pub plan: CvPlan,
    pub rule: DetectionRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            features: FeatureConfig::default(),
            ma: MaParams::default(),
            nn: TrainConfig::default(),
            svr: SvrConfig::default(),
            svr_grid: true,
            plan: CvPlan::default(),
            rule: DetectionRule::default(),
        }
    }
}

/// Held-out prediction for one clip in one repetition. The approach time and
/// speed are estimated for every clip regardless of the detection flag;
/// detection only gates the vehicle-present decision.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub rep: usize,
    pub clip_index: usize,
    pub vehicle_id: String,
    pub profile: Vec<f32>,
    pub profile_max: f64,
    pub predicted_t_cpa_s: f64,
    pub detected: bool,
    pub estimated_speed_kmh: f64,
}

/// All held-out predictions of a run plus the profile maxima of the
/// vehicle-free clips under every job's model.
#[derive(Clone, Debug)]
pub struct RunCvOutput {
    pub results: Vec<RunResult>,
    pub noise_maxima: Vec<f64>,
}

fn nearest_frame(times: &[f64], t: f64) -> usize {
    if times.len() < 2 {
        return 0;
    }
    let dt = times[1] - times[0];
    let idx = ((t - times[0]) / dt).round();
    if idx < 0.0 {
        0
    } else {
        (idx as usize).min(times.len() - 1)
    }
}

/// Per-dimension mean and reciprocal standard deviation over the feature
/// rows of `clips`. Constant dimensions map to zero.
fn feature_stats(features: &[ClipFeatures], clips: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let dim = features[clips[0]].rows.cols();
    let mut mean = vec![0.0f64; dim];
    let mut count = 0usize;
    for &c in clips {
        for r in 0..features[c].rows.rows() {
            for (m, v) in mean.iter_mut().zip(features[c].rows.row(r)) {
                *m += *v as f64;
            }
            count += 1;
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &c in clips {
        for r in 0..features[c].rows.rows() {
            for (vv, (v, m)) in var.iter_mut().zip(features[c].rows.row(r).iter().zip(&mean)) {
                let e = *v as f64 - m;
                *vv += e * e;
            }
        }
    }
    let inv_std = var
        .iter()
        .map(|v| {
            let sd = (v / count as f64).sqrt();
            if sd > 1e-8 {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    (mean, inv_std)
}

fn standardize_clip(f: &ClipFeatures, mean: &[f64], inv_std: &[f64]) -> Mat<f32> {
    Mat::from_fn(f.rows.rows(), f.rows.cols(), |r, c| {
        ((f.rows[(r, c)] as f64 - mean[c]) * inv_std[c]) as f32
    })
}

/// Gathers the standardized rows and per-frame profile targets of `clips`.
fn gather_training(
    features: &[ClipFeatures],
    labels: &[RecordingLabel],
    clips: &[usize],
    ma: &MaParams,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<(Mat<f32>, Vec<f32>)> {
    let dim = features[clips[0]].rows.cols();
    let total: usize = clips.iter().map(|&c| features[c].rows.rows()).sum();
    let mut x = Mat::zeros(total, dim);
    let mut y = Vec::with_capacity(total);
    let mut row = 0;
    for &c in clips {
        let f = &features[c];
        let target = ma_profile(labels[c].speed_kmh, labels[c].t_cpa_s, ma, &f.frame_times)?;
        for r in 0..f.rows.rows() {
            for (dst, (v, (m, s))) in x
                .row_mut(row)
                .iter_mut()
                .zip(f.rows.row(r).iter().zip(mean.iter().zip(inv_std)))
            {
                *dst = ((*v as f64 - m) * s) as f32;
            }
            y.push(target.values[r] as f32);
            row += 1;
        }
    }
    Ok((x, y))
}

fn validate_run_inputs(
    features: &[ClipFeatures],
    labels: &[RecordingLabel],
    noise_features: &[ClipFeatures],
    s: &RunSettings,
) -> Result<()> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invalid(
            "need one feature set per labeled clip, and at least one clip",
        ));
    }
    let dim = features[0].rows.cols();
    for f in features.iter().chain(noise_features) {
        if f.rows.cols() != dim {
            return Err(Error::invalid("clips disagree on feature dimension"));
        }
        if f.rows.rows() == 0 {
            return Err(Error::invalid("clip with no frames"));
        }
        if f.rows.rows() != f.frame_times.len() {
            return Err(Error::invalid("frame time count mismatch"));
        }
    }
    for l in labels {
        if !l.has_vehicle {
            return Err(Error::invalid(
                "labeled clips must contain vehicles; background clips go in the noise set",
            ));
        }
        if !(l.speed_kmh > 0.0) {
            return Err(Error::invalid("labels need positive speeds"));
        }
    }
    s.plan.validate()?;
    s.rule.validate()?;
    s.nn.validate()?;
    s.svr.validate()?;
    s.ma.validate()?;
    Ok(())
}

/// Runs the full cross-validated experiment for the given labels. The label
/// approach times steer both the profile targets and the window centers of
/// the speed-regressor training rows; held-out speeds always come from
/// windows centered on the predicted peak.
pub fn run_cv(
    features: &[ClipFeatures],
    labels: &[RecordingLabel],
    noise_features: &[ClipFeatures],
    s: &RunSettings,
) -> Result<RunCvOutput> {
    validate_run_inputs(features, labels, noise_features, s)?;

    let mut jobs = Vec::new();
    for rep in 0..s.plan.n_repetitions {
        for (fold_idx, fold) in make_folds(labels, &s.plan, rep)?.into_iter().enumerate() {
            jobs.push((rep, fold_idx, fold));
        }
    }

    let outputs: Vec<(Vec<RunResult>, Vec<f64>)> = jobs
        .par_iter()
        .map(|(rep, fold_idx, fold)| run_job(features, labels, noise_features, s, *rep, *fold_idx, fold))
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    let mut noise_maxima = Vec::new();
    for (r, n) in outputs {
        results.extend(r);
        noise_maxima.extend(n);
    }
    Ok(RunCvOutput {
        results,
        noise_maxima,
    })
}

fn run_job(
    features: &[ClipFeatures],
    labels: &[RecordingLabel],
    noise_features: &[ClipFeatures],
    s: &RunSettings,
    rep: usize,
    fold_idx: usize,
    fold: &Fold,
) -> Result<(Vec<RunResult>, Vec<f64>)> {
    let dim = features[0].rows.cols();
    let (mean, inv_std) = feature_stats(features, &fold.train);
    let (xt, yt) = gather_training(features, labels, &fold.train, &s.ma, &mean, &inv_std)?;
    let (xv, yv) = if fold.val.is_empty() {
        (Mat::zeros(0, dim), Vec::new())
    } else {
        gather_training(features, labels, &fold.val, &s.ma, &mean, &inv_std)?
    };

    let sizes = [
        dim,
        HIDDEN_LAYERS[0],
        HIDDEN_LAYERS[1],
        HIDDEN_LAYERS[2],
        1,
    ];
    let mut net = DenseNet::<f32>::init(
        &sizes,
        derive(s.plan.seed, &[STREAM_NN_INIT, rep as u64, fold_idx as u64]),
    )?;
    let nn_cfg = TrainConfig {
        seed: derive(s.plan.seed, &[STREAM_NN_SHUFFLE, rep as u64, fold_idx as u64]),
        ..s.nn
    };
    let val = if yv.is_empty() {
        None
    } else {
        Some((&xv, yv.as_slice()))
    };
    net.train(&xt, &yt, val, &nn_cfg)?;

    let predict_profile = |clip: usize| -> Result<Vec<f32>> {
        let z = standardize_clip(&features[clip], &mean, &inv_std);
        net.predict_batch(&z)
    };

    // Speed-regressor rows: windows of the predicted profiles centered on
    // the label approach times.
    let window_row = |clip: usize, profile: &[f64], t: f64| -> Result<Vec<f64>> {
        let center = nearest_frame(&features[clip].frame_times, t);
        select_window(profile, center, SPEED_WINDOW_WIDTH)
    };
    let build_rows = |clips: &[usize]| -> Result<(Mat<f64>, Vec<f64>)> {
        let mut x = Mat::zeros(clips.len(), SPEED_WINDOW_WIDTH);
        let mut y = Vec::with_capacity(clips.len());
        for (k, &c) in clips.iter().enumerate() {
            let profile: Vec<f64> = predict_profile(c)?.iter().map(|v| *v as f64).collect();
            let row = window_row(c, &profile, labels[c].t_cpa_s)?;
            x.row_mut(k).copy_from_slice(&row);
            y.push(labels[c].speed_kmh);
        }
        Ok((x, y))
    };
    let (sx_train, sy_train) = build_rows(&fold.train)?;
    let (sx_val, sy_val) = build_rows(&fold.val)?;

    let (c, epsilon) = if s.svr_grid && !fold.val.is_empty() {
        svr::grid_search(
            &sx_train,
            &sy_train,
            &sx_val,
            &sy_val,
            &svr::default_grid(),
            &s.svr,
        )?
    } else {
        (s.svr.c, s.svr.epsilon)
    };

    // Final fit on train plus validation clips.
    let mut sx_all = Mat::zeros(sx_train.rows() + sx_val.rows(), SPEED_WINDOW_WIDTH);
    let mut sy_all = Vec::with_capacity(sy_train.len() + sy_val.len());
    for (k, r) in (0..sx_train.rows()).enumerate() {
        sx_all.row_mut(k).copy_from_slice(sx_train.row(r));
    }
    for r in 0..sx_val.rows() {
        sx_all
            .row_mut(sx_train.rows() + r)
            .copy_from_slice(sx_val.row(r));
    }
    sy_all.extend_from_slice(&sy_train);
    sy_all.extend_from_slice(&sy_val);
    let speed_model = svr::train(&sx_all, &sy_all, &SvrConfig { c, epsilon, ..s.svr })?;

    let mut results = Vec::with_capacity(fold.test.len());
    for &clip in &fold.test {
        let profile = predict_profile(clip)?;
        let profile_f64: Vec<f64> = profile.iter().map(|v| *v as f64).collect();
        let ma_prof = MaProfile {
            values: profile_f64.clone(),
            frame_times: features[clip].frame_times.clone(),
        };
        let peak = ma_prof.peak_frame();
        let profile_max = ma_prof.values[peak];
        let predicted_t_cpa_s = ma_prof.frame_times[peak];
        let detected = detect(&ma_prof, &s.rule).is_some();
        let window = select_window(&profile_f64, peak, SPEED_WINDOW_WIDTH)?;
        let estimated_speed_kmh = speed_model.predict(&window)?;
        results.push(RunResult {
            rep,
            clip_index: clip,
            vehicle_id: labels[clip].vehicle_id.clone(),
            profile,
            profile_max,
            predicted_t_cpa_s,
            detected,
            estimated_speed_kmh,
        });
    }

    let mut noise_maxima = Vec::with_capacity(noise_features.len());
    for nf in noise_features {
        let z = standardize_clip(nf, &mean, &inv_std);
        let profile = net.predict_batch(&z)?;
        noise_maxima.push(profile.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64)));
    }
    Ok((results, noise_maxima))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Replaces each clip's annotated approach time with the median of its
/// held-out predictions. Speeds and identities are untouched. Errors if any
/// clip has no prediction.
pub fn correct_labels(
    labels: &[RecordingLabel],
    results: &[RunResult],
) -> Result<Vec<RecordingLabel>> {
    let mut per_clip: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for r in results {
        if r.clip_index >= labels.len() {
            return Err(Error::invalid("prediction for an unknown clip"));
        }
        per_clip[r.clip_index].push(r.predicted_t_cpa_s);
    }
    labels
        .iter()
        .zip(per_clip.iter_mut())
        .enumerate()
        .map(|(i, (label, preds))| {
            if preds.is_empty() {
                return Err(Error::invalid(format!(
                    "no predictions for clip {i}; cannot correct its label"
                )));
            }
            preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut out = label.clone();
            out.t_cpa_s = median(preds);
            Ok(out)
        })
        .collect()
}

/// Picks a detection threshold from held-out profile maxima. With separated
/// classes it returns the midpoint of the gap; with overlap it returns the
/// candidate threshold with the fewest misclassifications, preferring the
/// lowest on ties.
pub fn calibrate_threshold(vehicle_maxima: &[f64], noise_maxima: &[f64]) -> Result<f64> {
    if vehicle_maxima.is_empty() || noise_maxima.is_empty() {
        return Err(Error::invalid("threshold calibration needs both classes"));
    }
    if vehicle_maxima
        .iter()
        .chain(noise_maxima)
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid("profile maxima must be finite"));
    }
    let min_vehicle = vehicle_maxima.iter().copied().fold(f64::INFINITY, f64::min);
    let max_noise = noise_maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min_vehicle > max_noise {
        return Ok(0.5 * (min_vehicle + max_noise));
    }

    let mut candidates: Vec<f64> = vehicle_maxima
        .iter()
        .chain(noise_maxima)
        .copied()
        .collect();
    candidates.push(max_noise.max(min_vehicle) + 1.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let errors = |t: f64| -> usize {
        vehicle_maxima.iter().filter(|v| **v < t).count()
            + noise_maxima.iter().filter(|n| **n >= t).count()
    };
    let mut best = candidates[0];
    let mut best_err = errors(best);
    for &t in &candidates[1..] {
        let e = errors(t);
        if e < best_err {
            best = t;
            best_err = e;
        }
    }
    Ok(best)
}

/// Metrics of one experiment phase, all computed against the true labels.
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub results: Vec<RunResult>,
    pub rmse_overall: f64,
    pub rmse_by_rep: Vec<f64>,
    pub table: ClassificationTable,
    /// Predicted minus true approach time, one entry per result.
    pub offsets_s: Vec<f64>,
    pub offset_stats: OffsetStats,
    pub vehicle_maxima: Vec<f64>,
    pub noise_maxima: Vec<f64>,
    pub separation_gap: f64,
    pub calibrated_threshold: f64,
    /// Misclassified clips at the calibrated threshold.
    pub detection_errors: usize,
}

/// Scores a run against reference labels: speed RMSE (overall and per
/// repetition), the class-confusion table, approach-time offsets, and the
/// detection summary at a threshold calibrated on these maxima.
pub fn phase_outcome(
    output: RunCvOutput,
    labels_true: &[RecordingLabel],
    n_reps: usize,
) -> Result<PhaseOutcome> {
    let results = output.results;
    let mut pred = Vec::with_capacity(results.len());
    let mut truth = Vec::with_capacity(results.len());
    let mut outcomes = Vec::with_capacity(results.len());
    let mut offsets = Vec::with_capacity(results.len());
    let mut by_rep: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_reps];
    for r in &results {
        let t = &labels_true[r.clip_index];
        pred.push(r.estimated_speed_kmh);
        truth.push(t.speed_kmh);
        outcomes.push(SpeedOutcome {
            vehicle_id: r.vehicle_id.clone(),
            predicted_kmh: r.estimated_speed_kmh,
            true_kmh: t.speed_kmh,
        });
        offsets.push(r.predicted_t_cpa_s - t.t_cpa_s);
        by_rep[r.rep].0.push(r.estimated_speed_kmh);
        by_rep[r.rep].1.push(t.speed_kmh);
    }
    let rmse_overall = rmse(&pred, &truth)?;
    let rmse_by_rep = by_rep
        .iter()
        .map(|(p, t)| rmse(p, t))
        .collect::<Result<Vec<_>>>()?;
    let table = classification_table(&outcomes, &SpeedClassScheme::default())?;
    let offset_stats = detection_offset_stats(&offsets)?;
    let vehicle_maxima: Vec<f64> = results.iter().map(|r| r.profile_max).collect();
    let gap = separation_gap(&vehicle_maxima, &output.noise_maxima)?;
    let threshold = calibrate_threshold(&vehicle_maxima, &output.noise_maxima)?;
    let detection_errors = vehicle_maxima.iter().filter(|v| **v < threshold).count()
        + output.noise_maxima.iter().filter(|n| **n >= threshold).count();
    Ok(PhaseOutcome {
        results,
        rmse_overall,
        rmse_by_rep,
        table,
        offsets_s: offsets,
        offset_stats,
        vehicle_maxima,
        noise_maxima: output.noise_maxima,
        separation_gap: gap,
        calibrated_threshold: threshold,
        detection_errors,
    })
}

/// Outcome of the two-phase annotation-correction experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    /// Phase trained on the corrupted annotations.
    pub noisy: PhaseOutcome,
    /// Phase trained on the corrected annotations.
    pub corrected: PhaseOutcome,
    pub corrected_labels: Vec<RecordingLabel>,
    /// Root-mean-square annotation error before correction, seconds.
    pub label_rmse_noisy_s: f64,
    /// Root-mean-square annotation error after correction, seconds.
    pub label_rmse_corrected_s: f64,
    /// Speed RMSE change, corrected minus noisy (negative is improvement).
    pub rmse_delta: f64,
}

fn label_time_rmse(a: &[RecordingLabel], b: &[RecordingLabel]) -> Result<f64> {
    let ta: Vec<f64> = a.iter().map(|l| l.t_cpa_s).collect();
    let tb: Vec<f64> = b.iter().map(|l| l.t_cpa_s).collect();
    rmse(&ta, &tb)
}

/// Runs the whole correction experiment on a synthetic corpus: a
/// cross-validated run on the corrupted annotations, median-based label
/// correction from its predictions, a second run on the corrected labels,
/// and metrics for both phases against the generator's ground truth.
pub fn full_experiment(dataset: &SynthDataset, s: &RunSettings) -> Result<ExperimentOutcome> {
    if dataset.clips.len() != dataset.labels_true.len()
        || dataset.clips.len() != dataset.labels_noisy.len()
    {
        return Err(Error::invalid("dataset label arrays disagree on length"));
    }
    let features: Vec<ClipFeatures> = dataset
        .clips
        .par_iter()
        .map(|c| clip_features(c, &s.stft, &s.mel, &s.features))
        .collect::<Result<_>>()?;
    let noise_features: Vec<ClipFeatures> = dataset
        .noise_clips
        .par_iter()
        .map(|c| clip_features(c, &s.stft, &s.mel, &s.features))
        .collect::<Result<_>>()?;

    let noisy_out = run_cv(&features, &dataset.labels_noisy, &noise_features, s)?;
    let corrected_labels = correct_labels(&dataset.labels_noisy, &noisy_out.results)?;
    let corrected_out = run_cv(&features, &corrected_labels, &noise_features, s)?;

    let noisy = phase_outcome(noisy_out, &dataset.labels_true, s.plan.n_repetitions)?;
    let corrected = phase_outcome(corrected_out, &dataset.labels_true, s.plan.n_repetitions)?;
    let label_rmse_noisy_s = label_time_rmse(&dataset.labels_noisy, &dataset.labels_true)?;
    let label_rmse_corrected_s = label_time_rmse(&corrected_labels, &dataset.labels_true)?;
    let rmse_delta = corrected.rmse_overall - noisy.rmse_overall;
    Ok(ExperimentOutcome {
        noisy,
        corrected,
        corrected_labels,
        label_rmse_noisy_s,
        label_rmse_corrected_s,
        rmse_delta,
    })
}
