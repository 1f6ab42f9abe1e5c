//! Synthetic pass-by recordings with known ground truth.
//!
//! A vehicle is modeled as a harmonic engine source plus enveloped broadband
//! tire noise moving along a straight line past the microphone. The received
//! signal gets the kinematic Doppler shift of each harmonic, inverse-square
//! amplitude weighting by source distance, and a stationary background noise
//! floor at a configurable signal-to-noise ratio. Ground-truth labels record
//! the exact speed and closest-approach time used by the generator; a
//! separate annotation-noise model produces the corrupted labels that the
//! correction experiment starts from.

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::features::RecordingLabel;
use crate::randn::standard_normal;
use crate::seed::derive;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const SPEED_OF_SOUND_M_S: f64 = 343.0;

/// Everything that determines one synthetic pass-by, including its RNG seed.
#[derive(Clone, Debug)]
pub struct PassbyParams {
    pub speed_kmh: f64,
    pub t_cpa_s: f64,
    pub d_cpa_m: f64,
    pub base_freq_hz: f64,
    /// Relative amplitude of each engine harmonic; index k scales frequency
    /// (k + 1) * base_freq.
    pub harmonic_amps: Vec<f64>,
    /// Broadband (tire) level relative to the harmonic stack.
    pub broadband_level: f64,
    /// Vehicle-to-background power ratio over the whole clip, in dB.
    pub snr_db: f64,
    /// Travel direction past the microphone, +1 or -1. The waveform is
    /// symmetric in it; it only feeds the annotation-bias model.
    pub direction: i8,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for PassbyParams {
    fn default() -> Self {
        PassbyParams {
            speed_kmh: 80.0,
            t_cpa_s: 5.0,
            d_cpa_m: 1.5,
            base_freq_hz: 120.0,
            harmonic_amps: (1..=8).map(|k| 1.0 / k as f64).collect(),
            broadband_level: 0.2,
            snr_db: 20.0,
            direction: 1,
            duration_s: 10.0,
            sample_rate: 44_100,
            seed: 0,
        }
    }
}

impl PassbyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_kmh > 0.0 && self.speed_kmh.is_finite()) {
            return Err(Error::invalid("speed must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !(self.t_cpa_s > 0.0 && self.t_cpa_s < self.duration_s) {
            return Err(Error::invalid(
                "closest-approach time must lie inside the clip",
            ));
        }
        if !(self.d_cpa_m > 0.0) {
            return Err(Error::invalid("closest-approach distance must be positive"));
        }
        if !(self.base_freq_hz > 0.0) {
            return Err(Error::invalid("base frequency must be positive"));
        }
        if self.harmonic_amps.is_empty()
            || self.harmonic_amps.iter().any(|a| !(*a >= 0.0))
            || self.harmonic_amps.iter().all(|a| *a == 0.0)
        {
            return Err(Error::invalid(
                "harmonic amplitudes must be nonnegative with at least one positive",
            ));
        }
        let v = self.speed_kmh / 3.6;
        if v >= SPEED_OF_SOUND_M_S {
            return Err(Error::invalid("speed must stay below the speed of sound"));
        }
        // Highest harmonic at maximum approach shift must stay below Nyquist.
        let top = self.base_freq_hz * self.harmonic_amps.len() as f64 * SPEED_OF_SOUND_M_S
            / (SPEED_OF_SOUND_M_S - v);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::invalid(
                "highest Doppler-shifted harmonic exceeds Nyquist",
            ));
        }
        if !(self.broadband_level >= 0.0) {
            return Err(Error::invalid("broadband level must be nonnegative"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("snr must be finite"));
        }
        if self.direction != 1 && self.direction != -1 {
            return Err(Error::invalid("direction must be +1 or -1"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(())
    }
}

/// Unit-RMS stationary colored noise: white Gaussian through a one-pole
/// lowpass at `cutoff_hz`.
fn colored_noise(rng: &mut ChaCha8Rng, n: usize, cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let a = (-TAU * cutoff_hz / sample_rate).exp();
    let mut out = Vec::with_capacity(n);
    let mut y = 0.0;
    for _ in 0..n {
        y = a * y + (1.0 - a) * standard_normal(rng);
        out.push(y);
    }
    let ms: f64 = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if ms > 0.0 {
        let s = 1.0 / ms.sqrt();
        for v in &mut out {
            *v *= s;
        }
    }
    out
}

/// Renders one pass-by clip. The output peak is normalized to 0.9.
pub fn synth_passby(p: &PassbyParams) -> Result<AudioClip> {
    p.validate()?;
    let fs = p.sample_rate as f64;
    let n = (p.duration_s * fs).round() as usize;
    let v = p.speed_kmh / 3.6;
    let d2 = p.d_cpa_m * p.d_cpa_m;
    let c = SPEED_OF_SOUND_M_S;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut phases: Vec<f64> = (0..p.harmonic_amps.len())
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    let broadband = colored_noise(&mut rng, n, 3000.0, fs);
    let background = colored_noise(&mut rng, n, 1500.0, fs);

    let mut vehicle = vec![0.0f64; n];
    for (i, out) in vehicle.iter_mut().enumerate() {
        let u = i as f64 / fs - p.t_cpa_s;
        let r2 = v * v * u * u + d2;
        // Envelope: inverse-square distance, normalized to 1 at closest
        // approach.
        let g = d2 / r2;
        // Radial speed toward the microphone; positive while approaching.
        let vr = -v * v * u / r2.sqrt();
        let ratio = c / (c - vr);
        let mut s = 0.0;
        for (k, (amp, ph)) in p.harmonic_amps.iter().zip(phases.iter_mut()).enumerate() {
            let f = p.base_freq_hz * (k + 1) as f64 * ratio;
            *ph += TAU * f / fs;
            if *ph > TAU {
                *ph -= TAU;
            }
            s += amp * ph.sin();
        }
        *out = g * (s + p.broadband_level * broadband[i]);
    }

    let vehicle_ms: f64 = vehicle.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let bg_rms = vehicle_ms.sqrt() * 10f64.powf(-p.snr_db / 20.0);
    let mut x: Vec<f64> = vehicle
        .iter()
        .zip(&background)
        .map(|(s, b)| s + bg_rms * b)
        .collect();

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let s = 0.9 / peak;
        for v in &mut x {
            *v *= s;
        }
    }
    AudioClip::new(x.into_iter().map(|v| v as f32).collect(), p.sample_rate)
}

/// Renders a vehicle-free background clip: stationary colored noise with the
/// same spectral shape as the pass-by background, scaled to RMS `rms`.
/// `rms` is in normalized clip units, so callers can match the background
/// level the pass-by clips exhibit after their own peak normalization.
pub fn synth_noise_clip(duration_s: f64, sample_rate: u32, rms: f64, seed: u64) -> Result<AudioClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::invalid("duration must be positive"));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if !(rms > 0.0 && rms.is_finite()) {
        return Err(Error::invalid("noise rms must be positive"));
    }
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = colored_noise(&mut rng, n, 1500.0, fs);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Samples must stay inside [-1, 1] even for absurd requested levels.
    let s = if peak * rms > 0.99 { 0.99 / peak } else { rms };
    for v in &mut x {
        *v *= s;
    }
    AudioClip::new(x.into_iter().map(|v| v as f32).collect(), sample_rate)
}

/// Sliding-window RMS of a clip, windows centered on the same
/// `i * hop / sample_rate` grid the spectrogram uses. Returns
/// `(times, rms)`.
pub fn rms_envelope(clip: &AudioClip, window: usize, hop: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window == 0 || hop == 0 {
        return Err(Error::invalid("window and hop must be positive"));
    }
    if clip.len() == 0 {
        return Err(Error::invalid("clip is empty"));
    }
    let n = clip.len();
    let fs = clip.sample_rate as f64;
    let n_frames = n / hop + 1;
    let half = window / 2;
    let mut times = Vec::with_capacity(n_frames);
    let mut rms = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let center = i * hop;
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(n);
        let seg = &clip.samples[lo..hi];
        let ms: f64 = seg.iter().map(|v| *v as f64 * *v as f64).sum::<f64>() / seg.len() as f64;
        times.push(center as f64 / fs);
        rms.push(ms.sqrt());
    }
    Ok((times, rms))
}

/// Annotation-error model: a travel-direction-dependent constant offset plus
/// zero-mean Gaussian jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelNoiseModel {
    pub bias_s: f64,
    pub jitter_std_s: f64,
    pub seed: u64,
}

impl Default for LabelNoiseModel {
    fn default() -> Self {
        LabelNoiseModel {
            bias_s: 0.15,
            jitter_std_s: 0.05,
            seed: 1,
        }
    }
}

/// Corrupts closest-approach annotations: `t' = clamp(t + direction * bias +
/// jitter, 0, duration)`. Speeds and identities are untouched.
pub fn inject_label_noise(
    labels: &[RecordingLabel],
    directions: &[i8],
    model: &LabelNoiseModel,
    duration_s: f64,
) -> Result<Vec<RecordingLabel>> {
    if labels.len() != directions.len() {
        return Err(Error::invalid("label and direction counts differ"));
    }
    if !(model.jitter_std_s >= 0.0) {
        return Err(Error::invalid("jitter must be nonnegative"));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    Ok(labels
        .iter()
        .zip(directions)
        .map(|(label, dir)| {
            let shift =
                *dir as f64 * model.bias_s + model.jitter_std_s * standard_normal(&mut rng);
            let mut out = label.clone();
            out.t_cpa_s = (label.t_cpa_s + shift).clamp(0.0, duration_s);
            out
        })
        .collect())
}

/// Generation plan for a full synthetic corpus: a fleet of vehicles with a
/// fixed per-vehicle timbre, several passes per vehicle with random speed,
/// direction, and approach time, plus vehicle-free background clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_vehicles: usize,
    pub passes_per_vehicle: usize,
    pub n_noise_clips: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub d_cpa_m: f64,
    pub speed_range_kmh: (f64, f64),
    pub t_cpa_range_s: (f64, f64),
    pub base_freq_range_hz: (f64, f64),
    pub n_harmonics: usize,
    pub broadband_range: (f64, f64),
    pub snr_db: f64,
    pub label_noise: LabelNoiseModel,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_vehicles: 10,
            passes_per_vehicle: 10,
            n_noise_clips: 20,
            duration_s: 10.0,
            sample_rate: 44_100,
            d_cpa_m: 1.5,
            speed_range_kmh: (30.0, 105.0),
            t_cpa_range_s: (2.0, 8.0),
            base_freq_range_hz: (70.0, 220.0),
            n_harmonics: 8,
            broadband_range: (0.1, 0.4),
            snr_db: 20.0,
            label_noise: LabelNoiseModel::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 || self.passes_per_vehicle == 0 {
            return Err(Error::invalid("need at least one vehicle and one pass"));
        }
        for (name, (lo, hi)) in [
            ("speed", self.speed_range_kmh),
            ("t_cpa", self.t_cpa_range_s),
            ("base frequency", self.base_freq_range_hz),
            ("broadband", self.broadband_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("invalid {name} range")));
            }
        }
        if !(self.t_cpa_range_s.0 > 0.0 && self.t_cpa_range_s.1 < self.duration_s) {
            return Err(Error::invalid(
                "t_cpa range must lie strictly inside the clip duration",
            ));
        }
        if self.n_harmonics == 0 {
            return Err(Error::invalid("need at least one harmonic"));
        }
        Ok(())
    }
}

/// A generated corpus: pass-by clips with true and annotation-noised labels,
/// travel directions, and vehicle-free noise clips.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub clips: Vec<AudioClip>,
    pub clip_names: Vec<String>,
    pub labels_true: Vec<RecordingLabel>,
    pub labels_noisy: Vec<RecordingLabel>,
    pub directions: Vec<i8>,
    pub noise_clips: Vec<AudioClip>,
    pub noise_names: Vec<String>,
}

impl SynthDataset {
    pub fn n_passes(&self) -> usize {
        self.clips.len()
    }
}

// Stream tags for seed derivation; distinct per randomized stage.
const STREAM_VEHICLE: u64 = 1;
const STREAM_PASS: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Generates the corpus. Bit-identical for equal configs; clip synthesis is
/// parallel but each clip's RNG stream is derived from (seed, vehicle, pass)
/// alone.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<SynthDataset> {
    cfg.validate()?;

    struct PassSpec {
        name: String,
        vehicle: usize,
        pass_idx: usize,
        label: RecordingLabel,
        direction: i8,
    }

    // Per-vehicle timbre, fixed across that vehicle's passes.
    struct Timbre {
        base_freq_hz: f64,
        harmonic_amps: Vec<f64>,
        broadband_level: f64,
    }
    let timbres: Vec<Timbre> = (0..cfg.n_vehicles)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[STREAM_VEHICLE, v as u64]));
            let base_freq_hz =
                rng.random_range(cfg.base_freq_range_hz.0..=cfg.base_freq_range_hz.1);
            let rolloff = rng.random_range(0.7..=1.3);
            let harmonic_amps = (1..=cfg.n_harmonics)
                .map(|k| {
                    let jitter = 1.0 + 0.2 * (rng.random::<f64>() * 2.0 - 1.0);
                    jitter / (k as f64).powf(rolloff)
                })
                .collect();
            let broadband_level =
                rng.random_range(cfg.broadband_range.0..=cfg.broadband_range.1);
            Timbre {
                base_freq_hz,
                harmonic_amps,
                broadband_level,
            }
        })
        .collect();

    let mut specs = Vec::with_capacity(cfg.n_vehicles * cfg.passes_per_vehicle);
    for v in 0..cfg.n_vehicles {
        for p in 0..cfg.passes_per_vehicle {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[STREAM_PASS, v as u64, p as u64]));
            let speed_kmh = rng.random_range(cfg.speed_range_kmh.0..=cfg.speed_range_kmh.1);
            let t_cpa_s = rng.random_range(cfg.t_cpa_range_s.0..=cfg.t_cpa_range_s.1);
            let direction = if rng.random::<bool>() { 1 } else { -1 };
            specs.push(PassSpec {
                name: format!("v{:02}_p{:02}", v + 1, p + 1),
                vehicle: v,
                pass_idx: p,
                label: RecordingLabel {
                    vehicle_id: format!("v{:02}", v + 1),
                    speed_kmh,
                    t_cpa_s,
                    has_vehicle: true,
                },
                direction,
            });
        }
    }

    let clips: Vec<AudioClip> = specs
        .par_iter()
        .map(|s| {
            let t = &timbres[s.vehicle];
            synth_passby(&PassbyParams {
                speed_kmh: s.label.speed_kmh,
                t_cpa_s: s.label.t_cpa_s,
                d_cpa_m: cfg.d_cpa_m,
                base_freq_hz: t.base_freq_hz,
                harmonic_amps: t.harmonic_amps.clone(),
                broadband_level: t.broadband_level,
                snr_db: cfg.snr_db,
                direction: s.direction,
                duration_s: cfg.duration_s,
                sample_rate: cfg.sample_rate,
                seed: derive(cfg.seed, &[STREAM_PASS, s.vehicle as u64, s.pass_idx as u64, 17]),
            })
        })
        .collect::<Result<_>>()?;

    // Noise clips sit at the stationary-background level the pass-by clips
    // exhibit after peak normalization, as if cut from the same recording
    // session: a low quantile of each clip's sliding-RMS envelope lands on
    // its vehicle-free stretch, and the median across clips sets the session
    // level. A per-clip wobble of up to 1 dB keeps the levels from being
    // artificially identical.
    let mut floors = clips
        .iter()
        .map(|c| {
            let sr = c.sample_rate as usize;
            let (_, mut rms) = rms_envelope(c, (sr / 4).max(1), (sr / 10).max(1))?;
            rms.sort_by(|a, b| a.total_cmp(b));
            Ok(rms[rms.len() / 10])
        })
        .collect::<Result<Vec<f64>>>()?;
    floors.sort_by(|a, b| a.total_cmp(b));
    let session_rms = floors[floors.len() / 2];

    let noise_clips: Vec<AudioClip> = (0..cfg.n_noise_clips)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[STREAM_NOISE, i as u64, 23]));
            let wobble_db = rng.random_range(-1.0..=1.0);
            synth_noise_clip(
                cfg.duration_s,
                cfg.sample_rate,
                session_rms * 10f64.powf(wobble_db / 20.0),
                derive(cfg.seed, &[STREAM_NOISE, i as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let noise_names = (0..cfg.n_noise_clips)
        .map(|i| format!("noise_{:02}", i + 1))
        .collect();

    let labels_true: Vec<RecordingLabel> = specs.iter().map(|s| s.label.clone()).collect();
    let directions: Vec<i8> = specs.iter().map(|s| s.direction).collect();
    let labels_noisy =
        inject_label_noise(&labels_true, &directions, &cfg.label_noise, cfg.duration_s)?;

    Ok(SynthDataset {
        clips,
        clip_names: specs.into_iter().map(|s| s.name).collect(),
        labels_true,
        labels_noisy,
        directions,
        noise_clips,
        noise_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};

    /// Fundamental frequency near `t` by parabolic interpolation of the
    /// log-power spectrum peak in the 40..350 Hz band.
    fn estimate_fundamental(clip: &AudioClip, t: f64) -> f64 {
        let cfg = StftConfig::default();
        let spec = stft(clip, &cfg).unwrap();
        let fs = clip.sample_rate as f64;
        let frame = ((t * fs / cfg.hop as f64).round() as usize).min(spec.n_frames() - 1);
        let row = spec.power.row(frame);
        let bin_hz = fs / cfg.window_len as f64;
        let lo = (40.0 / bin_hz).ceil() as usize;
        let hi = (350.0 / bin_hz).floor() as usize;
        let mut k = lo;
        for b in lo..=hi {
            if row[b] > row[k] {
                k = b;
            }
        }
        let (a, b, c) = (
            row[k - 1].max(1e-300).ln(),
            row[k].max(1e-300).ln(),
            row[k + 1].max(1e-300).ln(),
        );
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            0.5 * (a - c) / denom
        } else {
            0.0
        };
        (k as f64 + delta) * bin_hz
    }

    fn clean_params() -> PassbyParams {
        PassbyParams {
            speed_kmh: 80.0,
            base_freq_hz: 100.0,
            harmonic_amps: vec![1.0, 0.3, 0.1],
            broadband_level: 0.1,
            snr_db: 60.0,
            ..PassbyParams::default()
        }
    }

    #[test]
    fn envelope_peaks_at_closest_approach() {
        let p = PassbyParams {
            speed_kmh: 60.0,
            t_cpa_s: 4.2,
            snr_db: 20.0,
            ..PassbyParams::default()
        };
        let clip = synth_passby(&p).unwrap();
        let (times, rms) = rms_envelope(&clip, 4096, 1105).unwrap();
        let mut best = 0;
        for i in 0..rms.len() {
            if rms[i] > rms[best] {
                best = i;
            }
        }
        assert!(
            (times[best] - p.t_cpa_s).abs() <= 0.05,
            "envelope peak at {} vs t_cpa {}",
            times[best],
            p.t_cpa_s
        );
    }

    #[test]
    fn doppler_shift_brackets_base_frequency() {
        let p = clean_params();
        let clip = synth_passby(&p).unwrap();
        let v = p.speed_kmh / 3.6;
        let c = SPEED_OF_SOUND_M_S;

        let before = estimate_fundamental(&clip, p.t_cpa_s - 2.0);
        let after = estimate_fundamental(&clip, p.t_cpa_s + 2.0);
        assert!(before > after, "before {before} vs after {after}");

        // At 2 s from closest approach the radial speed is within a percent
        // of the full speed, so the asymptotic shift is the reference.
        let expect_before = p.base_freq_hz * c / (c - v);
        let expect_after = p.base_freq_hz * c / (c + v);
        assert!(
            (before - expect_before).abs() <= 2.0,
            "approach estimate {before} vs {expect_before}"
        );
        assert!(
            (after - expect_after).abs() <= 2.0,
            "recede estimate {after} vs {expect_after}"
        );
    }

    #[test]
    fn doppler_track_is_monotone_to_estimator_tolerance() {
        let p = clean_params();
        let clip = synth_passby(&p).unwrap();
        let offsets = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let est: Vec<f64> = offsets
            .iter()
            .map(|o| estimate_fundamental(&clip, p.t_cpa_s + o))
            .collect();
        for w in est.windows(2) {
            assert!(w[1] <= w[0] + 2.0, "track rose: {} -> {}", w[0], w[1]);
        }
        assert!(
            est[0] - est[est.len() - 1] > 10.0,
            "overall drop too small: {est:?}"
        );
    }

    #[test]
    fn output_peak_is_normalized() {
        let clip = synth_passby(&PassbyParams::default()).unwrap();
        assert_eq!(clip.len(), 441_000);
        let peak = clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-3, "peak {peak}");
    }

    #[test]
    fn noise_clip_is_stationary_and_bounded() {
        let clip = synth_noise_clip(10.0, 44_100, 0.01, 9).unwrap();
        assert_eq!(clip.len(), 441_000);
        assert!(clip.samples.iter().all(|v| v.abs() <= 1.0));
        let ms: f64 = clip.samples.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()
            / clip.len() as f64;
        assert!((ms.sqrt() - 0.01).abs() < 1e-4, "rms {}", ms.sqrt());
        let (_, rms) = rms_envelope(&clip, 4096, 1105).unwrap();
        let mut sorted = rms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let max = sorted[sorted.len() - 1];
        assert!(
            max / median < 3.0,
            "envelope max {max} vs median {median}"
        );
    }

    #[test]
    fn noise_clips_match_the_session_background_level() {
        let cfg = DatasetConfig {
            n_vehicles: 2,
            passes_per_vehicle: 2,
            n_noise_clips: 3,
            duration_s: 4.0,
            t_cpa_range_s: (1.5, 2.5),
            seed: 11,
            ..DatasetConfig::default()
        };
        let ds = make_dataset(&cfg).unwrap();
        let rms = |c: &AudioClip| {
            (c.samples.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / c.len() as f64).sqrt()
        };
        // Background level inside a pass-by clip: quiet start, before CPA.
        let head = |c: &AudioClip| {
            let n = c.sample_rate as usize / 2;
            (c.samples[..n].iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let vehicle_bg: Vec<f64> = ds.clips.iter().map(head).collect();
        for (clip, name) in ds.noise_clips.iter().zip(&ds.noise_names) {
            let level = rms(clip);
            let lo = vehicle_bg.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vehicle_bg.iter().cloned().fold(0.0f64, f64::max);
            // Within 3 dB of the in-clip background band (1 dB wobble plus
            // measurement slack).
            let factor = 10f64.powf(3.0 / 20.0);
            assert!(
                level > lo / factor && level < hi * factor,
                "{name}: rms {level} outside background band [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn label_noise_mean_shift_matches_bias() {
        let labels: Vec<RecordingLabel> = (0..1000)
            .map(|i| RecordingLabel {
                vehicle_id: format!("v{i}"),
                speed_kmh: 50.0,
                t_cpa_s: 5.0,
                has_vehicle: true,
            })
            .collect();
        let directions = vec![1i8; 1000];
        let model = LabelNoiseModel {
            bias_s: 0.15,
            jitter_std_s: 0.05,
            seed: 3,
        };
        let noisy = inject_label_noise(&labels, &directions, &model, 10.0).unwrap();
        let mean_shift: f64 = noisy
            .iter()
            .zip(&labels)
            .map(|(n, t)| n.t_cpa_s - t.t_cpa_s)
            .sum::<f64>()
            / 1000.0;
        assert!(
            (mean_shift - 0.15).abs() <= 0.01,
            "mean shift {mean_shift}"
        );
        // Opposite direction flips the bias sign.
        let neg = inject_label_noise(&labels, &vec![-1i8; 1000], &model, 10.0).unwrap();
        let mean_neg: f64 =
            neg.iter().zip(&labels).map(|(n, t)| n.t_cpa_s - t.t_cpa_s).sum::<f64>() / 1000.0;
        assert!((mean_neg + 0.15).abs() <= 0.01, "mean shift {mean_neg}");
    }

    #[test]
    fn label_noise_clamps_to_clip() {
        let labels = vec![RecordingLabel {
            vehicle_id: "v1".into(),
            speed_kmh: 50.0,
            t_cpa_s: 0.02,
            has_vehicle: true,
        }];
        let model = LabelNoiseModel {
            bias_s: -0.5,
            jitter_std_s: 0.0,
            seed: 0,
        };
        let noisy = inject_label_noise(&labels, &[1], &model, 10.0).unwrap();
        assert_eq!(noisy[0].t_cpa_s, 0.0);
        let model_hi = LabelNoiseModel {
            bias_s: 20.0,
            jitter_std_s: 0.0,
            seed: 0,
        };
        let hi = inject_label_noise(&labels, &[1], &model_hi, 10.0).unwrap();
        assert_eq!(hi[0].t_cpa_s, 10.0);
    }

    fn tiny_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_vehicles: 2,
            passes_per_vehicle: 2,
            n_noise_clips: 2,
            duration_s: 2.0,
            t_cpa_range_s: (0.8, 1.2),
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn dataset_is_bit_identical_per_seed() {
        let a = make_dataset(&tiny_config(42)).unwrap();
        let b = make_dataset(&tiny_config(42)).unwrap();
        for (ca, cb) in a.clips.iter().zip(&b.clips) {
            assert!(ca
                .samples
                .iter()
                .zip(&cb.samples)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for (na, nb) in a.noise_clips.iter().zip(&b.noise_clips) {
            assert!(na
                .samples
                .iter()
                .zip(&nb.samples)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(a.labels_true, b.labels_true);
        assert_eq!(a.labels_noisy, b.labels_noisy);

        let c = make_dataset(&tiny_config(43)).unwrap();
        assert!(a.clips[0]
            .samples
            .iter()
            .zip(&c.clips[0].samples)
            .any(|(x, y)| x.to_bits() != y.to_bits()));
    }

    #[test]
    fn dataset_shape_and_label_ranges() {
        let cfg = tiny_config(7);
        let ds = make_dataset(&cfg).unwrap();
        assert_eq!(ds.clips.len(), 4);
        assert_eq!(ds.clip_names.len(), 4);
        assert_eq!(ds.labels_true.len(), 4);
        assert_eq!(ds.labels_noisy.len(), 4);
        assert_eq!(ds.directions.len(), 4);
        assert_eq!(ds.noise_clips.len(), 2);
        assert_eq!(ds.noise_names.len(), 2);

        let mut names = ds.clip_names.clone();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 4, "clip names must be unique");

        for (label, dir) in ds.labels_true.iter().zip(&ds.directions) {
            assert!(label.speed_kmh >= 30.0 && label.speed_kmh <= 105.0);
            assert!(label.t_cpa_s >= 0.8 && label.t_cpa_s <= 1.2);
            assert!(label.has_vehicle);
            assert!(*dir == 1 || *dir == -1);
        }
        for label in &ds.labels_noisy {
            assert!(label.t_cpa_s >= 0.0 && label.t_cpa_s <= cfg.duration_s);
        }
        // Passes of the same vehicle share its id prefix.
        assert!(ds.clip_names[0].starts_with("v01_"));
        assert!(ds.clip_names[3].starts_with("v02_"));
        assert_eq!(ds.labels_true[0].vehicle_id, "v01");
    }

    #[test]
    fn rejects_invalid_params() {
        let base = PassbyParams::default();
        for bad in [
            PassbyParams { speed_kmh: 0.0, ..base.clone() },
            PassbyParams { t_cpa_s: 11.0, ..base.clone() },
            PassbyParams { t_cpa_s: 0.0, ..base.clone() },
            PassbyParams { d_cpa_m: 0.0, ..base.clone() },
            PassbyParams { harmonic_amps: vec![], ..base.clone() },
            PassbyParams { harmonic_amps: vec![0.0, 0.0], ..base.clone() },
            PassbyParams { base_freq_hz: 4000.0, ..base.clone() },
            PassbyParams { direction: 0, ..base.clone() },
            PassbyParams { broadband_level: -1.0, ..base.clone() },
        ] {
            assert!(synth_passby(&bad).is_err());
        }
        let mut cfg = DatasetConfig::default();
        cfg.t_cpa_range_s = (2.0, 12.0);
        assert!(make_dataset(&cfg).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]

            #[test]
            fn passby_output_is_finite_and_bounded(
                speed in 30.0f64..105.0,
                t_cpa in 0.5f64..1.5,
                f0 in 70.0f64..220.0,
                seed in 0u64..1000,
            ) {
                let p = PassbyParams {
                    speed_kmh: speed,
                    t_cpa_s: t_cpa,
                    base_freq_hz: f0,
                    duration_s: 2.0,
                    seed,
                    ..PassbyParams::default()
                };
                let clip = synth_passby(&p).unwrap();
                prop_assert_eq!(clip.len(), 88_200);
                prop_assert!(clip.samples.iter().all(|v| v.is_finite()));
                let peak = clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
                prop_assert!(peak <= 0.9 + 1e-4);
            }
        }
    }
}
