//! Attenuation target profiles and regression feature assembly.
//!
//! The regression target for a labeled pass-by is an attenuation-shaped
//! profile peaking at the closest-approach instant:
//!
//! `eta(t) = v / (beta * v^2 * (t_cpa - t)^2 + d_cpa^2)`
//!
//! with the speed `v` in m/s, `beta = 0.05` and `d_cpa = 1.5` m. Each STFT
//! frame pairs one profile value with a window of log-mel rows around that
//! frame: 25 frames taken at stride 3 and clamped at the clip edges, flattened
//! to a 1000-dimensional input.

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

/// Shape parameters of the attenuation profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaParams {
    /// Quadratic time-spread coefficient (dimensionless).
    pub beta: f64,
    /// Closest-approach distance in meters; sets the peak height `v / d_cpa^2`.
    pub d_cpa: f64,
}

impl Default for MaParams {
    fn default() -> Self {
        MaParams {
            beta: 0.05,
            d_cpa: 1.5,
        }
    }
}

impl MaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.d_cpa > 0.0) {
            return Err(Error::invalid("profile parameters must be positive"));
        }
        Ok(())
    }
}

/// Attenuation profile sampled on the STFT frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MaProfile {
    pub values: Vec<f64>,
    pub frame_times: Vec<f64>,
}

impl MaProfile {
    /// Index of the largest value; ties resolve to the earliest frame.
    pub fn peak_frame(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Ground-truth annotation for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingLabel {
    pub vehicle_id: String,
    pub speed_kmh: f64,
    /// Closest-approach instant in seconds; meaningful only when `has_vehicle`.
    pub t_cpa_s: f64,
    pub has_vehicle: bool,
}

/// Feature window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub q_frames: usize,
    pub stride: usize,
    pub n_mel: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            q_frames: 25,
            stride: 3,
            n_mel: 40,
        }
    }
}

impl FeatureConfig {
    /// Flattened input dimension, `q_frames * n_mel`.
    pub fn m_inputs(&self) -> usize {
        self.q_frames * self.n_mel
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_frames == 0 || self.stride == 0 || self.n_mel == 0 {
            return Err(Error::invalid("feature window parameters must be positive"));
        }
        if self.q_frames % 2 == 0 {
            return Err(Error::invalid("feature window must have an odd frame count"));
        }
        Ok(())
    }
}

/// Converts km/h to m/s.
pub fn kmh_to_ms(speed_kmh: f64) -> f64 {
    speed_kmh / 3.6
}

/// Evaluates the attenuation profile at one instant.
#[inline]
pub fn ma_value(speed_kmh: f64, t_cpa_s: f64, params: &MaParams, t: f64) -> f64 {
    let v = kmh_to_ms(speed_kmh);
    let dt = t_cpa_s - t;
    v / (params.beta * v * v * dt * dt + params.d_cpa * params.d_cpa)
}

/// Samples the attenuation profile on a frame time grid.
pub fn ma_profile(
    speed_kmh: f64,
    t_cpa_s: f64,
    params: &MaParams,
    frame_times: &[f64],
) -> Result<MaProfile> {
    if !(speed_kmh > 0.0) {
        return Err(Error::invalid(format!(
            "speed must be positive, got {speed_kmh} km/h"
        )));
    }
    params.validate()?;
    Ok(MaProfile {
        values: frame_times
            .iter()
            .map(|&t| ma_value(speed_kmh, t_cpa_s, params, t))
            .collect(),
        frame_times: frame_times.to_vec(),
    })
}

/// Frame-center times in seconds, `t_i = i * hop / sample_rate`.
pub fn frame_times(n_frames: usize, hop: usize, sample_rate: u32) -> Vec<f64> {
    (0..n_frames)
        .map(|i| (i * hop) as f64 / sample_rate as f64)
        .collect()
}

/// The frame indices feeding the window centered on frame `t`:
/// `t + stride * (k - (q - 1) / 2)` for `k = 0..q`, clamped to the clip.
pub fn window_frame_indices(t: usize, n_frames: usize, cfg: &FeatureConfig) -> Vec<usize> {
    let half = (cfg.q_frames - 1) / 2;
    let reach = (cfg.stride * half) as isize;
    let t = t as isize;
    (0..cfg.q_frames)
        .map(|k| {
            let idx = t - reach + (cfg.stride * k) as isize;
            idx.clamp(0, n_frames as isize - 1) as usize
        })
        .collect()
}

/// Flattens every frame's window into one `n_frames x m_inputs` matrix,
/// cast to `f32` for the regressor.
pub fn lms_window_matrix(lms: &LogMelSpectrogram, cfg: &FeatureConfig) -> Result<Mat<f32>> {
    cfg.validate()?;
    if lms.n_mel() != cfg.n_mel {
        return Err(Error::invalid(format!(
            "spectrogram has {} mel bands, feature config expects {}",
            lms.n_mel(),
            cfg.n_mel
        )));
    }
    let n_frames = lms.n_frames();
    if n_frames == 0 {
        return Err(Error::invalid("spectrogram has no frames"));
    }
    let mut out = Mat::zeros(n_frames, cfg.m_inputs());
    for t in 0..n_frames {
        let row = out.row_mut(t);
        for (slot, src) in window_frame_indices(t, n_frames, cfg).into_iter().enumerate() {
            let dst = &mut row[slot * cfg.n_mel..(slot + 1) * cfg.n_mel];
            for (d, s) in dst.iter_mut().zip(lms.values.row(src)) {
                *d = *s as f32;
            }
        }
    }
    Ok(out)
}

/// Assembles one (feature window, target) pair per frame.
pub fn extract_pairs(
    lms: &LogMelSpectrogram,
    target: &MaProfile,
    cfg: &FeatureConfig,
) -> Result<Vec<(Vec<f64>, f64)>> {
    cfg.validate()?;
    if lms.n_frames() != target.values.len() {
        return Err(Error::invalid(format!(
            "spectrogram has {} frames but the target profile has {}",
            lms.n_frames(),
            target.values.len()
        )));
    }
    if lms.n_mel() != cfg.n_mel {
        return Err(Error::invalid(format!(
            "spectrogram has {} mel bands, feature config expects {}",
            lms.n_mel(),
            cfg.n_mel
        )));
    }
    let n_frames = lms.n_frames();
    Ok((0..n_frames)
        .map(|t| {
            let mut feat = Vec::with_capacity(cfg.m_inputs());
            for src in window_frame_indices(t, n_frames, cfg) {
                feat.extend_from_slice(lms.values.row(src));
            }
            (feat, target.values[t])
        })
        .collect())
}
