//! Spectral front-end: Hamming window, STFT and log-mel spectrograms.
//!
//! The defaults reproduce the analysis chain the rest of the crate is built
//! around: 10-second mono clips at 44100 Hz, a 4096-sample Hamming window
//! with a 1105-sample hop (exactly 400 frames per clip) and 40 triangular
//! mel filters on [0, 16 kHz].
//!
//! Framing is centered: the signal is reflection-padded by half a window on
//! each side and frame `i` is centered on sample `i * hop`, giving
//! `floor(len / hop) + 1` frames. All arithmetic is `f64`; power spectra are
//! squared DFT magnitudes over bins `0..=window_len/2`.

use crate::error::{Error, Result};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

/// Mono audio snippet. Samples are nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// STFT analysis parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 4096,
            hop: 1105,
        }
    }
}

/// Power spectrogram: `n_frames x (window_len/2 + 1)` nonnegative entries.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub power: Mat<f64>,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.power.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.power.cols()
    }
}

/// Symmetric Hamming window, `w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1))`.
///
/// `n == 1` yields `[1.0]`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
        .collect())
}

/// Radix-2 FFT plan with precomputed bit-reversal and twiddle tables.
struct Fft {
    n: usize,
    rev: Vec<u32>,
    // One table per butterfly stage, len/2 twiddles each.
    twiddles: Vec<Vec<(f64, f64)>>,
}

impl Fft {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let mut rev = vec![0u32; n];
        for (i, r) in rev.iter_mut().enumerate() {
            *r = (i as u32).reverse_bits() >> (32 - bits);
        }
        let mut twiddles = Vec::new();
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = -2.0 * std::f64::consts::PI / len as f64;
            twiddles.push(
                (0..half)
                    .map(|k| {
                        let a = step * k as f64;
                        (a.cos(), a.sin())
                    })
                    .collect(),
            );
            len <<= 1;
        }
        Fft { n, rev, twiddles }
    }

    fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i] as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        let mut stage = 0;
        while len <= n {
            let half = len / 2;
            let tw = &self.twiddles[stage];
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = tw[k];
                    let i = start + k;
                    let j = i + half;
                    let tr = re[j] * wr - im[j] * wi;
                    let ti = re[j] * wi + im[j] * wr;
                    re[j] = re[i] - tr;
                    im[j] = im[i] - ti;
                    re[i] += tr;
                    im[i] += ti;
                }
            }
            len <<= 1;
            stage += 1;
        }
    }
}

/// Reflected sample lookup: index `p` may run past either end of the clip.
#[inline]
fn reflect(samples: &[f32], p: isize) -> f64 {
    let len = samples.len() as isize;
    let q = if p < 0 {
        -p
    } else if p >= len {
        2 * len - 2 - p
    } else {
        p
    };
    samples[q as usize] as f64
}

/// Centered STFT power spectrogram.
///
/// The clip is reflection-padded by `window_len / 2` on each side, so a clip
/// of `len` samples yields `floor(len / hop) + 1` frames.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    if clip.is_empty() {
        return Err(Error::invalid("cannot take the STFT of an empty clip"));
    }
    if cfg.hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    if !cfg.window_len.is_power_of_two() || cfg.window_len < 2 {
        return Err(Error::invalid(format!(
            "window length must be a power of two >= 2, got {}",
            cfg.window_len
        )));
    }
    let half = cfg.window_len / 2;
    if clip.len() <= half {
        return Err(Error::invalid(format!(
            "clip of {} samples is too short to reflect-pad a {}-sample window",
            clip.len(),
            cfg.window_len
        )));
    }

    let window = hamming_window(cfg.window_len)?;
    let fft = Fft::new(cfg.window_len);
    let n_frames = clip.len() / cfg.hop + 1;
    let n_bins = half + 1;
    let mut power = Mat::zeros(n_frames, n_bins);
    let mut re = vec![0.0; cfg.window_len];
    let mut im = vec![0.0; cfg.window_len];

    for frame in 0..n_frames {
        let center = (frame * cfg.hop) as isize;
        for (k, w) in window.iter().enumerate() {
            re[k] = reflect(&clip.samples, center - half as isize + k as isize) * w;
        }
        im.fill(0.0);
        fft.forward(&mut re, &mut im);
        let out = power.row_mut(frame);
        for (b, o) in out.iter_mut().enumerate() {
            *o = re[b] * re[b] + im[b] * im[b];
        }
    }

    Ok(Spectrogram {
        power,
        window_len: cfg.window_len,
        hop: cfg.hop,
    })
}

/// Mel filterbank parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_mel: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub window_len: usize,
    pub sample_rate: u32,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mel: 40,
            f_min: 0.0,
            f_max: 16_000.0,
            window_len: 4096,
            sample_rate: 44_100,
        }
    }
}

/// Triangular mel filterbank, one row per filter over DFT bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub weights: Mat<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Peak frequency of each filter, strictly increasing.
    pub centers: Vec<f64>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Builds `n_mel` triangular filters with centers equally spaced on the mel
/// scale between `f_min` and `f_max`. Each filter peaks at 1 and falls
/// linearly to zero at its neighbours' centers.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<MelFilterbank> {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    if cfg.n_mel == 0 {
        return Err(Error::invalid("need at least one mel filter"));
    }
    if !(0.0 <= cfg.f_min && cfg.f_min < cfg.f_max) {
        return Err(Error::invalid("need 0 <= f_min < f_max"));
    }
    if cfg.f_max > nyquist {
        return Err(Error::invalid(format!(
            "f_max {} Hz exceeds the Nyquist frequency {} Hz",
            cfg.f_max, nyquist
        )));
    }

    let n_bins = cfg.window_len / 2 + 1;
    let mel_lo = hz_to_mel(cfg.f_min);
    let mel_hi = hz_to_mel(cfg.f_max);
    // n_mel + 2 edge/center points; filter m spans points m..m+2.
    let points: Vec<f64> = (0..cfg.n_mel + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mel + 1) as f64))
        .collect();

    let bin_hz = cfg.sample_rate as f64 / cfg.window_len as f64;
    let mut weights = Mat::zeros(cfg.n_mel, n_bins);
    for m in 0..cfg.n_mel {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let row = weights.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f >= lo && f <= center {
                if center > lo {
                    (f - lo) / (center - lo)
                } else {
                    0.0
                }
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
    }

    Ok(MelFilterbank {
        weights,
        f_min: cfg.f_min,
        f_max: cfg.f_max,
        centers: points[1..=cfg.n_mel].to_vec(),
    })
}

/// Log floor applied before taking `ln` of mel-filtered power.
pub const LOG_FLOOR: f64 = 1e-10;

/// Log-mel spectrogram: `n_frames x n_mel` natural-log power.
#[derive(Clone, Debug)]
pub struct LogMelSpectrogram {
    pub values: Mat<f64>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mel(&self) -> usize {
        self.values.cols()
    }
}

/// `ln(max(bank . power_frame, LOG_FLOOR))` for every frame and filter.
pub fn log_mel_spectrogram(
    clip: &AudioClip,
    bank: &MelFilterbank,
    cfg: &StftConfig,
) -> Result<LogMelSpectrogram> {
    let expected_bins = cfg.window_len / 2 + 1;
    if bank.weights.cols() != expected_bins {
        return Err(Error::invalid(format!(
            "filterbank has {} bins but the window produces {}",
            bank.weights.cols(),
            expected_bins
        )));
    }
    let spec = stft(clip, cfg)?;
    let n_mel = bank.weights.rows();
    let mut values = Mat::zeros(spec.n_frames(), n_mel);
    for frame in 0..spec.n_frames() {
        let p = spec.power.row(frame);
        let out = values.row_mut(frame);
        for (m, o) in out.iter_mut().enumerate() {
            *o = crate::mat::dot(bank.weights.row(m), p).max(LOG_FLOOR).ln();
        }
    }
    Ok(LogMelSpectrogram {
        values,
        hop: cfg.hop,
        sample_rate: clip.sample_rate,
    })
}
