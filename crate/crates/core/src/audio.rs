//! Waveform segmentation and log-Mel filterbank features.
//!
//! Audio is cut into fixed-length zero-padded clips, framed with a Hamming
//! window, transformed to a magnitude spectrum and pooled by triangular
//! filters spaced on the HTK Mel scale. Output is the natural log, floored.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("waveform contains non-finite samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub n_mels: usize,
    pub win_s: f64,
    pub hop_s: f64,
    pub floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            n_mels: 64,
            win_s: 0.025,
            hop_s: 0.010,
            floor: 1e-10,
        }
    }
}

impl MelParams {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.win_s * f64::from(sample_rate)).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        ((self.hop_s * f64::from(sample_rate)).round() as usize).max(1)
    }
}

/// n_frames × n_mels log energies.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub frames: Matrix<f64>,
    pub n_mels: usize,
    pub frame_hop_s: f64,
    pub frame_win_s: f64,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Splits into consecutive `clip_seconds` clips, zero-padding the last one.
pub fn segment_and_pad(w: &Waveform, clip_seconds: f64) -> Result<Vec<Waveform>> {
    if w.samples.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples".into()));
    }
    let clip_len = (clip_seconds * f64::from(w.sample_rate)).round() as usize;
    if clip_len == 0 {
        return Err(Error::Config(format!("clip length {clip_seconds}s is zero samples")));
    }
    Ok(w.samples
        .chunks(clip_len)
        .map(|chunk| {
            let mut samples = chunk.to_vec();
            samples.resize(clip_len, 0.0);
            Waveform {
                samples,
                sample_rate: w.sample_rate,
            }
        })
        .collect())
}

/// `w[k] = 0.54 − 0.46·cos(2πk/(n−1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidLength(format!("Hamming window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / denom).cos())
        .collect())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided spectrum of an `n_fft`-point DFT,
/// spanning 0 Hz to Nyquist with unit peak height.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Matrix<f64>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        let n_bins = n_fft / 2 + 1;
        let top = hz_to_mel(sr / 2.0);
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Matrix::zeros(n_mels, n_bins);
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sr / n_fft as f64;
                let rise = (f - lo) / (mid - lo);
                let fall = (hi - f) / (hi - mid);
                weights.set(m, k, rise.min(fall).max(0.0));
            }
        }
        MelFilterbank { weights, edges_hz }
    }

    /// Peak frequency of each filter.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edges_hz[1..self.edges_hz.len() - 1].to_vec()
    }

    pub fn weights(&self) -> &Matrix<f64> {
        &self.weights
    }
}

pub fn log_mel(clip: &Waveform, params: &MelParams) -> Result<LogMelSpectrogram> {
    let sr = clip.sample_rate;
    let win = params.window_len(sr);
    let hop = params.hop_len(sr);
    let n = clip.samples.len();
    if win < 2 || n < win {
        return Err(Error::InvalidLength(format!(
            "clip of {n} samples is shorter than the {win}-sample window"
        )));
    }
    let window = hamming_window(win)?;
    let bank = MelFilterbank::new(params.n_mels, win, sr);
    let n_frames = 1 + (n - win) / hop;
    let n_bins = win / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut magnitude = vec![0.0; n_bins];
    let mut frames = Matrix::zeros(n_frames, params.n_mels);
    for t in 0..n_frames {
        let start = t * hop;
        for (b, (&s, &w)) in buf.iter_mut().zip(clip.samples[start..start + win].iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in magnitude.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        for (mel, out) in frames.row_mut(t).iter_mut().enumerate() {
            let energy: f64 = bank
                .weights
                .row(mel)
                .iter()
                .zip(&magnitude)
                .map(|(w, m)| w * m)
                .sum();
            *out = energy.max(params.floor).ln();
        }
    }
    Ok(LogMelSpectrogram {
        frames,
        n_mels: params.n_mels,
        frame_hop_s: params.hop_s,
        frame_win_s: params.win_s,
    })
}
