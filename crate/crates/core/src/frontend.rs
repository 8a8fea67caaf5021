//! Log-mel spectrogram frontend.

use alloc::vec::Vec;

use crate::fft::Fft;
use crate::mixer::Waveform;
use crate::{Error, Result};

/// Power below this is clamped before taking logs (-100 dB).
const AMIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Dynamic range kept below the loudest cell.
    pub top_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { sample_rate: 16_000, n_fft: 1024, hop: 512, n_mels: 128, f_min: 0.0, f_max: 8000.0, top_db: 80.0 }
    }
}

/// dB-scaled mel energies, `n_mels x n_frames`, mel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub frame_rate: f64,
    pub floor_db: f64,
}

impl MelSpectrogram {
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    /// One column per frame, each of length `n_mels`.
    pub fn frame(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.at(m, frame)).collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges in Hz; band `m` peaks at `edges[m + 1]`.
pub fn mel_band_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let n = cfg.n_mels + 1;
    (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
}

/// Triangular, area-normalised filterbank, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let edges = mel_band_edges(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz: Vec<f64> =
        (0..n_bins).map(|k| k as f64 * f64::from(cfg.sample_rate) / cfg.n_fft as f64).collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            bin_hz
                .iter()
                .map(|&f| {
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    norm * f64::max(0.0, f64::min(up, down))
                })
                .collect()
        })
        .collect()
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64)).collect()
}

/// Reflect padding without repeating the edge sample.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (-(pad as isize)..n + pad as isize)
        .map(|i| {
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            x[j as usize]
        })
        .collect()
}

pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    mel_spectrogram_with(w, &MelConfig::default())
}

pub fn mel_spectrogram_with(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRateMismatch { expected: cfg.sample_rate, found: w.sample_rate() });
    }
    if w.len() < cfg.n_fft {
        return Err(Error::TooShortForStft { len: w.len(), needed: cfg.n_fft });
    }
    let padded = reflect_pad(w.samples(), cfg.n_fft / 2);
    let n_frames = 1 + w.len() / cfg.hop;
    let window = periodic_hann(cfg.n_fft);
    let bank = mel_filterbank(cfg);
    let fft = Fft::new(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;

    let mut power_db = alloc::vec![0.0; cfg.n_mels * n_frames];
    let mut re = alloc::vec![0.0; cfg.n_fft];
    let mut im = alloc::vec![0.0; cfg.n_fft];
    let mut spec = alloc::vec![0.0; n_bins];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for i in 0..cfg.n_fft {
            re[i] = padded[start + i] * window[i];
            im[i] = 0.0;
        }
        fft.forward(&mut re, &mut im);
        for k in 0..n_bins {
            spec[k] = re[k] * re[k] + im[k] * im[k];
        }
        for (m, filt) in bank.iter().enumerate() {
            let e: f64 = filt.iter().zip(&spec).map(|(a, b)| a * b).sum();
            power_db[m * n_frames + t] = 10.0 * libm::log10(f64::max(e, AMIN));
        }
    }

    let max_db = power_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor_db = f64::max(max_db - cfg.top_db, 10.0 * libm::log10(AMIN));
    for v in power_db.iter_mut() {
        *v = f64::max(*v, floor_db);
    }
    Ok(MelSpectrogram {
        n_mels: cfg.n_mels,
        n_frames,
        values: power_db,
        frame_rate: f64::from(cfg.sample_rate) / cfg.hop as f64,
        floor_db,
    })
}
