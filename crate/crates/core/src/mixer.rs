//! Foreground/background mixing at a fixed loudness margin.

use alloc::vec::Vec;

use crate::loudness::integrated_loudness;
use crate::{Error, Result};

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Validates finiteness and a nonzero rate. Empty sample vectors are
    /// allowed here; operations that need content reject them.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| f64::max(m, s.abs()))
    }

    /// Multiplies every sample by `g`.
    pub fn scaled(&self, g: f64) -> Waveform {
        Waveform { samples: self.samples.iter().map(|s| s * g).collect(), sample_rate: self.sample_rate }
    }

    fn require_content(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::EmptyWaveform)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MixParams {
    pub alpha: f64,
    pub gamma_db: f64,
    pub target_rate: u32,
    pub duration_s: f64,
}

impl Default for MixParams {
    fn default() -> Self {
        MixParams { alpha: 1.0, gamma_db: 8.0, target_rate: 16_000, duration_s: 5.0 }
    }
}

impl MixParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidMixParams("alpha must be finite and >= 0"));
        }
        if !self.gamma_db.is_finite() {
            return Err(Error::InvalidMixParams("gamma_db must be finite"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidMixParams("duration_s must be > 0"));
        }
        if self.target_rate == 0 {
            return Err(Error::InvalidSampleRate(0));
        }
        Ok(())
    }
}

const SINC_ZERO_CROSSINGS: f64 = 32.0;
const MAX_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = core::f64::consts::PI * x;
        libm::sin(px) / px
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let pu = core::f64::consts::PI * u;
    0.42 + 0.5 * libm::cos(pu) + 0.08 * libm::cos(2.0 * pu)
}

/// Lowpass kernel evaluated at offset `x` input samples; `c` is the cutoff
/// as a fraction of the input Nyquist.
fn kernel(x: f64, c: f64, half: f64) -> f64 {
    c * sinc(c * x) * blackman(x / half)
}

/// Band-limited resampling with a Blackman-windowed sinc whose cutoff sits
/// at half the lower of the two rates.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    w.require_content()?;
    if target_rate == 0 {
        return Err(Error::InvalidSampleRate(0));
    }
    let rate_in = u64::from(w.sample_rate);
    let rate_out = u64::from(target_rate);
    if rate_in == rate_out {
        return Ok(w.clone());
    }
    let g = gcd(rate_in, rate_out);
    // t_n = n * m / l input samples
    let (l, m) = (rate_out / g, rate_in / g);
    let c = f64::min(1.0, rate_out as f64 / rate_in as f64);
    let half = SINC_ZERO_CROSSINGS / c;
    let taps = libm::ceil(half) as i64;
    let x = &w.samples;
    let n_out = libm::round(x.len() as f64 * rate_out as f64 / rate_in as f64) as usize;
    let len = x.len() as i64;

    let table: Option<Vec<Vec<f64>>> = (l <= MAX_PHASES).then(|| {
        (0..l)
            .map(|r| {
                let frac = r as f64 / l as f64;
                (-taps..=taps).map(|j| kernel(frac - j as f64, c, half)).collect()
            })
            .collect()
    });

    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let q = (n * m / l) as i64;
        let r = n * m % l;
        let mut acc = 0.0;
        let lo = (-taps).max(-q);
        let hi = taps.min(len - 1 - q);
        match &table {
            Some(t) => {
                let row = &t[r as usize];
                for j in lo..=hi {
                    acc += x[(q + j) as usize] * row[(j + taps) as usize];
                }
            }
            None => {
                let frac = r as f64 / l as f64;
                for j in lo..=hi {
                    acc += x[(q + j) as usize] * kernel(frac - j as f64, c, half);
                }
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

/// Where to take the window when the clip is longer than the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Crop {
    #[default]
    Start,
    /// Uniform offset drawn from the given seed.
    Random(u64),
}

/// Trims or tiles to exactly `round(duration_s * rate)` samples.
pub fn fit_duration(w: &Waveform, duration_s: f64) -> Result<Waveform> {
    fit_duration_with(w, duration_s, Crop::Start)
}

pub fn fit_duration_with(w: &Waveform, duration_s: f64, crop: Crop) -> Result<Waveform> {
    w.require_content()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidMixParams("duration_s must be > 0"));
    }
    let target = libm::round(duration_s * f64::from(w.sample_rate)) as usize;
    let x = &w.samples;
    let samples = if x.len() >= target {
        let offset = match crop {
            Crop::Start => 0,
            Crop::Random(seed) => {
                use rand::Rng;
                crate::rng::rng_from_seed(seed).random_range(0..=x.len() - target)
            }
        };
        x[offset..offset + target].to_vec()
    } else {
        (0..target).map(|i| x[i % x.len()]).collect()
    };
    Ok(Waveform { samples, sample_rate: w.sample_rate })
}

/// Scales so that the largest absolute sample is exactly 1. All-zero input
/// is returned unchanged.
pub fn peak_normalize(w: &Waveform) -> Waveform {
    let peak = w.peak();
    if peak == 0.0 {
        return w.clone();
    }
    let mut out = w.scaled(1.0 / peak);
    // Division can land a hair off 1.0; pin the peak sample exactly.
    for s in out.samples.iter_mut() {
        if s.abs() > 1.0 {
            *s = s.signum();
        }
    }
    if let Some(i) = w.samples.iter().position(|s| s.abs() == peak) {
        out.samples[i] = w.samples[i].signum();
    }
    out
}

/// Gain applied to the background: `alpha * 10^((l_fg - l_bg - gamma)/20)`.
pub fn background_gain(l_fg: f64, l_bg: f64, alpha: f64, gamma_db: f64) -> f64 {
    alpha * libm::pow(10.0, (l_fg - l_bg - gamma_db) / 20.0)
}

/// A rendered mixture together with the fitted inputs it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Peak-normalized mix.
    pub waveform: Waveform,
    /// Foreground after resampling and duration fitting.
    pub foreground: Waveform,
    /// Background after resampling and duration fitting, unscaled.
    pub background: Waveform,
    pub fg_lufs: f64,
    pub bg_lufs: f64,
    pub bg_gain: f64,
}

impl Mixture {
    pub fn scaled_background(&self) -> Waveform {
        self.background.scaled(self.bg_gain)
    }

    /// `fg + gain * bg` before peak normalization.
    pub fn unnormalized(&self) -> Waveform {
        let samples = self
            .foreground
            .samples
            .iter()
            .zip(&self.background.samples)
            .map(|(f, b)| f + self.bg_gain * b)
            .collect();
        Waveform { samples, sample_rate: self.foreground.sample_rate }
    }
}

fn prepare(w: &Waveform, p: &MixParams, crop: Crop) -> Result<Waveform> {
    let r = resample(w, p.target_rate)?;
    fit_duration_with(&r, p.duration_s, crop)
}

/// Resamples and fits both inputs, measures their loudness, scales the
/// background to sit `gamma_db` below the foreground (times `alpha`), sums,
/// and peak-normalizes.
pub fn mix_pair(fg: &Waveform, bg: &Waveform, p: &MixParams) -> Result<Mixture> {
    mix_pair_cropped(fg, bg, p, Crop::Start, Crop::Start)
}

/// [`mix_pair`] with explicit crop anchors for inputs longer than the target.
pub fn mix_pair_cropped(fg: &Waveform, bg: &Waveform, p: &MixParams, fg_crop: Crop, bg_crop: Crop) -> Result<Mixture> {
    p.validate()?;
    let foreground = prepare(fg, p, fg_crop)?;
    let background = prepare(bg, p, bg_crop)?;
    let fg_lufs = integrated_loudness(&foreground).value().map_err(|_| Error::ForegroundBelowGate)?;
    let bg_lufs = integrated_loudness(&background).value().map_err(|_| Error::BackgroundBelowGate)?;
    let bg_gain = background_gain(fg_lufs, bg_lufs, p.alpha, p.gamma_db);
    let mut m = Mixture {
        waveform: Waveform { samples: Vec::new(), sample_rate: p.target_rate },
        foreground,
        background,
        fg_lufs,
        bg_lufs,
        bg_gain,
    };
    m.waveform = peak_normalize(&m.unnormalized());
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::Fft;
    use alloc::vec;
    use proptest::prelude::*;

    fn tone(freq: f64, amp: f64, rate: u32, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| amp * libm::sin(2.0 * core::f64::consts::PI * freq * i as f64 / f64::from(rate)))
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    fn noise(seed: u64, amp: f64, rate: u32, n: usize) -> Waveform {
        use rand::Rng;
        let mut r = crate::rng::rng_from_seed(seed);
        Waveform::new((0..n).map(|_| amp * (r.random::<f64>() * 2.0 - 1.0)).collect(), rate).unwrap()
    }

    #[test]
    fn rejects_bad_waveforms() {
        assert_eq!(Waveform::new(vec![0.0], 0), Err(Error::InvalidSampleRate(0)));
        assert_eq!(Waveform::new(vec![0.0, f64::NAN], 8000), Err(Error::NonFiniteSample(1)));
        let empty = Waveform::new(vec![], 8000).unwrap();
        assert_eq!(resample(&empty, 16_000), Err(Error::EmptyWaveform));
        assert_eq!(fit_duration(&empty, 1.0), Err(Error::EmptyWaveform));
    }

    #[test]
    fn resample_identity() {
        let w = noise(1, 0.5, 16_000, 1000);
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn resample_48k_tone_peaks_at_1khz() {
        let w = tone(1000.0, 0.8, 48_000, 48_000);
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        assert_eq!(r.sample_rate(), 16_000);
        // 16384-point FFT of the first 16000 samples, zero-padded.
        let n = 16_384;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        re[..16_000].copy_from_slice(r.samples());
        Fft::new(n).forward(&mut re, &mut im);
        let mag: Vec<f64> = (0..n / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect();
        let peak = crate::math::argmax(&mag);
        let hz = peak as f64 * 16_000.0 / n as f64;
        assert!((hz - 1000.0).abs() < 16_000.0 / n as f64, "peak at {hz} Hz");
    }

    #[test]
    fn resample_upsample_length() {
        let w = noise(2, 0.5, 8000, 16_000);
        let r = resample(&w, 16_000).unwrap();
        assert!((r.len() as i64 - 32_000).abs() <= 1);
    }

    #[test]
    fn resample_preserves_low_tone_amplitude() {
        // A 440 Hz tone keeps its amplitude through 44.1k -> 16k (interior).
        let w = tone(440.0, 0.5, 44_100, 44_100);
        let r = resample(&w, 16_000).unwrap();
        let mid = &r.samples()[2000..14_000];
        let peak = mid.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!((peak - 0.5).abs() < 0.005, "peak {peak}");
    }

    #[test]
    fn resample_removes_content_above_new_nyquist() {
        let w = tone(12_000.0, 0.5, 48_000, 48_000);
        let r = resample(&w, 16_000).unwrap();
        let mid = &r.samples()[2000..14_000];
        let rms = libm::sqrt(mid.iter().map(|s| s * s).sum::<f64>() / mid.len() as f64);
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn fit_duration_cases() {
        let rate = 100;
        let w5 = noise(3, 0.5, rate, 500);
        assert_eq!(fit_duration(&w5, 5.0).unwrap(), w5);
        let w7 = noise(4, 0.5, rate, 700);
        assert_eq!(fit_duration(&w7, 5.0).unwrap().samples(), &w7.samples()[..500]);
        let w2 = noise(5, 0.5, rate, 200);
        let f = fit_duration(&w2, 5.0).unwrap();
        assert_eq!(f.len(), 500);
        assert_eq!(&f.samples()[0..200], w2.samples());
        assert_eq!(&f.samples()[200..400], w2.samples());
        assert_eq!(&f.samples()[400..500], &w2.samples()[..100]);
    }

    #[test]
    fn random_crop_is_seeded_and_in_range() {
        let w = Waveform::new((0..700).map(|i| i as f64 / 700.0).collect(), 100).unwrap();
        let a = fit_duration_with(&w, 5.0, Crop::Random(9)).unwrap();
        let b = fit_duration_with(&w, 5.0, Crop::Random(9)).unwrap();
        assert_eq!(a, b);
        let off = (a.samples()[0] * 700.0).round() as usize;
        assert!(off <= 200);
        assert_eq!(a.samples(), &w.samples()[off..off + 500]);
    }

    #[test]
    fn gain_example() {
        let g = background_gain(-20.0, -14.0, 1.0, 8.0);
        assert!((g - libm::pow(10.0, -14.0 / 20.0)).abs() < 1e-12);
        assert!((g - 0.1995).abs() < 1e-4);
    }

    #[test]
    fn alpha_zero_is_normalized_foreground() {
        let fg = tone(440.0, 0.3, 16_000, 80_000);
        let bg = noise(6, 0.9, 16_000, 80_000);
        let p = MixParams { alpha: 0.0, ..MixParams::default() };
        let m = mix_pair(&fg, &bg, &p).unwrap();
        let want = peak_normalize(&fg);
        let diff = m.waveform.samples().iter().zip(want.samples()).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn margin_holds_for_tone_over_noise() {
        let fg = tone(440.0, 0.3, 16_000, 48_000);
        let bg = noise(7, 0.9, 16_000, 100_000);
        let m = mix_pair(&fg, &bg, &MixParams::default()).unwrap();
        assert_eq!(m.waveform.len(), 80_000);
        assert_eq!(m.waveform.peak(), 1.0);
        let l = integrated_loudness(&m.scaled_background()).lufs;
        assert!((l - (m.fg_lufs - 8.0)).abs() < 0.5, "{l} vs {}", m.fg_lufs);
    }

    #[test]
    fn silent_inputs_are_errors() {
        let silent = Waveform::new(vec![0.0; 80_000], 16_000).unwrap();
        let t = tone(440.0, 0.3, 16_000, 80_000);
        let p = MixParams::default();
        assert_eq!(mix_pair(&t, &silent, &p), Err(Error::BackgroundBelowGate));
        assert_eq!(mix_pair(&silent, &t, &p), Err(Error::ForegroundBelowGate));
    }

    #[test]
    fn params_validation() {
        assert!(MixParams::default().validate().is_ok());
        assert!(MixParams { alpha: -1.0, ..MixParams::default() }.validate().is_err());
        assert!(MixParams { gamma_db: f64::NAN, ..MixParams::default() }.validate().is_err());
        assert!(MixParams { duration_s: 0.0, ..MixParams::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn peak_normalize_bounds_and_signs(v in proptest::collection::vec(-3.0f64..3.0, 1..200)) {
            let w = Waveform::new(v.clone(), 8000).unwrap();
            let n = peak_normalize(&w);
            prop_assert!(n.peak() <= 1.0);
            if w.peak() > 0.0 {
                prop_assert_eq!(n.peak(), 1.0);
            }
            for (a, b) in v.iter().zip(n.samples()) {
                prop_assert_eq!(a.signum() * (a.abs() > 0.0) as i32 as f64, b.signum() * (b.abs() > 0.0) as i32 as f64);
            }
        }

        #[test]
        fn fit_duration_idempotent(len in 1usize..400, target in 1usize..600) {
            let w = noise(len as u64, 0.5, 100, len);
            let d = target as f64 / 100.0;
            let once = fit_duration(&w, d).unwrap();
            prop_assert_eq!(once.len(), target);
            prop_assert_eq!(fit_duration(&once, d).unwrap(), once);
        }

        #[test]
        fn premix_is_linear_in_alpha(a in 0.0f64..3.0, b in 0.0f64..3.0, seed in 0u64..1000) {
            let fg = noise(seed, 0.4, 16_000, 16_000);
            let bg = noise(seed + 1, 0.4, 16_000, 16_000);
            let mk = |alpha| {
                mix_pair(&fg, &bg, &MixParams { alpha, duration_s: 1.0, ..MixParams::default() }).unwrap().unnormalized()
            };
            let (ma, mb, mab) = (mk(a), mk(b), mk(a + b));
            let m0 = mk(0.0);
            for i in 0..fg.len() {
                let lhs = mab.samples()[i] - m0.samples()[i];
                let rhs = (ma.samples()[i] - m0.samples()[i]) + (mb.samples()[i] - m0.samples()[i]);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }
}
