//! Integrated loudness per ITU-R BS.1770 (the measurement EBU R128 builds on).
//!
//! The two K-weighting biquads are re-derived for the actual sample rate from
//! their analog prototypes via the bilinear transform, so 16 kHz material is
//! measured without first upsampling to 48 kHz.

use crate::mixer::Waveform;

/// Absolute gate, LUFS.
pub const ABSOLUTE_GATE_LUFS: f64 = -70.0;
/// Relative gate offset below the absolutely-gated loudness, LU.
pub const RELATIVE_GATE_LU: f64 = -10.0;
const BLOCK_SECONDS: f64 = 0.4;
const HOP_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LoudnessMeasure {
    /// Integrated loudness; `-inf` when every block is gated out.
    pub lufs: f64,
    /// True when at least one full 400 ms block was available for gating.
    pub gated: bool,
}

impl LoudnessMeasure {
    pub fn is_silent(&self) -> bool {
        self.lufs == f64::NEG_INFINITY
    }

    /// The loudness value, or the gated-out error.
    pub fn value(&self) -> crate::Result<f64> {
        if self.is_silent() {
            Err(crate::Error::BelowAbsoluteGate)
        } else {
            Ok(self.lufs)
        }
    }
}

/// Direct-form-I biquad with normalised `a0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Stage 1: high-frequency shelf (+4 dB above ~1.7 kHz).
    pub fn k_shelf(sample_rate: f64) -> Self {
        let gain_db = 3.999_843_853_973_347;
        let q = 0.707_175_236_955_419_6;
        let center_hz = 1_681.974_450_955_533;
        let k = libm::tan(core::f64::consts::PI * center_hz / sample_rate);
        let vh = libm::pow(10.0, gain_db / 20.0);
        let vb = libm::pow(vh, 0.499_666_774_154_541_6);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: (vh + vb * k / q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    /// Stage 2: RLB high-pass (~38 Hz).
    pub fn k_highpass(sample_rate: f64) -> Self {
        let q = 0.500_327_037_323_877_3;
        let center_hz = 38.135_470_876_024_44;
        let k = libm::tan(core::f64::consts::PI * center_hz / sample_rate);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: 1.0,
            b1: -2.0,
            b2: 1.0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    fn run(&self, input: &[f64], output: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for (x0, y) in input.iter().zip(output.iter_mut()) {
            let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = *x0;
            y2 = y1;
            y1 = y0;
            *y = y0;
        }
    }
}

/// K-weighted copy of the signal.
pub fn k_weight(samples: &[f64], sample_rate: u32) -> alloc::vec::Vec<f64> {
    let rate = f64::from(sample_rate);
    let mut stage1 = alloc::vec![0.0; samples.len()];
    Biquad::k_shelf(rate).run(samples, &mut stage1);
    let mut out = alloc::vec![0.0; samples.len()];
    Biquad::k_highpass(rate).run(&stage1, &mut out);
    out
}

fn power_to_lufs(power: f64) -> f64 {
    -0.691 + 10.0 * libm::log10(power)
}

/// Mean-square power of each 400 ms gating block (75 % overlap).
pub fn block_powers(w: &Waveform) -> alloc::vec::Vec<f64> {
    let rate = f64::from(w.sample_rate());
    let block = libm::round(BLOCK_SECONDS * rate) as usize;
    let hop = libm::round(HOP_SECONDS * rate) as usize;
    let weighted = k_weight(w.samples(), w.sample_rate());
    if block == 0 || weighted.len() < block {
        return alloc::vec::Vec::new();
    }
    let n_blocks = (weighted.len() - block) / hop + 1;
    (0..n_blocks)
        .map(|j| {
            let s = &weighted[j * hop..j * hop + block];
            s.iter().map(|x| x * x).sum::<f64>() / block as f64
        })
        .collect()
}

/// Gated integrated loudness of a mono waveform.
pub fn integrated_loudness(w: &Waveform) -> LoudnessMeasure {
    let powers = block_powers(w);
    if powers.is_empty() {
        return LoudnessMeasure { lufs: f64::NEG_INFINITY, gated: false };
    }

    let above_abs: alloc::vec::Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&p| p > 0.0 && power_to_lufs(p) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_abs.is_empty() {
        return LoudnessMeasure { lufs: f64::NEG_INFINITY, gated: true };
    }

    let abs_mean = above_abs.iter().sum::<f64>() / above_abs.len() as f64;
    let relative_gate = power_to_lufs(abs_mean) + RELATIVE_GATE_LU;

    let (sum, count) = above_abs
        .iter()
        .filter(|&&p| power_to_lufs(p) > relative_gate)
        .fold((0.0, 0usize), |(s, c), p| (s + p, c + 1));
    // The absolutely-gated mean always passes its own relative gate, so
    // `count` is at least one here.
    LoudnessMeasure { lufs: power_to_lufs(sum / count as f64), gated: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn sine(freq: f64, amp: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (seconds * f64::from(rate)) as usize;
        let s: Vec<f64> = (0..n)
            .map(|i| amp * libm::sin(2.0 * core::f64::consts::PI * freq * i as f64 / f64::from(rate)))
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn coefficients_at_48k_match_published_table() {
        let s = Biquad::k_shelf(48_000.0);
        assert!((s.b0 - 1.535_124_859_586_97).abs() < 1e-9);
        assert!((s.b1 + 2.691_696_189_406_38).abs() < 1e-9);
        assert!((s.b2 - 1.198_392_810_852_85).abs() < 1e-9);
        assert!((s.a1 + 1.690_659_293_182_41).abs() < 1e-9);
        assert!((s.a2 - 0.732_480_774_215_85).abs() < 1e-9);
        let h = Biquad::k_highpass(48_000.0);
        assert!((h.a1 + 1.990_047_454_833_98).abs() < 1e-9);
        assert!((h.a2 - 0.990_072_250_366_21).abs() < 1e-9);
    }

    #[test]
    fn silence_is_gated_out() {
        let w = Waveform::new(alloc::vec![0.0; 48_000], 48_000).unwrap();
        let m = integrated_loudness(&w);
        assert!(m.is_silent());
        assert_eq!(m.value(), Err(crate::Error::BelowAbsoluteGate));
    }

    #[test]
    fn too_short_for_one_block_is_silent() {
        let w = sine(997.0, 0.5, 16_000, 0.2);
        assert!(integrated_loudness(&w).is_silent());
    }

    #[test]
    fn full_scale_997_hz_at_48k() {
        let m = integrated_loudness(&sine(997.0, 1.0, 48_000, 10.0));
        assert!((m.lufs + 3.01).abs() < 0.1, "got {}", m.lufs);
    }

    #[test]
    fn full_scale_997_hz_at_16k_and_44k1() {
        for rate in [16_000, 44_100] {
            let m = integrated_loudness(&sine(997.0, 1.0, rate, 10.0));
            assert!((m.lufs + 3.01).abs() < 0.1, "{rate}: {}", m.lufs);
        }
    }

    #[test]
    fn halving_amplitude_drops_6_02_db() {
        let a = integrated_loudness(&sine(440.0, 0.8, 16_000, 5.0)).lufs;
        let b = integrated_loudness(&sine(440.0, 0.4, 16_000, 5.0)).lufs;
        assert!((a - b - 20.0 * libm::log10(2.0)).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn relative_gate_ignores_quiet_tail() {
        // 5 s tone followed by 5 s at -40 dB: the tail is below the relative
        // gate, so only the few blocks straddling the edge pull the result
        // below the tone alone. Without gating it would sit ~3 dB lower.
        let rate = 16_000;
        let mut s = sine(1000.0, 0.5, rate, 5.0).samples().to_vec();
        s.extend(sine(1000.0, 0.005, rate, 5.0).samples());
        let both = integrated_loudness(&Waveform::new(s, rate).unwrap()).lufs;
        let tone = integrated_loudness(&sine(1000.0, 0.5, rate, 5.0)).lufs;
        assert!((both - tone).abs() < 0.2, "{both} vs {tone}");
    }
}
