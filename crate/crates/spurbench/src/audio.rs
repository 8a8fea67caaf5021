//! WAV input and output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use spurbench_core::mixer::Waveform;

/// Reads a WAV file, averaging channels down to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        bail!("{}: zero channels", path.display());
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader.samples::<i32>().map(|s| s.map(|v| f64::from(v) / scale)).collect::<Result<_, _>>()?
        }
    };
    let mono = interleaved.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect();
    Waveform::new(mono, spec.sample_rate).with_context(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SampleEncoding {
    #[default]
    Float32,
    Pcm16,
}

/// Writes mono WAV. 16-bit output is rounded and clipped to the integer range.
pub fn write_wav(path: &Path, w: &Waveform, encoding: SampleEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        SampleEncoding::Float32 => (32, SampleFormat::Float),
        SampleEncoding::Pcm16 => (16, SampleFormat::Int),
    };
    let spec = WavSpec { channels: 1, sample_rate: w.sample_rate(), bits_per_sample: bits, sample_format: format };
    let mut writer = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &s in w.samples() {
        match encoding {
            SampleEncoding::Float32 => writer.write_sample(s as f32)?,
            SampleEncoding::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new((0..800).map(|i| ((i as f64) * 0.05).sin() * 0.9).collect(), 16_000).unwrap();
        let p = dir.path().join("f.wav");
        write_wav(&p, &w, SampleEncoding::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), 16_000);
        assert!(r.samples().iter().zip(w.samples()).all(|(a, b)| (a - b).abs() < 1e-7));
        write_wav(&p, &w, SampleEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        assert!(r.samples().iter().zip(w.samples()).all(|(a, b)| (a - b).abs() < 1.0 / 32768.0));
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut wr = WavWriter::create(&p, spec).unwrap();
        for (l, r) in [(16384i16, 0i16), (-16384, -16384)] {
            wr.write_sample(l).unwrap();
            wr.write_sample(r).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25, -0.5]);
    }
}
