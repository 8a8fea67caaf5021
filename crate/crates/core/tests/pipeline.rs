use spurbench_core::catalog::{assign_splits, PairingTable, SplitMode};
use spurbench_core::embeddings::{ContractionParams, SyntheticBenchmark};
use spurbench_core::episodes::{audit, EpisodeSpec, Mode};
use spurbench_core::eval::{gap_with_ci, run_eval_labeled, EpisodeBatch};
use spurbench_core::frontend::{mel_spectrogram, MelConfig};
use spurbench_core::heads::{HeadConfig, HeadKind};
use spurbench_core::loudness::integrated_loudness;
use spurbench_core::mixer::{mix_pair, MixParams, Waveform};

fn chirp(rate: u32, secs: f64) -> Waveform {
    let n = (secs * f64::from(rate)) as usize;
    let s = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            0.4 * (2.0 * std::f64::consts::PI * (200.0 + 300.0 * t) * t).sin()
        })
        .collect();
    Waveform::new(s, rate).unwrap()
}

#[test]
fn mixture_feeds_the_frontend() {
    let fg = chirp(22_050, 3.0);
    let bg = Waveform::new((0..40_000).map(|i| 0.2 * ((i * 7919 % 1000) as f64 / 500.0 - 1.0)).collect(), 8_000).unwrap();
    let p = MixParams::default();
    let m = mix_pair(&fg, &bg, &p).unwrap();
    assert_eq!(m.waveform.len(), 80_000);
    assert!((m.waveform.peak() - 1.0).abs() < 1e-12);
    let margin = integrated_loudness(&m.foreground).lufs - integrated_loudness(&m.scaled_background()).lufs;
    assert!((margin - p.gamma_db).abs() < 0.5, "{margin}");

    let mel = mel_spectrogram(&m.waveform).unwrap();
    let cfg = MelConfig::default();
    assert_eq!(mel.n_mels, cfg.n_mels);
    assert_eq!(mel.n_frames, 80_000 / cfg.hop + 1);
}

#[test]
fn synthetic_benchmark_end_to_end() {
    let table = PairingTable::standard();
    let test = assign_splits(&table, SplitMode::Canonical).unwrap().test;
    let bench = SyntheticBenchmark::build(ContractionParams { dim: 32, ..Default::default() }, &table, &test, 10).unwrap();
    let mut reports = Vec::new();
    for mode in [Mode::Iid, Mode::Ood] {
        let spec = EpisodeSpec { mode, seed: 11, ..Default::default() };
        let batch = EpisodeBatch::sample(&table, &test, &spec, &bench.pool, 100).unwrap();
        for (i, ep) in batch.episodes.iter().enumerate() {
            assert!(audit(ep, &table, &spec.for_index(i as u64), Some(&test)).is_empty());
        }
        let proto = run_eval_labeled(&batch, &HeadConfig::Proto, &bench.embeddings, "syn").unwrap();
        let cosine = run_eval_labeled(&batch, &HeadKind::Cosine.default_config(), &bench.embeddings, "syn").unwrap();
        assert_eq!(proto.trace.len(), 100);
        reports.push((proto, cosine));
    }
    let (d_proto, _) = gap_with_ci(&reports[0].0, &reports[1].0).unwrap();
    let (d_cos, _) = gap_with_ci(&reports[0].1, &reports[1].1).unwrap();
    assert!(d_proto > d_cos, "proto {d_proto} cosine {d_cos}");
}
