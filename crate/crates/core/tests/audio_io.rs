use std::path::Path;

use proptest::prelude::*;
use prosospeaker::audio::{
    degrade, load_wav, resample, write_wav_pcm16, AudioBuffer, DegradationProfile, ProfileLabel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn write_int(path: &Path, channels: u16, bits: u16, rate: u32, frames: &[Vec<i32>]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for frame in frames {
        for &s in frame {
            w.write_sample(s).unwrap();
        }
    }
    w.finalize().unwrap();
}

fn white(seed: u64, n: usize, amp: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..n).map(|_| rng.random_range(-amp..amp)).collect(), 16_000).unwrap()
}

/// Energy of the spectrum at or above `hz`.
fn band_energy_above(a: &AudioBuffer, hz: f64) -> f64 {
    let n = a.len();
    let mut buf: Vec<Complex<f64>> = a.samples().iter().map(|&s| Complex::new(s, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter()
        .enumerate()
        .filter(|(k, _)| (*k).min(n - k) as f64 * a.sample_rate() as f64 / n as f64 >= hz)
        .map(|(_, c)| c.norm_sqr())
        .sum()
}

fn snr_db(reference: &AudioBuffer, test: &AudioBuffer) -> f64 {
    let noise: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    10.0 * (reference.energy() / noise).log10()
}

#[test]
fn stereo_full_scale_maps_below_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    write_int(&p, 2, 16, 16_000, &vec![vec![32767, 32767]; 100]);
    let a = load_wav(&p).unwrap();
    assert_eq!(a.len(), 100);
    assert!(a.samples().iter().all(|&s| s == 32767.0 / 32768.0));
}

#[test]
fn stereo_channels_are_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    write_int(&p, 2, 16, 16_000, &[vec![16384, -16384], vec![8192, 0]]);
    assert_eq!(load_wav(&p).unwrap().samples(), &[0.0, 0.125]);
}

#[test]
fn mono_and_silence_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.wav");
    write_int(&p, 1, 16, 16_000, &vec![vec![0]; 16_000]);
    let a = load_wav(&p).unwrap();
    assert_eq!((a.len(), a.sample_rate()), (16_000, 16_000));
    assert_eq!(a.energy(), 0.0);
}

#[test]
fn other_sample_formats() {
    let dir = tempfile::tempdir().unwrap();
    let p24 = dir.path().join("24.wav");
    write_int(&p24, 1, 24, 8_000, &[vec![1 << 22], vec![-(1 << 23)]]);
    assert_eq!(load_wav(&p24).unwrap().samples(), &[0.5, -1.0]);

    let pf = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 22_050,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&pf, spec).unwrap();
    for s in [0.25f32, -0.75] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let a = load_wav(&pf).unwrap();
    assert_eq!((a.samples(), a.sample_rate()), (&[0.25, -0.75][..], 22_050));
}

#[test]
fn unreadable_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.wav");
    std::fs::write(&bad, b"RIFF this is not audio").unwrap();
    assert!(load_wav(&bad).is_err());
    assert!(load_wav(dir.path().join("missing.wav")).is_err());
    let empty = dir.path().join("empty.wav");
    write_int(&empty, 1, 16, 16_000, &[]);
    assert!(load_wav(&empty).is_err());
}

#[test]
fn pcm16_round_trip_is_exact_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.wav");
    let samples: Vec<f64> = (-50..50).map(|k| k as f64 * 300.0 / 32768.0).collect();
    let a = AudioBuffer::new(samples, 16_000).unwrap();
    write_wav_pcm16(&p, &a).unwrap();
    assert_eq!(load_wav(&p).unwrap(), a);
}

#[test]
fn br32_removes_band_above_cutoff() {
    let x = white(1, 32_000, 0.9);
    let y = degrade(&x, &DegradationProfile::preset(ProfileLabel::Br32)).unwrap();
    let ratio = band_energy_above(&y, 4000.0) / band_energy_above(&x, 4000.0);
    assert!(10.0 * ratio.log10() <= -40.0, "attenuation {} dB", 10.0 * ratio.log10());
}

#[test]
fn stronger_profiles_lose_more_snr() {
    let x = white(2, 16_000, 0.5);
    let snr = |l| snr_db(&x, &degrade(&x, &DegradationProfile::preset(l)).unwrap());
    let (a, b, c) = (
        snr(ProfileLabel::Br128),
        snr(ProfileLabel::Br64),
        snr(ProfileLabel::Br32),
    );
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn resample_up_and_back_keeps_tone() {
    let n = 16_000;
    let x = AudioBuffer::new(
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin())
            .collect(),
        16_000,
    )
    .unwrap();
    let up = resample(&x, 48_000).unwrap();
    assert_eq!(up.len(), 48_000);
    let back = resample(&up, 16_000).unwrap();
    let spec = prosospeaker::dsp::stft(&back, 25.0, 10.0, 512).unwrap();
    let mid = spec.magnitudes.row(spec.frames() / 2);
    let peak = mid.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(peak, 32);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn degrade_is_deterministic_and_never_adds_energy(
        seed in 0u64..1000,
        len in 16usize..4000,
        amp in 0.0f64..1.0,
        label in prop::sample::select(ProfileLabel::ALL.to_vec()),
    ) {
        let x = white(seed, len, amp.max(1e-6));
        let p = DegradationProfile::preset(label);
        let y = degrade(&x, &p).unwrap();
        prop_assert_eq!(&y, &degrade(&x, &p).unwrap());
        prop_assert_eq!((y.len(), y.sample_rate()), (x.len(), x.sample_rate()));
        prop_assert!(y.energy() <= x.energy() * (1.0 + 1e-12));
    }
}
