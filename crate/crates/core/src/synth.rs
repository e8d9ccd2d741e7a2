//! Procedural desk-scale corpus with one authentic and two synthetic classes.
//!
//! All classes share the same additive harmonic voice model. Authentic
//! utterances carry natural-sounding prosody: a moving intonation contour,
//! vibrato, jitter, smooth syllable envelopes and a loudness fall across the
//! phrase. The text-to-speech class keeps the voice but holds the pitch and
//! the phrase loudness level. The voice-conversion class keeps authentic
//! prosody but passes the spectral envelope through one fixed resonance shared
//! by every utterance. The background noise is low-frequency weighted, like
//! room noise, and its level varies per utterance independently of the class.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_pcm16, AudioBuffer, TARGET_SAMPLE_RATE};
use crate::dataset::{Corpus, ManifestRecord, Partition, SynthesisKind};
use crate::error::{Error, Result};
use crate::label::Label;

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Voice-model parameters shared by all classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDesign {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub f0_range: (f64, f64),
    /// Relative scatter of formants and tilt between utterances.
    pub voice_spread: f64,
    /// Harmonics fade out towards this frequency.
    pub max_harmonic_hz: f64,
    pub vibrato_rate_hz: (f64, f64),
    pub vibrato_depth_st: (f64, f64),
    pub intonation_depth_st: (f64, f64),
    pub jitter_st: f64,
    pub syllable_s: (f64, f64),
    /// Loudness floor between syllables, relative to the peak.
    pub amplitude_floor: f64,
    /// Text-to-speech holds the base pitch.
    pub tts_flat_pitch: bool,
    /// Loudness fall over an utterance in dB, absent from text-to-speech.
    pub loudness_declination_db: f64,
    /// Range of the noise RMS, drawn log-uniformly per recording.
    pub noise_rms: (f64, f64),
    /// Pole of the one-pole filter that colours the noise; 0 keeps it white.
    pub noise_pole: f64,
    pub peak: f64,
    /// Formant frequency scale of the conversion warp.
    pub vc_warp: f64,
    /// Centre, bandwidth and gain (dB) of the conversion's fixed resonance.
    pub vc_resonance: (f64, f64, f64),
}

impl Default for SynthDesign {
    fn default() -> Self {
        Self {
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            f0_range: (110.0, 160.0),
            voice_spread: 0.05,
            max_harmonic_hz: 3_800.0,
            vibrato_rate_hz: (4.0, 7.0),
            vibrato_depth_st: (0.3, 0.8),
            intonation_depth_st: (0.5, 2.0),
            jitter_st: 0.15,
            syllable_s: (0.12, 0.3),
            amplitude_floor: 0.15,
            tts_flat_pitch: true,
            loudness_declination_db: 11.0,
            noise_rms: (1e-4, 1e-2),
            noise_pole: 0.99,
            peak: 0.5,
            vc_warp: 1.0,
            vc_resonance: (2_200.0, 400.0, 14.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthClass {
    Real,
    Tts,
    Vc,
}

impl SynthClass {
    pub const ALL: [SynthClass; 3] = [SynthClass::Real, SynthClass::Tts, SynthClass::Vc];

    fn prefix(self) -> &'static str {
        match self {
            SynthClass::Real => "real",
            SynthClass::Tts => "tts",
            SynthClass::Vc => "vc",
        }
    }

    fn manifest_fields(self) -> (Label, &'static str, SynthesisKind) {
        match self {
            SynthClass::Real => (Label::Real, "AU", SynthesisKind::None),
            SynthClass::Tts => (Label::Df, "SYN-TTS", SynthesisKind::Tts),
            SynthClass::Vc => (Label::Df, "SYN-VC", SynthesisKind::Vc),
        }
    }
}

/// Speaker identity: three formants and a spectral tilt.
#[derive(Debug, Clone, Copy)]
struct Voice {
    formants: [(f64, f64, f64); 3],
    tilt_db_per_oct: f64,
}

impl Voice {
    /// Formants and tilt scattered by up to `spread` (relative) around a
    /// shared reference voice.
    fn random(rng: &mut ChaCha8Rng, spread: f64) -> Self {
        let mut jitter = |v: f64| {
            if spread > 0.0 {
                v * (1.0 + rng.random_range(-spread..spread))
            } else {
                v
            }
        };
        Self {
            formants: [
                (jitter(650.0), jitter(110.0), 0.0),
                (jitter(1_500.0), jitter(140.0), -6.0),
                (jitter(2_700.0), jitter(200.0), -12.0),
            ],
            tilt_db_per_oct: jitter(-5.5),
        }
    }

    fn gain_db(&self, f: f64, warp: Option<(f64, (f64, f64, f64))>) -> f64 {
        let scale = warp.map_or(1.0, |(w, _)| w);
        let mut lin = 1e-3;
        for &(fc, bw, g) in &self.formants {
            let x = (f - fc * scale) / (bw * scale);
            lin += 10f64.powf(g / 20.0) / (1.0 + x * x);
        }
        let mut db = 20.0 * lin.log10() + self.tilt_db_per_oct * (f / 100.0).max(1.0).log2();
        if let Some((_, (fc, bw, g))) = warp {
            let x = (f - fc) / bw;
            db += g / (1.0 + x * x);
        }
        db
    }
}

/// Piecewise-linear random trajectory with knots every `step` seconds.
fn smooth_noise(rng: &mut ChaCha8Rng, len: usize, step: f64, std: f64) -> Vec<f64> {
    let fs = TARGET_SAMPLE_RATE as f64;
    let hop = (step * fs).max(1.0);
    let knots = (len as f64 / hop).ceil() as usize + 2;
    let normal = Normal::new(0.0, std).expect("valid std");
    let k: Vec<f64> = (0..knots).map(|_| normal.sample(rng)).collect();
    (0..len)
        .map(|i| {
            let p = i as f64 / hop;
            let j = p.floor() as usize;
            let t = p - j as f64;
            k[j] * (1.0 - t) + k[j + 1] * t
        })
        .collect()
}

/// Syllable boundaries covering `len` samples.
fn syllables(rng: &mut ChaCha8Rng, len: usize, range: (f64, f64)) -> Vec<(usize, usize, f64)> {
    let fs = TARGET_SAMPLE_RATE as f64;
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let dur = (rng.random_range(range.0..range.1) * fs) as usize;
        let end = (start + dur.max(1)).min(len);
        out.push((start, end, rng.random_range(0.4..1.0)));
        start = end;
    }
    out
}

fn render(class: SynthClass, design: &SynthDesign, rng: &mut ChaCha8Rng) -> Result<AudioBuffer> {
    let fs = TARGET_SAMPLE_RATE as f64;
    let d = design;
    let duration = rng.random_range(d.min_duration_s..d.max_duration_s);
    let len = (duration * fs).round() as usize;
    let voice = Voice::random(rng, d.voice_spread);
    let base_f0 = rng.random_range(d.f0_range.0..d.f0_range.1);

    // pitch in semitones relative to the base
    let semitones: Vec<f64> = match class {
        SynthClass::Tts if d.tts_flat_pitch => vec![0.0; len],
        _ => {
            let rate = rng.random_range(d.vibrato_rate_hz.0..d.vibrato_rate_hz.1);
            let depth = rng.random_range(d.vibrato_depth_st.0..d.vibrato_depth_st.1);
            let vib_phase = rng.random_range(0.0..2.0 * PI);
            let contour: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(d.intonation_depth_st.0..d.intonation_depth_st.1),
                        rng.random_range(0.3..1.5),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let jitter = smooth_noise(rng, len, 0.01, d.jitter_st);
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    let declination = -2.0 * t / duration;
                    let inton: f64 = contour.iter().map(|(a, r, p)| a * (2.0 * PI * r * t + p).sin()).sum();
                    declination + inton + depth * (2.0 * PI * rate * t + vib_phase).sin() + jitter[i]
                })
                .collect()
        }
    };

    let syl = syllables(rng, len, d.syllable_s);
    let mut amplitude = vec![0.0; len];
    for &(s, e, level) in &syl {
        let n = (e - s) as f64;
        for (k, a) in amplitude[s..e].iter_mut().enumerate() {
            let w = (PI * (k as f64 + 0.5) / n).sin();
            *a = d.amplitude_floor + (1.0 - d.amplitude_floor) * level * w * w;
        }
    }

    if class != SynthClass::Tts && d.loudness_declination_db != 0.0 {
        for (i, a) in amplitude.iter_mut().enumerate() {
            *a *= 10f64.powf(-d.loudness_declination_db * i as f64 / len as f64 / 20.0);
        }
    }

    let warp = (class == SynthClass::Vc).then_some((d.vc_warp, d.vc_resonance));
    let max_k = (d.max_harmonic_hz / (base_f0 * 0.7)).ceil() as usize;
    let mut phases: Vec<f64> = (0..max_k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut out = vec![0.0; len];
    for i in 0..len {
        let f0 = base_f0 * 2f64.powf(semitones[i] / 12.0);
        let mut s = 0.0;
        for (k, ph) in phases.iter_mut().enumerate() {
            let f = f0 * (k + 1) as f64;
            *ph = (*ph + 2.0 * PI * f / fs) % (2.0 * PI);
            let fade = ((d.max_harmonic_hz - f) / 300.0).clamp(0.0, 1.0);
            if fade > 0.0 {
                s += fade * 10f64.powf(voice.gain_db(f, warp) / 20.0) * ph.sin();
            }
        }
        out[i] = s * amplitude[i];
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak <= 0.0 {
        return Err(Error::Corpus("rendered silence".into()));
    }
    let gain = d.peak * rng.random_range(0.8..1.0) / peak;
    if !(0.0..1.0).contains(&d.noise_pole) {
        return Err(Error::invalid(format!(
            "noise pole {} must lie in [0, 1)",
            d.noise_pole
        )));
    }
    let noise_rms = (rng.random_range(d.noise_rms.0.ln()..d.noise_rms.1.ln())).exp();
    let noise = Normal::new(0.0, noise_rms).expect("valid std");
    // unit-variance one-pole filter, so the RMS stays as drawn
    let drive = (1.0 - d.noise_pole * d.noise_pole).sqrt();
    let mut colored = noise.sample(rng);
    for v in &mut out {
        colored = d.noise_pole * colored + drive * noise.sample(rng);
        *v = (*v * gain + colored).clamp(-1.0, 1.0);
    }
    AudioBuffer::new(out, TARGET_SAMPLE_RATE)
}

/// Renders one utterance of the given class with its own seed.
pub fn synthesize(class: SynthClass, design: &SynthDesign, seed: u64) -> Result<AudioBuffer> {
    render(class, design, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Split sizes for one class: half train, a quarter each for dev and test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (n / 4).max(1);
    let dev = n / 4;
    (n - dev - test, dev, test)
}

pub fn make_synthetic_corpus(seed: u64, n_per_class: usize, out_dir: impl AsRef<Path>) -> Result<Corpus> {
    make_synthetic_corpus_with(seed, n_per_class, out_dir, &SynthDesign::default())
}

pub fn make_synthetic_corpus_with(
    seed: u64,
    n_per_class: usize,
    out_dir: impl AsRef<Path>,
    design: &SynthDesign,
) -> Result<Corpus> {
    if n_per_class < 2 {
        return Err(Error::invalid("synthetic corpus needs at least 2 files per class"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let (n_train, n_dev, _) = split_sizes(n_per_class);
    let mut records = Vec::with_capacity(3 * n_per_class);
    for class in SynthClass::ALL {
        let (label, system_id, kind) = class.manifest_fields();
        for i in 0..n_per_class {
            let utt_seed: u64 = master.random();
            let audio = synthesize(class, design, utt_seed)?;
            let name = format!("{}_{i:03}.wav", class.prefix());
            write_wav_pcm16(out_dir.join(&name), &audio)?;
            let partition = if i < n_train {
                Partition::Train
            } else if i < n_train + n_dev {
                Partition::Dev
            } else {
                Partition::Test
            };
            records.push(ManifestRecord {
                path: name,
                label,
                system_id: system_id.to_string(),
                synthesis_kind: kind,
                partition,
            });
        }
    }
    let corpus = Corpus::new(records, out_dir)?;
    corpus.write(out_dir.join(MANIFEST_NAME))?;
    Ok(corpus)
}
