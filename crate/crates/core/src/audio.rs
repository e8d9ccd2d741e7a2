//! Audio loading, resampling and synthetic degradation.
//!
//! All operations are pure functions over immutable [`AudioBuffer`]s and can
//! run per-file in parallel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rate every feature extractor expects.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, rejecting empty or non-finite input.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::EmptyAudio("buffer has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
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

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono. Integer samples are scaled by `2^(bits-1)`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err("zero channels".into()));
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(wav_err(format!("unsupported float width {}", spec.bits_per_sample)));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(wav_err(format!("unsupported integer width {bits}")));
            }
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(e.to_string()))?
        }
    };

    if interleaved.len() < channels {
        return Err(Error::EmptyAudio(path.display().to_string()));
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if mono.iter().any(|s| !s.is_finite()) {
        return Err(wav_err("non-finite sample".into()));
    }
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a buffer as mono 16-bit PCM. Samples are clamped to the
/// representable range; `load_wav` inverts the mapping exactly.
pub fn write_wav_pcm16(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

const KAISER_BETA: f64 = 8.0;
const TAPS_PER_PHASE: usize = 64;
const CUTOFF_MARGIN: f64 = 0.9;
const MAX_TABLE_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct SincKernel {
    cutoff: f64,
    half_width: f64,
    taps: usize,
    i0_beta: f64,
}

impl SincKernel {
    fn new(ratio: f64) -> Self {
        let r = ratio.min(1.0);
        let half_width = (TAPS_PER_PHASE / 2) as f64 / r;
        Self {
            cutoff: CUTOFF_MARGIN * r,
            half_width,
            taps: 2 * half_width.ceil() as usize,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn tap(&self, tau: f64) -> f64 {
        let t = tau / self.half_width;
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * tau) * window
    }

    /// Normalized weights for input indices `base - taps/2 + 1 ..= base + taps/2`
    /// when the output position is `base + frac`.
    fn phase_weights(&self, frac: f64) -> Vec<f64> {
        let lo = 1 - (self.taps as isize / 2);
        let mut w: Vec<f64> = (0..self.taps)
            .map(|j| self.tap(frac - (lo + j as isize) as f64))
            .collect();
        let sum: f64 = w.iter().sum();
        if sum.abs() > 1e-12 {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        w
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc (beta 8, 64 taps per
/// phase at the lower of the two rates). Same-rate input is returned as is.
pub fn resample(audio: &AudioBuffer, target_fs: u32) -> Result<AudioBuffer> {
    if target_fs == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    let src = audio.sample_rate as u64;
    let dst = target_fs as u64;
    if src == dst {
        return Ok(audio.clone());
    }

    let len = audio.samples.len() as u64;
    let out_len = ((len * dst + src / 2) / src).max(1) as usize;
    let kernel = SincKernel::new(dst as f64 / src as f64);
    let g = gcd(src, dst);
    let phases = dst / g;
    let table: Option<Vec<Vec<f64>>> = (phases <= MAX_TABLE_PHASES).then(|| {
        (0..phases)
            .map(|p| kernel.phase_weights((p * g) as f64 / dst as f64))
            .collect()
    });

    let x = &audio.samples;
    let lo = 1 - (kernel.taps as isize / 2);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let num = n * src;
        let base = (num / dst) as isize;
        let rem = num % dst;
        let owned;
        let weights: &[f64] = match &table {
            Some(t) => &t[(rem / g) as usize],
            None => {
                owned = kernel.phase_weights(rem as f64 / dst as f64);
                &owned
            }
        };
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let idx = base + lo + j as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += w * x[idx as usize];
            }
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    AudioBuffer::new(out, target_fs)
}

/// Named compression stand-ins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileLabel {
    None,
    Br128,
    Br64,
    Br32,
}

impl ProfileLabel {
    pub const ALL: [ProfileLabel; 4] = [
        ProfileLabel::None,
        ProfileLabel::Br128,
        ProfileLabel::Br64,
        ProfileLabel::Br32,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileLabel::None => "none",
            ProfileLabel::Br128 => "br128",
            ProfileLabel::Br64 => "br64",
            ProfileLabel::Br32 => "br32",
        }
    }
}

impl fmt::Display for ProfileLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ProfileLabel::None),
            "br128" => Ok(ProfileLabel::Br128),
            "br64" => Ok(ProfileLabel::Br64),
            "br32" => Ok(ProfileLabel::Br32),
            other => Err(Error::invalid(format!("unknown degradation profile `{other}`"))),
        }
    }
}

/// Low-pass plus amplitude quantization, standing in for lossy compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationProfile {
    pub label: ProfileLabel,
    pub cutoff_hz: f64,
    pub quant_levels: u32,
}

impl DegradationProfile {
    /// The fixed surrogate settings for each label. For `none` the numeric
    /// fields are informational only.
    pub fn preset(label: ProfileLabel) -> Self {
        let (cutoff_hz, quant_levels) = match label {
            ProfileLabel::None => (8_000.0, 65_536),
            ProfileLabel::Br128 => (7_000.0, 4_096),
            ProfileLabel::Br64 => (5_500.0, 1_024),
            ProfileLabel::Br32 => (4_000.0, 256),
        };
        Self {
            label,
            cutoff_hz,
            quant_levels,
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.label == ProfileLabel::None {
            return Ok(());
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::invalid(format!(
                "cutoff {} Hz must lie in (0, {nyquist}) Hz",
                self.cutoff_hz
            )));
        }
        if self.quant_levels < 2 {
            return Err(Error::invalid("quant_levels must be at least 2"));
        }
        Ok(())
    }
}

/// Fraction of the cutoff over which the low-pass mask rolls off to zero.
const ROLLOFF_FRACTION: f64 = 0.1;

/// Zero-phase low-pass with a raised-cosine mask that is exactly zero at and
/// above `cutoff_hz`. The mask never exceeds one, so energy cannot grow.
fn lowpass(samples: &[f64], sample_rate: u32, cutoff_hz: f64) -> Vec<f64> {
    let n = samples.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fwd.process(&mut spec);

    let pass_edge = cutoff_hz * (1.0 - ROLLOFF_FRACTION);
    for (k, bin) in spec.iter_mut().enumerate() {
        let k_sym = k.min(n - k);
        let f = k_sym as f64 * sample_rate as f64 / n as f64;
        let gain = if f <= pass_edge {
            1.0
        } else if f >= cutoff_hz {
            0.0
        } else {
            let t = (f - pass_edge) / (cutoff_hz - pass_edge);
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        };
        *bin *= gain;
    }
    inv.process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

fn quantize(samples: &[f64], levels: u32, reference_energy: f64) -> Vec<f64> {
    let step = 2.0 / levels as f64;
    let k_min = -(levels as f64 / 2.0);
    let k_max = levels as f64 / 2.0 - 1.0;
    let rounded: Vec<f64> = samples
        .iter()
        .map(|&s| (s / step).round().clamp(k_min, k_max) * step)
        .collect();
    let energy: f64 = rounded.iter().map(|v| v * v).sum();
    if energy <= reference_energy {
        return rounded;
    }
    // Nearest-level rounding would add energy; truncate magnitudes instead.
    samples
        .iter()
        .map(|&s| (s / step).trunc().clamp(k_min, k_max) * step)
        .collect()
}

/// Applies a degradation profile: low-pass at the cutoff followed by
/// amplitude quantization. The `none` label is the identity.
pub fn degrade(audio: &AudioBuffer, profile: &DegradationProfile) -> Result<AudioBuffer> {
    if profile.label == ProfileLabel::None {
        return Ok(audio.clone());
    }
    profile.validate(audio.sample_rate)?;
    let filtered = lowpass(&audio.samples, audio.sample_rate, profile.cutoff_hz);
    let quantized = quantize(&filtered, profile.quant_levels, audio.energy());
    AudioBuffer::new(quantized, audio.sample_rate)
}

#[cfg(test)]
pub(crate) fn real_fft(samples: &[f64]) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fft: std::sync::Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_forward(samples.len());
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: u32, secs: f64, amp: f64) -> AudioBuffer {
        let n = (fs as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin())
            .collect();
        AudioBuffer::new(samples, fs).unwrap()
    }

    fn peak_freq(a: &AudioBuffer) -> f64 {
        let spec = real_fft(a.samples());
        let half = a.len() / 2;
        let (k, _) = spec[..=half]
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
            .unwrap();
        k as f64 * a.sample_rate() as f64 / a.len() as f64
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(AudioBuffer::new(vec![], 16_000).is_err());
        assert!(AudioBuffer::new(vec![f64::NAN], 16_000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn same_rate_resample_is_identity() {
        let a = tone(440.0, 16_000, 0.25, 0.5);
        assert_eq!(resample(&a, 16_000).unwrap(), a);
        assert!(resample(&a, 0).is_err());
    }

    #[test]
    fn downsample_keeps_tone_and_duration() {
        let a = tone(1_000.0, 48_000, 1.0, 0.5);
        let b = resample(&a, 16_000).unwrap();
        assert_eq!(b.sample_rate(), 16_000);
        assert!((b.duration_secs() - a.duration_secs()).abs() <= 1.0 / 16_000.0);
        assert!((peak_freq(&b) - 1_000.0).abs() < 2.0);
    }

    #[test]
    fn downsample_removes_tone_above_new_nyquist() {
        let a = tone(7_900.0, 16_000, 1.0, 0.5);
        let b = resample(&a, 8_000).unwrap();
        let ratio_db = 10.0 * (b.energy() / a.energy()).log10();
        assert!(ratio_db <= -40.0, "ratio {ratio_db} dB");
    }

    #[test]
    fn round_trip_keeps_peak() {
        let a = tone(500.0, 16_000, 0.5, 0.5);
        let up = resample(&a, 44_100).unwrap();
        let back = resample(&up, 16_000).unwrap();
        assert_eq!(back.len(), a.len());
        assert!((peak_freq(&back) - peak_freq(&a)).abs() < 1e-9);
    }

    #[test]
    fn odd_ratio_uses_direct_weights() {
        // 16000 -> 15991 has 15991 phases, beyond the table limit.
        let a = tone(300.0, 16_000, 0.2, 0.5);
        let b = resample(&a, 15_991).unwrap();
        assert_eq!(b.sample_rate(), 15_991);
        assert!((peak_freq(&b) - 300.0).abs() < 6.0);
    }

    #[test]
    fn none_profile_is_identity() {
        let a = tone(300.0, 16_000, 0.1, 0.3);
        let p = DegradationProfile::preset(ProfileLabel::None);
        assert_eq!(degrade(&a, &p).unwrap(), a);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let a = tone(300.0, 16_000, 0.1, 0.3);
        let mut p = DegradationProfile::preset(ProfileLabel::Br32);
        p.cutoff_hz = 8_000.0;
        assert!(degrade(&a, &p).is_err());
        let mut p = DegradationProfile::preset(ProfileLabel::Br32);
        p.quant_levels = 1;
        assert!(degrade(&a, &p).is_err());
        // br128 cutoff of 7 kHz is above the Nyquist of 8 kHz audio
        let low = tone(300.0, 8_000, 0.1, 0.3);
        assert!(degrade(&low, &DegradationProfile::preset(ProfileLabel::Br128)).is_err());
    }

    #[test]
    fn quantized_values_sit_on_grid() {
        let a = tone(300.0, 16_000, 0.1, 0.3);
        let p = DegradationProfile::preset(ProfileLabel::Br32);
        let d = degrade(&a, &p).unwrap();
        let step = 2.0 / 256.0;
        for s in d.samples() {
            let k = s / step;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_labels_parse() {
        for l in ProfileLabel::ALL {
            assert_eq!(l.as_str().parse::<ProfileLabel>().unwrap(), l);
        }
        assert!("mp3".parse::<ProfileLabel>().is_err());
    }
}
