//! Time-frequency front-ends: STFT, log-mel spectrogram and MFCC.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{AudioBuffer, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Magnitude spectrogram, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Matrix,
    pub window_len_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.rows()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.cols()
    }
}

/// Log-mel energies, frames by bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bands(&self) -> usize {
        self.values.cols()
    }
}

/// Cepstral coefficients, frames by coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMap {
    pub values: Matrix,
}

impl MfccMap {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn coefficients(&self) -> usize {
        self.values.cols()
    }
}

/// Framing and filterbank parameters for one front-end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl FrontEndConfig {
    /// 50 ms / 12.5 ms framing, 80 mel bands (prosody path).
    pub fn prosody() -> Self {
        Self {
            sample_rate: TARGET_SAMPLE_RATE,
            window_ms: 50.0,
            hop_ms: 12.5,
            mel_bands: 80,
            f_min: 0.0,
            f_max: TARGET_SAMPLE_RATE as f64 / 2.0,
        }
    }

    /// 25 ms / 10 ms framing, 80 mel bands (speaker path).
    pub fn speaker() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            ..Self::prosody()
        }
    }

    pub fn window_samples(&self) -> usize {
        ms_to_samples(self.window_ms, self.sample_rate)
    }

    pub fn hop_samples(&self) -> usize {
        ms_to_samples(self.hop_ms, self.sample_rate)
    }

    /// Smallest power of two holding one window.
    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    pub fn frame_count(&self, len: usize) -> usize {
        frame_count(len, self.window_samples(), self.hop_samples())
    }
}

fn ms_to_samples(ms: f64, fs: u32) -> usize {
    (ms * fs as f64 / 1000.0).round() as usize
}

/// Number of analysis frames for a signal of `len` samples. Signals shorter
/// than one window yield a single zero-padded frame.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len >= window {
        1 + (len - window) / hop
    } else {
        1
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

struct FrameAnalyzer {
    window: Vec<f64>,
    hop: usize,
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl FrameAnalyzer {
    fn new(window_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::invalid("hop must be positive"));
        }
        if window_len == 0 || window_len > fft_size {
            return Err(Error::invalid(format!(
                "window of {window_len} samples does not fit fft size {fft_size}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(Self {
            window: hann(window_len),
            hop,
            fft_size,
            fft,
        })
    }

    /// Calls `sink(frame_index, one_sided_spectrum)` for every frame.
    fn for_each_frame(&self, x: &[f64], mut sink: impl FnMut(usize, &[Complex<f64>])) {
        let win = self.window.len();
        let frames = frame_count(x.len(), win, self.hop);
        let bins = self.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        for m in 0..frames {
            let start = m * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (n, w) in self.window.iter().enumerate() {
                if let Some(&s) = x.get(start + n) {
                    buf[n] = Complex::new(s * w, 0.0);
                }
            }
            self.fft.process(&mut buf);
            sink(m, &buf[..bins]);
        }
    }
}

/// Short-time Fourier transform magnitudes with a Hann window and no centering.
pub fn stft(audio: &AudioBuffer, window_len_ms: f64, hop_ms: f64, fft_size: usize) -> Result<Spectrogram> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio("stft input".into()));
    }
    let win = ms_to_samples(window_len_ms, audio.sample_rate());
    let hop = ms_to_samples(hop_ms, audio.sample_rate());
    let analyzer = FrameAnalyzer::new(win, hop, fft_size)?;
    let bins = fft_size / 2 + 1;
    let frames = frame_count(audio.len(), win, hop);
    let mut magnitudes = Matrix::zeros(frames, bins);
    analyzer.for_each_frame(audio.samples(), |m, spec| {
        for (dst, c) in magnitudes.row_mut(m).iter_mut().zip(spec) {
            *dst = c.norm();
        }
    });
    Ok(Spectrogram {
        magnitudes,
        window_len_ms,
        hop_ms,
        fft_size,
    })
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of `bands` filters equally spaced in mel between
/// `f_min` and `f_max` (band edges excluded).
pub fn mel_centers(bands: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    mel_edges(bands, f_min, f_max)[1..=bands].to_vec()
}

fn mel_edges(bands: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect()
}

/// Triangular mel filterbank, `bands` rows by `fft_size/2 + 1` columns.
///
/// Each triangle rises from the previous center to its own center (where the
/// continuous response is 1) and falls to the next center. Rows are sampled at
/// the FFT bin frequencies without area normalization. A filter narrow enough
/// that no bin falls inside it is an error.
pub fn mel_filterbank(bands: usize, fft_size: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Matrix> {
    let nyquist = sample_rate as f64 / 2.0;
    if bands == 0 {
        return Err(Error::invalid("mel filterbank needs at least one band"));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::invalid(format!(
            "mel range [{f_min}, {f_max}] invalid for sample rate {sample_rate}"
        )));
    }
    if fft_size < 2 {
        return Err(Error::invalid("fft size must be at least 2"));
    }
    let bins = fft_size / 2 + 1;
    let edges = mel_edges(bands, f_min, f_max);
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = Matrix::zeros(bands, bins);
    for k in 0..bands {
        let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        let mut any = false;
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center));
            if w > 0.0 {
                fb.set(k, b, w);
                any = true;
            }
        }
        if !any {
            return Err(Error::invalid(format!(
                "{bands} mel bands are too many for fft size {fft_size}: band {k} covers no bin"
            )));
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II evaluated through a length-2K FFT.
pub struct Dct2 {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    twiddles: Vec<Complex<f64>>,
}

impl Dct2 {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("dct length must be positive"));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * len);
        let twiddles = (0..len)
            .map(|k| {
                let angle = -std::f64::consts::PI * k as f64 / (2.0 * len as f64);
                Complex::from_polar(1.0, angle)
            })
            .collect();
        Ok(Self { len, fft, twiddles })
    }

    /// First `count` coefficients of the transform of `v`.
    pub fn apply(&self, v: &[f64], count: usize) -> Result<Vec<f64>> {
        let k = self.len;
        if v.len() != k {
            return Err(Error::invalid(format!(
                "dct input has length {}, expected {k}",
                v.len()
            )));
        }
        if count == 0 || count > k {
            return Err(Error::invalid(format!("coefficient count {count} outside 1..={k}")));
        }
        let mut buf: Vec<Complex<f64>> = v.iter().chain(v.iter().rev()).map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        let s0 = (1.0 / k as f64).sqrt();
        let s = (2.0 / k as f64).sqrt();
        Ok((0..count)
            .map(|i| {
                let c = (self.twiddles[i] * buf[i]).re / 2.0;
                c * if i == 0 { s0 } else { s }
            })
            .collect())
    }
}

/// Orthonormal DCT-II of `v`, keeping the first `count` coefficients.
pub fn dct_ii(v: &[f64], count: usize) -> Result<Vec<f64>> {
    Dct2::new(v.len())?.apply(v, count)
}

/// Log-mel energies `ln(max(filterbank * |X|^2, floor))` under `cfg`.
pub fn log_mel(audio: &AudioBuffer, cfg: &FrontEndConfig) -> Result<Matrix> {
    if audio.sample_rate() != cfg.sample_rate {
        return Err(Error::invalid(format!(
            "front-end expects {} Hz audio, got {} Hz",
            cfg.sample_rate,
            audio.sample_rate()
        )));
    }
    let fft_size = cfg.fft_size();
    let fb = mel_filterbank(cfg.mel_bands, fft_size, cfg.sample_rate, cfg.f_min, cfg.f_max)?;
    let analyzer = FrameAnalyzer::new(cfg.window_samples(), cfg.hop_samples(), fft_size)?;
    let frames = cfg.frame_count(audio.len());
    let mut out = Matrix::zeros(frames, cfg.mel_bands);
    let mut power = vec![0.0; fft_size / 2 + 1];
    analyzer.for_each_frame(audio.samples(), |m, spec| {
        for (p, c) in power.iter_mut().zip(spec) {
            *p = c.norm_sqr();
        }
        for (k, dst) in out.row_mut(m).iter_mut().enumerate() {
            let e: f64 = fb.row(k).iter().zip(&power).map(|(w, p)| w * p).sum();
            *dst = e.max(LOG_FLOOR).ln();
        }
    });
    Ok(out)
}

/// Log-mel spectrogram for the prosody path.
pub fn mel_spectrogram(audio: &AudioBuffer, cfg: &FrontEndConfig) -> Result<MelSpectrogram> {
    Ok(MelSpectrogram {
        values: log_mel(audio, cfg)?,
    })
}

/// MFCCs for the speaker path: DCT-II of each log-mel frame, first
/// `coefficients` kept.
pub fn mfcc(audio: &AudioBuffer, cfg: &FrontEndConfig, coefficients: usize) -> Result<MfccMap> {
    let logmel = log_mel(audio, cfg)?;
    let dct = Dct2::new(cfg.mel_bands)?;
    let mut values = Matrix::zeros(logmel.rows(), coefficients);
    for m in 0..logmel.rows() {
        let c = dct.apply(logmel.row(m), coefficients)?;
        values.row_mut(m).copy_from_slice(&c);
    }
    Ok(MfccMap { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dct(v: &[f64]) -> Vec<f64> {
        let k = v.len() as f64;
        (0..v.len())
            .map(|i| {
                let s = if i == 0 { (1.0 / k).sqrt() } else { (2.0 / k).sqrt() };
                s * v
                    .iter()
                    .enumerate()
                    .map(|(n, x)| x * (std::f64::consts::PI * i as f64 * (2.0 * n as f64 + 1.0) / (2.0 * k)).cos())
                    .sum::<f64>()
            })
            .collect()
    }

    fn tone(freq: f64, secs: f64) -> AudioBuffer {
        let n = (16_000.0 * secs) as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn silence_spectrogram_is_zero_with_98_frames() {
        let a = AudioBuffer::new(vec![0.0; 16_000], 16_000).unwrap();
        let s = stft(&a, 25.0, 10.0, 512).unwrap();
        assert_eq!(s.frames(), 98);
        assert_eq!(s.bins(), 257);
        assert!(s.magnitudes.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_buffer_gives_single_frame() {
        let a = AudioBuffer::new(vec![0.1; 100], 16_000).unwrap();
        assert_eq!(stft(&a, 25.0, 10.0, 512).unwrap().frames(), 1);
    }

    #[test]
    fn stft_rejects_bad_framing() {
        let a = tone(1000.0, 0.1);
        assert!(stft(&a, 50.0, 10.0, 512).is_err());
        assert!(stft(&a, 25.0, 0.0, 512).is_err());
    }

    #[test]
    fn filterbank_shape_and_triangles() {
        let fb = mel_filterbank(80, 512, 16_000, 0.0, 8_000.0).unwrap();
        assert_eq!(fb.shape(), (80, 257));
        for k in 0..80 {
            let row = fb.row(k);
            assert!(row.iter().sum::<f64>() > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            // unimodal: once it starts falling it never rises again
            let mut falling = false;
            let mut peaks = 0;
            for b in 1..row.len() {
                if row[b] < row[b - 1] {
                    if !falling {
                        peaks += 1;
                    }
                    falling = true;
                } else if row[b] > row[b - 1] {
                    assert!(!falling, "band {k} rises after falling");
                }
            }
            assert!(peaks <= 1);
        }
    }

    #[test]
    fn filter_peaks_at_one_on_center_bin() {
        // 1 band over [0, 1000] Hz: center at mel midpoint; pick fft so a bin
        // lands on the center exactly.
        let centers = mel_centers(1, 0.0, 8_000.0);
        let fb = mel_filterbank(1, 16_000, 16_000, 0.0, 8_000.0).unwrap();
        let center_bin = centers[0].round() as usize;
        let max = fb.row(0).iter().cloned().fold(0.0, f64::max);
        assert!(max <= 1.0);
        assert!((fb.get(0, center_bin) - max).abs() < 1e-12);
        assert!(max > 0.999);
    }

    #[test]
    fn filterbank_rejects_collapsed_bands() {
        assert!(mel_filterbank(200, 64, 16_000, 0.0, 8_000.0).is_err());
        assert!(mel_filterbank(0, 512, 16_000, 0.0, 8_000.0).is_err());
        assert!(mel_filterbank(10, 512, 16_000, 100.0, 9_000.0).is_err());
    }

    #[test]
    fn mel_scale_values() {
        assert!((hz_to_mel(1000.0) - 999.985_6).abs() < 1e-3);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn dct_matches_naive_and_is_orthonormal() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let fast = dct_ii(&v, 4).unwrap();
        for (a, b) in fast.iter().zip(naive_dct(&v)) {
            assert!((a - b).abs() < 1e-12);
        }
        let e_in: f64 = v.iter().map(|x| x * x).sum();
        let e_out: f64 = fast.iter().map(|x| x * x).sum();
        assert!((e_in.sqrt() - e_out.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let v = vec![2.5; 16];
        let c = dct_ii(&v, 16).unwrap();
        assert!((c[0] - 2.5 * 4.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dct_count_out_of_range() {
        assert!(dct_ii(&[1.0, 2.0], 0).is_err());
        assert!(dct_ii(&[1.0, 2.0], 3).is_err());
        assert!(dct_ii(&[], 1).is_err());
    }

    #[test]
    fn silence_log_mel_hits_floor() {
        let a = AudioBuffer::new(vec![0.0; 8_000], 16_000).unwrap();
        let m = mel_spectrogram(&a, &FrontEndConfig::prosody()).unwrap();
        assert_eq!(m.bands(), 80);
        assert!(m.values.data().iter().all(|&v| v == LOG_FLOOR.ln()));
        let c = mfcc(&a, &FrontEndConfig::speaker(), 80).unwrap();
        for row in c.values.iter_rows() {
            assert!((row[0] - 80f64.sqrt() * LOG_FLOOR.ln()).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn front_end_rejects_wrong_rate() {
        let a = AudioBuffer::new(vec![0.0; 8_000], 8_000).unwrap();
        assert!(mel_spectrogram(&a, &FrontEndConfig::prosody()).is_err());
    }

    #[test]
    fn fft_sizes_follow_window() {
        assert_eq!(FrontEndConfig::speaker().fft_size(), 512);
        assert_eq!(FrontEndConfig::prosody().fft_size(), 1024);
        assert_eq!(FrontEndConfig::prosody().hop_samples(), 200);
    }
}
