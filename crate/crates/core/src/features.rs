//! Acoustic feature extraction.
//!
//! Raw PCM audio becomes a fixed-budget sequence of 52-dimensional
//! frames: 26 log-mel energies, 13 MFCCs and the 13 first-order deltas
//! of the MFCCs. Utterances longer than 7.5 s are cut, shorter ones are
//! zero-padded, so every utterance yields the same number of rows.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::{num_complex::Complex, FftPlanner};
use std::io::{Read, Write};
use std::path::Path;

pub const FEATURE_DIM: usize = 52;
pub const N_MELS: usize = 26;
pub const N_MFCC: usize = 13;

/// Extraction settings. Defaults: 25 ms Hamming frames, 10 ms hop,
/// 7.5 s cap, 512-point FFT floor, log floor 1e-10, delta window 2.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub max_seconds: f64,
    pub log_floor: f64,
    pub delta_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_len_s: 0.025,
            hop_s: 0.010,
            max_seconds: 7.5,
            log_floor: 1e-10,
            delta_window: 2,
        }
    }
}

impl FeatureConfig {
    /// Frame budget implied by the cap: 1 + (max_samples - frame)/hop,
    /// computed in integer samples (748 at the defaults, independent of
    /// sample rate).
    pub fn frame_budget(&self, sample_rate: u32) -> usize {
        let frame = frame_samples(self.frame_len_s, sample_rate);
        let hop = frame_samples(self.hop_s, sample_rate);
        let max = frame_samples(self.max_seconds, sample_rate);
        1 + (max.saturating_sub(frame)) / hop
    }
}

fn frame_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round() as usize
}

/// Decoded mono audio with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Fixed-budget feature matrix for one utterance. Rows at or beyond
/// `n_valid` are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub n_valid: usize,
    pub frame_period: f64,
}

impl FrameSequence {
    pub fn budget(&self) -> usize {
        self.frames.shape()[0]
    }
}

// ── WAV i/o ──────────────────────────────────────────────────────────

/// Reads a PCM 16-bit RIFF/WAVE file; multi-channel input is averaged
/// down to mono and samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let display = path.display().to_string();
    if !path.exists() {
        return Err(Error::WavMissing { path: display });
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(&display, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavUnsupported {
            path: display,
            detail: format!(
                "expected 16-bit integer PCM, got {:?} at {} bits",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let channels = spec.channels as usize;
    let mut samples = Vec::new();
    let mut frame = Vec::with_capacity(channels);
    for s in reader.samples::<i16>() {
        let s = s.map_err(|e| map_hound(&display, e))?;
        frame.push(s as f64 / 32768.0);
        if frame.len() == channels {
            samples.push(frame.iter().sum::<f64>() / channels as f64);
            frame.clear();
        }
    }
    if samples.is_empty() {
        return Err(Error::WavMalformed {
            path: display,
            detail: "no samples".into(),
        });
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono PCM 16-bit; samples are clamped to [-1, 1] first.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(|e| map_hound(&display, e))?;
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(&display, e))?;
    }
    writer.finalize().map_err(|e| map_hound(&display, e))?;
    Ok(())
}

fn map_hound(path: &str, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(detail) => Error::WavMalformed {
            path: path.into(),
            detail: detail.into(),
        },
        hound::Error::Unsupported => Error::WavUnsupported {
            path: path.into(),
            detail: "unsupported encoding".into(),
        },
        other => Error::WavMalformed {
            path: path.into(),
            detail: other.to_string(),
        },
    }
}

// ── Framing and spectra ──────────────────────────────────────────────

/// Splits a clip into Hamming-windowed frames. The final partial frame
/// is dropped; a clip shorter than one frame is an error.
pub fn frame_signal(clip: &AudioClip, frame_len_s: f64, hop_s: f64) -> Result<Vec<Vec<f64>>> {
    let frame = frame_samples(frame_len_s, clip.sample_rate);
    let hop = frame_samples(hop_s, clip.sample_rate);
    if hop == 0 || frame < hop {
        return Err(Error::contract(format!(
            "frame length {frame_len_s}s must be >= hop {hop_s}s > 0"
        )));
    }
    if clip.samples.len() < frame {
        return Err(Error::SequenceTooShort {
            what: "frame_signal",
            needed: frame,
            got: clip.samples.len(),
        });
    }
    let window = hamming(frame);
    let count = 1 + (clip.samples.len() - frame) / hop;
    let mut frames = Vec::with_capacity(count);
    for f in 0..count {
        let start = f * hop;
        frames.push(
            clip.samples[start..start + frame]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect(),
        );
    }
    Ok(frames)
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` triangular filters spanning
/// 0 Hz to Nyquist on the mel scale.
pub fn mel_filter_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

fn fft_size_for(frame_len: usize) -> usize {
    let mut n = 512;
    while n < frame_len {
        n *= 2;
    }
    n
}

/// Log-mel energies of Hamming-windowed frames: power spectrum, then
/// `n_mels` triangular filters, then `log(energy + floor)`.
pub fn mel_spectrogram(
    frames: &[Vec<f64>],
    sample_rate: u32,
    n_mels: usize,
    log_floor: f64,
) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::EmptySequence {
            what: "mel_spectrogram",
        });
    }
    let frame_len = frames[0].len();
    let n_fft = fft_size_for(frame_len);
    let n_bins = n_fft / 2 + 1;
    let filters = mel_filterbank(n_mels, n_fft, sample_rate);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = Vec::with_capacity(frames.len());
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for frame in frames {
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (c, &s) in buf.iter_mut().zip(frame) {
            c.re = s;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let energies = filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().map(|&(bin, w)| w * power[bin]).sum();
                (e + log_floor).ln()
            })
            .collect();
        out.push(energies);
    }
    Ok(out)
}

/// Sparse triangular filters as (bin, weight) lists.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
            let mut filter = Vec::new();
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let w = if f > lo && f < center {
                    (f - lo) / (center - lo)
                } else if (f - center).abs() < f64::EPSILON {
                    1.0
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    filter.push((bin, w));
                }
            }
            filter
        })
        .collect()
}

/// Orthonormal DCT-II of each log-mel frame, keeping coefficients
/// 0..n_mfcc.
pub fn mfcc(mel_frames: &[Vec<f64>], n_mfcc: usize) -> Vec<Vec<f64>> {
    if mel_frames.is_empty() {
        return Vec::new();
    }
    let n = mel_frames[0].len();
    // precomputed basis: basis[k][i] = a_k cos(pi k (2i+1) / 2n)
    let basis: Vec<Vec<f64>> = (0..n_mfcc)
        .map(|k| {
            let a = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| a * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect();
    mel_frames
        .iter()
        .map(|frame| {
            basis
                .iter()
                .map(|row| row.iter().zip(frame).map(|(b, x)| b * x).sum())
                .collect()
        })
        .collect()
}

/// First-order regression deltas with replicated edges:
/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`.
pub fn deltas(coeffs: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    if coeffs.is_empty() {
        return Vec::new();
    }
    let t_max = coeffs.len();
    let dim = coeffs[0].len();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| -> &Vec<f64> {
        let idx = t.clamp(0, t_max as isize - 1) as usize;
        &coeffs[idx]
    };
    (0..t_max as isize)
        .map(|t| {
            (0..dim)
                .map(|d| {
                    let num: f64 = (1..=window as isize)
                        .map(|n| n as f64 * (clamp(t + n)[d] - clamp(t - n)[d]))
                        .sum();
                    num / denom
                })
                .collect()
        })
        .collect()
}

/// Full pipeline: frame, log-mel, MFCC, deltas, truncate to the budget
/// and zero-pad.
pub fn build_feature_sequence(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FrameSequence> {
    let budget = cfg.frame_budget(clip.sample_rate);
    let mut frames = frame_signal(clip, cfg.frame_len_s, cfg.hop_s)?;
    frames.truncate(budget);
    let mel = mel_spectrogram(&frames, clip.sample_rate, N_MELS, cfg.log_floor)?;
    let ceps = mfcc(&mel, N_MFCC);
    let dts = deltas(&ceps, cfg.delta_window);

    let n_valid = frames.len();
    let mut data = vec![0.0; budget * FEATURE_DIM];
    for t in 0..n_valid {
        let row = &mut data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
        row[..N_MELS].copy_from_slice(&mel[t]);
        row[N_MELS..N_MELS + N_MFCC].copy_from_slice(&ceps[t]);
        row[N_MELS + N_MFCC..].copy_from_slice(&dts[t]);
    }
    Ok(FrameSequence {
        frames: Tensor::new(vec![budget, FEATURE_DIM], data)?,
        n_valid,
        frame_period: cfg.hop_s,
    })
}

// ── Feature cache ────────────────────────────────────────────────────
// Binary blob: header {n_valid: u32, budget: u32, dim: u32} little
// endian, then row-major f32 payload.

pub fn write_feature_cache(path: impl AsRef<Path>, seq: &FrameSequence) -> Result<()> {
    let display = path.as_ref().display().to_string();
    let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let budget = seq.budget() as u32;
    let mut bytes = Vec::with_capacity(12 + seq.frames.numel() * 4);
    bytes.extend_from_slice(&(seq.n_valid as u32).to_le_bytes());
    bytes.extend_from_slice(&budget.to_le_bytes());
    bytes.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    for &v in seq.frames.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    file.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

pub fn read_feature_cache(path: impl AsRef<Path>, frame_period: f64) -> Result<FrameSequence> {
    let display = path.as_ref().display().to_string();
    let mut file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&display, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(&display, e))?;
    if bytes.len() < 12 {
        return Err(Error::Format {
            path: display,
            detail: "truncated header".into(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (n_valid, budget, dim) = (u32_at(0), u32_at(4), u32_at(8));
    if dim != FEATURE_DIM {
        return Err(Error::Format {
            path: display,
            detail: format!("feature dim {dim}, expected {FEATURE_DIM}"),
        });
    }
    let expected = 12 + budget * dim * 4;
    if bytes.len() != expected || n_valid > budget {
        return Err(Error::Format {
            path: display,
            detail: format!("payload length {} does not match header", bytes.len()),
        });
    }
    let data: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FrameSequence {
        frames: Tensor::new(vec![budget, FEATURE_DIM], data)?,
        n_valid,
        frame_period,
    })
}
