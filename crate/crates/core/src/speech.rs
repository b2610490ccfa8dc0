//! Acoustic front-end: WAV I/O, MFCC with regression deltas, utterance
//! pooling and noise mixing at a target SNR.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Signal { samples, sample_rate })
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

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (energy(&self.samples) / self.samples.len() as f64).sqrt()
    }
}

fn energy(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// Reads 16-bit PCM mono WAV. Samples are divided by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("{}: mono required", path.display())));
    }
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav(format!("{}: PCM integer samples required", path.display())));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: 16-bit samples required, found {}",
            path.display(),
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Signal::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// Writes 16-bit PCM mono WAV, rounding `x·32768` and saturating.
pub fn write_wav(signal: &Signal, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &x in &signal.samples {
        let v = (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub n_filters: usize,
    /// Cepstra kept, including c0.
    pub n_ceps: usize,
    pub pre_emphasis: f64,
    pub log_floor: f64,
    pub delta_width: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len: 200,
            frame_shift: 80,
            n_filters: 23,
            n_ceps: 13,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            delta_width: 2,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_shift == 0 {
            return Err(Error::invalid("frame length and shift must be positive"));
        }
        if self.frame_shift > self.frame_len {
            return Err(Error::invalid("frame shift exceeds frame length"));
        }
        if self.n_filters == 0 || self.n_ceps == 0 || self.n_ceps > self.n_filters {
            return Err(Error::invalid(format!(
                "need 1 <= n_ceps ({}) <= n_filters ({})",
                self.n_ceps, self.n_filters
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }

    pub fn fft_len(&self) -> usize {
        self.frame_len.next_power_of_two()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Frame count `floor((N - L) / S) + 1`, or 0 when the signal is shorter than a frame.
pub fn frame_count(n: usize, frame_len: usize, frame_shift: usize) -> usize {
    if n < frame_len {
        0
    } else {
        (n - frame_len) / frame_shift + 1
    }
}

/// Left edge, center and right edge (Hz) of every triangular filter, spaced
/// evenly on the mel scale from 0 Hz to Nyquist.
pub fn filter_edges_hz(n_filters: usize, sample_rate: u32) -> Vec<(f64, f64, f64)> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let pts: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect();
    (0..n_filters).map(|j| (pts[j], pts[j + 1], pts[j + 2])).collect()
}

/// `n_filters × (fft_len/2 + 1)` triangular weights evaluated at bin frequencies.
pub fn mel_filterbank(cfg: &MfccConfig, sample_rate: u32) -> Array2<f64> {
    let nfft = cfg.fft_len();
    let bins = nfft / 2 + 1;
    let edges = filter_edges_hz(cfg.n_filters, sample_rate);
    Array2::from_shape_fn((cfg.n_filters, bins), |(j, b)| {
        let f = b as f64 * sample_rate as f64 / nfft as f64;
        let (lo, c, hi) = edges[j];
        if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo)
        } else {
            (hi - f) / (hi - c)
        }
    })
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Orthonormal DCT-II matrix: row `k` is `sqrt(a_k/n)·cos(π k (i + 1/2) / n)`
/// with `a_0 = 1` and `a_k = 2` otherwise.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let a = if k == 0 { 1.0 } else { 2.0 };
        (a / n as f64).sqrt() * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()
    })
}

/// Mel filterbank energies (before the log) of every frame, `T × n_filters`.
///
/// Pre-emphasis is applied inside each frame, with the first sample of a
/// frame filtered against itself, so every frame depends only on its own
/// samples.
pub fn filterbank_energies(signal: &Signal, cfg: &MfccConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let t = frame_count(signal.len(), cfg.frame_len, cfg.frame_shift);
    if t == 0 {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one frame ({})",
            signal.len(),
            cfg.frame_len
        )));
    }
    let nfft = cfg.fft_len();
    let bins = nfft / 2 + 1;
    let fb = mel_filterbank(cfg, signal.sample_rate);
    let window = hamming(cfg.frame_len);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut mag = Array1::zeros(bins);
    let mut out = Array2::zeros((t, cfg.n_filters));
    for (f, mut row) in out.rows_mut().into_iter().enumerate() {
        let frame = &signal.samples[f * cfg.frame_shift..f * cfg.frame_shift + cfg.frame_len];
        for (i, z) in buf.iter_mut().enumerate() {
            *z = if i < cfg.frame_len {
                let prev = if i == 0 { frame[0] } else { frame[i - 1] };
                Complex::new((frame[i] - cfg.pre_emphasis * prev) * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (m, z) in mag.iter_mut().zip(&buf) {
            *m = z.norm();
        }
        row.assign(&fb.dot(&mag));
    }
    Ok(out)
}

/// Static cepstra, `T × n_ceps`.
pub fn mfcc(signal: &Signal, cfg: &MfccConfig) -> Result<Array2<f64>> {
    let energies = filterbank_energies(signal, cfg)?;
    let logs = energies.mapv(|e| e.max(cfg.log_floor).ln());
    let dct = dct_matrix(cfg.n_filters);
    let keep = dct.slice(s![..cfg.n_ceps, ..]);
    Ok(logs.dot(&keep.t()))
}

fn deltas(frames: ArrayView2<f64>, width: usize) -> Array2<f64> {
    let t = frames.nrows() as isize;
    let denom = 2.0 * (1..=width).map(|w| (w * w) as f64).sum::<f64>();
    let at = |i: isize| frames.row(i.clamp(0, t - 1) as usize);
    let mut out = Array2::zeros(frames.dim());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for tau in 1..=width {
            let d = &at(i as isize + tau as isize) - &at(i as isize - tau as isize);
            row.scaled_add(tau as f64 / denom, &d);
        }
    }
    out
}

/// `[static | Δ | ΔΔ]` with regression deltas over `±width` frames and edge
/// replication.
pub fn add_deltas(frames: ArrayView2<f64>, width: usize) -> Result<Array2<f64>> {
    if width == 0 {
        return Err(Error::invalid("delta width must be positive"));
    }
    if frames.nrows() == 0 {
        return Err(Error::invalid("no frames"));
    }
    let d1 = deltas(frames, width);
    let d2 = deltas(d1.view(), width);
    Ok(ndarray::concatenate![Axis(1), frames, d1, d2])
}

/// Frame mean.
pub fn pool_utterance(frames: ArrayView2<f64>) -> Result<Array1<f64>> {
    frames.mean_axis(Axis(0)).ok_or_else(|| Error::invalid("no frames"))
}

/// MFCC, deltas and pooling in one call: one `3·n_ceps` vector per utterance.
pub fn utterance_features(signal: &Signal, cfg: &MfccConfig) -> Result<Array1<f64>> {
    let c = mfcc(signal, cfg)?;
    let full = add_deltas(c.view(), cfg.delta_width)?;
    pool_utterance(full.view())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Clipped speech plus scaled noise.
    pub mixed: Signal,
    /// The scaled noise that was added, before clipping.
    pub noise_component: Signal,
    pub gain: f64,
    /// Samples clipped to [-1, 1].
    pub clipped: usize,
}

/// Adds noise scaled to reach `snr_db`. The noise segment starts at a seeded
/// random offset and wraps around, so short noise recordings are tiled.
pub fn mix_at_snr(speech: &Signal, noise: &Signal, snr_db: f64, seed: u64) -> Result<Mixture> {
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::invalid(format!(
            "sample rates differ: {} vs {}",
            speech.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    if speech.rms() == 0.0 {
        return Err(Error::invalid("speech is silent"));
    }
    if noise.rms() == 0.0 {
        return Err(Error::invalid("noise is silent"));
    }
    let n = noise.len();
    let offset = seeded(seed).random_range(0..n);
    let segment: Vec<f64> = (0..speech.len()).map(|i| noise.samples[(offset + i) % n]).collect();
    let seg_rms = (energy(&segment) / segment.len() as f64).sqrt();
    if seg_rms == 0.0 {
        return Err(Error::invalid("selected noise segment is silent"));
    }
    let gain = speech.rms() / (seg_rms * 10f64.powf(snr_db / 20.0));
    let component: Vec<f64> = segment.iter().map(|x| gain * x).collect();
    let mut clipped = 0;
    let mixed = speech
        .samples
        .iter()
        .zip(&component)
        .map(|(s, v)| {
            let y = s + v;
            if y.abs() > 1.0 {
                clipped += 1;
            }
            y.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(Mixture {
        mixed: Signal::new(mixed, speech.sample_rate)?,
        noise_component: Signal::new(component, speech.sample_rate)?,
        gain,
        clipped,
    })
}

/// `10·log10(Σ speech² / Σ noise²)`.
pub fn measure_snr(speech: &Signal, noise: &Signal) -> Result<f64> {
    if speech.len() != noise.len() {
        return Err(Error::shape(format!(
            "lengths differ: {} vs {}",
            speech.len(),
            noise.len()
        )));
    }
    let (es, en) = (energy(&speech.samples), energy(&noise.samples));
    if es == 0.0 || en == 0.0 {
        return Err(Error::invalid("silent input"));
    }
    Ok(10.0 * (es / en).log10())
}
