//! Multichannel STFT analysis/synthesis with a square-root Hann window pair.
//!
//! The observation tensor carries `frame_length / 2` estimation bins, which are
//! FFT bins `1..=frame_length/2` (up to and including Nyquist). The DC bin is
//! kept in a separate plane so synthesis stays exact.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    SqrtHann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub window: Window,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 1024,
            frame_shift: 512,
            window: Window::SqrtHann,
            sample_rate: 16000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length < 2 || self.frame_length % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "frame length {} must be even and at least 2",
                self.frame_length
            )));
        }
        if self.frame_shift == 0
            || self.frame_length % self.frame_shift != 0
            || self.frame_length / self.frame_shift < 2
        {
            return Err(Error::InvalidConfig(format!(
                "frame shift {} must divide frame length {} at least twice",
                self.frame_shift, self.frame_length
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of estimation bins `F`.
    pub fn bins(&self) -> usize {
        self.frame_length / 2
    }

    /// `floor((len - L) / shift) + 1`, or zero when `len < L`.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            (len - self.frame_length) / self.frame_shift + 1
        }
    }

    /// Samples produced by synthesizing `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.frame_shift + self.frame_length
        }
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            Window::SqrtHann => sqrt_hann(self.frame_length),
        }
    }

    /// Constant value of the overlapped squared window, `sum_n w^2(t - n shift)`.
    pub fn cola_gain(&self) -> f64 {
        self.frame_length as f64 / (2.0 * self.frame_shift as f64)
    }
}

/// Periodic square-root Hann window.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| (0.5 - 0.5 * (2.0 * PI * t as f64 / len as f64).cos()).sqrt())
        .collect()
}

/// STFT coefficients `y_i(n, f)`, stored bin-major so each `y(n, f)` vector is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTensor {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    dc: Vec<Complex64>,
}

impl ObservationTensor {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
            dc: vec![Complex64::new(0.0, 0.0); channels * frames],
        }
    }

    pub fn from_fn(
        channels: usize,
        frames: usize,
        bins: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut t = Self::zeros(channels, frames, bins);
        for bin in 0..bins {
            for n in 0..frames {
                for i in 0..channels {
                    t.set(i, n, bin, f(i, n, bin));
                }
            }
        }
        t
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    fn offset(&self, n: usize, f: usize) -> usize {
        (f * self.frames + n) * self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, n: usize, f: usize) -> Complex64 {
        self.data[self.offset(n, f) + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, n: usize, f: usize, value: Complex64) {
        let o = self.offset(n, f);
        self.data[o + i] = value;
    }

    /// `y(n, f)` across channels.
    #[inline]
    pub fn vector(&self, n: usize, f: usize) -> &[Complex64] {
        let o = self.offset(n, f);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn vector_mut(&mut self, n: usize, f: usize) -> &mut [Complex64] {
        let o = self.offset(n, f);
        &mut self.data[o..o + self.channels]
    }

    pub fn dc_vector(&self, n: usize) -> &[Complex64] {
        &self.dc[n * self.channels..(n + 1) * self.channels]
    }

    pub fn dc_vector_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.dc[n * self.channels..(n + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .chain(&self.dc)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Per-bin mean observed power `(1/(N I)) sum_n ||y(n,f)||^2`.
    pub fn mean_power(&self, f: usize) -> f64 {
        let o = self.offset(0, f);
        let block = &self.data[o..o + self.frames * self.channels];
        block.iter().map(|z| z.norm_sqr()).sum::<f64>() / block.len().max(1) as f64
    }

    /// Energy over estimation bins and the DC plane.
    pub fn energy(&self) -> f64 {
        self.data.iter().chain(&self.dc).map(|z| z.norm_sqr()).sum()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.frames == other.frames && self.bins == other.bins
    }

    /// `self += other`, including the DC plane.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                actual: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        for (a, b) in self.dc.iter_mut().zip(&other.dc) {
            *a += *b;
        }
        Ok(())
    }
}

fn check_channels(audio: &[Vec<f64>]) -> Result<usize> {
    let len = audio.first().map_or(0, Vec::len);
    for (channel, ch) in audio.iter().enumerate() {
        if ch.len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel,
                expected: len,
                got: ch.len(),
            });
        }
    }
    Ok(len)
}

pub fn analyze(audio: &[Vec<f64>], cfg: &StftConfig) -> Result<ObservationTensor> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(Error::InvalidConfig("audio has no channels".into()));
    }
    let len = check_channels(audio)?;
    if len < cfg.frame_length {
        return Err(Error::TooShort {
            needed: cfg.frame_length,
            got: len,
        });
    }
    let frame_len = cfg.frame_length;
    let bins = cfg.bins();
    let frames = cfg.frames_for(len);
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = ObservationTensor::zeros(audio.len(), frames, bins);
    for (i, channel) in audio.iter().enumerate() {
        for n in 0..frames {
            let start = n * cfg.frame_shift;
            for (t, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(channel[start + t] * window[t], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            out.dc_vector_mut(n)[i] = buf[0];
            for f in 0..bins {
                out.set(i, n, f, buf[f + 1]);
            }
        }
    }
    Ok(out)
}

pub fn synthesize(tensor: &ObservationTensor, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if tensor.bins() != cfg.bins() {
        return Err(Error::DimensionMismatch {
            expected: cfg.bins(),
            actual: tensor.bins(),
        });
    }
    let frame_len = cfg.frame_length;
    let bins = cfg.bins();
    let frames = tensor.frames();
    let window = cfg.window();
    let norm = 1.0 / (frame_len as f64 * cfg.cola_gain());
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let out_len = cfg.synthesis_len(frames);
    let mut out = vec![vec![0.0; out_len]; tensor.channels()];
    for (i, channel) in out.iter_mut().enumerate() {
        for n in 0..frames {
            buf[0] = tensor.dc_vector(n)[i];
            for f in 0..bins {
                let k = f + 1;
                let z = tensor.get(i, n, f);
                buf[k] = z;
                if k < frame_len - k {
                    buf[frame_len - k] = z.conj();
                }
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = n * cfg.frame_shift;
            for (t, b) in buf.iter().enumerate() {
                channel[start + t] += b.re * window[t] * norm;
            }
        }
    }
    Ok(out)
}
